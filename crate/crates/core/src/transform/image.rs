use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::catmap::{permute, KeySet, Permutation};
use crate::isa::{decode, AsmLine, AsmProgram, Decoded, LineBody, Opcode};

use super::{Mode, MonitorEntry, MonitorTable, SlotTag, TransformError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub word: u32,
    pub tag: SlotTag,
    /// Slot index in pre-randomization order.
    pub logical_index: usize,
}

/// A fully populated, randomized program memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    pub mode: Mode,
    pub key: KeySet,
    /// Physical order; `n^2` units of `mode.unit_width()` slots each.
    pub slots: Vec<Slot>,
    pub monitors: Vec<MonitorEntry>,
    /// Label -> logical unit index (the VPC space).
    pub labels: BTreeMap<String, usize>,
    perm: Permutation,
}

impl MemoryImage {
    pub fn n(&self) -> u32 {
        self.key.n
    }

    pub fn unit_width(&self) -> usize {
        self.mode.unit_width()
    }

    /// Number of logical units, `n^2`.
    pub fn units(&self) -> usize {
        self.key.cells()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    /// Physical unit holding logical unit `unit`.
    pub fn physical_unit(&self, unit: usize) -> usize {
        self.perm.get(unit)
    }

    /// Physical slot index of logical slot `logical`.
    pub fn physical_slot(&self, logical: usize) -> usize {
        let w = self.unit_width();
        self.perm.get(logical / w) * w + logical % w
    }

    pub fn slot_at_logical(&self, logical: usize) -> &Slot {
        &self.slots[self.physical_slot(logical)]
    }

    /// Physical slot indices carrying `tag`.
    pub fn positions_of(&self, tag: SlotTag) -> Vec<usize> {
        self.slots.iter().enumerate().filter(|(_, s)| s.tag == tag).map(|(i, _)| i).collect()
    }

    /// Serializes to the line-oriented `CMR1` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let k = &self.key;
        let _ = writeln!(out, "CMR1");
        let _ = writeln!(out, "MODE {}", self.mode);
        let _ = writeln!(out, "N {}", k.n);
        let _ = writeln!(out, "KEY {} {} {}", k.k, k.p, k.q);
        let _ = writeln!(out, "MONITORS {}", self.monitors.len());
        for m in &self.monitors {
            let _ = writeln!(out, "MON {} {} {}", m.id, m.entry, m.len);
        }
        for (name, idx) in &self.labels {
            let _ = writeln!(out, "LABEL {name} {idx}");
        }
        let _ = writeln!(out, "SLOTS {}", self.slots.len());
        for (phys, s) in self.slots.iter().enumerate() {
            let _ = writeln!(out, "{phys} {:08X} {} {}", s.word, s.tag, s.logical_index);
        }
        out
    }

    /// Parses the `CMR1` format. Unknown or out-of-order lines are errors.
    pub fn from_text(text: &str) -> Result<Self, ImageFormatError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &'static str| lines.next().ok_or(ImageFormatError::Truncated(what));

        let (ln, magic) = next("magic")?;
        if magic != "CMR1" {
            return Err(ImageFormatError::Line { line: ln, msg: "missing CMR1 magic".into() });
        }
        let (ln, l) = next("MODE")?;
        let mode = match field(ln, l, "MODE")? {
            "SOFTWARE" => Mode::Software,
            "HARDWARE" => Mode::Hardware,
            other => return Err(ImageFormatError::Line { line: ln, msg: format!("unknown mode `{other}`") }),
        };
        let (ln, l) = next("N")?;
        let n: u32 = num(ln, field(ln, l, "N")?)?;
        let (ln, l) = next("KEY")?;
        let parts = fields(ln, l, "KEY", 3)?;
        let key = KeySet::new(num(ln, parts[0])?, num(ln, parts[1])?, num(ln, parts[2])?, n)
            .map_err(|e| ImageFormatError::Line { line: ln, msg: e.to_string() })?;
        let (ln, l) = next("MONITORS")?;
        let m: usize = num(ln, field(ln, l, "MONITORS")?)?;
        let mut monitors = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, l) = next("MON")?;
            let p = fields(ln, l, "MON", 3)?;
            monitors.push(MonitorEntry { id: num(ln, p[0])?, entry: num(ln, p[1])?, len: num(ln, p[2])? });
        }
        let mut labels = BTreeMap::new();
        let count = loop {
            let (ln, l) = next("SLOTS")?;
            if l.starts_with("LABEL ") {
                let p = fields(ln, l, "LABEL", 2)?;
                if labels.insert(p[0].to_string(), num(ln, p[1])?).is_some() {
                    return Err(ImageFormatError::Line { line: ln, msg: format!("duplicate label `{}`", p[0]) });
                }
            } else if l.starts_with("SLOTS ") {
                break num::<usize>(ln, field(ln, l, "SLOTS")?)?;
            } else {
                return Err(ImageFormatError::Line { line: ln, msg: format!("unexpected header line `{l}`") });
            }
        };
        let perm = permute(&key).map_err(|e| ImageFormatError::Invalid(e.to_string()))?;
        let width = mode.unit_width();
        let expected = key.cells() * width;
        if count != expected {
            return Err(ImageFormatError::Invalid(format!("SLOTS {count} but the image needs {expected}")));
        }
        let mut slots = Vec::with_capacity(count);
        for phys in 0..count {
            let (ln, l) = next("slot")?;
            let p = l.split_whitespace().collect::<Vec<_>>();
            if p.len() != 4 {
                return Err(ImageFormatError::Line { line: ln, msg: "slot lines have 4 fields".into() });
            }
            if num::<usize>(ln, p[0])? != phys {
                return Err(ImageFormatError::Line { line: ln, msg: format!("expected physical index {phys}") });
            }
            if p[1].len() != 8 {
                return Err(ImageFormatError::Line { line: ln, msg: "words are 8 hex digits".into() });
            }
            let word = u32::from_str_radix(p[1], 16)
                .map_err(|_| ImageFormatError::Line { line: ln, msg: format!("bad word `{}`", p[1]) })?;
            let tag = SlotTag::from_token(p[2])
                .ok_or_else(|| ImageFormatError::Line { line: ln, msg: format!("bad tag `{}`", p[2]) })?;
            slots.push(Slot { word, tag, logical_index: num(ln, p[3])? });
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(ImageFormatError::Line { line: ln, msg: format!("trailing content `{extra}`") });
        }
        let img = MemoryImage { mode, key, slots, monitors, labels, perm };
        img.check_placement()?;
        Ok(img)
    }

    fn check_placement(&self) -> Result<(), ImageFormatError> {
        for logical in 0..self.slots.len() {
            let phys = self.physical_slot(logical);
            if self.slots[phys].logical_index != logical {
                return Err(ImageFormatError::Invalid(format!(
                    "physical slot {phys} should hold logical {logical}"
                )));
            }
        }
        for m in &self.monitors {
            if m.entry == 0 || m.entry + m.len > self.units() {
                return Err(ImageFormatError::Invalid(format!("monitor {} out of range", m.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageFormatError {
    #[error("image line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("image ended early, expected {0}")]
    Truncated(&'static str),
    #[error("invalid image: {0}")]
    Invalid(String),
}

fn field<'a>(ln: usize, l: &'a str, name: &str) -> Result<&'a str, ImageFormatError> {
    Ok(fields(ln, l, name, 1)?[0])
}

fn fields<'a>(ln: usize, l: &'a str, name: &str, count: usize) -> Result<Vec<&'a str>, ImageFormatError> {
    let mut it = l.split_whitespace();
    if it.next() != Some(name) {
        return Err(ImageFormatError::Line { line: ln, msg: format!("expected {name}") });
    }
    let rest: Vec<&str> = it.collect();
    if rest.len() != count {
        return Err(ImageFormatError::Line { line: ln, msg: format!("{name} takes {count} value(s)") });
    }
    Ok(rest)
}

fn num<T: std::str::FromStr>(ln: usize, s: &str) -> Result<T, ImageFormatError> {
    s.parse().map_err(|_| ImageFormatError::Line { line: ln, msg: format!("bad number `{s}`") })
}

fn tags_for(words: &[u32], table: &MonitorTable, mode: Mode) -> Vec<SlotTag> {
    let width = mode.unit_width();
    let is_kret = |w: u32| matches!(decode(w), Decoded::Valid(i) if i.op == Opcode::Kret);
    words
        .chunks(width)
        .enumerate()
        .flat_map(|(unit, chunk)| {
            let body = if table.pad_units.contains(&unit) {
                SlotTag::Pad
            } else if table.entries.iter().any(|m| m.contains(unit)) {
                SlotTag::Monitor
            } else {
                SlotTag::App
            };
            (0..chunk.len()).map(move |o| {
                if body == SlotTag::Pad {
                    SlotTag::Pad
                } else if is_kret(chunk[o]) {
                    SlotTag::KernelJump
                } else if o == 2 && is_kret(chunk[1]) {
                    SlotTag::Pad
                } else {
                    body
                }
            })
        })
        .collect()
}

/// Places a laid-out program into an `n^2`-unit image under `key`.
///
/// Labels resolve to logical unit indices. Unused units are filled with NOP
/// pads before permutation, so every physical slot is populated.
pub fn randomize(prog: &AsmProgram, table: &MonitorTable, key: KeySet, mode: Mode) -> Result<MemoryImage, TransformError> {
    let width = mode.unit_width();
    if prog.len() % width != 0 {
        return Err(TransformError::PartialUnit { len: prog.len(), width });
    }
    let perm = permute(&key)?;
    let units = key.cells();
    let used = prog.len() / width;
    if used > units {
        return Err(TransformError::Capacity { needed: used, capacity: units });
    }
    let mut labels = BTreeMap::new();
    for (name, &line) in &prog.labels {
        if line % width != 0 {
            return Err(TransformError::MisalignedLabel { label: name.clone(), line });
        }
        labels.insert(name.clone(), line / width);
    }
    let words = prog.assemble_with(|l| labels.get(l).map(|&u| u as u32))?;
    let tags = tags_for(&words, table, mode);

    let pad = Slot { word: 0, tag: SlotTag::Pad, logical_index: 0 };
    let mut slots = vec![pad; units * width];
    for logical in 0..units * width {
        let (word, tag) = match words.get(logical) {
            Some(&w) => (w, tags[logical]),
            None => (0, SlotTag::Pad),
        };
        let phys = perm.get(logical / width) * width + logical % width;
        slots[phys] = Slot { word, tag, logical_index: logical };
    }
    Ok(MemoryImage { mode, key, slots, monitors: table.entries.clone(), labels, perm })
}

/// Recovers the logical-order program (trailing pad units dropped).
pub fn derandomize(img: &MemoryImage) -> AsmProgram {
    let width = img.unit_width();
    let logical: Vec<&Slot> = (0..img.len()).map(|l| img.slot_at_logical(l)).collect();
    let used_units = logical
        .chunks(width)
        .rposition(|unit| unit.iter().any(|s| s.tag != SlotTag::Pad))
        .map_or(0, |u| u + 1);
    let mut by_unit: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, &u) in &img.labels {
        by_unit.entry(u).or_default().push(name.clone());
    }
    let lines = logical[..used_units * width]
        .iter()
        .enumerate()
        .map(|(l, s)| {
            let mut line = match decode(s.word) {
                Decoded::Valid(i) => AsmLine::concrete(i),
                Decoded::Illegal(w) => AsmLine {
                    labels: vec![],
                    sublabels: vec![],
                    body: LineBody::Word(w),
                    source_line: 0,
                },
            };
            if l % width == 0 {
                line.labels = by_unit.remove(&(l / width)).unwrap_or_default();
            }
            line
        })
        .collect();
    AsmProgram::from_lines(lines).expect("image labels are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{encode, parse_asm, Instruction};
    use crate::transform::{build_image, BuildConfig, InterleaveConfig, KernelEntries};

    fn four_slot_program() -> AsmProgram {
        parse_asm("LDI r1, 1\nLDI r1, 2\nLDI r1, 3\nLDI r1, 4").unwrap()
    }

    #[test]
    fn identity_key_keeps_order() {
        let p = four_slot_program();
        let img = randomize(&p, &MonitorTable::default(), KeySet::identity(2).unwrap(), Mode::Hardware).unwrap();
        let words: Vec<u32> = img.slots.iter().map(|s| s.word).collect();
        assert_eq!(words, p.assemble().unwrap());
    }

    #[test]
    fn small_key_places_by_permutation() {
        // [A, B, C, D] under [0, 3, 1, 2]: logical 1 -> phys 3, 2 -> 1, 3 -> 2.
        let p = four_slot_program();
        let w = p.assemble().unwrap();
        let img = randomize(&p, &MonitorTable::default(), KeySet::new(1, 1, 1, 2).unwrap(), Mode::Hardware).unwrap();
        let phys: Vec<u32> = img.slots.iter().map(|s| s.word).collect();
        assert_eq!(phys, vec![w[0], w[2], w[3], w[1]]);
        assert_eq!(img.slots[3].logical_index, 1);
    }

    #[test]
    fn capacity_error() {
        let p = parse_asm("NOP\nNOP\nNOP\nNOP\nNOP").unwrap();
        assert_eq!(
            randomize(&p, &MonitorTable::default(), KeySet::new(1, 1, 1, 2).unwrap(), Mode::Hardware),
            Err(TransformError::Capacity { needed: 5, capacity: 4 })
        );
    }

    fn corpus() -> Vec<AsmProgram> {
        [
            "LDI r1, 5\nOUT r1\nHALT",
            "LDI r1, 3\nLDI r2, 1\nloop: OUT r1\nSUB r1, r2\nBRNE loop\nHALT",
            "1: LDI r3, 7\nST r3, 10\nLD r4, 10\nCMP r3, r4\nBREQ 1f\nJMP 1b\n1: HALT",
        ]
        .iter()
        .map(|s| parse_asm(s).unwrap())
        .collect()
    }

    #[test]
    fn derandomize_round_trip() {
        let keys = [(0, 1, 1), (3, 1, 1), (5, 2, 7)];
        for prog in corpus() {
            for mode in [Mode::Hardware, Mode::Software] {
                for &(k, p, q) in &keys {
                    let cfg = BuildConfig {
                        mode,
                        key: KeySet::new(k, p, q, 8).unwrap(),
                        monitors: InterleaveConfig { m: 2, monitor_len: 3, seed: 3 },
                        kernel: KernelEntries::default(),
                    };
                    let img = build_image(&prog, &cfg).unwrap();
                    let back = derandomize(&img);
                    let logical: Vec<u32> = (0..back.len()).map(|l| img.slot_at_logical(l).word).collect();
                    assert_eq!(back.assemble().unwrap(), logical);
                    for (name, &u) in &img.labels {
                        assert_eq!(back.labels[name], u * img.unit_width());
                    }
                    // Same logical program regardless of the key.
                    let identity = build_image(&prog, &BuildConfig { key: KeySet::identity(8).unwrap(), ..cfg }).unwrap();
                    assert_eq!(derandomize(&identity).assemble().unwrap(), back.assemble().unwrap());
                }
            }
        }
    }

    #[test]
    fn text_format_round_trip_and_strictness() {
        let cfg = BuildConfig {
            mode: Mode::Software,
            key: KeySet::new(3, 1, 2, 4).unwrap(),
            monitors: InterleaveConfig { m: 1, monitor_len: 3, seed: 9 },
            kernel: KernelEntries::default(),
        };
        let img = build_image(&corpus()[1], &cfg).unwrap();
        let text = img.to_text();
        assert!(text.starts_with("CMR1\nMODE SOFTWARE\nN 4\nKEY 3 1 2\nMONITORS 1\nMON "));
        assert!(text.contains("\nLABEL loop 2\nSLOTS 48\n0 "));
        assert_eq!(MemoryImage::from_text(&text).unwrap(), img);

        let bad_header = text.replace("MONITORS 1", "MONITORS 1\nCOLOR blue");
        assert!(MemoryImage::from_text(&bad_header).is_err());
        let bad_count = text.replace("SLOTS 48", "SLOTS 47");
        assert!(MemoryImage::from_text(&bad_count).is_err());
        let swapped = text.replace("KEY 3 1 2", "KEY 4 1 2");
        assert!(matches!(MemoryImage::from_text(&swapped), Err(ImageFormatError::Invalid(_))));
        assert!(MemoryImage::from_text(&text[..text.len() - 20]).is_err());
    }

    #[test]
    fn tags_in_software_units() {
        let cfg = BuildConfig {
            mode: Mode::Software,
            key: KeySet::identity(4).unwrap(),
            monitors: InterleaveConfig { m: 1, monitor_len: 3, seed: 9 },
            kernel: KernelEntries::default(),
        };
        let img = build_image(&parse_asm("a: JMP a").unwrap(), &cfg).unwrap();
        let tags: Vec<SlotTag> = img.slots.iter().take(6).map(|s| s.tag).collect();
        assert_eq!(
            tags,
            vec![SlotTag::App, SlotTag::App, SlotTag::KernelJump, SlotTag::Monitor, SlotTag::KernelJump, SlotTag::Pad]
        );
        assert_eq!(img.positions_of(SlotTag::Monitor).len(), 3);
        assert_eq!(img.slots[47].word, encode(&Instruction::NOP));
    }
}
