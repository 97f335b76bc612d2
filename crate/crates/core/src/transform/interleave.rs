use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::isa::{AsmLine, AsmProgram, Instruction, Opcode};

use super::{KernelEntries, Mode, TransformError};

/// Watchdog challenge register (the challenge arrives here).
pub const CHALLENGE_REG: u8 = 15;
/// Response register submitted by `MON`.
pub const RESPONSE_REG: u8 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleaveConfig {
    /// Number of monitors.
    pub m: usize,
    /// Logical units per monitor body; at least 3.
    pub monitor_len: usize,
    /// Seed for monitor id assignment.
    pub seed: u64,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        InterleaveConfig { m: 0, monitor_len: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MonitorEntry {
    pub id: u16,
    /// Logical unit index of the first body instruction.
    pub entry: usize,
    /// Body length in logical units.
    pub len: usize,
}

impl MonitorEntry {
    /// Logical unit holding the `MON` instruction.
    pub fn mon_unit(&self) -> usize {
        self.entry + self.len - 1
    }

    pub fn contains(&self, unit: usize) -> bool {
        (self.entry..self.entry + self.len).contains(&unit)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorTable {
    pub entries: Vec<MonitorEntry>,
    /// Logical units inserted as padding by the builder.
    pub pad_units: Vec<usize>,
}

/// The value a healthy monitor of length `len` leaves in r14 for `challenge`.
pub fn expected_response(id: u16, challenge: u16, len: usize) -> u16 {
    let extra = len.saturating_sub(3) as u16;
    (id ^ challenge).wrapping_add(extra.wrapping_mul(challenge))
}

fn monitor_body(id: u16, len: usize) -> Vec<Instruction> {
    let mut body = vec![
        Instruction::ldi(RESPONSE_REG, id),
        Instruction::rr(Opcode::Xor, RESPONSE_REG, CHALLENGE_REG),
    ];
    body.extend(std::iter::repeat(Instruction::rr(Opcode::Add, RESPONSE_REG, CHALLENGE_REG)).take(len.saturating_sub(3)));
    body.push(Instruction::MON);
    body
}

/// Appends `m` monitor bodies after the application in logical order.
///
/// Ids are drawn without repetition from `[1, 0xFFFF]`. A monitor never
/// starts at logical unit 0, the cat map's fixed point; a pad unit is
/// inserted instead.
pub fn interleave_monitors(
    prog: &AsmProgram,
    cfg: &InterleaveConfig,
    mode: Mode,
    kernel: KernelEntries,
    capacity_units: usize,
) -> Result<(AsmProgram, MonitorTable), TransformError> {
    let width = mode.unit_width();
    if prog.len() % width != 0 {
        return Err(TransformError::PartialUnit { len: prog.len(), width });
    }
    let app_units = prog.len() / width;
    if cfg.m == 0 {
        if app_units > capacity_units {
            return Err(TransformError::Capacity { needed: app_units, capacity: capacity_units });
        }
        return Ok((prog.clone(), MonitorTable::default()));
    }
    let len = cfg.monitor_len.max(3);
    let shift = usize::from(app_units == 0);
    let needed = app_units + shift + cfg.m * len;
    if needed > capacity_units {
        return Err(TransformError::Capacity { needed, capacity: capacity_units });
    }

    let as_unit = |i: Instruction| -> Vec<AsmLine> {
        match mode {
            Mode::Hardware => vec![AsmLine::concrete(i)],
            Mode::Software => vec![
                AsmLine::concrete(i),
                AsmLine::concrete(Instruction::kret(kernel.step)),
                AsmLine::concrete(Instruction::NOP),
            ],
        }
    };

    let mut lines = prog.lines.clone();
    let mut table = MonitorTable::default();
    if shift == 1 {
        table.pad_units.push(0);
        lines.extend(std::iter::repeat(AsmLine::concrete(Instruction::NOP)).take(width));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = BTreeSet::new();
    for _ in 0..cfg.m {
        let id = loop {
            let candidate: u16 = rng.gen_range(1..=u16::MAX);
            if used.insert(candidate) {
                break candidate;
            }
        };
        let entry = lines.len() / width;
        debug_assert!(entry != 0);
        for i in monitor_body(id, len) {
            lines.extend(as_unit(i));
        }
        table.entries.push(MonitorEntry { id, entry, len });
    }
    Ok((AsmProgram { lines, labels: prog.labels.clone() }, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_asm, LineBody};

    fn hw(prog: &AsmProgram, m: usize, cap: usize) -> Result<(AsmProgram, MonitorTable), TransformError> {
        let cfg = InterleaveConfig { m, monitor_len: 3, seed: 7 };
        interleave_monitors(prog, &cfg, Mode::Hardware, KernelEntries::default(), cap)
    }

    #[test]
    fn zero_monitors_is_identity() {
        let p = parse_asm("LDI r1, 1\nHALT").unwrap();
        let (q, t) = hw(&p, 0, 16).unwrap();
        assert_eq!(q, p);
        assert!(t.entries.is_empty());
    }

    #[test]
    fn monitors_append_after_application() {
        let p = parse_asm("NOP\nNOP\nNOP\nHALT").unwrap();
        let (q, t) = hw(&p, 2, 64).unwrap();
        assert_eq!(q.len(), 4 + 6);
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.entries[0].entry, 4);
        assert_eq!(t.entries[1].entry, 7);
        assert_ne!(t.entries[0].id, t.entries[1].id);
        assert!(t.entries.iter().all(|e| e.id != 0 && e.len == 3));
        let LineBody::Instr(first) = &q.lines[4].body else { panic!() };
        assert_eq!(first.to_string(), format!("LDI r14, {}", t.entries[0].id));
        assert_eq!(q.lines[6].opcode(), Some(Opcode::Mon));
    }

    #[test]
    fn capacity_is_enforced() {
        let p = parse_asm("NOP\nHALT").unwrap();
        assert!(hw(&p, 2, 8).is_ok());
        assert_eq!(hw(&p, 3, 8).unwrap_err(), TransformError::Capacity { needed: 11, capacity: 8 });
    }

    #[test]
    fn empty_application_shifts_monitor_off_origin() {
        let (q, t) = hw(&AsmProgram::default(), 1, 16).unwrap();
        assert_eq!(t.pad_units, vec![0]);
        assert_eq!(t.entries[0].entry, 1);
        assert_eq!(q.len(), 4);
    }

    #[test]
    fn software_monitors_use_trampoline_units() {
        let p = parse_asm("HALT\nKRET 0x01EC\nNOP").unwrap();
        let cfg = InterleaveConfig { m: 1, monitor_len: 3, seed: 1 };
        let (q, t) = interleave_monitors(&p, &cfg, Mode::Software, KernelEntries::default(), 16).unwrap();
        assert_eq!(q.len(), 12);
        assert_eq!(t.entries[0].entry, 1);
        assert_eq!(q.lines[10].opcode(), Some(Opcode::Kret));
    }

    #[test]
    fn longer_monitors_still_respond() {
        for len in 3..7 {
            let body = monitor_body(41, len);
            assert_eq!(body.len(), len);
            // evaluate the body by hand
            let challenge = 0x1234u16;
            let mut r14 = 0u16;
            for i in &body {
                match i.op {
                    Opcode::Ldi => r14 = i.imm,
                    Opcode::Xor => r14 ^= challenge,
                    Opcode::Add => r14 = r14.wrapping_add(challenge),
                    _ => {}
                }
            }
            assert_eq!(r14, expected_response(41, challenge, len));
        }
        assert_eq!(expected_response(7, 0x00A3, 3), 0x00A4);
    }
}
