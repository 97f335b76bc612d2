//! Code injection against randomized images and ground-truth detection
//! statistics.
//!
//! Injection windows are circular: a contiguous overwrite that runs past the
//! last physical slot continues at slot 0.

mod campaign;
mod classify;
mod disclosure;
mod spec;

use rand::Rng;
use thiserror::Error;

use crate::isa::{encode, Instruction, Opcode};
use crate::transform::{MemoryImage, SlotTag};

pub use campaign::{run_campaign, CampaignConfig, CampaignResult, TrialRow};
pub use classify::{classify, detection_probability, DetectionStats, Tripwire};
pub use disclosure::disclosure_sim;
pub use spec::parse_specs;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttackError {
    #[error("injection length must be at least 1")]
    EmptyInjection,
    #[error("slot {index} is outside an image of {len} slots")]
    OutOfRange { index: usize, len: usize },
    #[error("logical unit {unit} is outside an image of {units} units")]
    UnitOutOfRange { unit: usize, units: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("dump of {len} words at {start} exceeds data memory of {size}")]
    DumpRange { start: usize, len: usize, size: usize },
    #[error("line {line}: {msg}")]
    Spec { line: usize, msg: String },
    #[error("golden image failed authentication")]
    Authentication,
    #[error("campaign needs at least one trial and one spec")]
    EmptyCampaign,
    #[error(transparent)]
    Build(#[from] crate::transform::TransformError),
    #[error(transparent)]
    Vm(#[from] crate::vm::VmError),
}

/// What gets written over the targeted slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Payload {
    /// Words with an unassigned opcode byte.
    IllegalWords,
    NopSled,
    /// A small valid program: `LDI r1, 0xEE; OUT r1; JMP 0`, repeated.
    CraftedCode,
}

impl Payload {
    pub fn token(self) -> &'static str {
        match self {
            Payload::IllegalWords => "illegal",
            Payload::NopSled => "nop",
            Payload::CraftedCode => "crafted",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        [Payload::IllegalWords, Payload::NopSled, Payload::CraftedCode].into_iter().find(|p| p.token() == s)
    }

    pub fn words(self, len: usize) -> Vec<u32> {
        let crafted = [
            encode(&Instruction::ldi(1, 0xEE)),
            encode(&Instruction::out(1)),
            encode(&Instruction::target(Opcode::Jmp, 0)),
        ];
        (0..len)
            .map(|i| match self {
                Payload::IllegalWords => 0xFF00_0000 | i as u32 & 0xFFFF,
                Payload::NopSled => encode(&Instruction::NOP),
                Payload::CraftedCode => crafted[i % 3],
            })
            .collect()
    }

    /// Whether every generated word decodes as illegal.
    pub fn always_illegal(self) -> bool {
        self == Payload::IllegalWords
    }
}

/// A start slot, fixed or drawn per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Start {
    At(usize),
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Positions {
    List(Vec<usize>),
    /// Distinct slots drawn per trial.
    Random(usize),
}

/// A logical unit selector for key-aware attacks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum UnitSel {
    Unit(usize),
    /// Inclusive range.
    Range(usize, usize),
    /// `len` units starting at a label.
    Label(String, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Contiguous { start: Start, len: usize },
    Scattered { positions: Positions },
    /// The attacker knows the key and hits the `App` slots of chosen logical
    /// units directly.
    KeyAware { units: Vec<UnitSel> },
    /// A contiguous overwrite that lands after `trigger_after` application
    /// instructions.
    Dormant { trigger_after: u64, start: Start, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub payload: Payload,
}

/// A spec resolved against one image: concrete slots and words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionPlan {
    pub positions: Vec<usize>,
    pub words: Vec<u32>,
    pub trigger_after: u64,
    pub payload: Payload,
}

impl InjectionPlan {
    pub fn writes(&self) -> Vec<(usize, u32)> {
        self.positions.iter().copied().zip(self.words.iter().copied()).collect()
    }
}

fn window(start: usize, len: usize, total: usize) -> Result<Vec<usize>, AttackError> {
    if len == 0 {
        return Err(AttackError::EmptyInjection);
    }
    if start >= total {
        return Err(AttackError::OutOfRange { index: start, len: total });
    }
    Ok((0..len.min(total)).map(|i| (start + i) % total).collect())
}

impl AttackSpec {
    pub fn contiguous(start: usize, len: usize, payload: Payload) -> Self {
        AttackSpec { kind: AttackKind::Contiguous { start: Start::At(start), len }, payload }
    }

    /// Resolves random choices and unit selectors against `img`.
    pub fn plan(&self, img: &MemoryImage, rng: &mut impl Rng) -> Result<InjectionPlan, AttackError> {
        let total = img.len();
        let (positions, trigger_after) = match &self.kind {
            AttackKind::Contiguous { start, len } => (window(pick(*start, total, rng), *len, total)?, 0),
            AttackKind::Dormant { trigger_after, start, len } => (window(pick(*start, total, rng), *len, total)?, *trigger_after),
            AttackKind::Scattered { positions: Positions::List(list) } => {
                if list.is_empty() {
                    return Err(AttackError::EmptyInjection);
                }
                if let Some(&index) = list.iter().find(|&&i| i >= total) {
                    return Err(AttackError::OutOfRange { index, len: total });
                }
                (list.clone(), 0)
            }
            AttackKind::Scattered { positions: Positions::Random(count) } => {
                if *count == 0 {
                    return Err(AttackError::EmptyInjection);
                }
                let chosen = rand::seq::index::sample(rng, total, (*count).min(total));
                let mut v = chosen.into_vec();
                v.sort_unstable();
                (v, 0)
            }
            AttackKind::KeyAware { units } => (key_aware_positions(img, units)?, 0),
        };
        if positions.is_empty() {
            return Err(AttackError::EmptyInjection);
        }
        let words = self.payload.words(positions.len());
        Ok(InjectionPlan { positions, words, trigger_after, payload: self.payload })
    }
}

fn pick(s: Start, total: usize, rng: &mut impl Rng) -> usize {
    match s {
        Start::At(i) => i,
        Start::Random => rng.gen_range(0..total),
    }
}

fn key_aware_positions(img: &MemoryImage, sel: &[UnitSel]) -> Result<Vec<usize>, AttackError> {
    let units = img.units();
    let mut logical = Vec::new();
    for s in sel {
        match s {
            UnitSel::Unit(u) => logical.push(*u),
            UnitSel::Range(a, b) => logical.extend(*a..=*b),
            UnitSel::Label(name, len) => {
                let &at = img.labels.get(name).ok_or_else(|| AttackError::UnknownLabel(name.clone()))?;
                logical.extend(at..at + len);
            }
        }
    }
    let width = img.unit_width();
    let mut out = Vec::new();
    for u in logical {
        if u >= units {
            return Err(AttackError::UnitOutOfRange { unit: u, units });
        }
        for o in 0..width {
            let p = img.physical_slot(u * width + o);
            if img.slots[p].tag == SlotTag::App {
                out.push(p);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Applies a plan to a copy of `img`; the targeted slots become `Foreign`.
pub fn apply(img: &MemoryImage, plan: &InjectionPlan) -> MemoryImage {
    let mut out = img.clone();
    for (p, w) in plan.writes() {
        out.slots[p].word = w;
        out.slots[p].tag = SlotTag::Foreign;
    }
    out
}

/// Resolves `spec` and applies it immediately, ignoring any dormancy.
pub fn inject(img: &MemoryImage, spec: &AttackSpec, rng: &mut impl Rng) -> Result<MemoryImage, AttackError> {
    Ok(apply(img, &spec.plan(img, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catmap::KeySet;
    use crate::isa::{decode, parse_asm, Decoded};
    use crate::transform::{build_image, BuildConfig, InterleaveConfig, KernelEntries, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(mode: Mode) -> MemoryImage {
        let src = "LDI r1, 1\nLDI r2, 2\nLDI r3, 3\nADD r1, r2\nADD r1, r3\nOUT r1\nSUB r1, r2\nOUT r1\nloop: JMP loop";
        let cfg = BuildConfig {
            mode,
            key: KeySet::new(3, 1, 1, 8).unwrap(),
            monitors: InterleaveConfig { m: 2, monitor_len: 3, seed: 1 },
            kernel: KernelEntries::default(),
        };
        build_image(&parse_asm(src).unwrap(), &cfg).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn contiguous_nop_sled() {
        let base = img(Mode::Hardware);
        let t = inject(&base, &AttackSpec::contiguous(10, 3, Payload::NopSled), &mut rng()).unwrap();
        for i in 10..13 {
            assert_eq!(t.slots[i].word, 0);
            assert_eq!(t.slots[i].tag, SlotTag::Foreign);
        }
        assert_eq!(t.slots[13], base.slots[13]);
        assert_ne!(base.slots[10].tag, SlotTag::Foreign);
    }

    #[test]
    fn zero_length_rejected() {
        let e = inject(&img(Mode::Hardware), &AttackSpec::contiguous(0, 0, Payload::NopSled), &mut rng());
        assert_eq!(e.unwrap_err(), AttackError::EmptyInjection);
    }

    #[test]
    fn start_out_of_range_rejected() {
        let e = inject(&img(Mode::Hardware), &AttackSpec::contiguous(64, 1, Payload::NopSled), &mut rng());
        assert_eq!(e.unwrap_err(), AttackError::OutOfRange { index: 64, len: 64 });
    }

    #[test]
    fn window_wraps() {
        assert_eq!(window(62, 4, 64).unwrap(), vec![62, 63, 0, 1]);
    }

    #[test]
    fn key_aware_hits_only_app_slots() {
        for mode in [Mode::Hardware, Mode::Software] {
            let base = img(mode);
            let spec = AttackSpec { kind: AttackKind::KeyAware { units: vec![UnitSel::Range(5, 8)] }, payload: Payload::IllegalWords };
            let plan = spec.plan(&base, &mut rng()).unwrap();
            // oracle: look each logical slot up through the permutation
            let w = base.unit_width();
            let perm = base.permutation();
            let want: std::collections::BTreeSet<usize> = (5..=8)
                .flat_map(|u| (0..w).map(move |o| (u, o)))
                .map(|(u, o)| perm.get(u) * w + o)
                .filter(|&p| base.slots[p].tag == SlotTag::App)
                .collect();
            assert_eq!(plan.positions, want.into_iter().collect::<Vec<_>>());
            let t = apply(&base, &plan);
            let changed: Vec<usize> = (0..t.len()).filter(|&i| t.slots[i] != base.slots[i]).collect();
            assert_eq!(changed, plan.positions);
            assert!(changed.iter().all(|&i| base.slots[i].tag == SlotTag::App));
        }
    }

    #[test]
    fn payload_words_decode_as_intended() {
        assert!(Payload::IllegalWords.words(300).iter().all(|&w| matches!(decode(w), Decoded::Illegal(_))));
        for w in Payload::CraftedCode.words(6) {
            let Decoded::Valid(i) = decode(w) else { panic!() };
            assert!(!matches!(i.op, Opcode::Mon | Opcode::Halt | Opcode::Kret));
            assert!(i.registers().iter().all(|&r| r < 14));
        }
    }

    #[test]
    fn random_scatter_is_distinct() {
        let base = img(Mode::Hardware);
        let spec = AttackSpec { kind: AttackKind::Scattered { positions: Positions::Random(10) }, payload: Payload::NopSled };
        let plan = spec.plan(&base, &mut rng()).unwrap();
        let mut p = plan.positions.clone();
        p.dedup();
        assert_eq!(p.len(), 10);
    }
}
