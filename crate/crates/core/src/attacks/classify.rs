use serde::Serialize;

use crate::isa::{decode, Decoded};
use crate::transform::{MemoryImage, SlotTag};

use super::{AttackError, InjectionPlan};

/// Brute-force prediction of what an injection can trip, from the
/// overwritten slots and a clean run's executed-slot set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Tripwire {
    /// A monitor slot was overwritten. Detection is guaranteed.
    MonitorHit,
    /// An illegal word sits on the executed path. Detection is guaranteed.
    IllegalExecuted,
    /// Valid foreign code sits on the executed path. Detection is possible.
    ExecutedHit,
    /// Only slots that never execute were touched. Detection is impossible.
    None,
    /// The payload never landed: execution ended before its trigger.
    Inactive,
}

impl Tripwire {
    pub fn token(self) -> &'static str {
        match self {
            Tripwire::MonitorHit => "monitor",
            Tripwire::IllegalExecuted => "illegal",
            Tripwire::ExecutedHit => "executed",
            Tripwire::None => "none",
            Tripwire::Inactive => "inactive",
        }
    }

    pub fn must_detect(self) -> bool {
        matches!(self, Tripwire::MonitorHit | Tripwire::IllegalExecuted)
    }

    pub fn may_detect(self) -> bool {
        !matches!(self, Tripwire::None | Tripwire::Inactive)
    }
}

/// Classifies an injection plan against the original image.
///
/// `executed` marks physical slots the clean run executed once the payload
/// would have landed; `activated` says whether it landed at all.
pub fn classify(img: &MemoryImage, plan: &InjectionPlan, executed: &[bool], activated: bool) -> Tripwire {
    if !activated {
        return Tripwire::Inactive;
    }
    if plan.positions.iter().any(|&p| img.slots[p].tag == SlotTag::Monitor) {
        return Tripwire::MonitorHit;
    }
    if !plan.positions.iter().any(|&p| executed[p]) {
        return Tripwire::None;
    }
    // the first overwritten slot reached decides; with an all-illegal payload
    // that slot always faults
    if plan.words.iter().all(|&w| matches!(decode(w), Decoded::Illegal(_))) {
        Tripwire::IllegalExecuted
    } else {
        Tripwire::ExecutedHit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionStats {
    pub len: usize,
    pub starts: usize,
    /// Fraction of windows that overwrite at least one monitor slot.
    pub monitor_hit: f64,
    /// Fraction of windows touching a monitor slot or an executed `App` slot.
    pub exposed: f64,
}

/// Exact contiguous-injection statistics over every circular start slot.
///
/// Without an executed set, `exposed` counts monitor slots only.
pub fn detection_probability(img: &MemoryImage, len: usize, executed: Option<&[bool]>) -> Result<DetectionStats, AttackError> {
    let total = img.len();
    if len == 0 {
        return Err(AttackError::EmptyInjection);
    }
    if len > total {
        return Err(AttackError::OutOfRange { index: len, len: total });
    }
    let monitor: Vec<bool> = img.slots.iter().map(|s| s.tag == SlotTag::Monitor).collect();
    let exposed: Vec<bool> = img
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| monitor[i] || (s.tag == SlotTag::App && executed.is_some_and(|e| e[i])))
        .collect();
    let frac = |marks: &[bool]| windows_hit(marks, len) as f64 / total as f64;
    Ok(DetectionStats { len, starts: total, monitor_hit: frac(&monitor), exposed: frac(&exposed) })
}

/// Number of circular windows of `len` slots containing a marked slot.
fn windows_hit(marks: &[bool], len: usize) -> usize {
    let total = marks.len();
    let mut prefix = Vec::with_capacity(2 * total + 1);
    prefix.push(0usize);
    for i in 0..2 * total {
        prefix.push(prefix[i] + usize::from(marks[i % total]));
    }
    (0..total).filter(|&s| prefix[s + len] > prefix[s]).count()
}
