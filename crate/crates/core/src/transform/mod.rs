//! Program preprocessing and image construction.
//!
//! The pipeline is `resolve_sublabels -> seal -> rewrite_software_mode
//! (software only) -> interleave_monitors -> randomize`; [`build_image`] runs
//! all of it.
//!
//! Two image modes exist. In software mode every logical unit is three slots
//! (`instr; KRET; NOP`) and whole units are permuted, so the kernel finds the
//! unit with one translation. In hardware mode each slot is its own unit.

mod image;
mod interleave;
mod metrics;
mod rewrite;
mod sublabels;

pub use image::{derandomize, randomize, ImageFormatError, MemoryImage, Slot};
pub use interleave::{
    expected_response, interleave_monitors, InterleaveConfig, MonitorEntry, MonitorTable, CHALLENGE_REG, RESPONSE_REG,
};
pub use metrics::{homogeneity_report, HomogeneityReport};
pub use rewrite::{rewrite_software_mode, seal, KernelEntries};
pub use sublabels::resolve_sublabels;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catmap::{CatMapError, KeySet};
use crate::isa::{AsmError, AsmProgram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    CatMap(#[from] CatMapError),
    #[error("program needs {needed} units but the image holds {capacity}")]
    Capacity { needed: usize, capacity: usize },
    #[error("local label references must be resolved first")]
    UnresolvedSublabels,
    #[error("jump target `{0}` is not in the label table")]
    MissingTarget(String),
    #[error("jump target line {0} is outside the program")]
    TargetOutOfRange(u16),
    #[error("label `{label}` sits inside a logical unit (line {line})")]
    MisalignedLabel { label: String, line: usize },
    #[error("program length {len} is not a whole number of {width}-slot units")]
    PartialUnit { len: usize, width: usize },
    #[error("image has no monitor slots")]
    NoMonitors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Software prototype: 3-slot units, kernel trampolines.
    Software,
    /// Hardware coprocessor: single-slot units, transparent translation.
    Hardware,
}

impl Mode {
    /// Slots per logical unit.
    pub fn unit_width(self) -> usize {
        match self {
            Mode::Software => 3,
            Mode::Hardware => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Software => "SOFTWARE",
            Mode::Hardware => "HARDWARE",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "software" | "sw" => Ok(Mode::Software),
            "hardware" | "hw" => Ok(Mode::Hardware),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotTag {
    App,
    KernelJump,
    Pad,
    Monitor,
    Foreign,
}

impl SlotTag {
    pub fn token(self) -> &'static str {
        match self {
            SlotTag::App => "APP",
            SlotTag::KernelJump => "KJUMP",
            SlotTag::Pad => "PAD",
            SlotTag::Monitor => "MON",
            SlotTag::Foreign => "FOREIGN",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        [SlotTag::App, SlotTag::KernelJump, SlotTag::Pad, SlotTag::Monitor, SlotTag::Foreign]
            .into_iter()
            .find(|t| t.token() == s)
    }
}

impl fmt::Display for SlotTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub mode: Mode,
    pub key: KeySet,
    pub monitors: InterleaveConfig,
    #[serde(default)]
    pub kernel: KernelEntries,
}

/// Runs the full preprocessing pipeline on a parsed program.
pub fn build_image(prog: &AsmProgram, cfg: &BuildConfig) -> Result<MemoryImage, TransformError> {
    let resolved = resolve_sublabels(prog)?;
    let sealed = seal(&resolved);
    let laid_out = match cfg.mode {
        Mode::Software => rewrite_software_mode(&sealed, cfg.kernel.step, cfg.kernel.jump)?,
        Mode::Hardware => sealed,
    };
    let (with_monitors, table) =
        interleave_monitors(&laid_out, &cfg.monitors, cfg.mode, cfg.kernel, cfg.key.cells())?;
    randomize(&with_monitors, &table, cfg.key, cfg.mode)
}

/// The program a plain (unrandomized) run executes: sublabels resolved and
/// sealed with a trailing HALT.
pub fn plain_program(prog: &AsmProgram) -> Result<AsmProgram, TransformError> {
    Ok(seal(&resolve_sublabels(prog)?))
}
