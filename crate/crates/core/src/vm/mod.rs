//! Execution of randomized images.
//!
//! Software mode models the prototype: each instruction is followed by a
//! `KRET` back into a VM-native kernel, which keeps the VPC and translates
//! it to the next physical unit. Hardware mode models the coprocessor: the
//! CPU sees a plain instruction stream while the VPC is translated on every
//! fetch, and data addresses go through their own cat map.

mod csc;
mod data;
mod machine;
mod plain;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use csc::{CostVariant, Csc, CscConfig, CscStats};
pub use data::{adjacency_preservation, identity_data_key, translate_data};
pub use machine::{cost_model, FetchEvent, OverheadSummary, RunResult, VariantCost, Vm};
pub use plain::{run_plain, PlainResult};

use crate::catmap::KeySet;
use crate::transform::KernelEntries;

/// Side of the data grid; data memory holds `DATA_SIDE^2` words.
pub const DATA_SIDE: u32 = 64;
pub const DATA_WORDS: usize = (DATA_SIDE * DATA_SIDE) as usize;
pub const MAX_STACK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BreachCause {
    MonitorTimeout,
    BadResponse,
    IllegalInstruction,
    StackFault,
}

impl BreachCause {
    pub const ALL: [BreachCause; 4] =
        [BreachCause::MonitorTimeout, BreachCause::BadResponse, BreachCause::IllegalInstruction, BreachCause::StackFault];
}

impl fmt::Display for BreachCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BreachCause::MonitorTimeout => "MonitorTimeout",
            BreachCause::BadResponse => "BadResponse",
            BreachCause::IllegalInstruction => "IllegalInstruction",
            BreachCause::StackFault => "StackFault",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreachRecord {
    pub cause: BreachCause,
    /// Application instructions retired when the breach was raised.
    pub at_instruction: u64,
    pub monitor_id: Option<u16>,
}

impl fmt::Display for BreachRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BREACH {} at={} mon=", self.cause, self.at_instruction)?;
        match self.monitor_id {
            Some(id) => write!(f, "{id}"),
            None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Halted,
    Breach(BreachRecord),
    /// The instruction limit ran out first. Not a breach.
    LimitReached,
}

impl Termination {
    pub fn breach(&self) -> Option<&BreachRecord> {
        match self {
            Termination::Breach(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Flags {
    pub z: bool,
    pub n: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MicroOpCounters {
    /// Executed slots tagged `App`.
    pub app_instructions: u64,
    pub total_fetches: u64,
    /// Translations the CPU waited on.
    pub catmap_evals: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Translations done ahead of need by the lookahead.
    pub prefetches: u64,
    pub data_accesses: u64,
    pub data_translations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchdogConfig {
    /// Application instructions between expiries.
    pub interval: u32,
    /// Instruction budget for a monitor to answer.
    pub deadline: u32,
    pub seed: u64,
    /// Challenge every monitor once before honouring `HALT`.
    pub attest_on_halt: bool,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        WatchdogConfig { interval: 64, deadline: 16, seed: 0, attest_on_halt: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WatchdogState {
    pub validation_valid: bool,
    pub interval_w: u32,
    pub countdown: u32,
    pub next_monitor: usize,
    pub challenge: u16,
    pub response_deadline: u32,
    pub pinging: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VmState {
    pub regs: [u16; 16],
    pub flags: Flags,
    pub stack: Vec<u16>,
    /// Logical unit index.
    pub vpc: usize,
    pub halted: bool,
    pub output: Vec<u8>,
    /// Physical data words; hardware mode stores through the data map.
    pub data_mem: Vec<u16>,
    pub counters: MicroOpCounters,
    pub watchdog: WatchdogState,
    pub breach: Option<BreachRecord>,
}

impl VmState {
    pub fn new(interval: u32) -> Self {
        VmState {
            regs: [0; 16],
            flags: Flags::default(),
            stack: Vec::new(),
            vpc: 0,
            halted: false,
            output: Vec::new(),
            data_mem: vec![0; DATA_WORDS],
            counters: MicroOpCounters::default(),
            watchdog: WatchdogState { interval_w: interval, countdown: interval.max(1), ..Default::default() },
            breach: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmConfig {
    pub watchdog: WatchdogConfig,
    pub csc: CscConfig,
    /// Hardware-mode data key over the 64 x 64 data grid; `None` is identity.
    pub data_key: Option<KeySet>,
    pub kernel: KernelEntries,
    /// Models a compromised kernel: the watchdog never fires.
    pub attack_kernel: bool,
    pub record_fetches: bool,
    /// Record which physical slots execute.
    pub track_executed: bool,
    /// Hard cap on executed slots, application or not.
    pub max_steps: Option<u64>,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            watchdog: WatchdogConfig::default(),
            csc: CscConfig::default(),
            data_key: None,
            kernel: KernelEntries::default(),
            attack_kernel: false,
            record_fetches: false,
            track_executed: false,
            max_steps: None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VmError {
    #[error("data key must cover a {DATA_SIDE}x{DATA_SIDE} grid, got n={0}")]
    DataKey(u32),
    #[error("watchdog interval must be at least 1")]
    Interval,
    #[error("response deadline {deadline} is shorter than monitor length {len}")]
    Deadline { deadline: u32, len: usize },
    #[error("slot {index} is outside an image of {len} slots")]
    SlotRange { index: usize, len: usize },
}
