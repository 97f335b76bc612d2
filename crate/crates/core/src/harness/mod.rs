//! Golden images, keys and sessions that survive clean resets.

mod golden;
mod keys;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catmap::{CatMapError, KeySet};
use crate::isa::AsmError;
use crate::transform::{build_image, BuildConfig, ImageFormatError, InterleaveConfig, KernelEntries, MemoryImage, Mode, TransformError};
use crate::vm::{BreachRecord, CostVariant, CscConfig, RunResult, Vm, VmConfig, VmError, WatchdogConfig};

pub use golden::{authenticate, load_golden, sha256, GoldenImage};
pub use keys::gen_key;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("golden image failed authentication: digest {actual} does not match {expected}")]
    Authentication { expected: String, actual: String },
    #[error("malformed golden manifest: {0}")]
    Manifest(String),
    #[error("bad config: {0}")]
    Config(String),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    CatMap(#[from] CatMapError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Image(#[from] ImageFormatError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Attack(#[from] crate::attacks::AttackError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// Everything needed to rebuild and rerun an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub n: u32,
    /// Explicit `(k, p, q)`; otherwise drawn with `gen_key(key_seed, n)`.
    pub key: Option<(u32, u32, u32)>,
    pub key_seed: u64,
    pub m: usize,
    pub monitor_len: usize,
    pub monitor_seed: u64,
    pub interval_w: u32,
    pub deadline: u32,
    pub watchdog_seed: u64,
    pub variant: CostVariant,
    pub cache_depth: usize,
    pub cache_capacity: usize,
    /// Hardware data key drawn with `gen_key(seed, 64)`; identity if absent.
    pub data_key_seed: Option<u64>,
    pub limit: u64,
    pub attack_kernel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Hardware,
            n: 16,
            key: None,
            key_seed: 0,
            m: 8,
            monitor_len: 3,
            monitor_seed: 0,
            interval_w: 64,
            deadline: 16,
            watchdog_seed: 0,
            variant: CostVariant::MinimalImpact,
            cache_depth: 4,
            cache_capacity: 64,
            data_key_seed: None,
            limit: 1_000_000,
            attack_kernel: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn key(&self) -> Result<KeySet, HarnessError> {
        match self.key {
            Some((k, p, q)) => Ok(KeySet::new(k, p, q, self.n)?),
            None => Ok(gen_key(self.key_seed, self.n)),
        }
    }

    pub fn build_config(&self) -> Result<BuildConfig, HarnessError> {
        if self.n == 0 {
            return Err(HarnessError::Config("n must be at least 1".into()));
        }
        Ok(BuildConfig {
            mode: self.mode,
            key: self.key()?,
            monitors: InterleaveConfig { m: self.m, monitor_len: self.monitor_len, seed: self.monitor_seed },
            kernel: KernelEntries::default(),
        })
    }

    pub fn vm_config(&self) -> VmConfig {
        VmConfig {
            watchdog: WatchdogConfig {
                interval: self.interval_w,
                deadline: self.deadline,
                seed: self.watchdog_seed,
                ..Default::default()
            },
            csc: CscConfig { variant: self.variant, depth: self.cache_depth, capacity: self.cache_capacity },
            data_key: self.data_key_seed.map(|s| gen_key(s, crate::vm::DATA_SIDE)),
            attack_kernel: self.attack_kernel,
            ..Default::default()
        }
    }
}

/// A golden image deployed under one key, with a breach log that survives
/// clean resets.
#[derive(Debug, Clone)]
pub struct Session {
    pub golden: GoldenImage,
    pub config: RunConfig,
    pub image: MemoryImage,
    pub breach_log: Vec<BreachRecord>,
}

impl Session {
    pub fn start(golden: GoldenImage, config: RunConfig) -> Result<Self, HarnessError> {
        let image = build_image(&golden.program()?, &config.build_config()?)?;
        Ok(Session { golden, config, image, breach_log: Vec::new() })
    }

    /// Runs the current image (or a tampered copy of it) from a fresh state.
    pub fn run_image(&mut self, img: &MemoryImage) -> Result<RunResult, HarnessError> {
        let r = Vm::new(img, self.config.vm_config())?.run(self.config.limit);
        self.breach_log.extend(r.breach().copied());
        Ok(r)
    }

    pub fn run(&mut self) -> Result<RunResult, HarnessError> {
        let img = self.image.clone();
        self.run_image(&img)
    }

    /// Re-verifies the golden image and redeploys it under a fresh key drawn
    /// from `new_seed`. A digest mismatch leaves the session untouched.
    pub fn clean_reset(&mut self, new_seed: u64) -> Result<KeySet, HarnessError> {
        self.golden.verify()?;
        let mut config = self.config.clone();
        config.key = None;
        config.key_seed = new_seed;
        let image = build_image(&self.golden.program()?, &config.build_config()?)?;
        let key = image.key;
        self.config = config;
        self.image = image;
        Ok(key)
    }
}
