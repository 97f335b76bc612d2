use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catmap::KeySet;
use crate::harness::{gen_key, GoldenImage};
use crate::isa::AsmProgram;
use crate::transform::{build_image, BuildConfig, InterleaveConfig, KernelEntries, Mode};
use crate::vm::{BreachCause, Vm, VmConfig, WatchdogConfig};

use super::{classify, AttackError, AttackSpec, Tripwire};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub n: u32,
    pub m: usize,
    pub monitor_len: usize,
    /// Interval and deadline; the challenge seed is drawn per trial.
    pub watchdog: WatchdogConfig,
    pub seed: u64,
    pub trials: usize,
    pub attack_kernel: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            mode: Mode::Hardware,
            n: 16,
            m: 8,
            monitor_len: 3,
            watchdog: WatchdogConfig::default(),
            seed: 0,
            trials: 100,
            attack_kernel: false,
        }
    }
}

impl CampaignConfig {
    /// Worst-case detection latency for a damaged monitor, in application
    /// instructions: every monitor is pinged once before it comes round.
    pub fn latency_bound(&self) -> u64 {
        self.m as u64 * (self.watchdog.interval as u64 + self.watchdog.deadline as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRow {
    pub trial: usize,
    pub key: KeySet,
    pub spec: String,
    pub detected: bool,
    pub cause: Option<BreachCause>,
    /// Application instructions from landing to breach.
    pub latency: Option<u64>,
    pub oracle: Tripwire,
    /// Whether the outcome is what the classifier allows.
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub trials: usize,
    pub detected: usize,
    pub mean_latency: Option<f64>,
    pub causes: BTreeMap<BreachCause, usize>,
    pub oracle: BTreeMap<Tripwire, usize>,
    /// Trials the classifier says must be detected.
    pub oracle_detected: usize,
    pub disagreements: usize,
    /// Injections that landed and went unnoticed.
    pub evasions: usize,
    pub rows: Vec<TrialRow>,
}

fn agrees(oracle: Tripwire, detected: bool, latency: Option<u64>, bound: u64) -> bool {
    match oracle {
        Tripwire::MonitorHit => detected && latency.is_some_and(|l| l <= bound),
        Tripwire::IllegalExecuted => detected,
        Tripwire::ExecutedHit => true,
        Tripwire::None | Tripwire::Inactive => !detected,
    }
}

/// Runs `cfg.trials` injections against fresh deployments of `golden`.
///
/// Trial `i` uses spec `i mod specs.len()` and draws everything (key,
/// monitor ids, injection site, challenges) from stream `i` of a ChaCha
/// generator seeded with `cfg.seed`, so results are independent of thread
/// scheduling.
pub fn run_campaign(golden: &GoldenImage, cfg: &CampaignConfig, specs: &[AttackSpec]) -> Result<CampaignResult, AttackError> {
    if cfg.trials == 0 || specs.is_empty() {
        return Err(AttackError::EmptyCampaign);
    }
    let prog = golden.program().map_err(|_| AttackError::Authentication)?;
    let rows = (0..cfg.trials)
        .into_par_iter()
        .map(|i| trial(&prog, cfg, &specs[i % specs.len()], i))
        .collect::<Result<Vec<_>, _>>()?;

    let detected: Vec<&TrialRow> = rows.iter().filter(|r| r.detected).collect();
    let latencies: Vec<u64> = detected.iter().filter_map(|r| r.latency).collect();
    let mut causes = BTreeMap::new();
    for r in &detected {
        *causes.entry(r.cause.expect("detected rows carry a cause")).or_insert(0) += 1;
    }
    let mut oracle = BTreeMap::new();
    for r in &rows {
        *oracle.entry(r.oracle).or_insert(0) += 1;
    }
    Ok(CampaignResult {
        trials: rows.len(),
        detected: detected.len(),
        mean_latency: (!latencies.is_empty()).then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64),
        causes,
        oracle_detected: rows.iter().filter(|r| r.oracle.must_detect()).count(),
        disagreements: rows.iter().filter(|r| !r.agrees).count(),
        evasions: rows.iter().filter(|r| !r.detected && r.oracle != Tripwire::Inactive).count(),
        oracle,
        rows,
    })
}

fn trial(prog: &AsmProgram, cfg: &CampaignConfig, spec: &AttackSpec, i: usize) -> Result<TrialRow, AttackError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let key = gen_key(rng.next_u64(), cfg.n);
    let build = BuildConfig {
        mode: cfg.mode,
        key,
        monitors: InterleaveConfig { m: cfg.m, monitor_len: cfg.monitor_len, seed: rng.next_u64() },
        kernel: KernelEntries::default(),
    };
    let img = build_image(prog, &build)?;
    let plan = spec.plan(&img, &mut rng)?;
    let vm_cfg = VmConfig {
        watchdog: WatchdogConfig { seed: rng.next_u64(), ..cfg.watchdog },
        attack_kernel: cfg.attack_kernel,
        track_executed: true,
        ..Default::default()
    };
    let bound = cfg.latency_bound();
    let limit = plan.trigger_after + bound + cfg.watchdog.interval as u64;

    // the clean run sees the same schedule with nothing written
    let mut clean = Vm::new(&img, vm_cfg.clone())?;
    clean.schedule_injection(plan.trigger_after, Vec::new())?;
    let reference = clean.run(limit);
    let executed = reference.executed.as_deref().expect("tracking enabled");
    let oracle = classify(&img, &plan, executed, reference.activated_at.is_some());

    let mut vm = Vm::new(&img, vm_cfg)?;
    vm.schedule_injection(plan.trigger_after, plan.writes())?;
    let run = vm.run(limit);
    let breach = run.breach().copied();
    let latency = breach.zip(run.activated_at).map(|(b, at)| b.at_instruction - at);
    let detected = breach.is_some();
    Ok(TrialRow {
        trial: i,
        key,
        spec: spec.to_string(),
        detected,
        cause: breach.map(|b| b.cause),
        latency,
        oracle,
        agrees: agrees(oracle, detected, latency, bound),
    })
}

impl CampaignResult {
    pub fn detection_rate(&self) -> f64 {
        self.detected as f64 / self.trials as f64
    }

    /// `trial,key,spec,detected,cause,latency,oracle_hit`, one row per trial.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "key", "spec", "detected", "cause", "latency", "oracle_hit"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.trial.to_string(),
                format!("{}:{}:{}", r.key.k, r.key.p, r.key.q),
                r.spec.clone(),
                r.detected.to_string(),
                r.cause.map_or("-".into(), |c| c.to_string()),
                r.latency.map_or("-".into(), |l| l.to_string()),
                r.oracle.token().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    /// Human-readable summary.
    pub fn report(&self) -> String {
        let mut lines = vec![
            format!("trials {}", self.trials),
            format!("detected {} ({:.4})", self.detected, self.detection_rate()),
            match self.mean_latency {
                Some(l) => format!("mean_latency {l:.2}"),
                None => "mean_latency -".into(),
            },
        ];
        for (c, n) in &self.causes {
            lines.push(format!("cause {c} {n}"));
        }
        for (t, n) in &self.oracle {
            lines.push(format!("oracle {} {n}", t.token()));
        }
        lines.push(format!("oracle_detected {}", self.oracle_detected));
        lines.push(format!("evasions {}", self.evasions));
        lines.push(format!("disagreements {}", self.disagreements));
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::parse_specs;

    const WORKLOAD: &str = "\
LDI r1, 0
LDI r2, 1
loop: ADD r1, r2
OUT r1
JMP loop
cold: LDI r3, 7
OUT r3
HALT
";

    fn golden() -> GoldenImage {
        GoldenImage::new("workload", "1", WORKLOAD)
    }

    #[test]
    fn untampered_slots_never_breach() {
        // overwriting the never-executed handler is invisible
        let specs = parse_specs("keyaware nop @cold+3").unwrap();
        let cfg = CampaignConfig { trials: 20, ..Default::default() };
        let r = run_campaign(&golden(), &cfg, &specs).unwrap();
        assert_eq!(r.detected, 0);
        assert_eq!(r.oracle[&Tripwire::None], 20);
        assert_eq!(r.evasions, 20);
        assert_eq!(r.disagreements, 0);
    }

    #[test]
    fn mixed_specs_agree_with_classifier() {
        let specs = parse_specs(
            "contiguous * 12 illegal\ncontiguous * 4 nop\nscattered crafted *3\ndormant 150 * 6 illegal\nkeyaware illegal 2",
        )
        .unwrap();
        for mode in [Mode::Hardware, Mode::Software] {
            let cfg = CampaignConfig { mode, trials: 60, seed: 3, ..Default::default() };
            let r = run_campaign(&golden(), &cfg, &specs).unwrap();
            let bad: Vec<_> = r.rows.iter().filter(|r| !r.agrees).collect();
            assert!(bad.is_empty(), "{mode}: {bad:?}");
            assert!(r.detected > 0);
        }
    }

    #[test]
    fn parallel_result_is_reproducible() {
        let specs = parse_specs("contiguous * 5 crafted\ndormant 40 * 3 nop").unwrap();
        let cfg = CampaignConfig { trials: 30, seed: 11, ..Default::default() };
        let a = run_campaign(&golden(), &cfg, &specs).unwrap();
        let b = run_campaign(&golden(), &cfg, &specs).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().starts_with("trial,key,spec,detected,cause,latency,oracle_hit\n0,"));
    }

    #[test]
    fn compromised_kernel_misses_monitor_damage() {
        let specs = parse_specs("contiguous * 40 nop").unwrap();
        let cfg = CampaignConfig { trials: 10, attack_kernel: true, ..Default::default() };
        let r = run_campaign(&golden(), &cfg, &specs).unwrap();
        assert!(r.rows.iter().any(|t| t.oracle == Tripwire::MonitorHit && !t.detected));
    }

    #[test]
    fn tampered_golden_is_refused() {
        let mut g = golden();
        g.source.push('\n');
        let specs = parse_specs("contiguous * 5 nop").unwrap();
        assert_eq!(run_campaign(&g, &CampaignConfig::default(), &specs), Err(AttackError::Authentication));
    }
}
