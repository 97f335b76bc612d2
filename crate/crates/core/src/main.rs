use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cmr::attacks::{
    apply, detection_probability, parse_specs, run_campaign, AttackKind, AttackSpec, CampaignConfig, Payload, Positions,
    Start,
};
use cmr::catmap::{period, KeySet};
use cmr::harness::{gen_key, load_golden, GoldenImage, HarnessError, RunConfig, Session};
use cmr::isa::{encode, parse_asm, Instruction};
use cmr::transform::{build_image, derandomize, homogeneity_report, MemoryImage, Mode, SlotTag};
use cmr::vm::{cost_model, CostVariant, Termination, Vm, WatchdogConfig};

#[derive(Parser)]
#[command(name = "cmr", version, about = "Chaotic memory randomization toolchain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a randomized image from assembly.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "hardware")]
        mode: Mode,
        #[arg(long, default_value_t = 16)]
        n: u32,
        /// Number of monitors.
        #[arg(short, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        monitor_len: usize,
        /// Explicit key as k:p:q; otherwise drawn from the seed.
        #[arg(long)]
        key: Option<String>,
        #[arg(long, env = "CMR_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Execute an image.
    Run {
        image: PathBuf,
        /// Coprocessor cost variant.
        #[arg(long, default_value = "minimal")]
        mode: CostVariant,
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value_t = 1_000_000)]
        limit: u64,
        #[arg(long, default_value_t = 64)]
        watchdog_w: u32,
        #[arg(long, default_value_t = 16)]
        deadline: u32,
        /// Simulate a compromised kernel: the watchdog never fires.
        #[arg(long)]
        attack_kernel: bool,
        /// Draw a data key from this seed (hardware images).
        #[arg(long)]
        data_seed: Option<u64>,
        /// Print the cost model summary.
        #[arg(long)]
        costs: bool,
        #[arg(long, env = "CMR_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Overwrite slots of an image.
    Inject {
        image: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Physical start slot, or `*` for a seeded random one.
        #[arg(long, default_value = "0")]
        start: String,
        #[arg(long, default_value_t = 1)]
        len: usize,
        #[arg(long, value_enum)]
        payload: PayloadArg,
        /// Comma-separated slots (scattered) or logical units (keyaware).
        #[arg(long)]
        positions: Option<String>,
        #[arg(long, env = "CMR_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run an injection campaign against a golden program.
    Campaign {
        golden: PathBuf,
        #[arg(long)]
        specs: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, env = "CMR_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "hardware")]
        mode: Mode,
        #[arg(long, default_value_t = 16)]
        n: u32,
        #[arg(short, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 64)]
        watchdog_w: u32,
        #[arg(long, default_value_t = 16)]
        deadline: u32,
        #[arg(long)]
        attack_kernel: bool,
    },
    /// Monitor dispersion and contiguous-injection detection sweep.
    Analyze {
        image: PathBuf,
        /// Largest injection length in the sweep; defaults to max gap + 1.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Period of the cat map for (p, q) on an n x n grid.
    Period {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        p: u32,
        #[arg(long)]
        q: u32,
    },
    /// Draw keys.
    Keys {
        #[arg(long, env = "CMR_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Tamper with a golden program, then reset it under a fresh key.
    Reset {
        golden: PathBuf,
        #[arg(long, env = "CMR_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Write a golden manifest for an assembly file.
    Seal {
        input: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "1")]
        version: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print an image back in logical order as assembly.
    Derandomize { image: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Contiguous,
    Scattered,
    Keyaware,
}

#[derive(Clone, Copy, ValueEnum)]
enum PayloadArg {
    Illegal,
    Nop,
    Crafted,
}

impl From<PayloadArg> for Payload {
    fn from(p: PayloadArg) -> Self {
        match p {
            PayloadArg::Illegal => Payload::IllegalWords,
            PayloadArg::Nop => Payload::NopSled,
            PayloadArg::Crafted => Payload::CraftedCode,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    Usage(String),
    #[error("breach detected")]
    Breach,
}

type Res = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn load_image(path: &Path) -> Result<MemoryImage, HarnessError> {
    Ok(MemoryImage::from_text(&read(path)?)?)
}

fn parse_key(s: &str, n: u32) -> Result<KeySet, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<u32> = parts.iter().filter_map(|p| p.parse().ok()).collect();
    if parts.len() != 3 || nums.len() != 3 {
        return Err(usage(format!("--key expects k:p:q, got `{s}`")));
    }
    Ok(KeySet::new(nums[0], nums[1], nums[2], n).map_err(HarnessError::from)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Breach => ExitCode::from(1),
            CliError::Harness(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}

fn dispatch(cmd: Cmd) -> Res {
    let mut out = io::stdout().lock();
    match cmd {
        Cmd::Asm { input, output, mode, n, m, monitor_len, key, seed } => {
            let key = match key {
                Some(k) => Some(parse_key(&k, n)?),
                None => None,
            };
            let cfg = RunConfig {
                mode,
                n,
                key: key.map(|k| (k.k, k.p, k.q)),
                key_seed: seed,
                m,
                monitor_len,
                monitor_seed: seed,
                ..Default::default()
            };
            let prog = parse_asm(&read(&input)?).map_err(HarnessError::from)?;
            let img = build_image(&prog, &cfg.build_config()?).map_err(HarnessError::from)?;
            write(&output, &img.to_text())?;
            let _ = writeln!(out, "wrote {} ({} slots, key {}:{}:{}, {} monitors)", output.display(), img.len(), img.key.k, img.key.p, img.key.q, img.monitors.len());
        }
        Cmd::Run { image, mode, trace, limit, watchdog_w, deadline, attack_kernel, data_seed, costs, seed } => {
            let img = load_image(&image)?;
            let cfg = RunConfig {
                variant: mode,
                interval_w: watchdog_w,
                deadline,
                watchdog_seed: seed,
                data_key_seed: data_seed,
                attack_kernel,
                ..Default::default()
            };
            let mut vm_cfg = cfg.vm_config();
            vm_cfg.record_fetches = costs;
            let mut vm = Vm::new(&img, vm_cfg).map_err(HarnessError::from)?;
            let r = if trace {
                vm.run_traced(limit, &mut out).map_err(|e| HarnessError::io(Path::new("<stdout>"), e))?
            } else {
                vm.run(limit)
            };
            let bytes: Vec<String> = r.output.iter().map(u8::to_string).collect();
            let _ = writeln!(out, "output {}", bytes.join(" "));
            let c = r.counters;
            let _ = writeln!(
                out,
                "counters app={} fetches={} evals={} hits={} misses={} prefetches={} data={}",
                c.app_instructions, c.total_fetches, c.catmap_evals, c.cache_hits, c.cache_misses, c.prefetches, c.data_accesses
            );
            if costs {
                let s = cost_model(&img, &r, vm.config().csc);
                let _ = writeln!(out, "cost minimal demand={} per_app={:.3}", s.minimal.demand, s.minimal.per_app_instruction);
                let _ = writeln!(
                    out,
                    "cost consolidated demand={} prefetch={} hit_rate={:.3} per_app={:.3}",
                    s.consolidated.demand, s.consolidated.prefetch, s.consolidated.hit_rate, s.consolidated.per_app_instruction
                );
                if let Some(f) = s.software_fetch_ratio {
                    let _ = writeln!(out, "cost software_fetch_ratio={f:.3}");
                }
            }
            match r.termination {
                Termination::Halted => {
                    let _ = writeln!(out, "status HALTED");
                }
                Termination::LimitReached => {
                    let _ = writeln!(out, "status LIMIT");
                }
                Termination::Breach(b) => {
                    if !trace {
                        let _ = writeln!(out, "{b}");
                    }
                    return Err(CliError::Breach);
                }
            }
        }
        Cmd::Inject { image, kind, start, len, payload, positions, seed, output } => {
            let img = load_image(&image)?;
            let start = match start.as_str() {
                "*" => Start::Random,
                s => Start::At(s.parse().map_err(|_| usage(format!("bad --start `{s}`")))?),
            };
            let list = || -> Result<Vec<usize>, CliError> {
                let raw = positions.as_deref().ok_or_else(|| usage("--positions is required for this kind"))?;
                raw.split(',').map(|p| p.trim().parse().map_err(|_| usage(format!("bad position `{p}`")))).collect()
            };
            let kind = match kind {
                KindArg::Contiguous => AttackKind::Contiguous { start, len },
                KindArg::Scattered => AttackKind::Scattered { positions: Positions::List(list()?) },
                KindArg::Keyaware => {
                    AttackKind::KeyAware { units: list()?.into_iter().map(cmr::attacks::UnitSel::Unit).collect() }
                }
            };
            let spec = AttackSpec { kind, payload: payload.into() };
            let plan = spec.plan(&img, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(HarnessError::from)?;
            write(&output, &apply(&img, &plan).to_text())?;
            let _ = writeln!(out, "overwrote {} slots: {}", plan.positions.len(), join(&plan.positions));
        }
        Cmd::Campaign { golden, specs, trials, seed, csv, mode, n, m, watchdog_w, deadline, attack_kernel } => {
            let golden = load_golden(&golden)?;
            let specs = parse_specs(&read(&specs)?).map_err(HarnessError::from)?;
            let cfg = CampaignConfig {
                mode,
                n,
                m,
                monitor_len: 3,
                watchdog: WatchdogConfig { interval: watchdog_w, deadline, ..Default::default() },
                seed,
                trials,
                attack_kernel,
            };
            let r = run_campaign(&golden, &cfg, &specs).map_err(HarnessError::from)?;
            if let Some(path) = csv {
                write(&path, &r.to_csv())?;
            }
            let _ = write!(out, "{}", r.report());
        }
        Cmd::Analyze { image, max_len } => {
            let img = load_image(&image)?;
            let h = homogeneity_report(&img).map_err(HarnessError::from)?;
            let _ = writeln!(out, "mode {} n {} key {}:{}:{}", img.mode, img.n(), img.key.k, img.key.p, img.key.q);
            let _ = writeln!(out, "slots {} monitor_slots {}", h.total_slots, h.monitor_slots);
            let _ = writeln!(out, "max_gap {} mean_gap {:.3} chi_square {:.3} bins {}", h.max_gap, h.mean_gap, h.chi_square, h.bins);
            let top = max_len.unwrap_or(h.max_gap + 1).clamp(1, img.len());
            let _ = writeln!(out, "L monitor_hit");
            for len in 1..=top {
                let s = detection_probability(&img, len, None).map_err(HarnessError::from)?;
                let _ = writeln!(out, "{len} {:.6}", s.monitor_hit);
            }
        }
        Cmd::Period { n, p, q } => {
            let key = KeySet::new(0, p, q, n).map_err(HarnessError::from)?;
            let _ = writeln!(out, "{}", period(&key).period);
        }
        Cmd::Keys { seed, n, count } => {
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            for i in 0..count {
                let key = gen_key(seed.wrapping_add(i), n);
                let _ = writeln!(out, "{}:{}:{} n={} period={}", key.k, key.p, key.q, n, period(&key).period);
            }
        }
        Cmd::Reset { golden, seed } => {
            let golden = load_golden(&golden)?;
            let mut s = Session::start(golden, RunConfig { key_seed: seed, monitor_seed: seed, ..Default::default() })?;
            let show = |out: &mut io::StdoutLock, label: &str, s: &Session, r: &cmr::vm::RunResult| {
                let k = s.image.key;
                let status = match &r.termination {
                    Termination::Breach(b) => b.to_string(),
                    t => format!("{t:?}"),
                };
                let head: Vec<String> = r.output.iter().take(8).map(u8::to_string).collect();
                let more = if r.output.len() > 8 { " ..." } else { "" };
                let _ = writeln!(out, "{label} key {}:{}:{} output[{}] {}{more} {status}", k.k, k.p, k.q, r.output.len(), head.join(" "));
            };
            let r = s.run()?;
            show(&mut out, "clean", &s, &r);
            let Some(mon) = s.image.monitors.last().copied() else {
                return Err(usage("reset demo needs at least one monitor"));
            };
            let mut tampered = s.image.clone();
            let p = tampered.physical_slot(mon.mon_unit() * tampered.unit_width());
            tampered.slots[p].word = encode(&Instruction::NOP);
            tampered.slots[p].tag = SlotTag::Foreign;
            let r = s.run_image(&tampered)?;
            show(&mut out, "tampered", &s, &r);
            s.clean_reset(seed.wrapping_add(1))?;
            let r = s.run()?;
            show(&mut out, "reset", &s, &r);
            let _ = writeln!(out, "breach_log {}", s.breach_log.len());
        }
        Cmd::Seal { input, name, version, output } => {
            let source = read(&input)?;
            parse_asm(&source).map_err(HarnessError::from)?;
            let name = name.unwrap_or_else(|| input.file_stem().and_then(|s| s.to_str()).unwrap_or("golden").to_string());
            let g = GoldenImage::new(&name, &version, &source);
            write(&output, &g.to_manifest())?;
            let _ = writeln!(out, "{} {}", g.digest_hex(), output.display());
        }
        Cmd::Derandomize { image } => {
            let img = load_image(&image)?;
            let _ = write!(out, "{}", derandomize(&img).render());
        }
    }
    Ok(())
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
