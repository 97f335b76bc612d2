use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catmap::{permute, Permutation};
use crate::isa::{decode, disassemble, Decoded, Instruction, Opcode};
use crate::transform::{expected_response, MemoryImage, Mode, MonitorEntry, SlotTag, CHALLENGE_REG, RESPONSE_REG};

use super::csc::Csc;
use super::{
    BreachCause, BreachRecord, CostVariant, CscConfig, Flags, MicroOpCounters, Termination, VmConfig, VmError,
    VmState, DATA_SIDE, DATA_WORDS, MAX_STACK,
};

/// One translation request, recorded for offline cost replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FetchEvent {
    /// Instruction fetch (hardware) or kernel dispatch (software) of a unit.
    Code(usize),
    Data(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub output: Vec<u8>,
    pub counters: MicroOpCounters,
    pub termination: Termination,
    /// Application-context instructions retired.
    pub retired: u64,
    pub steps: u64,
    pub fetches: Vec<FetchEvent>,
    /// Physical slots executed since tracking started.
    pub executed: Option<Vec<bool>>,
    /// Retired count at which a scheduled injection landed.
    pub activated_at: Option<u64>,
}

impl RunResult {
    pub fn breach(&self) -> Option<&BreachRecord> {
        self.termination.breach()
    }
}

#[derive(Debug, Clone, Copy)]
struct Saved {
    vpc: usize,
    pc: usize,
    r14: u16,
    r15: u16,
    flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Next,
    Goto(usize),
    Halt,
    MonOk,
}

type Fault = (BreachCause, Option<u16>);

/// A virtual machine loaded with one image.
pub struct Vm {
    img: MemoryImage,
    cfg: VmConfig,
    pub state: VmState,
    perm: Permutation,
    data_perm: Permutation,
    csc: Csc,
    /// Software mode: physical slot of the next instruction.
    pc: usize,
    started: bool,
    retired: u64,
    steps: u64,
    wd_active: bool,
    wd_rng: ChaCha8Rng,
    saved: Option<Saved>,
    /// Physical slot of each monitor's `MON`.
    mon_slots: Vec<usize>,
    attest_left: usize,
    pending: Option<(u64, Vec<(usize, u32)>)>,
    activated_at: Option<u64>,
    fetches: Vec<FetchEvent>,
    executed: Option<Vec<bool>>,
    tracking: bool,
    pub breach_log: Vec<BreachRecord>,
}

impl Vm {
    pub fn new(img: &MemoryImage, cfg: VmConfig) -> Result<Self, VmError> {
        let data_perm = match &cfg.data_key {
            Some(k) if k.n != DATA_SIDE => return Err(VmError::DataKey(k.n)),
            Some(k) => permute(k).expect("64x64 is within capacity"),
            None => Permutation::identity(DATA_WORDS),
        };
        if cfg.watchdog.interval == 0 {
            return Err(VmError::Interval);
        }
        if let Some(len) = img.monitors.iter().map(|m| m.len).max() {
            if (cfg.watchdog.deadline as usize) < len {
                return Err(VmError::Deadline { deadline: cfg.watchdog.deadline, len });
            }
        }
        let perm = img.permutation().clone();
        let width = img.unit_width();
        let mon_slots = img.monitors.iter().map(|m| perm.get(m.mon_unit()) * width).collect();
        let wd_active = !cfg.attack_kernel && !img.monitors.is_empty();
        Ok(Vm {
            state: VmState::new(cfg.watchdog.interval),
            wd_rng: ChaCha8Rng::seed_from_u64(cfg.watchdog.seed),
            csc: Csc::new(cfg.csc),
            executed: cfg.track_executed.then(|| vec![false; img.len()]),
            tracking: cfg.track_executed,
            img: img.clone(),
            cfg,
            perm,
            data_perm,
            pc: 0,
            started: false,
            retired: 0,
            steps: 0,
            wd_active,
            saved: None,
            mon_slots,
            attest_left: 0,
            pending: None,
            activated_at: None,
            fetches: Vec::new(),
            breach_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &VmConfig {
        &self.cfg
    }

    pub fn image(&self) -> &MemoryImage {
        &self.img
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    pub fn watchdog_active(&self) -> bool {
        self.wd_active
    }

    /// Overwrites physical slots once `at` application instructions have
    /// retired. The slots are retagged `Foreign`. Executed-slot tracking, if
    /// enabled, starts when the writes land.
    pub fn schedule_injection(&mut self, at: u64, writes: Vec<(usize, u32)>) -> Result<(), VmError> {
        if let Some(&(index, _)) = writes.iter().find(|(i, _)| *i >= self.img.len()) {
            return Err(VmError::SlotRange { index, len: self.img.len() });
        }
        self.pending = Some((at, writes));
        self.tracking = false;
        Ok(())
    }

    pub fn run(&mut self, limit: u64) -> RunResult {
        self.exec(limit, None).expect("no trace sink")
    }

    /// Like [`Vm::run`], writing one line per executed slot to `out`.
    pub fn run_traced(&mut self, limit: u64, out: &mut dyn Write) -> io::Result<RunResult> {
        self.exec(limit, Some(out))
    }

    fn exec(&mut self, limit: u64, mut out: Option<&mut dyn Write>) -> io::Result<RunResult> {
        let max_steps = self.cfg.max_steps.unwrap_or_else(|| limit.saturating_mul(16).saturating_add(1 << 20));
        let termination = loop {
            if let Some(t) = self.step(limit, max_steps, &mut out)? {
                break t;
            }
        };
        if let (Some(w), Some(b)) = (out.as_mut(), termination.breach()) {
            writeln!(w, "{b}")?;
        }
        Ok(RunResult {
            output: self.state.output.clone(),
            counters: self.state.counters,
            termination,
            retired: self.retired,
            steps: self.steps,
            fetches: std::mem::take(&mut self.fetches),
            executed: self.executed.clone(),
            activated_at: self.activated_at,
        })
    }

    fn step(&mut self, limit: u64, max_steps: u64, out: &mut Option<&mut dyn Write>) -> io::Result<Option<Termination>> {
        if let Some(b) = self.state.breach {
            return Ok(Some(Termination::Breach(b)));
        }
        if self.state.halted {
            return Ok(Some(Termination::Halted));
        }
        let in_app = !self.state.watchdog.pinging && self.attest_left == 0;
        if (in_app && self.retired >= limit) || self.steps >= max_steps {
            return Ok(Some(Termination::LimitReached));
        }
        if in_app && self.pending.as_ref().is_some_and(|(at, _)| self.retired >= *at) {
            let (_, writes) = self.pending.take().expect("checked");
            for (i, w) in writes {
                self.img.slots[i].word = w;
                self.img.slots[i].tag = SlotTag::Foreign;
            }
            self.activated_at = Some(self.retired);
            self.tracking = self.executed.is_some();
        }
        if !self.started {
            self.started = true;
            if self.img.mode == Mode::Software {
                self.dispatch(0);
            }
        }

        let phys = self.fetch();
        let slot = self.img.slots[phys];
        self.steps += 1;
        if let (true, Some(ex)) = (self.tracking, self.executed.as_mut()) {
            ex[phys] = true;
        }
        if slot.tag == SlotTag::App {
            self.state.counters.app_instructions += 1;
        }
        if let Some(w) = out.as_mut() {
            writeln!(w, "{} VPC={} PHYS={} {} [{}]", self.steps, self.state.vpc, phys, disassemble(slot.word), slot.tag.token())?;
        }

        let instr = match decode(slot.word) {
            Decoded::Valid(i) => i,
            Decoded::Illegal(_) => return Ok(Some(self.raise((BreachCause::IllegalInstruction, self.pinged_id())))),
        };
        let flow = match self.execute(instr, phys) {
            Ok(f) => f,
            Err(fault) => return Ok(Some(self.raise(fault))),
        };

        if instr.op != Opcode::Kret {
            if self.state.watchdog.pinging {
                if flow != Flow::MonOk {
                    self.state.watchdog.response_deadline -= 1;
                    if self.state.watchdog.response_deadline == 0 {
                        return Ok(Some(self.raise((BreachCause::MonitorTimeout, self.pinged_id()))));
                    }
                }
            } else if self.attest_left == 0 {
                self.retired += 1;
                if self.wd_active {
                    self.state.watchdog.countdown -= 1;
                }
            }
        }

        match flow {
            Flow::Next => self.advance(),
            Flow::Goto(unit) => self.goto(unit),
            Flow::Halt => {
                if self.wd_active && self.cfg.watchdog.attest_on_halt {
                    self.attest_left = self.img.monitors.len();
                    self.begin_ping();
                    return Ok(None);
                }
                self.state.halted = true;
                return Ok(Some(Termination::Halted));
            }
            Flow::MonOk => {
                self.end_ping();
                if self.attest_left > 0 {
                    self.attest_left -= 1;
                    if self.attest_left == 0 {
                        self.state.halted = true;
                        return Ok(Some(Termination::Halted));
                    }
                    self.begin_ping();
                }
            }
        }
        if self.wd_active && !self.state.watchdog.pinging && self.state.watchdog.countdown == 0 {
            self.begin_ping();
        }
        Ok(None)
    }

    fn fetch(&mut self) -> usize {
        match self.img.mode {
            Mode::Software => self.pc,
            Mode::Hardware => {
                let vpc = self.state.vpc;
                if self.cfg.record_fetches {
                    self.fetches.push(FetchEvent::Code(vpc));
                }
                let (slots, perm) = (&self.img.slots, &self.perm);
                let phys = self.csc.fetch(vpc, perm, |u| slots[perm.get(u)].word);
                self.state.counters.total_fetches += 1;
                self.sync_csc();
                phys
            }
        }
    }

    fn sync_csc(&mut self) {
        let s = self.csc.stats;
        let c = &mut self.state.counters;
        c.catmap_evals = s.demand + s.data_demand;
        c.cache_hits = s.hits;
        c.cache_misses = s.misses;
        c.prefetches = s.prefetch + s.data_prefetch;
        c.data_translations = s.data_demand + s.data_prefetch;
    }

    /// Kernel path: translate the VPC and transfer to its unit.
    fn dispatch(&mut self, unit: usize) {
        let units = self.img.units();
        self.state.vpc = unit % units;
        self.pc = self.perm.get(self.state.vpc) * 3;
        let c = &mut self.state.counters;
        c.total_fetches += 3;
        c.catmap_evals += 1;
        if self.cfg.record_fetches {
            self.fetches.push(FetchEvent::Code(self.state.vpc));
        }
    }

    fn advance(&mut self) {
        match self.img.mode {
            Mode::Hardware => self.state.vpc = (self.state.vpc + 1) % self.img.units(),
            Mode::Software => {
                // the CPU runs on into whatever unit is physically next
                self.pc = (self.pc + 1) % self.img.len();
                if self.pc % 3 == 0 {
                    self.state.counters.total_fetches += 3;
                }
            }
        }
    }

    fn goto(&mut self, unit: usize) {
        match self.img.mode {
            Mode::Hardware => self.state.vpc = unit % self.img.units(),
            Mode::Software => self.dispatch(unit),
        }
    }

    fn pinged(&self) -> Option<&MonitorEntry> {
        let wd = &self.state.watchdog;
        wd.pinging.then(|| &self.img.monitors[wd.next_monitor])
    }

    fn pinged_id(&self) -> Option<u16> {
        self.pinged().map(|m| m.id)
    }

    fn begin_ping(&mut self) {
        let st = &mut self.state;
        self.saved = Some(Saved {
            vpc: st.vpc,
            pc: self.pc,
            r14: st.regs[RESPONSE_REG as usize],
            r15: st.regs[CHALLENGE_REG as usize],
            flags: st.flags,
        });
        let challenge: u16 = self.wd_rng.gen_range(1..=u16::MAX);
        let wd = &mut st.watchdog;
        wd.challenge = challenge;
        wd.pinging = true;
        wd.validation_valid = false;
        wd.response_deadline = self.cfg.watchdog.deadline;
        wd.countdown = wd.interval_w;
        st.regs[RESPONSE_REG as usize] = 0;
        st.regs[CHALLENGE_REG as usize] = challenge;
        let entry = self.img.monitors[wd.next_monitor].entry;
        self.goto(entry);
    }

    fn end_ping(&mut self) {
        let saved = self.saved.take().expect("ping in flight");
        let st = &mut self.state;
        st.vpc = saved.vpc;
        self.pc = saved.pc;
        st.regs[RESPONSE_REG as usize] = saved.r14;
        st.regs[CHALLENGE_REG as usize] = saved.r15;
        st.flags = saved.flags;
        let wd = &mut st.watchdog;
        wd.pinging = false;
        wd.validation_valid = true;
        wd.next_monitor = (wd.next_monitor + 1) % self.img.monitors.len();
        wd.countdown = wd.interval_w;
    }

    fn raise(&mut self, (cause, monitor_id): Fault) -> Termination {
        let rec = BreachRecord { cause, at_instruction: self.retired, monitor_id };
        self.state.breach = Some(rec);
        self.breach_log.push(rec);
        Termination::Breach(rec)
    }

    fn data_addr(&mut self, imm: u16) -> Result<usize, Fault> {
        let addr = imm as usize;
        if addr >= DATA_WORDS {
            return Err((BreachCause::IllegalInstruction, self.pinged_id()));
        }
        self.state.counters.data_accesses += 1;
        match self.img.mode {
            Mode::Software => Ok(addr),
            Mode::Hardware => {
                if self.cfg.record_fetches {
                    self.fetches.push(FetchEvent::Data(addr));
                }
                let phys = self.csc.data_access(addr, &self.data_perm);
                self.sync_csc();
                Ok(phys)
            }
        }
    }

    fn set_flags(&mut self, v: u16) {
        self.state.flags = Flags { z: v == 0, n: v & 0x8000 != 0 };
    }

    fn execute(&mut self, i: Instruction, phys: usize) -> Result<Flow, Fault> {
        let (rd, rs) = (i.rd as usize, i.rs as usize);
        let pinged = self.pinged_id();
        let fault = |c| (c, pinged);
        match i.op {
            Opcode::Nop => {}
            Opcode::Halt => {
                if self.state.watchdog.pinging {
                    return Err(fault(BreachCause::MonitorTimeout));
                }
                return Ok(Flow::Halt);
            }
            Opcode::Ldi => self.state.regs[rd] = i.imm,
            Opcode::Mov => self.state.regs[rd] = self.state.regs[rs],
            Opcode::Add | Opcode::Sub | Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Cmp => {
                let (a, b) = (self.state.regs[rd], self.state.regs[rs]);
                let v = match i.op {
                    Opcode::Add => a.wrapping_add(b),
                    Opcode::Sub | Opcode::Cmp => a.wrapping_sub(b),
                    Opcode::And => a & b,
                    Opcode::Or => a | b,
                    _ => a ^ b,
                };
                if i.op != Opcode::Cmp {
                    self.state.regs[rd] = v;
                }
                self.set_flags(v);
            }
            Opcode::Jmp => return Ok(Flow::Goto(i.imm as usize)),
            Opcode::Brne | Opcode::Breq => {
                if self.state.flags.z == (i.op == Opcode::Breq) {
                    return Ok(Flow::Goto(i.imm as usize));
                }
            }
            Opcode::Push => {
                if self.state.stack.len() >= MAX_STACK {
                    return Err(fault(BreachCause::StackFault));
                }
                let v = if i.rd == 1 { i.imm } else { self.state.regs[rs] };
                self.state.stack.push(v);
            }
            Opcode::Pop => match self.state.stack.pop() {
                Some(v) => self.state.regs[rd] = v,
                None => return Err(fault(BreachCause::StackFault)),
            },
            Opcode::Out => self.state.output.push(self.state.regs[rs] as u8),
            Opcode::Ld => {
                let a = self.data_addr(i.imm)?;
                self.state.regs[rd] = self.state.data_mem[a];
            }
            Opcode::St => {
                let a = self.data_addr(i.imm)?;
                self.state.data_mem[a] = self.state.regs[rs];
            }
            Opcode::Mon => {
                let Some(m) = self.pinged().copied() else {
                    return Err((BreachCause::BadResponse, None));
                };
                let idx = self.state.watchdog.next_monitor;
                let want = expected_response(m.id, self.state.watchdog.challenge, m.len);
                if phys != self.mon_slots[idx] || self.state.regs[RESPONSE_REG as usize] != want {
                    return Err((BreachCause::BadResponse, Some(m.id)));
                }
                return Ok(Flow::MonOk);
            }
            Opcode::Kret => {
                if self.img.mode == Mode::Hardware {
                    return Err(fault(BreachCause::IllegalInstruction));
                }
                let k = self.cfg.kernel;
                if i.imm == k.step {
                    return Ok(Flow::Goto(self.state.vpc + 1));
                }
                if i.imm == k.jump {
                    let (Some(hi), Some(lo)) = (self.state.stack.pop(), self.state.stack.pop()) else {
                        return Err(fault(BreachCause::StackFault));
                    };
                    return Ok(Flow::Goto(((hi & 0xFF) << 8 | (lo & 0xFF)) as usize));
                }
                return Err(fault(BreachCause::IllegalInstruction));
            }
        }
        Ok(Flow::Next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantCost {
    pub variant: CostVariant,
    /// Translations the CPU waited on (instruction and data).
    pub demand: u64,
    pub prefetch: u64,
    pub hit_rate: f64,
    pub per_app_instruction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadSummary {
    pub mode: Mode,
    pub app_instructions: u64,
    pub total_fetches: u64,
    pub minimal: VariantCost,
    pub consolidated: VariantCost,
    /// Software mode only: fetched slots per application instruction.
    pub software_fetch_ratio: Option<f64>,
}

/// Replays a run's recorded translation requests under both cost variants.
///
/// The run must have been made with `record_fetches` set; `img` supplies the
/// words the lookahead decodes.
pub fn cost_model(img: &MemoryImage, run: &RunResult, csc: CscConfig) -> OverheadSummary {
    let app = run.counters.app_instructions;
    let per_app = |x: u64| if app == 0 { 0.0 } else { x as f64 / app as f64 };
    let perm = img.permutation();
    let data_perm = Permutation::identity(DATA_WORDS);
    let replay = |variant| {
        let mut c = Csc::new(CscConfig { variant, ..csc });
        for ev in &run.fetches {
            match *ev {
                FetchEvent::Code(u) => {
                    c.fetch(u, perm, |v| img.slots[perm.get(v) * img.unit_width()].word);
                }
                FetchEvent::Data(a) => {
                    c.data_access(a, &data_perm);
                }
            }
        }
        let s = c.stats;
        let lookups = s.hits + s.misses;
        VariantCost {
            variant,
            demand: s.demand + s.data_demand,
            prefetch: s.prefetch + s.data_prefetch,
            hit_rate: if lookups == 0 { 0.0 } else { s.hits as f64 / lookups as f64 },
            per_app_instruction: per_app(s.demand + s.data_demand),
        }
    };
    OverheadSummary {
        mode: img.mode,
        app_instructions: app,
        total_fetches: run.counters.total_fetches,
        minimal: replay(CostVariant::MinimalImpact),
        consolidated: replay(CostVariant::Consolidated),
        software_fetch_ratio: (img.mode == Mode::Software).then(|| per_app(run.counters.total_fetches)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catmap::KeySet;
    use crate::isa::{encode, parse_asm};
    use crate::transform::{build_image, BuildConfig, InterleaveConfig, KernelEntries};
    use crate::vm::WatchdogConfig;

    fn image(src: &str, mode: Mode, key: (u32, u32, u32, u32), m: usize) -> MemoryImage {
        let cfg = BuildConfig {
            mode,
            key: KeySet::new(key.0, key.1, key.2, key.3).unwrap(),
            monitors: InterleaveConfig { m, monitor_len: 3, seed: 5 },
            kernel: KernelEntries::default(),
        };
        build_image(&parse_asm(src).unwrap(), &cfg).unwrap()
    }

    fn run(img: &MemoryImage, cfg: VmConfig) -> RunResult {
        Vm::new(img, cfg).unwrap().run(100_000)
    }

    const COUNT: &str = "LDI r1, 1\nLDI r2, 6\nLDI r3, 1\nloop: OUT r1\nADD r1, r3\nCMP r1, r2\nBRNE loop\nHALT";

    #[test]
    fn ldi_out_emits_byte() {
        for mode in [Mode::Hardware, Mode::Software] {
            let img = image("LDI r1, 5\nOUT r1", mode, (1, 1, 1, 4), 0);
            let r = run(&img, VmConfig::default());
            assert_eq!(r.output, vec![5]);
            assert_eq!(r.termination, Termination::Halted);
        }
    }

    #[test]
    fn branch_loop_counts_in_both_modes() {
        for mode in [Mode::Hardware, Mode::Software] {
            for m in [0, 2] {
                let img = image(COUNT, mode, (3, 2, 1, 8), m);
                let r = run(&img, VmConfig { watchdog: WatchdogConfig { interval: 5, ..Default::default() }, ..Default::default() });
                assert_eq!(r.output, vec![1, 2, 3, 4, 5], "{mode} m={m}");
                assert_eq!(r.termination, Termination::Halted);
            }
        }
    }

    #[test]
    fn jump_sets_logical_vpc() {
        let img = image("JMP there\nNOP\nthere: HALT", Mode::Hardware, (2, 1, 1, 4), 0);
        let mut vm = Vm::new(&img, VmConfig::default()).unwrap();
        let mut sink = Vec::new();
        vm.run_traced(10, &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        let second = text.lines().nth(1).unwrap();
        assert!(second.starts_with("2 VPC=2 "), "{second}");
        assert!(second.ends_with("HALT [APP]"));
    }

    #[test]
    fn empty_program_halts_quietly() {
        for mode in [Mode::Hardware, Mode::Software] {
            let img = image("", mode, (1, 1, 1, 4), 1);
            let r = run(&img, VmConfig::default());
            assert!(r.output.is_empty());
            assert_eq!(r.termination, Termination::Halted);
        }
    }

    #[test]
    fn software_straight_line_fetches_three_per_instruction() {
        let img = image("LDI r1, 1\nLDI r2, 2\nADD r1, r2\nOUT r1\nHALT", Mode::Software, (5, 1, 2, 4), 0);
        let r = run(&img, VmConfig::default());
        assert_eq!(r.counters.app_instructions, 5);
        assert_eq!(r.counters.total_fetches, 15);
        assert_eq!(r.counters.catmap_evals, 5);
    }

    #[test]
    fn minimal_evals_cover_fetches_and_data() {
        let src = "LDI r1, 9\nST r1, 100\nLD r2, 100\nOUT r2\nHALT";
        let img = image(src, Mode::Hardware, (2, 3, 1, 4), 0);
        let cfg = VmConfig { data_key: Some(KeySet::new(3, 2, 5, 64).unwrap()), ..Default::default() };
        let r = run(&img, cfg);
        assert_eq!(r.output, vec![9]);
        assert_eq!(r.counters.data_accesses, 2);
        assert_eq!(r.counters.catmap_evals, r.counters.total_fetches + 2);
    }

    #[test]
    fn store_lands_at_translated_address() {
        let img = image("LDI r1, 77\nST r1, 5\nHALT", Mode::Hardware, (1, 1, 1, 4), 0);
        let key = KeySet::new(1, 1, 1, 64).unwrap();
        let mut vm = Vm::new(&img, VmConfig { data_key: Some(key), ..Default::default() }).unwrap();
        vm.run(100);
        let phys = crate::vm::translate_data(5, &key).unwrap();
        assert_ne!(phys, 5);
        assert_eq!(vm.state.data_mem[phys], 77);
    }

    #[test]
    fn watchdog_pings_and_renews() {
        let img = image("loop: NOP\nJMP loop", Mode::Hardware, (3, 1, 1, 8), 3);
        let mut vm = Vm::new(&img, VmConfig { watchdog: WatchdogConfig { interval: 4, ..Default::default() }, ..Default::default() }).unwrap();
        let r = vm.run(1000);
        assert_eq!(r.termination, Termination::LimitReached);
        assert!(vm.state.watchdog.validation_valid);
        assert!(vm.state.watchdog.countdown > 0 && vm.state.watchdog.countdown <= 4);
    }

    fn overwrite(img: &MemoryImage, unit: usize, word: u32) -> MemoryImage {
        let mut t = img.clone();
        let p = t.physical_slot(unit * t.unit_width());
        t.slots[p].word = word;
        t.slots[p].tag = SlotTag::Foreign;
        t
    }

    #[test]
    fn nopped_monitor_times_out() {
        for mode in [Mode::Hardware, Mode::Software] {
            let img = image("loop: NOP\nJMP loop", mode, (3, 1, 1, 8), 2);
            let mon = img.monitors[1];
            let t = overwrite(&img, mon.mon_unit(), encode(&Instruction::NOP));
            let r = run(&t, VmConfig::default());
            let b = r.breach().expect("breach");
            assert_eq!(b.cause, BreachCause::MonitorTimeout, "{mode}");
            assert_eq!(b.monitor_id, Some(mon.id));
            assert!(b.at_instruction <= 2 * (64 + 16));
        }
    }

    #[test]
    fn wrong_id_is_bad_response() {
        let img = image("loop: NOP\nJMP loop", Mode::Hardware, (3, 1, 1, 8), 2);
        let mon = img.monitors[0];
        let t = overwrite(&img, mon.entry, encode(&Instruction::ldi(RESPONSE_REG, mon.id ^ 1)));
        let b = *run(&t, VmConfig::default()).breach().unwrap();
        assert_eq!((b.cause, b.monitor_id), (BreachCause::BadResponse, Some(mon.id)));
    }

    #[test]
    fn illegal_word_faults() {
        let img = image("NOP\nNOP\nHALT", Mode::Hardware, (1, 1, 1, 4), 0);
        let t = overwrite(&img, 1, 0xFF00_0000);
        let b = *run(&t, VmConfig::default()).breach().unwrap();
        assert_eq!(b.cause, BreachCause::IllegalInstruction);
        assert_eq!(b.at_instruction, 1);
    }

    #[test]
    fn stack_faults() {
        let img = image("POP r1", Mode::Hardware, (1, 1, 1, 4), 0);
        assert_eq!(run(&img, VmConfig::default()).breach().unwrap().cause, BreachCause::StackFault);
        let img = image("loop: PUSH r1\nJMP loop", Mode::Hardware, (1, 1, 1, 4), 0);
        assert_eq!(run(&img, VmConfig::default()).breach().unwrap().cause, BreachCause::StackFault);
    }

    #[test]
    fn mon_outside_ping_is_bad_response() {
        let img = image("NOP\nHALT", Mode::Hardware, (1, 1, 1, 4), 0);
        let t = overwrite(&img, 0, encode(&Instruction::MON));
        let b = *run(&t, VmConfig::default()).breach().unwrap();
        assert_eq!((b.cause, b.monitor_id), (BreachCause::BadResponse, None));
    }

    #[test]
    fn kret_is_illegal_in_hardware_mode() {
        let img = image("NOP\nHALT", Mode::Hardware, (1, 1, 1, 4), 0);
        let t = overwrite(&img, 0, encode(&Instruction::kret(0x01EC)));
        assert_eq!(run(&t, VmConfig::default()).breach().unwrap().cause, BreachCause::IllegalInstruction);
    }

    #[test]
    fn attack_kernel_disables_watchdog() {
        let img = image("loop: NOP\nJMP loop", Mode::Software, (3, 1, 1, 8), 2);
        let t = overwrite(&img, img.monitors[0].mon_unit(), encode(&Instruction::NOP));
        let r = run(&t, VmConfig { attack_kernel: true, ..Default::default() });
        assert_eq!(r.termination, Termination::LimitReached);
    }

    #[test]
    fn halt_attestation_catches_damage_before_exit() {
        let img = image("LDI r1, 1\nOUT r1\nHALT", Mode::Hardware, (3, 1, 1, 8), 3);
        let t = overwrite(&img, img.monitors[2].entry + 1, encode(&Instruction::NOP));
        let b = *run(&t, VmConfig::default()).breach().unwrap();
        assert_eq!(b.cause, BreachCause::BadResponse);
        assert_eq!(b.monitor_id, Some(img.monitors[2].id));
    }

    #[test]
    fn dormant_injection_waits_for_trigger() {
        let img = image("loop: NOP\nJMP loop", Mode::Hardware, (3, 1, 1, 8), 1);
        let target = img.physical_slot(0);
        let mut vm = Vm::new(&img, VmConfig::default()).unwrap();
        vm.schedule_injection(40, vec![(target, 0xFF00_0000)]).unwrap();
        let r = vm.run(1000);
        assert_eq!(r.activated_at, Some(40));
        let b = r.breach().unwrap();
        assert_eq!(b.cause, BreachCause::IllegalInstruction);
        assert!(b.at_instruction >= 40);
    }

    #[test]
    fn consolidated_never_exceeds_minimal() {
        let img = image(COUNT, Mode::Hardware, (4, 2, 3, 8), 2);
        let cfg = VmConfig { record_fetches: true, ..Default::default() };
        let r = run(&img, cfg);
        let s = cost_model(&img, &r, CscConfig::default());
        assert_eq!(s.minimal.demand, r.counters.catmap_evals);
        assert!(s.consolidated.demand <= s.minimal.demand);
        assert!(s.consolidated.hit_rate > 0.5);
    }

    #[test]
    fn trace_reports_breach_line() {
        let img = image("NOP\nHALT", Mode::Hardware, (1, 1, 1, 4), 0);
        let t = overwrite(&img, 0, 0xFF00_0000);
        let mut sink = Vec::new();
        Vm::new(&t, VmConfig::default()).unwrap().run_traced(10, &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        assert_eq!(text, "1 VPC=0 PHYS=0 .word 0xFF000000 [FOREIGN]\nBREACH IllegalInstruction at=0 mon=-\n");
    }
}
