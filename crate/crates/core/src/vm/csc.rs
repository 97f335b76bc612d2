//! Address translation for hardware-mode execution and its cost accounting.
//!
//! `MinimalImpact` translates every fetch and every data access on demand.
//! `Consolidated` keeps a small translation cache and, after each fetch,
//! walks the static successors of the fetched instruction (both arms of a
//! conditional branch, the target of a jump, the data address of a load or
//! store) up to `depth` instructions ahead, pre-translating whatever is
//! missing. Pre-translations are counted separately from demand
//! translations; only the latter stall the CPU.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::catmap::Permutation;
use crate::isa::{decode, Decoded, Opcode};

use super::DATA_WORDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostVariant {
    MinimalImpact,
    Consolidated,
}

impl std::str::FromStr for CostVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "minimal" | "minimal-impact" => Ok(CostVariant::MinimalImpact),
            "consolidated" => Ok(CostVariant::Consolidated),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CscConfig {
    pub variant: CostVariant,
    /// Lookahead depth in instructions.
    pub depth: usize,
    /// Entries kept in each of the instruction and data caches.
    pub capacity: usize,
}

impl Default for CscConfig {
    fn default() -> Self {
        CscConfig { variant: CostVariant::MinimalImpact, depth: 4, capacity: 64 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CscStats {
    /// Translations computed while the CPU waited.
    pub demand: u64,
    /// Translations computed ahead of need.
    pub prefetch: u64,
    pub hits: u64,
    pub misses: u64,
    pub data_demand: u64,
    pub data_prefetch: u64,
}

/// Small LRU set of translated addresses.
#[derive(Debug, Clone)]
struct LruSet {
    cap: usize,
    order: VecDeque<usize>,
}

impl LruSet {
    fn new(cap: usize) -> Self {
        LruSet { cap: cap.max(1), order: VecDeque::new() }
    }

    fn contains(&self, a: usize) -> bool {
        self.order.contains(&a)
    }

    fn touch(&mut self, a: usize) {
        if let Some(i) = self.order.iter().position(|&x| x == a) {
            self.order.remove(i);
        } else if self.order.len() == self.cap {
            self.order.pop_front();
        }
        self.order.push_back(a);
    }
}

/// The coprocessor's translation path.
#[derive(Debug, Clone)]
pub struct Csc {
    cfg: CscConfig,
    code: LruSet,
    data: LruSet,
    pub stats: CscStats,
}

impl Csc {
    pub fn new(cfg: CscConfig) -> Self {
        Csc { cfg, code: LruSet::new(cfg.capacity), data: LruSet::new(cfg.capacity), stats: CscStats::default() }
    }

    pub fn config(&self) -> CscConfig {
        self.cfg
    }

    /// Translates an instruction fetch at `vpc`. `word_at` reads the word
    /// stored for a logical unit (used by the lookahead decoder).
    pub fn fetch(&mut self, vpc: usize, perm: &Permutation, word_at: impl Fn(usize) -> u32) -> usize {
        match self.cfg.variant {
            CostVariant::MinimalImpact => self.stats.demand += 1,
            CostVariant::Consolidated => {
                if self.code.contains(vpc) {
                    self.stats.hits += 1;
                } else {
                    self.stats.misses += 1;
                    self.stats.demand += 1;
                }
                self.code.touch(vpc);
                self.lookahead(vpc, perm.len(), &word_at);
            }
        }
        perm.get(vpc)
    }

    /// Translates a data access through the data permutation.
    pub fn data_access(&mut self, addr: usize, data_perm: &Permutation) -> usize {
        match self.cfg.variant {
            CostVariant::MinimalImpact => self.stats.data_demand += 1,
            CostVariant::Consolidated => {
                if !self.data.contains(addr) {
                    self.stats.data_demand += 1;
                }
                self.data.touch(addr);
            }
        }
        data_perm.get(addr)
    }

    fn lookahead(&mut self, from: usize, units: usize, word_at: &impl Fn(usize) -> u32) {
        let mut frontier = vec![from];
        for _ in 0..self.cfg.depth {
            let mut next = Vec::new();
            for u in frontier {
                for s in successors(word_at(u), u, units) {
                    if !self.code.contains(s) {
                        self.stats.prefetch += 1;
                        self.code.touch(s);
                        if let Some(addr) = data_operand(word_at(s)) {
                            if !self.data.contains(addr) {
                                self.stats.data_prefetch += 1;
                                self.data.touch(addr);
                            }
                        }
                        next.push(s);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
    }
}

/// Static successors of the instruction `word` at logical unit `at`.
pub(crate) fn successors(word: u32, at: usize, units: usize) -> Vec<usize> {
    let next = (at + 1) % units;
    match decode(word) {
        Decoded::Valid(i) => match i.op {
            Opcode::Halt => vec![],
            Opcode::Jmp => vec![i.imm as usize % units],
            Opcode::Brne | Opcode::Breq => vec![next, i.imm as usize % units],
            _ => vec![next],
        },
        Decoded::Illegal(_) => vec![],
    }
}

fn data_operand(word: u32) -> Option<usize> {
    match decode(word) {
        Decoded::Valid(i) if matches!(i.op, Opcode::Ld | Opcode::St) && (i.imm as usize) < DATA_WORDS => {
            Some(i.imm as usize)
        }
        _ => None,
    }
}
