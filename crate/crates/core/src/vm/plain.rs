//! Reference interpreter for un-randomized programs.
//!
//! Runs an assembled program by line index with no kernel, no translation
//! and no watchdog. Running past the last line halts.

use crate::isa::{decode, AsmProgram, Decoded, Opcode};
use crate::transform::{plain_program, TransformError};

use super::{BreachCause, DATA_WORDS, MAX_STACK};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainResult {
    pub output: Vec<u8>,
    pub steps: u64,
    pub halted: bool,
    pub fault: Option<BreachCause>,
}

pub fn run_plain(prog: &AsmProgram, limit: u64) -> Result<PlainResult, TransformError> {
    let words = plain_program(prog)?.assemble()?;
    let mut regs = [0u16; 16];
    let mut z = false;
    let mut stack: Vec<u16> = Vec::new();
    let mut mem = vec![0u16; DATA_WORDS];
    let mut out = Vec::new();
    let mut pc = 0usize;
    let mut steps = 0;
    let done = |out: Vec<u8>, steps, halted, fault| Ok(PlainResult { output: out, steps, halted, fault });

    while steps < limit {
        let Some(&w) = words.get(pc) else {
            return done(out, steps, true, None);
        };
        steps += 1;
        let Decoded::Valid(i) = decode(w) else {
            return done(out, steps, false, Some(BreachCause::IllegalInstruction));
        };
        let (rd, rs) = (i.rd as usize, i.rs as usize);
        let mut next = pc + 1;
        match i.op {
            Opcode::Nop => {}
            Opcode::Halt => return done(out, steps, true, None),
            Opcode::Ldi => regs[rd] = i.imm,
            Opcode::Mov => regs[rd] = regs[rs],
            Opcode::Add => {
                regs[rd] = regs[rd].wrapping_add(regs[rs]);
                z = regs[rd] == 0;
            }
            Opcode::Sub => {
                regs[rd] = regs[rd].wrapping_sub(regs[rs]);
                z = regs[rd] == 0;
            }
            Opcode::And => {
                regs[rd] &= regs[rs];
                z = regs[rd] == 0;
            }
            Opcode::Or => {
                regs[rd] |= regs[rs];
                z = regs[rd] == 0;
            }
            Opcode::Xor => {
                regs[rd] ^= regs[rs];
                z = regs[rd] == 0;
            }
            Opcode::Cmp => z = regs[rd] == regs[rs],
            Opcode::Jmp => next = i.imm as usize,
            Opcode::Brne if !z => next = i.imm as usize,
            Opcode::Breq if z => next = i.imm as usize,
            Opcode::Brne | Opcode::Breq => {}
            Opcode::Push => {
                if stack.len() == MAX_STACK {
                    return done(out, steps, false, Some(BreachCause::StackFault));
                }
                stack.push(if i.rd == 1 { i.imm } else { regs[rs] });
            }
            Opcode::Pop => match stack.pop() {
                Some(v) => regs[rd] = v,
                None => return done(out, steps, false, Some(BreachCause::StackFault)),
            },
            Opcode::Out => out.push(regs[rs] as u8),
            Opcode::Ld | Opcode::St if i.imm as usize >= DATA_WORDS => {
                return done(out, steps, false, Some(BreachCause::IllegalInstruction));
            }
            Opcode::Ld => regs[rd] = mem[i.imm as usize],
            Opcode::St => mem[i.imm as usize] = regs[rs],
            Opcode::Mon | Opcode::Kret => {
                return done(out, steps, false, Some(BreachCause::IllegalInstruction));
            }
        }
        pc = next;
    }
    done(out, steps, false, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_asm;

    #[test]
    fn counts_with_brne() {
        let p = parse_asm("LDI r1, 1\nLDI r2, 6\nLDI r3, 1\nloop: OUT r1\nADD r1, r3\nCMP r1, r2\nBRNE loop").unwrap();
        let r = run_plain(&p, 1000).unwrap();
        assert_eq!(r.output, vec![1, 2, 3, 4, 5]);
        assert!(r.halted);
    }

    #[test]
    fn sublabels_resolve_before_running() {
        let p = parse_asm("LDI r1, 3\nLDI r2, 1\n1: OUT r1\nSUB r1, r2\nBRNE 1b\nHALT").unwrap();
        assert_eq!(run_plain(&p, 1000).unwrap().output, vec![3, 2, 1]);
    }

    #[test]
    fn limit_stops_infinite_loop() {
        let p = parse_asm("l: JMP l").unwrap();
        let r = run_plain(&p, 50).unwrap();
        assert_eq!((r.steps, r.halted), (50, false));
    }
}
