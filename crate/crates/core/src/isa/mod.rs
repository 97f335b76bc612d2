//! A small uniform-width instruction set.
//!
//! Every instruction is one 32-bit word:
//!
//! ```text
//!  31      24 23  20 19  16 15             0
//! +----------+------+------+----------------+
//! |  opcode  |  rd  |  rs  |      imm       |
//! +----------+------+------+----------------+
//! ```
//!
//! Fields an opcode does not use must be zero, so each instruction has exactly
//! one encoding. Words with an unassigned opcode or stray bits decode to
//! [`Decoded::Illegal`].

mod asm;

pub use asm::{
    parse_asm, parse_asm_with, AsmError, AsmInstr, AsmLine, AsmProgram, LineBody, Operand,
    ParseOptions, SubDir,
};

use std::fmt;

/// Registers reserved for the watchdog challenge protocol.
pub const RESERVED_REGS: [u8; 2] = [14, 15];
pub const NUM_REGS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    Nop = 0,
    Halt = 1,
    Ldi = 2,
    Mov = 3,
    Add = 4,
    Sub = 5,
    And = 6,
    Or = 7,
    Xor = 8,
    Cmp = 9,
    Jmp = 10,
    Brne = 11,
    Breq = 12,
    Push = 13,
    Pop = 14,
    Out = 15,
    Ld = 16,
    St = 17,
    Mon = 18,
    Kret = 19,
}

/// How an opcode uses the `rd`, `rs` and `imm` fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Bare,
    /// `KRET entry`
    Kernel,
    /// `LDI rd, imm`
    RdImm,
    /// `MOV rd, rs`
    RdRs,
    /// `JMP imm`
    Target,
    /// `PUSH rs` (rd = 0) or `PUSH imm` (rd = 1)
    Push,
    /// `POP rd`
    Rd,
    /// `OUT rs`
    Rs,
    /// `LD rd, addr`
    Load,
    /// `ST rs, addr`
    Store,
}

impl Opcode {
    pub const ALL: [Opcode; 20] = [
        Opcode::Nop,
        Opcode::Halt,
        Opcode::Ldi,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Cmp,
        Opcode::Jmp,
        Opcode::Brne,
        Opcode::Breq,
        Opcode::Push,
        Opcode::Pop,
        Opcode::Out,
        Opcode::Ld,
        Opcode::St,
        Opcode::Mon,
        Opcode::Kret,
    ];

    pub fn from_byte(b: u8) -> Option<Opcode> {
        Self::ALL.get(b as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Nop => "NOP",
            Opcode::Halt => "HALT",
            Opcode::Ldi => "LDI",
            Opcode::Mov => "MOV",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Cmp => "CMP",
            Opcode::Jmp => "JMP",
            Opcode::Brne => "BRNE",
            Opcode::Breq => "BREQ",
            Opcode::Push => "PUSH",
            Opcode::Pop => "POP",
            Opcode::Out => "OUT",
            Opcode::Ld => "LD",
            Opcode::St => "ST",
            Opcode::Mon => "MON",
            Opcode::Kret => "KRET",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Self::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }

    pub fn shape(self) -> Shape {
        use Opcode::*;
        match self {
            Nop | Halt | Mon => Shape::Bare,
            Kret => Shape::Kernel,
            Ldi => Shape::RdImm,
            Mov | Add | Sub | And | Or | Xor | Cmp => Shape::RdRs,
            Jmp | Brne | Breq => Shape::Target,
            Push => Shape::Push,
            Pop => Shape::Rd,
            Out => Shape::Rs,
            Ld => Shape::Load,
            St => Shape::Store,
        }
    }

    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Jmp | Opcode::Brne | Opcode::Breq)
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, Opcode::Brne | Opcode::Breq)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: u8,
    pub rs: u8,
    pub imm: u16,
}

impl Instruction {
    pub const NOP: Instruction = Instruction::bare(Opcode::Nop);
    pub const HALT: Instruction = Instruction::bare(Opcode::Halt);
    pub const MON: Instruction = Instruction::bare(Opcode::Mon);

    pub const fn bare(op: Opcode) -> Self {
        Instruction { op, rd: 0, rs: 0, imm: 0 }
    }

    pub const fn ldi(rd: u8, imm: u16) -> Self {
        Instruction { op: Opcode::Ldi, rd, rs: 0, imm }
    }

    pub const fn rr(op: Opcode, rd: u8, rs: u8) -> Self {
        Instruction { op, rd, rs, imm: 0 }
    }

    pub const fn target(op: Opcode, imm: u16) -> Self {
        Instruction { op, rd: 0, rs: 0, imm }
    }

    pub const fn push_reg(rs: u8) -> Self {
        Instruction { op: Opcode::Push, rd: 0, rs, imm: 0 }
    }

    pub const fn push_imm(imm: u16) -> Self {
        Instruction { op: Opcode::Push, rd: 1, rs: 0, imm }
    }

    pub const fn pop(rd: u8) -> Self {
        Instruction { op: Opcode::Pop, rd, rs: 0, imm: 0 }
    }

    pub const fn out(rs: u8) -> Self {
        Instruction { op: Opcode::Out, rd: 0, rs, imm: 0 }
    }

    pub const fn ld(rd: u8, addr: u16) -> Self {
        Instruction { op: Opcode::Ld, rd, rs: 0, imm: addr }
    }

    pub const fn st(rs: u8, addr: u16) -> Self {
        Instruction { op: Opcode::St, rd: 0, rs, imm: addr }
    }

    pub const fn kret(entry: u16) -> Self {
        Instruction { op: Opcode::Kret, rd: 0, rs: 0, imm: entry }
    }

    /// Whether the unused fields are zero and registers fit in four bits.
    pub fn is_canonical(&self) -> bool {
        if self.rd as usize >= NUM_REGS || self.rs as usize >= NUM_REGS {
            return false;
        }
        let (rd, rs, imm) = (self.rd != 0, self.rs != 0, self.imm != 0);
        match self.op.shape() {
            Shape::Bare => !rd && !rs && !imm,
            Shape::Kernel | Shape::Target => !rd && !rs,
            Shape::RdImm | Shape::Load => !rs,
            Shape::RdRs => !imm,
            Shape::Push => match self.rd {
                0 => !imm,
                1 => !rs,
                _ => false,
            },
            Shape::Rd => !rs && !imm,
            Shape::Rs | Shape::Store => !rd && (self.op == Opcode::St || !imm),
        }
    }

    /// Registers named by this instruction's operands.
    pub fn registers(&self) -> Vec<u8> {
        match self.op.shape() {
            Shape::Bare | Shape::Kernel | Shape::Target => vec![],
            Shape::RdImm | Shape::Rd | Shape::Load => vec![self.rd],
            Shape::RdRs => vec![self.rd, self.rs],
            Shape::Push if self.rd == 1 => vec![],
            Shape::Push | Shape::Rs | Shape::Store => vec![self.rs],
        }
    }
}

/// Result of decoding an arbitrary word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decoded {
    Valid(Instruction),
    Illegal(u32),
}

impl Decoded {
    pub fn instruction(self) -> Option<Instruction> {
        match self {
            Decoded::Valid(i) => Some(i),
            Decoded::Illegal(_) => None,
        }
    }
}

pub fn encode(instr: &Instruction) -> u32 {
    ((instr.op as u32) << 24)
        | (((instr.rd & 0xF) as u32) << 20)
        | (((instr.rs & 0xF) as u32) << 16)
        | instr.imm as u32
}

pub fn decode(word: u32) -> Decoded {
    let Some(op) = Opcode::from_byte((word >> 24) as u8) else {
        return Decoded::Illegal(word);
    };
    let instr = Instruction {
        op,
        rd: ((word >> 20) & 0xF) as u8,
        rs: ((word >> 16) & 0xF) as u8,
        imm: (word & 0xFFFF) as u16,
    };
    if instr.is_canonical() {
        Decoded::Valid(instr)
    } else {
        Decoded::Illegal(word)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        match self.op.shape() {
            Shape::Bare => f.write_str(m),
            Shape::Kernel => write!(f, "{m} 0x{:04X}", self.imm),
            Shape::RdImm | Shape::Load => write!(f, "{m} r{}, {}", self.rd, self.imm),
            Shape::RdRs => write!(f, "{m} r{}, r{}", self.rd, self.rs),
            Shape::Target => write!(f, "{m} {}", self.imm),
            Shape::Push if self.rd == 1 => write!(f, "{m} {}", self.imm),
            Shape::Push | Shape::Rs => write!(f, "{m} r{}", self.rs),
            Shape::Rd => write!(f, "{m} r{}", self.rd),
            Shape::Store => write!(f, "{m} r{}, {}", self.rs, self.imm),
        }
    }
}

/// One-line textual form that [`parse_asm_with`] accepts back.
pub fn disassemble(word: u32) -> String {
    match decode(word) {
        Decoded::Valid(i) => i.to_string(),
        Decoded::Illegal(w) => format!(".word 0x{w:08X}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Hand-packed reference for the field layout.
    fn pack(op: u32, rd: u32, rs: u32, imm: u32) -> u32 {
        op * 0x0100_0000 + rd * 0x0010_0000 + rs * 0x0001_0000 + imm
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(&Instruction::NOP), 0x0000_0000);
        assert_eq!(encode(&Instruction::HALT), 0x0100_0000);
        assert_eq!(pack(2, 1, 0, 5), 0x0210_0005);
        assert_eq!(encode(&Instruction::ldi(1, 5)), 0x0210_0005);
    }

    #[test]
    fn opcode_table_is_bit_exact() {
        let names = [
            "NOP", "HALT", "LDI", "MOV", "ADD", "SUB", "AND", "OR", "XOR", "CMP", "JMP", "BRNE",
            "BREQ", "PUSH", "POP", "OUT", "LD", "ST", "MON", "KRET",
        ];
        for (byte, name) in names.iter().enumerate() {
            let op = Opcode::from_byte(byte as u8).unwrap();
            assert_eq!(op.mnemonic(), *name);
            assert_eq!(op as u8, byte as u8);
        }
        assert_eq!(Opcode::from_byte(20), None);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(0), Decoded::Valid(Instruction::NOP));
        assert_eq!(decode(0xFF00_0000), Decoded::Illegal(0xFF00_0000));
        // stray bits in an unused field
        assert_eq!(decode(0x0000_0001), Decoded::Illegal(1));
        assert_eq!(decode(0x0D20_0000), Decoded::Illegal(0x0D20_0000));
    }

    #[test]
    fn disassemble_examples() {
        assert_eq!(disassemble(0), "NOP");
        assert_eq!(disassemble(encode(&Instruction::ldi(1, 5))), "LDI r1, 5");
        assert_eq!(disassemble(0xFF00_0000), ".word 0xFF000000");
        assert_eq!(disassemble(encode(&Instruction::kret(0x01EC))), "KRET 0x01EC");
        assert_eq!(disassemble(encode(&Instruction::push_imm(7))), "PUSH 7");
        assert_eq!(disassemble(encode(&Instruction::st(3, 100))), "ST r3, 100");
    }

    /// Every canonical instruction over opcode x rd x rs x sampled imm.
    pub(crate) fn enumerate_valid() -> Vec<Instruction> {
        let imms = [0u16, 1, 2, 5, 0x7F, 0x80, 0xFF, 0x100, 0x1234, 0x7FFF, 0x8000, 0xFFFF];
        let mut out = Vec::new();
        for op in Opcode::ALL {
            for rd in 0..16u8 {
                for rs in 0..16u8 {
                    for &imm in &imms {
                        let i = Instruction { op, rd, rs, imm };
                        if i.is_canonical() {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn exhaustive_round_trip() {
        let all = enumerate_valid();
        assert!(all.len() > 1000);
        for i in all {
            assert_eq!(decode(encode(&i)), Decoded::Valid(i));
        }
    }

    #[test]
    fn disassembly_parses_back() {
        let opts = ParseOptions { allow_reserved: true };
        for i in enumerate_valid() {
            let w = encode(&i);
            let text = disassemble(w);
            let prog = parse_asm_with(&text, opts).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(prog.assemble().unwrap(), vec![w], "{text}");
        }
        let prog = parse_asm_with(&disassemble(0xFF00_0000), opts).unwrap();
        assert_eq!(prog.assemble().unwrap(), vec![0xFF00_0000]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decode_is_left_inverse_of_encode_on_valid_words(w in any::<u32>()) {
                if let Decoded::Valid(i) = decode(w) {
                    prop_assert_eq!(encode(&i), w);
                }
            }
        }
    }
}
