//! Line-oriented assembly: `[label:] MNEMONIC [operand[, operand]]`.
//!
//! Comments run from `;` to end of line. Labels match
//! `[A-Za-z_.][A-Za-z0-9_.]*`; numeric local labels (`1:`) are referenced as
//! `1b` / `1f`. `lo(label)` and `hi(label)` select the low and high byte of a
//! label's address. `.word <value>` emits a raw word.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{encode, Instruction, Opcode, Shape, NUM_REGS, RESERVED_REGS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: label `{label}` defined twice")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: register r{reg} is reserved for the watchdog")]
    ReservedRegister { line: usize, reg: u8 },
    #[error("line {line}: dangling local label reference `{reference}`")]
    DanglingSublabel { line: usize, reference: String },
    #[error("line {line}: value {value} does not fit in 16 bits")]
    ImmediateRange { line: usize, value: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubDir {
    Back,
    Forward,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    None,
    Value(u16),
    Label(String),
    Lo(String),
    Hi(String),
    Sub(u32, SubDir),
}

impl Operand {
    pub fn label(&self) -> Option<&str> {
        match self {
            Operand::Label(l) | Operand::Lo(l) | Operand::Hi(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::None => Ok(()),
            Operand::Value(v) => write!(f, "{v}"),
            Operand::Label(l) => f.write_str(l),
            Operand::Lo(l) => write!(f, "lo({l})"),
            Operand::Hi(l) => write!(f, "hi({l})"),
            Operand::Sub(n, SubDir::Back) => write!(f, "{n}b"),
            Operand::Sub(n, SubDir::Forward) => write!(f, "{n}f"),
        }
    }
}

/// An instruction whose immediate may still be symbolic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AsmInstr {
    pub op: Opcode,
    pub rd: u8,
    pub rs: u8,
    pub operand: Operand,
}

impl AsmInstr {
    pub fn concrete(i: Instruction) -> Self {
        let operand = match i.op.shape() {
            Shape::Bare | Shape::RdRs | Shape::Rd | Shape::Rs => Operand::None,
            Shape::Push if i.rd == 0 => Operand::None,
            _ => Operand::Value(i.imm),
        };
        AsmInstr { op: i.op, rd: i.rd, rs: i.rs, operand }
    }

    pub fn with_label(op: Opcode, label: &str) -> Self {
        AsmInstr { op, rd: 0, rs: 0, operand: Operand::Label(label.to_string()) }
    }

    pub fn push_lo(label: &str) -> Self {
        AsmInstr { op: Opcode::Push, rd: 1, rs: 0, operand: Operand::Lo(label.to_string()) }
    }

    pub fn push_hi(label: &str) -> Self {
        AsmInstr { op: Opcode::Push, rd: 1, rs: 0, operand: Operand::Hi(label.to_string()) }
    }

    /// Resolves the operand with `addr_of` and produces a concrete instruction.
    pub fn resolve<F>(&self, line: usize, addr_of: F) -> Result<Instruction, AsmError>
    where
        F: Fn(&str) -> Option<u32>,
    {
        let lookup = |l: &str| {
            addr_of(l).ok_or_else(|| AsmError::UndefinedLabel { line, label: l.to_string() })
        };
        let imm = match &self.operand {
            Operand::None => 0,
            Operand::Value(v) => *v as u32,
            Operand::Label(l) => lookup(l)?,
            Operand::Lo(l) => lookup(l)? & 0xFF,
            Operand::Hi(l) => (lookup(l)? >> 8) & 0xFF,
            Operand::Sub(..) => {
                return Err(AsmError::DanglingSublabel { line, reference: self.operand.to_string() })
            }
        };
        if imm > 0xFFFF {
            return Err(AsmError::ImmediateRange { line, value: imm as u64 });
        }
        Ok(Instruction { op: self.op, rd: self.rd, rs: self.rs, imm: imm as u16 })
    }
}

impl fmt::Display for AsmInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        let o = &self.operand;
        match self.op.shape() {
            Shape::Bare => f.write_str(m),
            Shape::Kernel => match o {
                Operand::Value(v) => write!(f, "{m} 0x{v:04X}"),
                _ => write!(f, "{m} {o}"),
            },
            Shape::RdImm | Shape::Load => write!(f, "{m} r{}, {o}", self.rd),
            Shape::RdRs => write!(f, "{m} r{}, r{}", self.rd, self.rs),
            Shape::Target => write!(f, "{m} {o}"),
            Shape::Push if self.rd == 1 => write!(f, "{m} {o}"),
            Shape::Push | Shape::Rs => write!(f, "{m} r{}", self.rs),
            Shape::Rd => write!(f, "{m} r{}", self.rd),
            Shape::Store => write!(f, "{m} r{}, {o}", self.rs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LineBody {
    Instr(AsmInstr),
    Word(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AsmLine {
    pub labels: Vec<String>,
    pub sublabels: Vec<u32>,
    pub body: LineBody,
    /// 1-based line in the source text, 0 for generated lines.
    pub source_line: usize,
}

impl AsmLine {
    pub fn instr(i: AsmInstr) -> Self {
        AsmLine { labels: vec![], sublabels: vec![], body: LineBody::Instr(i), source_line: 0 }
    }

    pub fn concrete(i: Instruction) -> Self {
        Self::instr(AsmInstr::concrete(i))
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.labels.push(label.into());
        self
    }

    pub fn opcode(&self) -> Option<Opcode> {
        match &self.body {
            LineBody::Instr(i) => Some(i.op),
            LineBody::Word(_) => None,
        }
    }
}

/// A parsed program: one line per emitted word, labels bound to line indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsmProgram {
    pub lines: Vec<AsmLine>,
    pub labels: BTreeMap<String, usize>,
}

impl AsmProgram {
    /// Builds a program from lines, indexing their labels.
    pub fn from_lines(lines: Vec<AsmLine>) -> Result<Self, AsmError> {
        let mut labels = BTreeMap::new();
        for (idx, line) in lines.iter().enumerate() {
            for l in &line.labels {
                if labels.insert(l.clone(), idx).is_some() {
                    return Err(AsmError::DuplicateLabel { line: line.source_line, label: l.clone() });
                }
            }
        }
        Ok(AsmProgram { lines, labels })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn has_sublabels(&self) -> bool {
        self.lines.iter().any(|l| {
            !l.sublabels.is_empty()
                || matches!(&l.body, LineBody::Instr(AsmInstr { operand: Operand::Sub(..), .. }))
        })
    }

    /// Assembles with every label bound to its line index.
    pub fn assemble(&self) -> Result<Vec<u32>, AsmError> {
        self.assemble_with(|l| self.labels.get(l).map(|&i| i as u32))
    }

    pub fn assemble_with<F>(&self, addr_of: F) -> Result<Vec<u32>, AsmError>
    where
        F: Fn(&str) -> Option<u32>,
    {
        self.lines
            .iter()
            .map(|line| match &line.body {
                LineBody::Word(w) => Ok(*w),
                LineBody::Instr(i) => Ok(encode(&i.resolve(line.source_line, &addr_of)?)),
            })
            .collect()
    }

    /// Source text; parses back to an equivalent program.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            for l in &line.labels {
                out.push_str(l);
                out.push_str(":\n");
            }
            for s in &line.sublabels {
                out.push_str(&format!("{s}:\n"));
            }
            out.push_str("    ");
            match &line.body {
                LineBody::Instr(i) => out.push_str(&i.to_string()),
                LineBody::Word(w) => out.push_str(&format!(".word 0x{w:08X}")),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept r14/r15 (monitor bodies and disassembly use them).
    pub allow_reserved: bool,
}

/// Parses user assembly; r14 and r15 are rejected.
pub fn parse_asm(text: &str) -> Result<AsmProgram, AsmError> {
    parse_asm_with(text, ParseOptions::default())
}

pub fn parse_asm_with(text: &str, opts: ParseOptions) -> Result<AsmProgram, AsmError> {
    let mut lines = Vec::new();
    let mut pending_labels: Vec<String> = Vec::new();
    let mut pending_subs: Vec<u32> = Vec::new();
    let mut pending_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut rest = raw.split(';').next().unwrap_or("").trim();
        while let Some((head, tail)) = split_label(rest) {
            if pending_labels.is_empty() && pending_subs.is_empty() {
                pending_line = line_no;
            }
            if let Ok(n) = head.parse::<u32>() {
                pending_subs.push(n);
            } else if is_label(head) {
                pending_labels.push(head.to_string());
            } else {
                return Err(syntax(line_no, format!("bad label `{head}`")));
            }
            rest = tail.trim_start();
        }
        if rest.is_empty() {
            continue;
        }
        let body = parse_body(rest, line_no, opts)?;
        lines.push(AsmLine {
            labels: std::mem::take(&mut pending_labels),
            sublabels: std::mem::take(&mut pending_subs),
            body,
            source_line: line_no,
        });
    }
    if !pending_labels.is_empty() || !pending_subs.is_empty() {
        return Err(syntax(pending_line, "label is not followed by an instruction".into()));
    }

    let prog = AsmProgram::from_lines(lines)?;
    for line in &prog.lines {
        if let LineBody::Instr(instr) = &line.body {
            if let Some(l) = instr.operand.label() {
                if !prog.labels.contains_key(l) {
                    return Err(AsmError::UndefinedLabel { line: line.source_line, label: l.into() });
                }
            }
        }
    }
    Ok(prog)
}

fn syntax(line: usize, msg: String) -> AsmError {
    AsmError::Syntax { line, msg }
}

fn split_label(s: &str) -> Option<(&str, &str)> {
    let colon = s.find(':')?;
    let head = &s[..colon];
    if head.is_empty() || head.contains(char::is_whitespace) {
        return None;
    }
    Some((head, &s[colon + 1..]))
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_number(s: &str) -> Option<u64> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else if s.chars().all(|c| c.is_ascii_digit()) && !s.is_empty() {
        s.parse().ok()
    } else {
        None
    }
}

fn parse_body(text: &str, line: usize, opts: ParseOptions) -> Result<LineBody, AsmError> {
    let (mnemonic, args) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let operands: Vec<&str> = if args.is_empty() {
        vec![]
    } else {
        args.split(',').map(str::trim).collect()
    };

    if mnemonic.eq_ignore_ascii_case(".word") {
        let [v] = operands[..] else {
            return Err(syntax(line, ".word takes one value".into()));
        };
        let value = parse_number(v)
            .filter(|&v| v <= u32::MAX as u64)
            .ok_or_else(|| syntax(line, format!("bad word value `{v}`")))?;
        return Ok(LineBody::Word(value as u32));
    }

    let op = Opcode::from_mnemonic(mnemonic)
        .ok_or_else(|| AsmError::UnknownMnemonic { line, mnemonic: mnemonic.to_string() })?;
    let want = |n: usize| {
        if operands.len() == n {
            Ok(())
        } else {
            Err(syntax(line, format!("{op} takes {n} operand(s), got {}", operands.len())))
        }
    };
    let reg = |s: &str| parse_register(s, line, opts);
    let value = |s: &str, allow_sub: bool| parse_value(s, line, allow_sub);

    let mut instr = AsmInstr { op, rd: 0, rs: 0, operand: Operand::None };
    match op.shape() {
        Shape::Bare => want(0)?,
        Shape::Kernel => {
            want(1)?;
            instr.operand = value(operands[0], false)?;
        }
        Shape::RdImm | Shape::Load => {
            want(2)?;
            instr.rd = reg(operands[0])?;
            instr.operand = value(operands[1], false)?;
        }
        Shape::RdRs => {
            want(2)?;
            instr.rd = reg(operands[0])?;
            instr.rs = reg(operands[1])?;
        }
        Shape::Target => {
            want(1)?;
            instr.operand = value(operands[0], true)?;
        }
        Shape::Push => {
            want(1)?;
            if looks_like_register(operands[0]) {
                instr.rs = reg(operands[0])?;
            } else {
                instr.rd = 1;
                instr.operand = value(operands[0], false)?;
            }
        }
        Shape::Rd => {
            want(1)?;
            instr.rd = reg(operands[0])?;
        }
        Shape::Rs => {
            want(1)?;
            instr.rs = reg(operands[0])?;
        }
        Shape::Store => {
            want(2)?;
            instr.rs = reg(operands[0])?;
            instr.operand = value(operands[1], false)?;
        }
    }
    Ok(LineBody::Instr(instr))
}

fn looks_like_register(s: &str) -> bool {
    let s = s.as_bytes();
    s.len() >= 2 && (s[0] == b'r' || s[0] == b'R') && s[1..].iter().all(u8::is_ascii_digit)
}

fn parse_register(s: &str, line: usize, opts: ParseOptions) -> Result<u8, AsmError> {
    if !looks_like_register(s) {
        return Err(syntax(line, format!("expected a register, got `{s}`")));
    }
    let n: usize = s[1..].parse().map_err(|_| syntax(line, format!("bad register `{s}`")))?;
    if n >= NUM_REGS {
        return Err(syntax(line, format!("no register `{s}`")));
    }
    let reg = n as u8;
    if !opts.allow_reserved && RESERVED_REGS.contains(&reg) {
        return Err(AsmError::ReservedRegister { line, reg });
    }
    Ok(reg)
}

fn parse_value(s: &str, line: usize, allow_sub: bool) -> Result<Operand, AsmError> {
    if let Some(v) = parse_number(s) {
        if v > 0xFFFF {
            return Err(AsmError::ImmediateRange { line, value: v });
        }
        return Ok(Operand::Value(v as u16));
    }
    for (prefix, ctor) in [("lo(", Operand::Lo as fn(String) -> Operand), ("hi(", Operand::Hi)] {
        if let Some(inner) = s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')) {
            let inner = inner.trim();
            if !is_label(inner) {
                return Err(syntax(line, format!("bad label `{inner}`")));
            }
            return Ok(ctor(inner.to_string()));
        }
    }
    if let Some(dir) = s.chars().last().and_then(|c| match c {
        'b' => Some(SubDir::Back),
        'f' => Some(SubDir::Forward),
        _ => None,
    }) {
        if let Ok(n) = s[..s.len() - 1].parse::<u32>() {
            if !allow_sub {
                return Err(syntax(line, format!("local label `{s}` not allowed here")));
            }
            return Ok(Operand::Sub(n, dir));
        }
    }
    if is_label(s) {
        return Ok(Operand::Label(s.to_string()));
    }
    Err(syntax(line, format!("bad operand `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_instruction_program() {
        let p = parse_asm("LDI r1, 5\nOUT r1\nHALT").unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.labels.is_empty());
        assert_eq!(p.assemble().unwrap(), vec![0x0210_0005, 0x0F01_0000, 0x0100_0000]);
    }

    #[test]
    fn self_referential_label() {
        let p = parse_asm("loop: SUB r1, r2\nBRNE loop").unwrap();
        assert_eq!(p.labels["loop"], 0);
        let words = p.assemble().unwrap();
        assert_eq!(super::super::decode(words[1]).instruction().unwrap().imm, 0);
    }

    #[test]
    fn reserved_register_rejected() {
        assert_eq!(parse_asm("LDI r14, 1"), Err(AsmError::ReservedRegister { line: 1, reg: 14 }));
        assert!(matches!(parse_asm("MOV r1, r15"), Err(AsmError::ReservedRegister { reg: 15, .. })));
        assert!(parse_asm_with("LDI r14, 1", ParseOptions { allow_reserved: true }).is_ok());
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            parse_asm("NOP\nFROB r1"),
            Err(AsmError::UnknownMnemonic { line: 2, mnemonic: "FROB".into() })
        );
        assert!(matches!(parse_asm("a: NOP\na: NOP"), Err(AsmError::DuplicateLabel { .. })));
        assert_eq!(
            parse_asm("JMP nowhere"),
            Err(AsmError::UndefinedLabel { line: 1, label: "nowhere".into() })
        );
        assert!(matches!(parse_asm("LDI r1"), Err(AsmError::Syntax { line: 1, .. })));
        assert!(matches!(parse_asm("LDI r1, 70000"), Err(AsmError::ImmediateRange { .. })));
        assert!(matches!(parse_asm("NOP\nend:"), Err(AsmError::Syntax { line: 2, .. })));
    }

    #[test]
    fn comments_labels_and_case() {
        let src = "; header\n.L8:\n  1: brne 1b ; spin\nstart: ldi R1, 0x10\n";
        let p = parse_asm(src).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.lines[0].labels, vec![".L8"]);
        assert_eq!(p.lines[0].sublabels, vec![1]);
        assert_eq!(p.lines[0].body, LineBody::Instr(AsmInstr {
            op: Opcode::Brne,
            rd: 0,
            rs: 0,
            operand: Operand::Sub(1, SubDir::Back)
        }));
        assert_eq!(p.labels["start"], 1);
        assert!(p.has_sublabels());
    }

    #[test]
    fn push_forms_and_byte_selectors() {
        let p = parse_asm("t: PUSH lo(t)\nPUSH hi(t)\nPUSH r3\nPUSH 9").unwrap();
        let w = p.assemble().unwrap();
        assert_eq!(w[0], 0x0D10_0000);
        assert_eq!(w[2], 0x0D03_0000);
        assert_eq!(w[3], 0x0D10_0009);
    }

    #[test]
    fn render_parses_back() {
        let src = "start: LDI r1, 3\n1: SUB r1, r2\nBRNE 1b\nPUSH lo(start)\nKRET 0x01EC\n.word 0xFF000000\nHALT";
        let p = parse_asm(src).unwrap();
        let again = parse_asm(&p.render()).unwrap();
        assert_eq!(again.labels, p.labels);
        let strip = |p: &AsmProgram| {
            p.lines.iter().map(|l| (l.labels.clone(), l.sublabels.clone(), l.body.clone())).collect::<Vec<_>>()
        };
        assert_eq!(strip(&again), strip(&p));
    }
}
