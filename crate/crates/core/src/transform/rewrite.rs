use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::isa::{AsmInstr, AsmLine, AsmProgram, Instruction, LineBody, Opcode, Operand};

use super::TransformError;

/// Kernel entry points a `KRET` may return to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelEntries {
    /// `VPC = VPC + 1`, then dispatch.
    pub step: u16,
    /// Pop a pushed target (high byte on top) into the VPC, then dispatch.
    pub jump: u16,
}

impl Default for KernelEntries {
    fn default() -> Self {
        KernelEntries { step: 0x01EC, jump: 0x02D4 }
    }
}

/// Appends a `HALT` unless the program already ends in `HALT` or `JMP`, so
/// execution never runs off the application into what follows it.
pub fn seal(prog: &AsmProgram) -> AsmProgram {
    let ends_closed = matches!(prog.lines.last().and_then(AsmLine::opcode), Some(Opcode::Halt | Opcode::Jmp));
    if ends_closed {
        return prog.clone();
    }
    let mut lines = prog.lines.clone();
    lines.push(AsmLine::concrete(Instruction::HALT));
    AsmProgram { lines, labels: prog.labels.clone() }
}

/// Rewrites a program into 3-slot units that return to the kernel after
/// every instruction.
///
/// * plain instruction `I` -> `I; KRET step; NOP`
/// * `JMP T` -> `PUSH lo(T); PUSH hi(T); KRET jump`
/// * `BRcc T` -> `BRcc .Xn; KRET step; NOP`, with the out-of-line stub
///   `.Xn: PUSH lo(T); PUSH hi(T); KRET jump` appended after the main body
///
/// Stubs live past the end of the main body so the increment path never
/// falls into one. Numeric jump targets (line indices) get a generated `.T<n>`
/// label first.
pub fn rewrite_software_mode(prog: &AsmProgram, step_entry: u16, jump_entry: u16) -> Result<AsmProgram, TransformError> {
    if prog.has_sublabels() {
        return Err(TransformError::UnresolvedSublabels);
    }
    let mut taken: BTreeSet<String> = prog.labels.keys().cloned().collect();
    let lines = label_numeric_targets(prog, &mut taken)?;

    let step = || AsmLine::concrete(Instruction::kret(step_entry));
    let jump = || AsmLine::concrete(Instruction::kret(jump_entry));
    let pad = || AsmLine::concrete(Instruction::NOP);
    let push_target = |target: &str| {
        [
            AsmLine::instr(AsmInstr::push_lo(target)),
            AsmLine::instr(AsmInstr::push_hi(target)),
            jump(),
        ]
    };

    let mut stub_counter = 0usize;
    let mut main: Vec<AsmLine> = Vec::with_capacity(lines.len() * 3);
    let mut stubs: Vec<AsmLine> = Vec::new();

    for line in &lines {
        let mut unit: Vec<AsmLine> = match &line.body {
            LineBody::Instr(instr) if instr.op.is_control() => {
                let target = match &instr.operand {
                    Operand::Label(l) => l.clone(),
                    other => unreachable!("control operand {other:?} survived labelling"),
                };
                if !taken.contains(&target) {
                    return Err(TransformError::MissingTarget(target));
                }
                if instr.op == Opcode::Jmp {
                    push_target(&target).to_vec()
                } else {
                    let stub = loop {
                        stub_counter += 1;
                        let name = format!(".X{stub_counter}");
                        if taken.insert(name.clone()) {
                            break name;
                        }
                    };
                    let mut stub_unit = push_target(&target);
                    stub_unit[0].labels.push(stub.clone());
                    stubs.extend(stub_unit);
                    vec![AsmLine::instr(AsmInstr::with_label(instr.op, &stub)), step(), pad()]
                }
            }
            _ => {
                let mut first = line.clone();
                first.labels.clear();
                vec![first, step(), pad()]
            }
        };
        unit[0].labels = line.labels.clone();
        unit[0].source_line = line.source_line;
        main.extend(unit);
    }
    main.extend(stubs);
    Ok(AsmProgram::from_lines(main)?)
}

/// Replaces numeric control-flow targets with labels on the target line.
fn label_numeric_targets(prog: &AsmProgram, taken: &mut BTreeSet<String>) -> Result<Vec<AsmLine>, TransformError> {
    let mut lines = prog.lines.clone();
    let mut extra: Vec<(usize, String)> = Vec::new();
    for line in lines.iter_mut() {
        if let LineBody::Instr(instr) = &mut line.body {
            if !instr.op.is_control() {
                continue;
            }
            if let Operand::Value(v) = instr.operand {
                let idx = v as usize;
                let existing = prog.lines.get(idx).ok_or(TransformError::TargetOutOfRange(v))?;
                let name = match existing.labels.first().or(extra.iter().find(|(i, _)| *i == idx).map(|(_, n)| n)) {
                    Some(n) => n.clone(),
                    None => {
                        let mut name = format!(".T{idx}");
                        while taken.contains(&name) {
                            name.push('_');
                        }
                        taken.insert(name.clone());
                        extra.push((idx, name.clone()));
                        name
                    }
                };
                instr.operand = Operand::Label(name);
            } else if !matches!(instr.operand, Operand::Label(_)) {
                return Err(TransformError::MissingTarget(instr.operand.to_string()));
            }
        }
    }
    for (idx, name) in extra {
        lines[idx].labels.push(name);
    }
    Ok(lines)
}
