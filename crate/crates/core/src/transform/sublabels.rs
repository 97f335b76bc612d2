use std::collections::BTreeSet;

use crate::isa::{AsmError, AsmProgram, LineBody, Operand, SubDir};

use super::TransformError;

/// Replaces numeric local labels with generated full-frame labels `.S<n>`.
///
/// `Nb` binds to the closest definition of `N:` at or before the referencing
/// line, `Nf` to the closest one strictly after it.
pub fn resolve_sublabels(prog: &AsmProgram) -> Result<AsmProgram, TransformError> {
    if !prog.has_sublabels() {
        return Ok(prog.clone());
    }

    let mut taken: BTreeSet<String> = prog.labels.keys().cloned().collect();
    let mut counter = 0usize;
    let mut fresh = || loop {
        counter += 1;
        let name = format!(".S{counter}");
        if taken.insert(name.clone()) {
            return name;
        }
    };

    // One generated name per (line, number) definition, in source order.
    let mut defs: Vec<(usize, u32, String)> = Vec::new();
    for (idx, line) in prog.lines.iter().enumerate() {
        for &n in &line.sublabels {
            defs.push((idx, n, fresh()));
        }
    }

    let mut lines = prog.lines.clone();
    for (idx, line) in lines.iter_mut().enumerate() {
        if let LineBody::Instr(instr) = &mut line.body {
            if let Operand::Sub(n, dir) = instr.operand {
                let found = match dir {
                    SubDir::Back => defs.iter().rev().find(|(at, m, _)| *m == n && *at <= idx),
                    SubDir::Forward => defs.iter().find(|(at, m, _)| *m == n && *at > idx),
                };
                let Some((_, _, name)) = found else {
                    return Err(AsmError::DanglingSublabel {
                        line: line.source_line,
                        reference: instr.operand.to_string(),
                    }
                    .into());
                };
                instr.operand = Operand::Label(name.clone());
            }
        }
    }
    for (idx, _, name) in &defs {
        lines[*idx].labels.push(name.clone());
        lines[*idx].sublabels.clear();
    }
    Ok(AsmProgram::from_lines(lines)?)
}
