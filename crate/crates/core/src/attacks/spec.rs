//! Line-oriented attack spec files.
//!
//! ```text
//! # comment
//! contiguous <start|*> <len> <payload>
//! scattered <payload> <slot,slot,...|*count>
//! keyaware <payload> <unit|a-b|@label+len>,...
//! dormant <trigger> <start|*> <len> <payload>
//! ```
//!
//! Payloads are `illegal`, `nop` and `crafted`.

use std::fmt;

use super::{AttackError, AttackKind, AttackSpec, Payload, Positions, Start, UnitSel};

pub fn parse_specs(text: &str) -> Result<Vec<AttackSpec>, AttackError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line).map_err(|msg| AttackError::Spec { line: i + 1, msg })?);
    }
    Ok(out)
}

impl std::str::FromStr for AttackSpec {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, AttackError> {
        parse_line(s.trim()).map_err(|msg| AttackError::Spec { line: 1, msg })
    }
}

fn parse_line(line: &str) -> Result<AttackSpec, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    let arity = |n: usize| if f.len() == n { Ok(()) } else { Err(format!("`{}` takes {} fields", f[0], n - 1)) };
    let kind = f[0].to_ascii_lowercase();
    match kind.as_str() {
        "contiguous" => {
            arity(4)?;
            let kind = AttackKind::Contiguous { start: start(f[1])?, len: number(f[2])? };
            Ok(AttackSpec { kind, payload: payload(f[3])? })
        }
        "scattered" => {
            arity(3)?;
            let positions = match f[2].strip_prefix('*') {
                Some(c) => Positions::Random(number(c)?),
                None => Positions::List(f[2].split(',').map(number).collect::<Result<_, _>>()?),
            };
            Ok(AttackSpec { kind: AttackKind::Scattered { positions }, payload: payload(f[1])? })
        }
        "keyaware" => {
            arity(3)?;
            let units = f[2].split(',').map(unit_sel).collect::<Result<_, _>>()?;
            Ok(AttackSpec { kind: AttackKind::KeyAware { units }, payload: payload(f[1])? })
        }
        "dormant" => {
            arity(5)?;
            let kind = AttackKind::Dormant { trigger_after: number(f[1])?, start: start(f[2])?, len: number(f[3])? };
            Ok(AttackSpec { kind, payload: payload(f[4])? })
        }
        other => Err(format!("unknown attack kind `{other}`")),
    }
}

fn number<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

fn start(s: &str) -> Result<Start, String> {
    if s == "*" {
        Ok(Start::Random)
    } else {
        number(s).map(Start::At)
    }
}

fn payload(s: &str) -> Result<Payload, String> {
    Payload::from_token(&s.to_ascii_lowercase()).ok_or_else(|| format!("unknown payload `{s}`"))
}

fn unit_sel(s: &str) -> Result<UnitSel, String> {
    if let Some(rest) = s.strip_prefix('@') {
        let (name, len) = rest.split_once('+').ok_or_else(|| format!("expected @label+len, got `{s}`"))?;
        return Ok(UnitSel::Label(name.to_string(), number(len)?));
    }
    match s.split_once('-') {
        Some((a, b)) => {
            let (a, b) = (number(a)?, number(b)?);
            if a > b {
                return Err(format!("empty range `{s}`"));
            }
            Ok(UnitSel::Range(a, b))
        }
        None => number(s).map(UnitSel::Unit),
    }
}

impl fmt::Display for Start {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Start::At(i) => write!(f, "{i}"),
            Start::Random => f.write_str("*"),
        }
    }
}

impl fmt::Display for UnitSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitSel::Unit(u) => write!(f, "{u}"),
            UnitSel::Range(a, b) => write!(f, "{a}-{b}"),
            UnitSel::Label(l, n) => write!(f, "@{l}+{n}"),
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Renders back into the spec-file grammar.
impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.payload.token();
        match &self.kind {
            AttackKind::Contiguous { start, len } => write!(f, "contiguous {start} {len} {p}"),
            AttackKind::Scattered { positions: Positions::Random(c) } => write!(f, "scattered {p} *{c}"),
            AttackKind::Scattered { positions: Positions::List(l) } => write!(f, "scattered {p} {}", join(l)),
            AttackKind::KeyAware { units } => write!(f, "keyaware {p} {}", join(units)),
            AttackKind::Dormant { trigger_after, start, len } => write!(f, "dormant {trigger_after} {start} {len} {p}"),
        }
    }
}
