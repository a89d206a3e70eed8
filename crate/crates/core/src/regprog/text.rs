use super::{Device, LiftError, Phase, RegisterProgram, RegisterWrite};
use std::fmt::Write;

fn hex_field(name: &str) -> bool {
    matches!(name, "key" | "addr")
}

/// One line per write, `DEVICE REGISTER field=value ... # comment`, with a
/// `# phase NAME` line opening each phase.
pub fn to_text(p: &RegisterProgram) -> String {
    let mut out = String::new();
    for w in &p.warnings {
        let _ = writeln!(out, "# warning: {w}");
    }
    let mut phase = None;
    for w in &p.writes {
        if phase != Some(w.phase) {
            let _ = writeln!(out, "# phase {}", w.phase);
            phase = Some(w.phase);
        }
        let _ = write!(out, "{} {}", w.device, w.register);
        for (n, v) in &w.fields {
            if hex_field(n) {
                let _ = write!(out, " {n}={v:#X}");
            } else {
                let _ = write!(out, " {n}={v}");
            }
        }
        if !w.comment.is_empty() {
            let _ = write!(out, " # {}", w.comment);
        }
        out.push('\n');
    }
    out
}

pub fn to_json(p: &RegisterProgram) -> String {
    serde_json::to_string_pretty(p).expect("register programs always serialize")
}

fn parse_value(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Inverse of [`to_text`].
pub fn parse_text(text: &str) -> Result<RegisterProgram, LiftError> {
    let mut p = RegisterProgram::default();
    let mut phase: Option<Phase> = None;
    for (i, line) in text.lines().enumerate() {
        let bad = |m: String| LiftError::MalformedProgram(format!("line {}: {m}", i + 1));
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let c = c.trim();
            if let Some(name) = c.strip_prefix("phase ") {
                phase = Some(Phase::parse(name.trim()).ok_or_else(|| bad(format!("unknown phase '{name}'")))?);
            } else if let Some(w) = c.strip_prefix("warning: ") {
                p.warnings.push(w.to_string());
            }
            continue;
        }
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b.trim(), c.trim().to_string()),
            None => (line, String::new()),
        };
        let mut parts = body.split_whitespace();
        let dev = parts.next().unwrap_or_default();
        let device = Device::parse(dev).ok_or_else(|| bad(format!("unknown device '{dev}'")))?;
        let register = parts.next().ok_or_else(|| bad("missing register".into()))?.to_string();
        let mut fields = Vec::new();
        for f in parts {
            let (n, v) = f.split_once('=').ok_or_else(|| bad(format!("expected field=value, got '{f}'")))?;
            let v = parse_value(v).ok_or_else(|| bad(format!("bad value '{v}'")))?;
            fields.push((n.to_string(), v));
        }
        let phase = phase.ok_or_else(|| bad("write before any phase header".into()))?;
        p.writes.push(RegisterWrite { phase, device, register, fields, comment });
    }
    Ok(p)
}
