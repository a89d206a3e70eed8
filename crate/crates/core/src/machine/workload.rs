use crate::accounting::{BandwidthModel, MemOp, PulseGroup};
use crate::fabric::{ExecMode, SignalId};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstStep {
    pub op: MemOp,
    pub bytes: u64,
    #[serde(default)]
    pub idle_cycles: u64,
    /// Idle cycles are spent in WFI (the ETM stops) instead of computing.
    #[serde(default)]
    pub wfi: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    /// Stream over a region, one cacheline per op, forever or for `passes`.
    Synthetic {
        op: MemOp,
        region_bytes: u64,
        #[serde(default = "one")]
        issue_ipc_limit: f64,
        #[serde(default)]
        passes: Option<u64>,
    },
    TraceReplay {
        path: PathBuf,
    },
    Burst {
        pattern: Vec<BurstStep>,
        #[serde(default)]
        repeat: bool,
        #[serde(default = "one")]
        issue_ipc_limit: f64,
    },
    /// No memory traffic at all.
    Compute,
}

impl WorkloadSpec {
    pub fn synthetic(op: MemOp) -> Self {
        WorkloadSpec::Synthetic { op, region_bytes: 64 << 20, issue_ipc_limit: 1.0, passes: None }
    }

    pub fn validate(&self, cacheline: u32) -> Result<(), String> {
        let line = cacheline as u64;
        match self {
            WorkloadSpec::Synthetic { region_bytes, issue_ipc_limit, .. } => {
                if *region_bytes == 0 || region_bytes % line != 0 {
                    return Err(format!("region_bytes {region_bytes} is not a positive multiple of {line}"));
                }
                if issue_ipc_limit.is_nan() || *issue_ipc_limit <= 0.0 {
                    return Err("issue_ipc_limit must be positive".into());
                }
            }
            WorkloadSpec::Burst { pattern, issue_ipc_limit, .. } => {
                if issue_ipc_limit.is_nan() || *issue_ipc_limit <= 0.0 {
                    return Err("issue_ipc_limit must be positive".into());
                }
                if let Some(s) = pattern.iter().find(|s| s.bytes % line != 0) {
                    return Err(format!("burst bytes {} is not a multiple of {line}", s.bytes));
                }
            }
            WorkloadSpec::TraceReplay { .. } | WorkloadSpec::Compute => {}
        }
        Ok(())
    }

    /// Ops this workload can issue.
    pub fn ops(&self) -> Vec<MemOp> {
        let mut v: Vec<MemOp> = match self {
            WorkloadSpec::Synthetic { op, .. } => vec![*op],
            WorkloadSpec::Burst { pattern, .. } => pattern.iter().filter(|s| s.bytes > 0).map(|s| s.op).collect(),
            _ => vec![],
        };
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TraceSignal {
    /// Generic alias for the model's refill event.
    Refill,
    /// Generic alias for the model's write-back event.
    WriteBack,
    Event(&'static str),
    Raw(SignalId),
}

const EVENT_NAMES: [&str; 8] = [
    "L2D_CACHE_REFILL",
    "L2D_CACHE_WB",
    "L2D_CACHE_WR",
    "L3D_CACHE_ALLOC",
    "L3D_CACHE_REFILL",
    "BUS_ACCESS",
    "BUS_ACCESS_WR",
    "L2D_CACHE",
];

impl TraceSignal {
    fn parse(s: &str) -> Option<TraceSignal> {
        match s {
            "REFILL" => Some(TraceSignal::Refill),
            "WB" => Some(TraceSignal::WriteBack),
            _ if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) => s.parse().ok().map(TraceSignal::Raw),
            _ => EVENT_NAMES.iter().find(|n| **n == s).map(|n| TraceSignal::Event(n)),
        }
    }

    /// The signal this name stands for on a core described by `model`.
    pub fn resolve(self, model: &BandwidthModel) -> Option<SignalId> {
        let find = |pred: &dyn Fn(&str) -> bool| model.terms.iter().find(|t| pred(t.event)).map(|t| t.signals[0]);
        match self {
            TraceSignal::Raw(id) => Some(id),
            TraceSignal::Event(name) => find(&|e| e == name),
            TraceSignal::Refill => {
                find(&|e| e.contains("REFILL")).or_else(|| model.terms.first().map(|t| t.signals[0]))
            }
            TraceSignal::WriteBack => find(&|e| e.contains("WB") || e.contains("WR") || e.contains("ALLOC"))
                .or_else(|| model.terms.last().map(|t| t.signals[0])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub cycle_delta: u64,
    pub signals: Vec<TraceSignal>,
    pub mode: ExecMode,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace file {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Parse the replay format: `cycle_delta,SIGNAL[|SIGNAL...][,user|kernel]`,
/// `#` starts a comment.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line, msg };
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(err(format!("expected 2 or 3 comma-separated fields, got {}", fields.len())));
        }
        let cycle_delta = fields[0].parse().map_err(|_| err(format!("bad cycle delta '{}'", fields[0])))?;
        let signals = fields[1]
            .split('|')
            .map(|s| TraceSignal::parse(s.trim()).ok_or_else(|| err(format!("unknown signal '{}'", s.trim()))))
            .collect::<Result<Vec<_>, _>>()?;
        let mode = match fields.get(2) {
            None | Some(&"user") => ExecMode::User,
            Some(&"kernel") => ExecMode::Kernel,
            Some(m) => return Err(err(format!("bad mode '{m}'"))),
        };
        out.push(TraceRecord { cycle_delta, signals, mode });
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
    parse_trace(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Action {
    Op(MemOp),
    Idle {
        wfi: bool,
    },
    /// Running without memory traffic.
    Busy,
    /// Nothing left to do; the core sits in WFI.
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct ReplayPoint {
    pub at: u64,
    pub group: PulseGroup,
    pub mode: ExecMode,
}

#[derive(Debug, Clone)]
enum Cursor {
    Synthetic { op: MemOp, lines_per_pass: u64, left_in_pass: u64, passes_left: Option<u64> },
    Burst { steps: Vec<BurstStep>, repeat: bool, idx: usize, lines_left: u64, idle_left: u64 },
    Replay { points: Vec<ReplayPoint>, idx: usize },
    Compute,
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct WorkloadCursor {
    cursor: Cursor,
    line: u64,
    pub ipc: f64,
}

impl WorkloadCursor {
    pub fn new(spec: &WorkloadSpec, cacheline: u32, replay: Vec<ReplayPoint>) -> Self {
        let line = cacheline as u64;
        let (cursor, ipc) = match spec {
            WorkloadSpec::Synthetic { op, region_bytes, issue_ipc_limit, passes } => {
                let n = region_bytes / line;
                let c = if passes == &Some(0) || n == 0 {
                    Cursor::Done
                } else {
                    Cursor::Synthetic { op: *op, lines_per_pass: n, left_in_pass: n, passes_left: *passes }
                };
                (c, *issue_ipc_limit)
            }
            WorkloadSpec::Burst { pattern, repeat, issue_ipc_limit } => {
                let c = if pattern.is_empty() {
                    Cursor::Done
                } else {
                    Cursor::Burst {
                        lines_left: pattern[0].bytes / line,
                        idle_left: pattern[0].idle_cycles,
                        steps: pattern.clone(),
                        repeat: *repeat,
                        idx: 0,
                    }
                };
                (c, *issue_ipc_limit)
            }
            WorkloadSpec::TraceReplay { .. } => (Cursor::Replay { points: replay, idx: 0 }, 1.0),
            WorkloadSpec::Compute => (Cursor::Compute, 1.0),
        };
        WorkloadCursor { cursor, line, ipc }
    }

    pub fn peek(&self) -> Action {
        match &self.cursor {
            Cursor::Synthetic { op, .. } => Action::Op(*op),
            Cursor::Burst { steps, idx, lines_left, .. } => {
                if *lines_left > 0 {
                    Action::Op(steps[*idx].op)
                } else {
                    Action::Idle { wfi: steps[*idx].wfi }
                }
            }
            Cursor::Replay { points, idx } if *idx < points.len() => Action::Busy,
            Cursor::Compute => Action::Busy,
            Cursor::Replay { .. } | Cursor::Done => Action::Done,
        }
    }

    pub fn is_done(&self) -> bool {
        match &self.cursor {
            Cursor::Done => true,
            Cursor::Replay { points, idx } => *idx >= points.len(),
            _ => false,
        }
    }

    pub fn consume_op(&mut self) {
        match &mut self.cursor {
            Cursor::Synthetic { left_in_pass, lines_per_pass, passes_left, .. } => {
                *left_in_pass -= 1;
                if *left_in_pass == 0 {
                    *left_in_pass = *lines_per_pass;
                    if let Some(p) = passes_left {
                        *p -= 1;
                        if *p == 0 {
                            self.cursor = Cursor::Done;
                        }
                    }
                }
            }
            Cursor::Burst { lines_left, .. } => {
                *lines_left -= 1;
                self.settle_burst();
            }
            _ => {}
        }
    }

    pub fn consume_idle(&mut self) {
        if let Cursor::Burst { idle_left, .. } = &mut self.cursor {
            *idle_left = idle_left.saturating_sub(1);
            self.settle_burst();
        }
    }

    fn settle_burst(&mut self) {
        let line = self.line;
        if let Cursor::Burst { steps, repeat, idx, lines_left, idle_left } = &mut self.cursor {
            while *lines_left == 0 && *idle_left == 0 {
                *idx += 1;
                if *idx == steps.len() {
                    if !*repeat {
                        self.cursor = Cursor::Done;
                        return;
                    }
                    *idx = 0;
                }
                *lines_left = steps[*idx].bytes / line;
                *idle_left = steps[*idx].idle_cycles;
                if steps.iter().all(|s| s.bytes == 0 && s.idle_cycles == 0) {
                    self.cursor = Cursor::Done;
                    return;
                }
            }
        }
    }

    /// The replay record due at `cycle`, if any.
    pub fn replay_due(&mut self, cycle: u64) -> Option<ReplayPoint> {
        if let Cursor::Replay { points, idx } = &mut self.cursor {
            if let Some(p) = points.get(*idx) {
                if p.at <= cycle {
                    *idx += 1;
                    return Some(p.clone());
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let t = parse_trace("0,REFILL\n3,REFILL|WB\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].cycle_delta, 3);
        assert_eq!(t[1].signals, vec![TraceSignal::Refill, TraceSignal::WriteBack]);
        assert!(parse_trace("").unwrap().is_empty());
        let t = parse_trace("# header\n5, L3D_CACHE_ALLOC|157 , kernel # tail\n").unwrap();
        assert_eq!(t[0].mode, ExecMode::Kernel);
        assert_eq!(t[0].signals, vec![TraceSignal::Event("L3D_CACHE_ALLOC"), TraceSignal::Raw(157)]);
    }

    #[test]
    fn malformed_signal_reports_line() {
        match parse_trace("0,REFILL\n1,BOGUS\n") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn burst_cursor_walks_pattern() {
        let spec = WorkloadSpec::Burst {
            pattern: vec![BurstStep { op: MemOp::Read, bytes: 128, idle_cycles: 2, wfi: true }],
            repeat: false,
            issue_ipc_limit: 1.0,
        };
        let mut c = WorkloadCursor::new(&spec, 64, vec![]);
        assert_eq!(c.peek(), Action::Op(MemOp::Read));
        c.consume_op();
        c.consume_op();
        assert_eq!(c.peek(), Action::Idle { wfi: true });
        c.consume_idle();
        c.consume_idle();
        assert_eq!(c.peek(), Action::Done);
    }
}
