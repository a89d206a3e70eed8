use super::{
    bandwidth_to_budget, parse_regulator, Board, BoardOverrides, BoardPreset, HarnessError, OSCILLATION_IRQS_PER_MS,
};
use crate::accounting::{MemOp, ModelVariant};
use crate::machine::{run_system, CoreSetup, RegulatorAttachment, SystemConfig, SystemTrace, WorkloadSpec};
use crate::regulators::{Design, MemGuardConfig, MemPolConfig, RegulatorSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

fn default_ops() -> Vec<MemOp> {
    vec![MemOp::Read]
}
fn default_period() -> f64 {
    5.0
}
fn default_duration() -> f64 {
    10_000.0
}
fn default_window() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

/// One sweep, read from TOML. See `docs/config.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub board: BoardPreset,
    #[serde(default)]
    pub board_overrides: BoardOverrides,
    /// Design names, plus `none` for an unregulated baseline.
    pub regulators: Vec<String>,
    #[serde(default = "default_ops")]
    pub ops: Vec<MemOp>,
    pub targets_mbps: Vec<f64>,
    #[serde(default = "default_period")]
    pub period_us: f64,
    #[serde(default = "default_duration")]
    pub duration_us: f64,
    #[serde(default = "default_window")]
    pub window_us: f64,
    #[serde(default)]
    pub seed: u64,
    /// Extra unregulated cores streaming reads through the same controller.
    #[serde(default)]
    pub interference_cores: usize,
    #[serde(default)]
    pub model_variant: Option<ModelVariant>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn new(board: BoardPreset, regulators: &[&str], ops: &[MemOp], targets_mbps: &[f64]) -> Self {
        ExperimentConfig {
            board,
            board_overrides: BoardOverrides::default(),
            regulators: regulators.iter().map(|s| s.to_string()).collect(),
            ops: ops.to_vec(),
            targets_mbps: targets_mbps.to_vec(),
            period_us: default_period(),
            duration_us: default_duration(),
            window_us: default_window(),
            seed: 0,
            interference_cores: 0,
            model_variant: None,
            threads: None,
            output: OutputPaths::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn board(&self) -> Board {
        Board::new(self.board, &self.board_overrides)
    }

    pub fn designs(&self) -> Result<Vec<Option<Design>>, HarnessError> {
        self.regulators.iter().map(|r| parse_regulator(r).map_err(HarnessError::Config)).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.targets_mbps.is_empty() || self.regulators.is_empty() || self.ops.is_empty() {
            return bad("targets_mbps, regulators and ops must be nonempty".into());
        }
        if let Some(t) = self.targets_mbps.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("target {t} MB/s must be positive"));
        }
        for (name, v) in [("period_us", self.period_us), ("duration_us", self.duration_us)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.window_us.is_nan() || self.window_us < 0.0 {
            return bad("window_us must not be negative".into());
        }
        let board = self.board();
        board.model.validate().map_err(HarnessError::Config)?;
        let designs = self.designs()?;
        let period = board.model.cycles_for_us(self.period_us);
        if designs.iter().flatten().any(|d| d.is_etm()) && period > u16::MAX as u64 {
            return bad(format!(
                "period of {} µs is {period} cycles at {} MHz, exceeds 16-bit counter",
                self.period_us, board.model.freq_mhz
            ));
        }
        Ok(())
    }

    /// Every (regulator, op, target) point in configuration order.
    pub fn points(&self) -> Result<Vec<Point>, HarnessError> {
        let mut out = Vec::new();
        for regulator in self.designs()? {
            for &op in &self.ops {
                for &target_mbps in &self.targets_mbps {
                    out.push(Point { regulator, op, target_mbps });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub regulator: Option<Design>,
    pub op: MemOp,
    pub target_mbps: f64,
}

impl Point {
    pub fn regulator_name(&self) -> &'static str {
        self.regulator.map_or("none", Design::name)
    }
}

/// One sweep point. Column order of the CSV follows field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub target_mbps: f64,
    /// Bench data bandwidth.
    pub achieved_mbps: f64,
    pub op_type: MemOp,
    pub regulator: String,
    pub period_us: f64,
    pub throttle_fraction: f64,
    pub irqs_per_ms: f64,
    /// Largest excess of counted events over the budget in any regulation
    /// period (MemPol: window).
    pub max_window_overshoot_events: f64,
    /// Model events per bench cacheline.
    pub accounted_vs_actual_ratio: f64,
}

impl ResultRow {
    /// Meant for token-bucket rows. PR at a short period throttles once
    /// per period whenever the workload outruns its budget, which at 5 µs
    /// is already 200 interrupts per ms.
    pub fn oscillating(&self) -> bool {
        self.irqs_per_ms > OSCILLATION_IRQS_PER_MS
    }

    /// Bandwidth as the regulator's model counts it.
    pub fn accounted_mbps(&self) -> f64 {
        self.achieved_mbps * self.accounted_vs_actual_ratio
    }
}

#[derive(Debug)]
pub struct SweepFailure {
    pub target_mbps: f64,
    pub op_type: MemOp,
    pub regulator: String,
    pub error: HarnessError,
}

#[derive(Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<SweepFailure>,
}

/// A point turned into a runnable system; the regulated core is core 0.
#[derive(Debug, Clone)]
pub struct PointSystem {
    pub system: SystemConfig,
    /// Budget the overshoot is measured against, in model events.
    pub budget: Option<f64>,
}

pub fn build_point(cfg: &ExperimentConfig, point: &Point) -> Result<PointSystem, HarnessError> {
    let board = cfg.board();
    let mut model = board.model.clone();
    if cfg.model_variant.is_some() {
        model.variant = cfg.model_variant;
    }
    let line = model.cacheline_bytes;
    let period_cycles = model.cycles_for_us(cfg.period_us);
    let (regulator, budget) = match point.regulator {
        None => (RegulatorAttachment::None, None),
        Some(Design::MemGuard) => {
            let budget = (point.target_mbps * cfg.period_us / line as f64).round().max(1.0);
            (RegulatorAttachment::MemGuard(MemGuardConfig { budget_events: budget, period_cycles }), Some(budget))
        }
        Some(Design::MemPol) => {
            let mut c = MemPolConfig::with_defaults(model.freq_mhz, 0.0);
            let window_us = c.window_cycles() as f64 / model.freq_mhz;
            c.budget_per_window = point.target_mbps * window_us / line as f64;
            (RegulatorAttachment::MemPol(c), Some(c.budget_per_window))
        }
        Some(d) => {
            let budget = bandwidth_to_budget(point.target_mbps, cfg.period_us, line)?;
            let mut spec = RegulatorSpec::new(d, budget, period_cycles, model.core_type);
            spec.model_variant = model.variant;
            (RegulatorAttachment::Etm(spec), Some(budget as f64))
        }
    };

    let mut cores = vec![CoreSetup { model: model.clone(), workload: WorkloadSpec::synthetic(point.op), regulator }];
    for _ in 0..cfg.interference_cores {
        cores.push(CoreSetup {
            model: model.clone(),
            workload: WorkloadSpec::synthetic(MemOp::Read),
            regulator: RegulatorAttachment::None,
        });
    }
    let system = SystemConfig {
        cores,
        shared_mem_bandwidth: Some(board.cap_lines_per_cycle()),
        duration_cycles: model.cycles_for_us(cfg.duration_us),
        seed: cfg.seed,
        window_cycles: model.cycles_for_us(cfg.window_us),
        record_fabric: false,
    };
    Ok(PointSystem { system, budget })
}

/// The result row of a finished point run.
pub fn row_from_trace(point: &Point, period_us: f64, ps: &PointSystem, trace: &SystemTrace) -> ResultRow {
    let model = &ps.system.cores[0].model;
    let core = &trace.cores[0];
    let s = &core.stats;
    let cycles = trace.cycles as f64;
    let ms = cycles / (model.freq_mhz * 1000.0);
    ResultRow {
        target_mbps: point.target_mbps,
        achieved_mbps: core.achieved_mbps(trace.cycles, model),
        op_type: point.op,
        regulator: point.regulator_name().to_string(),
        period_us,
        throttle_fraction: ((s.cycles_throttled + s.cycles_halted) as f64 / cycles).min(1.0),
        irqs_per_ms: s.irq_count as f64 / ms,
        max_window_overshoot_events: ps.budget.map_or(0.0, |b| core.max_period_overshoot(b)),
        accounted_vs_actual_ratio: if s.lines == 0 { 0.0 } else { s.user_events / s.lines as f64 },
    }
}

/// Simulate one point of `cfg`.
pub fn run_point(cfg: &ExperimentConfig, point: &Point) -> Result<ResultRow, HarnessError> {
    let ps = build_point(cfg, point)?;
    let trace = run_system(&ps.system)?;
    Ok(row_from_trace(point, cfg.period_us, &ps, &trace))
}

/// Run every point of `cfg`. Failed points are reported separately; rows
/// stay in configuration order whatever order the workers finish in.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let points = cfg.points()?;
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, points.len().max(1));
    let slots: Vec<Mutex<Option<Result<ResultRow, HarnessError>>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = points.get(i) else { break };
                let r = run_point(cfg, p);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });

    let mut out = SweepResult::default();
    for (p, slot) in points.iter().zip(slots) {
        match slot.into_inner().unwrap().expect("every point ran") {
            Ok(row) => out.rows.push(row),
            Err(error) => out.failures.push(SweepFailure {
                target_mbps: p.target_mbps,
                op_type: p.op,
                regulator: p.regulator_name().to_string(),
                error,
            }),
        }
    }
    Ok(out)
}
