//! Batch experiments: bandwidth-target sweeps over board presets, safe-floor
//! calibration and CSV/SVG output.

mod calibrate;
mod output;
mod presets;
mod spec_file;
mod sweep;

pub use calibrate::{calibrate_safe_floor, CalibrateOptions};
pub use output::{emit_outputs, read_csv, render_svg, write_csv};
pub use presets::{Board, BoardOverrides, BoardPreset};
pub use spec_file::RegulatorFile;
pub use sweep::{
    build_point, row_from_trace, run_point, run_sweep, ExperimentConfig, OutputPaths, Point, PointSystem, ResultRow,
    SweepFailure, SweepResult,
};

use crate::machine::SimError;
use crate::regulators::Design;

/// Irq rate above which a run counts as oscillating.
pub const OSCILLATION_IRQS_PER_MS: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("range error: {0}")]
    Range(String),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("no target up to {max_mbps} MB/s regulates within tolerance")]
    NoConvergence { max_mbps: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Cachelines per period for a target bandwidth, rounded, at least 1.
pub fn bandwidth_to_budget(target_mbps: f64, period_us: f64, cacheline_bytes: u32) -> Result<u32, HarnessError> {
    if !(target_mbps > 0.0 && period_us > 0.0 && cacheline_bytes > 0) {
        return Err(HarnessError::Range(format!(
            "target {target_mbps} MB/s, period {period_us} µs and cacheline {cacheline_bytes} B must be positive"
        )));
    }
    let events = (target_mbps * period_us / cacheline_bytes as f64).round().max(1.0);
    if events > u16::MAX as f64 {
        return Err(HarnessError::Range(format!(
            "budget of {events} events for {target_mbps} MB/s over {period_us} µs exceeds 16-bit counter"
        )));
    }
    Ok(events as u32)
}

/// Bandwidth one budget event per period stands for.
pub fn budget_quantum_mbps(period_us: f64, cacheline_bytes: u32) -> f64 {
    cacheline_bytes as f64 / period_us
}

/// Sweep regulator name: a design or `none` for an unregulated run.
pub fn parse_regulator(s: &str) -> Result<Option<Design>, String> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}
