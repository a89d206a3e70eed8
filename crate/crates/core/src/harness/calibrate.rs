use super::{Board, BoardOverrides, BoardPreset, ExperimentConfig, HarnessError, Point};
use crate::accounting::MemOp;
use crate::regulators::Design;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    /// A target is safe only if every one of these workloads holds it.
    pub ops: Vec<MemOp>,
    pub tolerance: f64,
    pub duration_us: f64,
    pub seed: u64,
    pub overrides: BoardOverrides,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        CalibrateOptions {
            ops: vec![MemOp::Read, MemOp::Write],
            tolerance: 0.05,
            duration_us: 1000.0,
            seed: 0,
            overrides: BoardOverrides::default(),
        }
    }
}

/// Smallest target (MB/s) that `design` holds to within `tolerance` on
/// saturating workloads. Targets are searched on the budget grid, so the
/// answer is a multiple of one budget event per period.
pub fn calibrate_safe_floor(
    preset: BoardPreset,
    design: Design,
    period_us: f64,
    opts: &CalibrateOptions,
) -> Result<f64, HarnessError> {
    let board = Board::new(preset, &opts.overrides);
    let line = board.model.cacheline_bytes as f64;
    let quantum = line / period_us;
    let max_budget = (board.mem_cap_mbps / quantum).floor().clamp(1.0, u16::MAX as f64) as u32;

    let mut cfg = ExperimentConfig::new(preset, &[design.name()], &opts.ops, &[quantum]);
    cfg.board_overrides = opts.overrides.clone();
    cfg.period_us = period_us;
    cfg.duration_us = opts.duration_us;
    cfg.window_us = 0.0;
    cfg.seed = opts.seed;
    cfg.validate()?;

    let holds = |budget: u32| -> Result<bool, HarnessError> {
        let target = budget as f64 * quantum;
        for &op in &opts.ops {
            let row = super::run_point(&cfg, &Point { regulator: Some(design), op, target_mbps: target })?;
            if row.accounted_mbps() / target > 1.0 + opts.tolerance {
                return Ok(false);
            }
        }
        Ok(true)
    };

    if holds(1)? {
        return Ok(quantum);
    }
    if !holds(max_budget)? {
        return Err(HarnessError::NoConvergence { max_mbps: max_budget as f64 * quantum });
    }
    let (mut bad, mut good) = (1, max_budget);
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if holds(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good as f64 * quantum)
}
