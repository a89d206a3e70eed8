//! MemPol: an external control core polls the regulated core's PMU at a
//! fixed interval and halts it while the sliding-window usage is over budget.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemPolConfig {
    pub poll_cycles: u64,
    pub window: usize,
    /// Model units allowed per window of `window` polls.
    pub budget_per_window: f64,
    /// Polls between a decision and the halt or resume taking effect.
    #[serde(default = "default_latency")]
    pub halt_latency_polls: u32,
}

fn default_latency() -> u32 {
    1
}

impl MemPolConfig {
    pub const DEFAULT_POLL_US: f64 = 6.25;
    pub const DEFAULT_WINDOW: usize = 8;

    /// Defaults: 6.25 µs polls, a window of 8 (50 µs), one poll of latency.
    pub fn with_defaults(freq_mhz: f64, budget_per_window: f64) -> Self {
        MemPolConfig {
            poll_cycles: (Self::DEFAULT_POLL_US * freq_mhz).round() as u64,
            window: Self::DEFAULT_WINDOW,
            budget_per_window,
            halt_latency_polls: 1,
        }
    }

    pub fn window_cycles(&self) -> u64 {
        self.poll_cycles * self.window as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemPolState {
    pub config: MemPolConfig,
    pub last_snapshot: f64,
    pub deltas: VecDeque<f64>,
    pub halt: bool,
    pending: VecDeque<(u64, bool)>,
}

impl MemPolState {
    pub fn new(config: MemPolConfig) -> Self {
        MemPolState {
            config,
            last_snapshot: 0.0,
            deltas: VecDeque::from(vec![0.0; config.window.max(1)]),
            halt: false,
            pending: VecDeque::new(),
        }
    }

    pub fn window_usage(&self) -> f64 {
        self.deltas.iter().sum()
    }
}

/// One cycle. `pmc_snapshot` is the cumulative weighted PMU count of the
/// regulated core. Decisions are taken only at poll boundaries.
pub fn mempol_step(state: &MemPolState, pmc_snapshot: f64, cycle: u64) -> (MemPolState, bool) {
    let mut s = state.clone();
    let halt = s.advance(pmc_snapshot, cycle);
    (s, halt)
}

impl MemPolState {
    /// `mempol_step` in place.
    pub fn advance(&mut self, pmc_snapshot: f64, cycle: u64) -> bool {
        let s = self;
        let poll = s.config.poll_cycles.max(1);
        if cycle > 0 && cycle.is_multiple_of(poll) {
            let delta = pmc_snapshot - s.last_snapshot;
            s.last_snapshot = pmc_snapshot;
            s.deltas.pop_front();
            s.deltas.push_back(delta);
            let over = s.window_usage() > s.config.budget_per_window;
            let apply_at = cycle + poll * s.config.halt_latency_polls as u64;
            s.pending.push_back((apply_at, over));
        }
        while let Some(&(at, h)) = s.pending.front() {
            if at > cycle {
                break;
            }
            s.halt = h;
            s.pending.pop_front();
        }
        s.halt
    }
}
