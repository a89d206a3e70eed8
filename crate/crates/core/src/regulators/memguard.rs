//! MemGuard: a PMU overflow interrupt throttles the core once the budget of
//! the current period is spent, and a periodic timer interrupt replenishes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemGuardConfig {
    /// Model units (weighted PMU events) per period.
    pub budget_events: f64,
    /// Not limited to 16 bits; the timer is a kernel timer.
    pub period_cycles: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemGuardState {
    pub config: MemGuardConfig,
    pub used: f64,
    pub throttled: bool,
    pub replenishments: u64,
}

impl MemGuardState {
    pub fn new(config: MemGuardConfig) -> Self {
        MemGuardState { config, used: 0.0, throttled: false, replenishments: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemGuardDecision {
    pub throttle: bool,
    /// The period timer fired this cycle; the core pays for the interrupt.
    pub replenish_irq: bool,
}

/// One cycle. The period timer fires on every multiple of the period, the
/// first one at cycle 0. Events observed while throttled are not charged.
pub fn memguard_step(state: &MemGuardState, pmc_delta: f64, cycle: u64) -> (MemGuardState, MemGuardDecision) {
    let mut s = state.clone();
    let period = s.config.period_cycles.max(1);
    let replenish_irq = cycle.is_multiple_of(period);
    if replenish_irq {
        s.used = 0.0;
        s.throttled = false;
        s.replenishments += 1;
    }
    if !s.throttled {
        s.used += pmc_delta;
        if s.used >= s.config.budget_events {
            s.throttled = true;
        }
    }
    let throttle = s.throttled;
    (s, MemGuardDecision { throttle, replenish_irq })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhausts_and_replenishes() {
        let mut s = MemGuardState::new(MemGuardConfig { budget_events: 3.0, period_cycles: 10 });
        let mut throttled_at = None;
        let mut irqs = 0;
        for c in 0..25 {
            let (n, d) = memguard_step(&s, 1.0, c);
            s = n;
            irqs += d.replenish_irq as u32;
            if d.throttle && throttled_at.is_none() {
                throttled_at = Some(c);
            }
            if (3..10).contains(&c) {
                assert!(d.throttle);
                assert_eq!(s.used, 3.0, "no charging while throttled");
            }
        }
        assert_eq!(throttled_at, Some(2));
        assert_eq!(irqs, 3);
    }

    #[test]
    fn timer_fires_without_traffic() {
        let mut s = MemGuardState::new(MemGuardConfig { budget_events: 5.0, period_cycles: 100 });
        let mut irqs = 0;
        for c in 0..1000 {
            let (n, d) = memguard_step(&s, 0.0, c);
            s = n;
            irqs += d.replenish_irq as u32;
            assert!(!d.throttle);
        }
        assert_eq!(irqs, 10);
    }
}
