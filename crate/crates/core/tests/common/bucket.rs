//! A plain token bucket: fill F events, integer
//! part F / budget is the sequencer state, the budget counter holds
//! budget - F mod budget; a period end drains one budget unless the same
//! cycle filled a whole unit (forward moves win).

use etmreg::accounting::{model_for, CoreType, ModelVariant};
use etmreg::fabric::{CycleInputs, Fabric};
use etmreg::regulators::{build_tb_config, Design, RegulatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Bucket {
    budget: u64,
    pub period: u64,
    fill: u64,
    t: u64,
}

impl Bucket {
    /// Returns false when the fill would pass the top of state 3.
    fn step(&mut self, event: bool) -> bool {
        self.t += 1;
        let mut filled_unit = false;
        if event {
            self.fill += 1;
            filled_unit = self.fill.is_multiple_of(self.budget);
            if self.fill >= 4 * self.budget {
                return false;
            }
        }
        if self.t.is_multiple_of(self.period) && !filled_unit && self.fill >= self.budget {
            self.fill -= self.budget;
        }
        true
    }

    fn state(&self) -> u8 {
        (self.fill / self.budget) as u8
    }

    fn budget_counter(&self) -> u16 {
        (self.budget - self.fill % self.budget) as u16
    }

    fn period_counter(&self) -> u16 {
        (self.period - self.t % self.period) as u16
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Triple {
    pub design: Design,
    pub budget: u32,
    period: u64,
    /// Mean events per cycle while a burst is on.
    pub rate: f64,
    pub burst_on: u64,
    pub burst_off: u64,
}

const CYCLES: u64 = 20_000;

fn stream(t: &Triple, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CYCLES)
        .map(|c| {
            let on = c % (t.burst_on + t.burst_off) < t.burst_on;
            on && rng.random_bool(t.rate)
        })
        .collect()
}

fn wraps(t: &Triple, events: &[bool]) -> bool {
    let mut b = Bucket { budget: t.budget as u64, period: t.period, fill: 0, t: 0 };
    !events.iter().all(|&e| b.step(e))
}

pub struct TbReport {
    pub rejected: usize,
    pub saw_states: [bool; 4],
}

/// Run `triples` random non-wrapping triples, cycling through the three
/// designs; the error names the first cycle that disagrees.
pub fn compare(triples: usize, seed: u64) -> Result<TbReport, String> {
    let signal = model_for(CoreType::A53, ModelVariant::Default).unwrap().signals()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let designs = [Design::Tb31, Design::Tb22, Design::Tb13];
    let (mut accepted, mut rejected) = (0, 0);
    let mut saw_states = [false; 4];
    while accepted < triples {
        let budget = if rng.random_bool(0.3) { rng.random_range(1..=5) } else { rng.random_range(6..=200) };
        let period = rng.random_range(20..=3000u64);
        let triple = Triple {
            design: designs[accepted % 3],
            budget,
            period,
            rate: (budget as f64 / period as f64 * rng.random_range(0.3..3.0)).min(1.0),
            burst_on: rng.random_range(1..=4000),
            burst_off: rng.random_range(0..=4000),
        };
        let seed = rng.random();
        let events = stream(&triple, seed);
        if wraps(&triple, &events) {
            rejected += 1;
            continue;
        }
        accepted += 1;

        let spec = RegulatorSpec::new(triple.design, budget, period, CoreType::A53);
        let fabric = Fabric::new(build_tb_config(&spec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut st = fabric.reset();
        let mut bucket = Bucket { budget: budget as u64, period, fill: 0, t: 0 };
        let throttle = triple.design.throttle_states();
        let mut inp = CycleInputs::default();
        for (cycle, &e) in events.iter().enumerate() {
            inp.clear();
            if e {
                inp.active_signals.push(signal);
            }
            let out = fabric.step(&mut st, &inp);
            bucket.step(e);
            let want = (bucket.state(), bucket.budget_counter(), bucket.period_counter());
            let got = (st.sequencer_state, st.counter_values[0], st.counter_values[1]);
            if got != want || out.irq_request() != throttle.contains(&bucket.state()) {
                return Err(format!("{triple:?} cycle {cycle}: fabric {got:?}, bucket {want:?}"));
            }
            saw_states[bucket.state() as usize] = true;
        }
    }
    Ok(TbReport { rejected, saw_states })
}
