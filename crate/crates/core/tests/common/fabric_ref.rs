//! A naive fabric interpreter that re-derives every rule each cycle from
//! the plain config, with no lowering.

use etmreg::fabric::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

#[derive(Clone, Debug, PartialEq)]
pub struct RefState {
    pub values: [u16; 2],
    /// Remaining count of the chained pair, as one 32-bit number.
    chain: u32,
    pub seq: u8,
    pub last_fire: [bool; 2],
    pub levels: [bool; 4],
}

pub struct Reference<'a> {
    c: &'a EtmConfig,
}

impl<'a> Reference<'a> {
    pub fn new(c: &'a EtmConfig) -> (Self, RefState) {
        let mut values = [0; 2];
        for k in &c.counters {
            values[k.index as usize] = k.reload_value;
        }
        let chain = if c.is_chained() { Self::product(c) } else { 0 };
        (Reference { c }, RefState { values, chain, seq: 0, last_fire: [false; 2], levels: [false; 4] })
    }

    fn product(c: &EtmConfig) -> u32 {
        c.counter(0).unwrap().reload_value as u32 * c.counter(1).unwrap().reload_value as u32
    }

    fn input_active(&self, i: u8, inp: &CycleInputs) -> bool {
        self.c.inputs[i as usize].monitored.iter().any(|s| inp.active_signals.contains(s))
    }

    fn raw(&self, idx: u8, seq: u8, fires: [bool; 2], inp: &CycleInputs) -> bool {
        if idx == SELECTOR_TRUE {
            return true;
        }
        if idx == SELECTOR_FALSE {
            return false;
        }
        let Some(s) = self.c.selector(idx) else { return false };
        let v = match &s.source {
            SelectorSource::ConstTrue => true,
            SelectorSource::ConstFalse => false,
            SelectorSource::ExternalInputs(m) => m.iter().any(|&i| self.input_active(i, inp)),
            SelectorSource::CounterFired(m) => m.iter().any(|&i| fires[i as usize]),
            SelectorSource::SequencerState(m) => m.contains(&seq),
            SelectorSource::AddressRangeActive(_) => unreachable!("no comparators in this test"),
        };
        v != s.inverted
    }

    fn sel(&self, idx: u8, seq: u8, fires: [bool; 2], inp: &CycleInputs) -> bool {
        let a = self.raw(idx, seq, fires, inp);
        match self.c.selector(idx).and_then(|s| s.paired_with) {
            None => a,
            Some(p) => {
                let b = self.raw(p.partner, seq, fires, inp);
                match p.op {
                    PairOp::And => a && b,
                    PairOp::Or => a || b,
                }
            }
        }
    }

    pub fn step(&self, s: &mut RefState, inp: &CycleInputs) -> FabricOutputs {
        if inp.core_idle {
            return FabricOutputs { counter_fired: [false; 2], sequencer_state: s.seq, output_levels: s.levels };
        }
        let old_seq = s.seq;
        let prev_fire = s.last_fire;
        let mut fired = [false; 2];

        if self.c.is_chained() {
            let c0 = self.c.counter(0).unwrap();
            let r0 = c0.reload_value as u32;
            if s.chain > 0 && self.sel(c0.input, old_seq, prev_fire, inp) {
                s.chain -= 1;
            }
            if s.chain == 0 {
                fired[1] = true;
                if c0.self_reload {
                    s.chain = Self::product(self.c);
                }
            }
            if c0.reload_trigger.is_some_and(|t| self.sel(t, old_seq, fired, inp)) {
                s.chain = Self::product(self.c);
            }
            // back to the two 16-bit halves
            if s.chain == 0 {
                s.values = [r0 as u16, 0];
            } else {
                let hi = s.chain.div_ceil(r0);
                s.values = [(s.chain - (hi - 1) * r0) as u16, hi as u16];
            }
        } else {
            for c in &self.c.counters {
                let i = c.index as usize;
                if s.values[i] > 0 && self.sel(c.input, old_seq, prev_fire, inp) {
                    s.values[i] -= 1;
                }
                if s.values[i] == 0 {
                    fired[i] = true;
                    if c.self_reload {
                        s.values[i] = c.reload_value;
                    }
                }
            }
            for c in &self.c.counters {
                if c.reload_trigger.is_some_and(|t| self.sel(t, old_seq, fired, inp)) {
                    s.values[c.index as usize] = c.reload_value;
                }
            }
        }

        let q = &self.c.sequencer;
        let t = |idx: u8| self.sel(idx, old_seq, fired, inp);
        let mut next = old_seq;
        if t(q.reset) {
            next = 0;
        } else {
            let mut moved = false;
            for _ in 0..3 {
                if next < 3 && t(q.forward[next as usize]) {
                    next += 1;
                    moved = true;
                }
            }
            if !moved {
                for _ in 0..3 {
                    if next > 0 && t(q.backward[next as usize - 1]) {
                        next -= 1;
                    }
                }
            }
        }

        let mut levels = [false; 4];
        for o in &self.c.outputs {
            levels[o.output_index as usize] = self.sel(o.selector, next, fired, inp);
        }
        s.seq = next;
        s.last_fire = fired;
        s.levels = levels;
        FabricOutputs { counter_fired: fired, sequencer_state: next, output_levels: levels }
    }
}

pub const SIGNALS: [SignalId; 6] = [3, 4, 17, 21, 22, 40];

fn pick_selector(rng: &mut ChaCha8Rng, pool: &[u8]) -> u8 {
    pool[rng.random_range(0..pool.len())]
}

pub fn random_config(rng: &mut ChaCha8Rng) -> EtmConfig {
    loop {
        let mut c = EtmConfig::default();
        for _ in 0..rng.random_range(0..=3) {
            let n = rng.random_range(1..=2);
            let monitored = (0..n).map(|_| SIGNALS[rng.random_range(0..SIGNALS.len())]).collect();
            c.inputs.push(ExternalInputSelector { monitored });
        }
        let chained = rng.random_bool(0.1);
        let n_counters = if chained { 2 } else { rng.random_range(0..=2) };
        let n_sel = rng.random_range(0..=4usize);
        let indices: Vec<u8> = {
            let mut all: Vec<u8> = (2..16).collect();
            for i in (1..all.len()).rev() {
                all.swap(i, rng.random_range(0..=i));
            }
            all.truncate(n_sel);
            all
        };
        for &idx in &indices {
            let set = |rng: &mut ChaCha8Rng, n: u8| -> Vec<u8> {
                let mut m: Vec<u8> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
                if m.is_empty() {
                    m.push(rng.random_range(0..n));
                }
                m
            };
            let source = match rng.random_range(0..6) {
                0 => SelectorSource::ConstTrue,
                1 => SelectorSource::ConstFalse,
                2 if !c.inputs.is_empty() => SelectorSource::ExternalInputs(set(rng, c.inputs.len() as u8)),
                3 if n_counters > 0 => SelectorSource::CounterFired(set(rng, n_counters)),
                _ => SelectorSource::SequencerState(set(rng, 4)),
            };
            let mut s = ResourceSelectorConfig::new(idx, source);
            s.inverted = rng.random_bool(0.25);
            if rng.random_bool(0.3) && indices.len() > 1 {
                let partner = indices[rng.random_range(0..indices.len())];
                if partner != idx {
                    s.paired_with =
                        Some(SelectorPair { partner, op: if rng.random_bool(0.5) { PairOp::And } else { PairOp::Or } });
                }
            }
            c.selectors.push(s);
        }
        let mut pool = vec![SELECTOR_TRUE, SELECTOR_FALSE, SELECTOR_FALSE];
        pool.extend(&indices);
        for i in 0..n_counters {
            let reload_value = if rng.random_bool(0.5) { rng.random_range(1..=8) } else { rng.random_range(1..=300) };
            c.counters.push(CounterConfig {
                index: i,
                reload_value,
                input: pick_selector(rng, &pool),
                self_reload: rng.random_bool(0.7),
                reload_trigger: rng.random_bool(0.4).then(|| pick_selector(rng, &pool)),
                chained,
            });
        }
        for k in 0..3 {
            c.sequencer.forward[k] = pick_selector(rng, &pool);
            c.sequencer.backward[k] = pick_selector(rng, &pool);
        }
        c.sequencer.reset = if rng.random_bool(0.3) { pick_selector(rng, &pool) } else { SELECTOR_FALSE };
        for k in 0..4u8 {
            if rng.random_bool(0.5) {
                c.outputs.push(ExternalOutputConfig { output_index: k, selector: pick_selector(rng, &pool) });
            }
        }
        if validate_config(&c).is_ok() {
            return c;
        }
    }
}

pub struct OracleReport {
    pub mismatches: usize,
    /// (config number, cycle, config) of the first divergence.
    pub first: Option<(usize, u64, EtmConfig)>,
    pub elapsed: Duration,
}

/// Compare `configs` random configs for `cycles` random cycles each.
pub fn compare(configs: usize, cycles: u64, seed: u64) -> OracleReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    let mut first = None;
    for n in 0..configs {
        let config = random_config(&mut rng);
        let fabric = Fabric::new(config.clone()).unwrap();
        let mut st = reset_fabric(&config).unwrap();
        let (reference, mut rs) = Reference::new(&config);
        if st.counter_values != rs.values {
            mismatches += 1;
            first.get_or_insert((n, 0, config.clone()));
            continue;
        }
        let density = rng.random_range(0.05..0.9);
        let idle_prob = if rng.random_bool(0.3) { 0.1 } else { 0.0 };
        let mut inp = CycleInputs::default();
        for cycle in 0..cycles {
            inp.clear();
            for &s in &SIGNALS {
                if rng.random_bool(density) {
                    inp.active_signals.push(s);
                }
            }
            inp.core_idle = rng.random_bool(idle_prob);
            let before = st.clone();
            let out = fabric.step(&mut st, &inp);
            let want = reference.step(&mut rs, &inp);
            let state_eq = st.counter_values == rs.values
                && st.sequencer_state == rs.seq
                && st.last_fire == rs.last_fire
                && st.output_levels == rs.levels;
            if out != want || !state_eq {
                mismatches += 1;
                first.get_or_insert((n, cycle, config.clone()));
                break;
            }
            let over_reload = config.counters.iter().any(|c| st.counter_values[c.index as usize] > c.reload_value);
            if (inp.core_idle && st != before) || over_reload {
                mismatches += 1;
                first.get_or_insert((n, cycle, config.clone()));
                break;
            }
        }
    }
    OracleReport { mismatches, first, elapsed: start.elapsed() }
}
