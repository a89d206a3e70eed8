use super::{Design, RegulatorError, RegulatorSpec, DEFAULT_USER_SPLIT};
use crate::accounting::{etm_model_for, BandwidthModel};
use crate::fabric::{
    validate_config, AddressRangeComparatorConfig, CounterConfig, EtmConfig, ExecMode, ExternalInputSelector,
    ExternalOutputConfig, PairOp, ResourceSelectorConfig as Sel, SelectorSource as Src, SequencerConfig,
    SELECTOR_FALSE, SELECTOR_TRUE,
};

const COUNTER_MAX: u64 = u16::MAX as u64;

/// Budget counter reload and period counter reload for an ETM design.
fn counter_reloads(spec: &RegulatorSpec) -> Result<(u16, u16, Vec<u16>), RegulatorError> {
    if !spec.design.is_etm() {
        return Err(RegulatorError::NotEtmDesign(spec.design));
    }
    if spec.budget_events == 0 {
        return Err(RegulatorError::Range("budget must be at least 1 event".into()));
    }
    if spec.budget_events as u64 > COUNTER_MAX {
        return Err(RegulatorError::Range(format!("budget {} exceeds 16-bit counter", spec.budget_events)));
    }
    if spec.period_cycles == 0 || spec.period_cycles > COUNTER_MAX {
        return Err(RegulatorError::Range(format!("period {} cycles exceeds 16-bit counter", spec.period_cycles)));
    }
    let (_, scaling) = etm_model_for(spec.core_type, spec.variant())?;
    let budget = scaling.counter_budget(spec.budget_events);
    if budget > COUNTER_MAX {
        return Err(RegulatorError::Range(format!("scaled budget {budget} exceeds 16-bit counter")));
    }
    Ok((budget as u16, spec.period_cycles as u16, scaling.signals))
}

fn checked(config: EtmConfig) -> Result<EtmConfig, RegulatorError> {
    validate_config(&config)?;
    Ok(config)
}

fn budget_counter(reload: u16, input: u8, trigger: Option<u8>) -> CounterConfig {
    CounterConfig { index: 0, reload_value: reload, input, self_reload: true, reload_trigger: trigger, chained: false }
}

fn period_counter(reload: u16) -> CounterConfig {
    CounterConfig {
        index: 1,
        reload_value: reload,
        input: SELECTOR_TRUE,
        self_reload: true,
        reload_trigger: None,
        chained: false,
    }
}

/// Periodic replenishment: state 0 admits, state 3 throttles.
///
/// The budget counter runs on the OR-ed PMU inputs and self-reloads, so it
/// keeps counting in state 3. The replenish fire reloads it only when it
/// arrives in state 0; in state 3 the overuse stays on the counter and is
/// charged against the next period.
pub fn build_pr_config(spec: &RegulatorSpec) -> Result<EtmConfig, RegulatorError> {
    if !matches!(spec.design, Design::Pr | Design::PrStop) {
        return Err(RegulatorError::WrongDesign(spec.design));
    }
    let (budget, period, signals) = counter_reloads(spec)?;
    let events = if spec.design == Design::PrStop {
        // accounting disabled while throttled
        Sel::new(4, Src::ExternalInputs(vec![0])).paired(3, PairOp::And)
    } else {
        Sel::new(4, Src::ExternalInputs(vec![0]))
    };
    checked(EtmConfig {
        inputs: vec![ExternalInputSelector { monitored: signals }],
        selectors: vec![
            Sel::new(2, Src::CounterFired(vec![1])).paired(3, PairOp::And),
            Sel::new(3, Src::SequencerState(vec![0])),
            events,
            Sel::new(5, Src::CounterFired(vec![0])),
            Sel::new(6, Src::CounterFired(vec![1])),
            Sel::new(7, Src::SequencerState(vec![3])),
        ],
        counters: vec![budget_counter(budget, 4, Some(2)), period_counter(period)],
        sequencer: SequencerConfig { forward: [5, 5, 5], backward: [6, 6, 6], reset: SELECTOR_FALSE },
        comparators: vec![],
        outputs: vec![ExternalOutputConfig { output_index: 1, selector: 7 }],
    })
}

/// Token bucket: the sequencer state is the integer part of the bucket fill
/// and the budget counter its fraction. Budget fires move one state up,
/// period fires one state down; the budget counter is never reset.
pub fn build_tb_config(spec: &RegulatorSpec) -> Result<EtmConfig, RegulatorError> {
    if !spec.design.is_token_bucket() {
        return Err(RegulatorError::WrongDesign(spec.design));
    }
    let (budget, period, signals) = counter_reloads(spec)?;
    // (fire AND state) pairs: 2/3, 4/5, 6/7 forward from 0, 1, 2;
    // 8/9, 10/11, 12/13 backward from 3, 2, 1.
    let mut selectors = Vec::new();
    for (k, state) in [0u8, 1, 2].into_iter().enumerate() {
        let i = 2 + 2 * k as u8;
        selectors.push(Sel::new(i, Src::CounterFired(vec![0])).paired(i + 1, PairOp::And));
        selectors.push(Sel::new(i + 1, Src::SequencerState(vec![state])));
    }
    for (k, state) in [3u8, 2, 1].into_iter().enumerate() {
        let i = 8 + 2 * k as u8;
        selectors.push(Sel::new(i, Src::CounterFired(vec![1])).paired(i + 1, PairOp::And));
        selectors.push(Sel::new(i + 1, Src::SequencerState(vec![state])));
    }
    selectors.push(Sel::new(14, Src::ExternalInputs(vec![0])));

    // Level of state k is available on a pair partner: 13 (1), 11 (2), 9 (3).
    let level_of = |s: u8| match s {
        1 => 13,
        2 => 11,
        _ => 9,
    };
    let outputs = spec
        .throttle_states()
        .iter()
        .map(|&s| ExternalOutputConfig { output_index: s, selector: level_of(s) })
        .collect();
    checked(EtmConfig {
        inputs: vec![ExternalInputSelector { monitored: signals }],
        selectors,
        counters: vec![budget_counter(budget, 14, None), period_counter(period)],
        sequencer: SequencerConfig { forward: [2, 4, 6], backward: [12, 10, 8], reset: SELECTOR_FALSE },
        comparators: vec![],
        outputs,
    })
}

/// Periodic replenishment charging only user-space traffic.
///
/// States: 0 under budget in kernel, 1 under budget in user, 2 over budget
/// in user, 3 over budget in kernel. An address range over user space drives
/// 0⇄1 and 2⇄3; the budget fire drives 1→2. Replenishment resets 2 and 3 to
/// 0 through the sequencer reset, and reloads the budget counter only from 0
/// and 1. The budget counter sees a PMU pulse only in a cycle fetching from
/// user space, which keeps kernel traffic off the budget without the
/// one-cycle lag of gating on the latched state.
pub fn build_pr_user_config(spec: &RegulatorSpec, user_kernel_split_addr: u64) -> Result<EtmConfig, RegulatorError> {
    if spec.design != Design::PrUser {
        return Err(RegulatorError::WrongDesign(spec.design));
    }
    if user_kernel_split_addr == 0 {
        return Err(RegulatorError::Range("user/kernel split address must be above 0".into()));
    }
    let (budget, period, signals) = counter_reloads(spec)?;
    checked(EtmConfig {
        inputs: vec![ExternalInputSelector { monitored: signals }],
        selectors: vec![
            Sel::new(2, Src::CounterFired(vec![1])).paired(3, PairOp::And),
            Sel::new(3, Src::SequencerState(vec![2, 3])),
            Sel::new(4, Src::ExternalInputs(vec![0])).paired(7, PairOp::And),
            Sel::new(5, Src::CounterFired(vec![1])).paired(6, PairOp::And),
            Sel::new(6, Src::SequencerState(vec![0, 1])),
            Sel::new(7, Src::AddressRangeActive(vec![0])),
            Sel::new(8, Src::AddressRangeActive(vec![0])).inverted(),
            Sel::new(9, Src::CounterFired(vec![0])),
        ],
        counters: vec![budget_counter(budget, 4, Some(5)), period_counter(period)],
        sequencer: SequencerConfig { forward: [7, 9, 8], backward: [8, SELECTOR_FALSE, 7], reset: 2 },
        comparators: vec![AddressRangeComparatorConfig {
            index: 0,
            lo: 0,
            hi: user_kernel_split_addr,
            match_modes: vec![ExecMode::User],
        }],
        outputs: vec![ExternalOutputConfig { output_index: 1, selector: 3 }],
    })
}

/// Dispatch on the design.
pub fn build_config(spec: &RegulatorSpec) -> Result<EtmConfig, RegulatorError> {
    match spec.design {
        Design::Pr | Design::PrStop => build_pr_config(spec),
        Design::PrUser => build_pr_user_config(spec, spec.user_split.unwrap_or(DEFAULT_USER_SPLIT)),
        Design::Tb31 | Design::Tb22 | Design::Tb13 => build_tb_config(spec),
        d => Err(RegulatorError::NotEtmDesign(d)),
    }
}

/// Pure counting: both counters chained into one 32-bit down-counter on the
/// OR-ed inputs of `model`, no outputs. Used to compare ETM-visible event
/// counts against PMU counts.
pub fn build_counting_config(model: &BandwidthModel) -> Result<EtmConfig, RegulatorError> {
    let scaling = model.etm_scaling()?;
    let full = |index, chained| CounterConfig {
        index,
        reload_value: u16::MAX,
        input: 2,
        self_reload: true,
        reload_trigger: None,
        chained,
    };
    checked(EtmConfig {
        inputs: vec![ExternalInputSelector { monitored: scaling.signals }],
        selectors: vec![Sel::new(2, Src::ExternalInputs(vec![0]))],
        counters: vec![full(0, true), full(1, false)],
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::{CoreType, ModelVariant};
    use crate::fabric::{CycleInputs, Fabric};

    fn spec(design: Design, budget: u32, period: u64) -> RegulatorSpec {
        RegulatorSpec::new(design, budget, period, CoreType::A53)
    }

    #[test]
    fn resource_counts() {
        let pr = build_pr_config(&spec(Design::Pr, 27, 6000)).unwrap();
        assert_eq!(validate_config(&pr).unwrap().selectors_used, 6);
        for d in [Design::Tb31, Design::Tb22, Design::Tb13] {
            let tb = build_tb_config(&spec(d, 27, 6000)).unwrap();
            assert_eq!(validate_config(&tb).unwrap().selectors_used, 13);
            assert!(tb.counters.iter().all(|c| c.reload_trigger.is_none()));
        }
    }

    #[test]
    fn pr_and_pr_stop_differ_in_one_selector() {
        let a = build_pr_config(&spec(Design::Pr, 27, 6000)).unwrap();
        let b = build_pr_config(&spec(Design::PrStop, 27, 6000)).unwrap();
        let diff: Vec<_> = a.selectors.iter().zip(&b.selectors).filter(|(x, y)| x != y).collect();
        assert_eq!(diff.len(), 1);
        assert_eq!(diff[0].0.index, a.counters[0].input);
        assert_eq!(a.counters, b.counters);
        assert_eq!(a.sequencer, b.sequencer);
    }

    #[test]
    fn range_checks() {
        let e = build_pr_config(&spec(Design::Pr, 70000, 6000)).unwrap_err();
        assert!(e.to_string().contains("exceeds 16-bit counter"), "{e}");
        assert!(build_pr_config(&spec(Design::Pr, 10, 70000)).is_err());
        assert!(matches!(build_config(&spec(Design::MemGuard, 10, 100)), Err(RegulatorError::NotEtmDesign(_))));
        let mut s = spec(Design::Tb22, 10, 100);
        s.core_type = CoreType::A78;
        s.model_variant = Some(ModelVariant::Moderate2);
        assert!(build_tb_config(&s).unwrap_err().to_string().contains("fractional factor"));
    }

    #[test]
    fn throttle_sets() {
        assert_eq!(Design::Tb31.throttle_states(), &[3]);
        assert_eq!(Design::Tb22.throttle_states(), &[2, 3]);
        assert_eq!(Design::Tb13.throttle_states(), &[1, 2, 3]);
    }

    #[test]
    fn pr_fabric_throttles_and_replenishes() {
        let cfg = build_pr_config(&spec(Design::Pr, 3, 20)).unwrap();
        let f = Fabric::new(cfg).unwrap();
        let mut st = f.reset();
        assert_eq!(st.counter_values, [3, 20]);
        let ev = CycleInputs { active_signals: vec![21], ..Default::default() };
        let quiet = CycleInputs::default();
        for _ in 0..2 {
            assert!(!f.step(&mut st, &ev).irq_request());
        }
        assert!(f.step(&mut st, &ev).irq_request());
        assert_eq!(st.sequencer_state, 3);
        // two more events while throttled carry into the next period
        f.step(&mut st, &ev);
        f.step(&mut st, &ev);
        for _ in 5..19 {
            f.step(&mut st, &quiet);
        }
        let out = f.step(&mut st, &quiet);
        assert_eq!(out.sequencer_state, 0);
        assert!(!out.irq_request());
        assert_eq!(st.counter_values[0], 1);
        assert!(f.step(&mut st, &ev).irq_request());
    }

    #[test]
    fn pr_user_ignores_kernel_events_and_resets_from_3() {
        let split = 0x1000;
        let mut s = spec(Design::PrUser, 2, 50);
        s.user_split = Some(split);
        let f = Fabric::new(build_config(&s).unwrap()).unwrap();
        let mut st = f.reset();
        let user = |sig: bool| CycleInputs {
            active_signals: if sig { vec![21] } else { vec![] },
            instruction_fetch_addr: Some(0x100),
            exec_mode: ExecMode::User,
            core_idle: false,
        };
        let kernel = |sig: bool| CycleInputs {
            active_signals: if sig { vec![21] } else { vec![] },
            instruction_fetch_addr: Some(0xffff_0000),
            exec_mode: ExecMode::Kernel,
            core_idle: false,
        };
        f.step(&mut st, &user(false));
        assert_eq!(st.sequencer_state, 1);
        for _ in 0..5 {
            f.step(&mut st, &kernel(true));
        }
        assert_eq!(st.sequencer_state, 0);
        assert_eq!(st.counter_values[0], 2);
        f.step(&mut st, &user(false));
        f.step(&mut st, &user(true));
        f.step(&mut st, &user(true));
        assert_eq!(st.sequencer_state, 2);
        f.step(&mut st, &kernel(false));
        assert_eq!(st.sequencer_state, 3);
        while st.counter_values[1] > 1 {
            f.step(&mut st, &kernel(false));
        }
        f.step(&mut st, &kernel(false));
        assert_eq!(st.sequencer_state, 0);
        f.step(&mut st, &user(false));
        assert_eq!(st.sequencer_state, 1);
    }
}
