use super::{check_write, CompileError, Device, Phase, RegisterProgram, RegisterWrite, LAR_KEY};
use crate::accounting::{etm_model_for, AccountingError};
use crate::fabric::{validate_config, EtmConfig, ExecMode, PairOp, SelectorSource, NUM_SELECTORS, SELECTOR_FALSE};
use crate::machine::CoreModelConfig;
use crate::regulators::{build_config, Design, RegulatorError, RegulatorSpec};

const COUNTER_MAX: u64 = u16::MAX as u64;

pub(crate) const GROUP_EXTIN: u64 = 0;
pub(crate) const GROUP_CNTSEQ: u64 = 2;
pub(crate) const GROUP_RANGE: u64 = 5;
pub(crate) const GROUP_CONST: u64 = 15;
/// Sequencer state k is bit `SEQ_SHIFT + k` of a counter/sequencer select.
pub(crate) const SEQ_SHIFT: u32 = 4;

/// Longest period the 16-bit period counter can hold, in µs, rounded down
/// to 0.1 µs.
pub fn max_period(freq_mhz: f64) -> f64 {
    (COUNTER_MAX as f64 / freq_mhz * 10.0).floor() / 10.0
}

/// Budget below which the overshoot of one throttle episode (outstanding
/// reads admitted during the interrupt latency, the write buffer drain and
/// the handler's own traffic) can exceed what the throttling states absorb.
pub fn advisory_floor(design: Design, core: &CoreModelConfig) -> f64 {
    let reads = (core.read_outstanding as u64).min(core.irq_latency_cycles as u64);
    let overshoot = reads + core.write_buffer_depth as u64 + core.handler_kernel_events as u64;
    let absorbing = design.throttle_states().len().max(1);
    overshoot as f64 / absorbing as f64
}

struct Emitter {
    phase: Phase,
    writes: Vec<RegisterWrite>,
}

impl Emitter {
    fn w(&mut self, device: Device, register: impl Into<String>, fields: &[(&str, u64)], comment: impl Into<String>) {
        self.writes.push(RegisterWrite {
            phase: self.phase,
            device,
            register: register.into(),
            fields: fields.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            comment: comment.into(),
        });
    }
}

fn modes_mask(modes: &[ExecMode]) -> u64 {
    modes.iter().map(|m| if *m == ExecMode::User { 1 } else { 2 }).fold(0, |a, b| a | b)
}

/// The register program realizing an arbitrary fabric configuration.
pub fn compile_config(config: &EtmConfig) -> Result<RegisterProgram, CompileError> {
    validate_config(config).map_err(|e| CompileError::ResourceBudgetExceeded(e.to_string()))?;
    let mut e = Emitter { phase: Phase::Unlock, writes: Vec::new() };

    for d in [Device::Dbg, Device::Cti, Device::Etm, Device::Pmu] {
        e.w(d, "LAR", &[("key", LAR_KEY)], format!("unlock {d} registers"));
    }
    e.w(Device::Dbg, "OSLAR", &[("oslk", 0)], "clear the OS lock");
    e.w(Device::Etm, "TRCOSLAR", &[("oslk", 0)], "clear the trace OS lock");

    e.phase = Phase::DisableAll;
    e.w(Device::Etm, "TRCPRGCTLR", &[("en", 0)], "stop the trace unit while programming");
    e.w(Device::Cti, "CTICONTROL", &[("glben", 0)], "disable cross triggering");

    e.phase = Phase::ProgramCti;
    let mut outputs: Vec<_> = config.outputs.iter().collect();
    outputs.sort_by_key(|o| o.output_index);
    for o in &outputs {
        e.w(
            Device::Cti,
            format!("CTIINEN{}", 4 + o.output_index),
            &[("chan", 1)],
            format!("ETM external output {} onto channel 0", o.output_index),
        );
    }
    if !outputs.is_empty() {
        e.w(Device::Cti, "CTIOUTEN2", &[("chan", 1)], "channel 0 raises CTIIRQ");
    }
    e.w(Device::Cti, "CTIGATE", &[("mask", 0)], "keep channels local, other core signals stay disconnected");

    e.phase = Phase::ProgramEtm;
    // external input slots, assigned in input order
    let mut slots: Vec<Vec<u32>> = Vec::new();
    let mut next = 0u32;
    for (i, input) in config.inputs.iter().enumerate() {
        let mut mine = Vec::new();
        for &sig in &input.monitored {
            if next >= 4 {
                return Err(CompileError::ResourceBudgetExceeded("more than four external input slots".into()));
            }
            e.w(
                Device::Etm,
                format!("TRCEXTINSELR{next}"),
                &[("evtsel", sig as u64), ("input", i as u64)],
                format!("PMU signal {sig} on input {i}"),
            );
            mine.push(next);
            next += 1;
        }
        slots.push(mine);
    }

    for idx in 2..NUM_SELECTORS as u8 {
        let reg = format!("TRCRSCTLR{idx}");
        let Some(s) = config.selector(idx) else {
            e.w(Device::Etm, reg, &[("group", GROUP_EXTIN), ("select", 0)], "unused, FALSE");
            continue;
        };
        let bits = |m: &[u8], shift: u32| m.iter().fold(0u64, |a, &b| a | 1 << (b as u32 + shift));
        let (group, select, what) = match &s.source {
            SelectorSource::ConstTrue => (GROUP_CONST, 1, "TRUE".to_string()),
            SelectorSource::ConstFalse => (GROUP_CONST, 0, "FALSE".to_string()),
            SelectorSource::ExternalInputs(m) => {
                let mask = m.iter().flat_map(|&i| slots[i as usize].iter()).fold(0u64, |a, &b| a | 1 << b);
                (GROUP_EXTIN, mask, format!("external inputs {m:?}"))
            }
            SelectorSource::CounterFired(m) => (GROUP_CNTSEQ, bits(m, 0), format!("counter fired {m:?}")),
            SelectorSource::SequencerState(m) => (GROUP_CNTSEQ, bits(m, SEQ_SHIFT), format!("sequencer state {m:?}")),
            SelectorSource::AddressRangeActive(m) => (GROUP_RANGE, bits(m, 0), format!("address range {m:?}")),
        };
        let mut fields = vec![("group", group), ("select", select), ("inv", s.inverted as u64)];
        let mut comment = if s.inverted { format!("NOT {what}") } else { what };
        if let Some(p) = s.paired_with {
            fields.push(("pair", p.partner as u64));
            fields.push(("pairop", (p.op == PairOp::Or) as u64));
            let op = if p.op == PairOp::And { "AND" } else { "OR" };
            comment = format!("{comment} {op} selector {}", p.partner);
        }
        e.w(Device::Etm, reg, &fields, comment);
    }

    for n in 0..2u8 {
        match config.counter(n) {
            Some(c) => {
                let v = c.reload_value as u64;
                e.w(Device::Etm, format!("TRCCNTRLDVR{n}"), &[("value", v)], format!("counter {n} reload {v}"));
                e.w(Device::Etm, format!("TRCCNTVR{n}"), &[("value", v)], "start full");
                e.w(
                    Device::Etm,
                    format!("TRCCNTCTLR{n}"),
                    &[
                        ("cntevent", c.input as u64),
                        ("rldevent", c.reload_trigger.unwrap_or(SELECTOR_FALSE) as u64),
                        ("rldself", c.self_reload as u64),
                        ("cntchain", c.chained as u64),
                    ],
                    format!("count on selector {}", c.input),
                );
            }
            None => e.w(
                Device::Etm,
                format!("TRCCNTCTLR{n}"),
                &[
                    ("cntevent", SELECTOR_FALSE as u64),
                    ("rldevent", SELECTOR_FALSE as u64),
                    ("rldself", 0),
                    ("cntchain", 0),
                ],
                "unused, FALSE",
            ),
        }
    }

    let seq = &config.sequencer;
    for k in 0..3 {
        e.w(
            Device::Etm,
            format!("TRCSEQEVR{k}"),
            &[("f", seq.forward[k] as u64), ("b", seq.backward[k] as u64)],
            format!("{k}->{} / {}->{k}", k + 1, k + 1),
        );
    }
    e.w(Device::Etm, "TRCSEQRSTEVR", &[("rst", seq.reset as u64)], "sequencer reset");

    for c in &config.comparators {
        let i = 2 * c.index as u32;
        e.w(Device::Etm, format!("TRCACVR{i}"), &[("addr", c.lo)], format!("range {} start", c.index));
        e.w(Device::Etm, format!("TRCACVR{}", i + 1), &[("addr", c.hi)], format!("range {} end", c.index));
        e.w(
            Device::Etm,
            format!("TRCACATR{i}"),
            &[("modes", modes_mask(&c.match_modes))],
            "match modes, bit 0 user, bit 1 kernel",
        );
    }

    let mut evt = [SELECTOR_FALSE as u64; 4];
    let mut en = 0u64;
    for o in &outputs {
        evt[o.output_index as usize] = o.selector as u64;
        en |= 1 << o.output_index;
    }
    e.w(
        Device::Etm,
        "TRCEVENTCTL0R",
        &[("evt0", evt[0]), ("evt1", evt[1]), ("evt2", evt[2]), ("evt3", evt[3])],
        "external output selectors",
    );
    e.w(Device::Etm, "TRCEVENTCTL1R", &[("en", en)], "enabled external outputs");

    e.phase = Phase::EnablePmuExport;
    e.w(Device::Pmu, "PMCR", &[("e", 1), ("x", 1)], "export PMU events to the ETM");

    e.phase = Phase::EnableEtm;
    e.w(Device::Cti, "CTICONTROL", &[("glben", 1)], "enable cross triggering");
    e.w(Device::Etm, "TRCPRGCTLR", &[("en", 1)], "start the trace unit");

    for w in &e.writes {
        check_write(w).map_err(CompileError::Range)?;
    }
    Ok(RegisterProgram { writes: e.writes, warnings: Vec::new() })
}

fn from_regulator(e: RegulatorError) -> CompileError {
    match e {
        RegulatorError::Range(m) => CompileError::Range(m),
        RegulatorError::NotEtmDesign(d) | RegulatorError::WrongDesign(d) => CompileError::NotEtmDesign(d.to_string()),
        RegulatorError::Accounting(a) => from_accounting(a),
        RegulatorError::Invalid(i) => CompileError::ResourceBudgetExceeded(i.to_string()),
    }
}

fn from_accounting(e: AccountingError) -> CompileError {
    match e {
        AccountingError::NotEtmRealizable { reason } => CompileError::NotEtmRealizable(reason),
        other => CompileError::NotEtmRealizable(other.to_string()),
    }
}

/// The register program for a regulator on `core_model`.
pub fn compile(spec: &RegulatorSpec, core_model: &CoreModelConfig) -> Result<RegisterProgram, CompileError> {
    if !spec.design.is_etm() {
        return Err(CompileError::NotEtmDesign(spec.design.to_string()));
    }
    etm_model_for(spec.core_type, spec.variant()).map_err(from_accounting)?;
    if spec.period_cycles > COUNTER_MAX {
        return Err(CompileError::Range(format!(
            "period of {} cycles ({:.1} µs at {} MHz) exceeds 16-bit counter, at most {:.1} µs",
            spec.period_cycles,
            spec.period_cycles as f64 / core_model.freq_mhz,
            core_model.freq_mhz,
            max_period(core_model.freq_mhz)
        )));
    }
    let config = build_config(spec).map_err(from_regulator)?;
    let mut program = compile_config(&config)?;
    let floor = advisory_floor(spec.design, core_model);
    if (spec.budget_events as f64) < floor {
        program.warnings.push(format!(
            "budget of {} events is below the advisory floor of {floor:.1} events on this core; \
             overshoot while throttling can wrap the budget counter",
            spec.budget_events
        ));
    }
    Ok(program)
}
