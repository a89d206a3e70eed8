use super::core::{step_core, Control, CoreState, CoreStats};
use super::workload::{load_trace, ReplayPoint, TraceError, WorkloadCursor, WorkloadSpec};
use super::{CoreModelConfig, MemoryController};
use crate::accounting::{emit_profile, model_for, AccountingError, MemOp, ModelVariant, PulseEmitter, PulseGroup};
use crate::fabric::{CycleInputs, EtmConfig, Fabric, FabricState, InvalidConfig};
use crate::regulators::{
    build_config, memguard_step, MemGuardConfig, MemGuardState, MemPolConfig, MemPolState, RegulatorError,
    RegulatorSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegulatorAttachment {
    #[default]
    None,
    Etm(RegulatorSpec),
    /// A hand-written fabric program; `period_cycles` only sets the
    /// overshoot sampling period.
    EtmRaw {
        config: EtmConfig,
        #[serde(default)]
        period_cycles: Option<u64>,
    },
    #[serde(rename = "memguard")]
    MemGuard(MemGuardConfig),
    #[serde(rename = "mempol")]
    MemPol(MemPolConfig),
}

impl RegulatorAttachment {
    fn period_cycles(&self) -> Option<u64> {
        match self {
            RegulatorAttachment::None => None,
            RegulatorAttachment::Etm(s) => Some(s.period_cycles),
            RegulatorAttachment::EtmRaw { period_cycles, .. } => *period_cycles,
            RegulatorAttachment::MemGuard(c) => Some(c.period_cycles),
            RegulatorAttachment::MemPol(c) => Some(c.window_cycles()),
        }
    }

    fn variant(&self) -> Option<ModelVariant> {
        match self {
            RegulatorAttachment::Etm(s) => Some(s.variant()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSetup {
    pub model: CoreModelConfig,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub regulator: RegulatorAttachment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub cores: Vec<CoreSetup>,
    /// Cachelines per cycle the controller can grant; `None` is unlimited.
    #[serde(default)]
    pub shared_mem_bandwidth: Option<f64>,
    pub duration_cycles: u64,
    #[serde(default)]
    pub seed: u64,
    /// Bandwidth sampling window; 0 means one window for the whole run.
    #[serde(default)]
    pub window_cycles: u64,
    /// Keep a per-cycle record of every fabric.
    #[serde(default)]
    pub record_fabric: bool,
}

impl SystemConfig {
    pub fn single(setup: CoreSetup, duration_cycles: u64, shared_mem_bandwidth: Option<f64>) -> Self {
        SystemConfig {
            cores: vec![setup],
            shared_mem_bandwidth,
            duration_cycles,
            seed: 0,
            window_cycles: 0,
            record_fabric: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("system needs at least one core")]
    NoCores,
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("core {core}: {msg}")]
    Core { core: usize, msg: String },
    #[error(transparent)]
    Invalid(#[from] InvalidConfig),
    #[error(transparent)]
    Regulator(#[from] RegulatorError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Fabric state after one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FabricSample {
    pub counter_values: [u16; 2],
    pub sequencer_state: u8,
    pub counter_fired: [bool; 2],
    pub output_levels: [bool; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreTrace {
    pub stats: CoreStats,
    pub window_cycles: u64,
    /// Bench cachelines issued in each window.
    pub window_lines: Vec<u64>,
    pub period_cycles: u64,
    /// User events (model units) in each regulation period.
    pub period_events: Vec<f64>,
    /// User events before the core first stopped for its regulator.
    pub events_before_first_stall: Option<f64>,
    pub fabric_samples: Vec<FabricSample>,
    pub fabric_final: Option<FabricState>,
}

impl CoreTrace {
    /// Bench data bandwidth in MB/s over the whole run.
    pub fn achieved_mbps(&self, cycles: u64, model: &CoreModelConfig) -> f64 {
        let secs = cycles as f64 / (model.freq_mhz * 1e6);
        self.stats.lines as f64 * model.cacheline_bytes as f64 / secs / 1e6
    }

    pub fn max_period_overshoot(&self, budget: f64) -> f64 {
        self.period_events.iter().map(|e| e - budget).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemTrace {
    pub cycles: u64,
    pub cores: Vec<CoreTrace>,
    pub granted: u64,
    pub completed: u64,
    pub in_flight: u64,
}

#[allow(clippy::large_enum_variant)]
enum Regulator {
    None,
    Etm(Fabric, FabricState),
    MemGuard(MemGuardState),
    MemPol(MemPolState),
}

struct Slot {
    core: CoreState,
    model: CoreModelConfig,
    reg: Regulator,
    ctrl: Control,
    inputs: CycleInputs,
    trace: CoreTrace,
    window_acc: u64,
    period_acc: f64,
    events_so_far: f64,
}

fn build_slot(i: usize, setup: &CoreSetup, seed: u64, window: u64) -> Result<Slot, SimError> {
    let cerr = |msg: String| SimError::Core { core: i, msg };
    setup.model.validate().map_err(cerr)?;
    setup.workload.validate(setup.model.cacheline_bytes).map_err(cerr)?;
    let core_type = setup.model.core_type;
    let variant = setup.model.variant.or(setup.regulator.variant()).unwrap_or_else(|| core_type.default_variant());
    let model = model_for(core_type, variant)?;
    let mut m = setup.model.clone();
    m.variant = Some(variant);

    let emitters: Vec<Option<PulseEmitter>> =
        MemOp::ALL.iter().map(|&op| emit_profile(core_type, variant, op).ok().map(PulseEmitter::new)).collect();
    for op in setup.workload.ops() {
        emit_profile(core_type, variant, op)?;
    }
    let kernel_emitter = emit_profile(core_type, variant, MemOp::Read).ok().map(PulseEmitter::new);
    let weights = model.signals().into_iter().map(|s| (s, model.weight_of(s))).collect();

    let mut replay = Vec::new();
    if let WorkloadSpec::TraceReplay { path } = &setup.workload {
        let mut at = 0u64;
        for rec in load_trace(path)? {
            at += rec.cycle_delta;
            let mut g = PulseGroup::default();
            for sig in &rec.signals {
                let s = sig.resolve(&model).ok_or_else(|| cerr(format!("{sig:?} has no signal on {core_type}")))?;
                g.push(s);
            }
            replay.push(ReplayPoint { at, group: g, mode: rec.mode });
        }
    }
    let cursor = WorkloadCursor::new(&setup.workload, m.cacheline_bytes, replay);
    let rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let core = CoreState::new(cursor, emitters, kernel_emitter, weights, rng);

    let reg = match &setup.regulator {
        RegulatorAttachment::None => Regulator::None,
        RegulatorAttachment::Etm(spec) => {
            if spec.core_type != core_type {
                return Err(cerr(format!("regulator is built for {} but the core is {core_type}", spec.core_type)));
            }
            let f = Fabric::new(build_config(spec)?)?;
            let st = f.reset();
            Regulator::Etm(f, st)
        }
        RegulatorAttachment::EtmRaw { config, .. } => {
            let f = Fabric::new(config.clone())?;
            let st = f.reset();
            Regulator::Etm(f, st)
        }
        RegulatorAttachment::MemGuard(c) => Regulator::MemGuard(MemGuardState::new(*c)),
        RegulatorAttachment::MemPol(c) => Regulator::MemPol(MemPolState::new(*c)),
    };
    let period = setup.regulator.period_cycles().unwrap_or(window).max(1);
    Ok(Slot {
        core,
        model: m,
        reg,
        ctrl: Control::default(),
        inputs: CycleInputs::default(),
        trace: CoreTrace {
            stats: CoreStats::default(),
            window_cycles: window,
            window_lines: Vec::new(),
            period_cycles: period,
            period_events: Vec::new(),
            events_before_first_stall: None,
            fabric_samples: Vec::new(),
            fabric_final: None,
        },
        window_acc: 0,
        period_acc: 0.0,
        events_so_far: 0.0,
    })
}

/// Run every core, its regulator and the shared controller in lock-step.
pub fn run_system(sys: &SystemConfig) -> Result<SystemTrace, SimError> {
    if sys.cores.is_empty() {
        return Err(SimError::NoCores);
    }
    if sys.duration_cycles == 0 {
        return Err(SimError::ZeroDuration);
    }
    let window = if sys.window_cycles == 0 { sys.duration_cycles } else { sys.window_cycles };
    let mut slots =
        sys.cores.iter().enumerate().map(|(i, c)| build_slot(i, c, sys.seed, window)).collect::<Result<Vec<_>, _>>()?;
    let mut mc = MemoryController::new(sys.shared_mem_bandwidth);
    let n = slots.len();
    let mut pending = vec![0u32; n];
    let mut grants = vec![0u32; n];

    for cycle in 0..sys.duration_cycles {
        for (p, s) in pending.iter_mut().zip(&slots) {
            *p = s.core.pending_requests();
        }
        mc.grant(&pending, &mut grants);
        for (slot, &g) in slots.iter_mut().zip(&grants) {
            let d = step_core(&mut slot.core, &slot.model, cycle, g, slot.ctrl, &mut slot.inputs);
            if d.throttled && slot.trace.events_before_first_stall.is_none() {
                slot.trace.events_before_first_stall = Some(slot.events_so_far);
            }
            slot.events_so_far += d.user_events;
            slot.ctrl = match &mut slot.reg {
                Regulator::None => Control::default(),
                Regulator::Etm(f, st) => {
                    let o = f.step(st, &slot.inputs);
                    if sys.record_fabric {
                        slot.trace.fabric_samples.push(FabricSample {
                            counter_values: st.counter_values,
                            sequencer_state: st.sequencer_state,
                            counter_fired: o.counter_fired,
                            output_levels: o.output_levels,
                        });
                    }
                    Control { irq_request: o.irq_request(), ..Control::default() }
                }
                Regulator::MemGuard(st) => {
                    let (next, dec) = memguard_step(st, d.pmu_events, cycle);
                    *st = next;
                    Control { irq_request: dec.throttle, timer_irq: dec.replenish_irq, halt: false }
                }
                Regulator::MemPol(st) => {
                    let halt = st.advance(slot.core.stats.pmu_events, cycle);
                    Control { halt, ..Control::default() }
                }
            };

            slot.window_acc += d.lines as u64;
            slot.period_acc += d.user_events;
            let next = cycle + 1;
            if next % window == 0 || next == sys.duration_cycles {
                slot.trace.window_lines.push(std::mem::take(&mut slot.window_acc));
            }
            if next % slot.trace.period_cycles == 0 {
                slot.trace.period_events.push(std::mem::take(&mut slot.period_acc));
            }
        }
    }

    let mut granted = 0;
    let mut completed = 0;
    let mut in_flight = 0;
    let cores = slots
        .into_iter()
        .map(|mut s| {
            granted += s.core.stats.granted;
            completed += s.core.stats.completed;
            in_flight += s.core.in_flight();
            s.trace.stats = s.core.stats.clone();
            if let Regulator::Etm(_, st) = &s.reg {
                s.trace.fabric_final = Some(st.clone());
            }
            s.trace
        })
        .collect();
    Ok(SystemTrace { cycles: sys.duration_cycles, cores, granted, completed, in_flight })
}
