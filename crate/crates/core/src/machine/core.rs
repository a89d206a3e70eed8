use super::workload::{Action, WorkloadCursor};
use super::{CoreModelConfig, IrqTrigger};
use crate::accounting::{OpKind, PulseEmitter, PulseGroup};
use crate::fabric::{CycleInputs, ExecMode, SignalId};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::VecDeque;

/// Fetch address of the workload loop.
pub const USER_PC: u64 = 0x0000_0000_0040_0000;
/// Fetch address of the interrupt handler and timer code.
pub const KERNEL_PC: u64 = 0xffff_0000_0800_0000;

/// Regulator-side signals seen by the core in one cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Control {
    /// Throttling interrupt line (CTIIRQ, or the PMU overflow for MemGuard).
    pub irq_request: bool,
    /// A periodic timer interrupt arrives this cycle.
    pub timer_irq: bool,
    /// Externally halted (MemPol).
    pub halt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HandlerPhase {
    Entry { until: u64 },
    Poll { next: u64 },
    Exit { until: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum IrqState {
    #[default]
    None,
    Pending {
        deliver_at: u64,
    },
    InHandler(HandlerPhase),
}

#[derive(Debug, Clone, Copy)]
enum Req {
    Read { modify: bool, kernel: bool, op: u8 },
    Write { op: u8 },
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    done_at: u64,
    modify: bool,
    kernel: bool,
    read: bool,
    op: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoreStats {
    /// Bench cachelines issued by the workload.
    pub lines: u64,
    pub refills: u64,
    pub writebacks: u64,
    pub kernel_transactions: u64,
    /// PMU-weighted events of user transactions, in model units.
    pub user_events: f64,
    /// PMU-weighted events of every pulse, kernel included.
    pub pmu_events: f64,
    pub pulses: u64,
    pub pulse_cycles: u64,
    pub cycles_throttled: u64,
    pub cycles_halted: u64,
    pub cycles_kernel: u64,
    pub cycles_idle: u64,
    pub irq_count: u64,
    pub throttle_entries: u64,
    pub timer_irqs: u64,
    pub granted: u64,
    pub completed: u64,
    /// User events from the first throttle request until the first handler exit.
    pub first_throttle_overshoot: f64,
}

/// What one cycle contributed, for the system's bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CycleDelta {
    pub user_events: f64,
    pub pmu_events: f64,
    pub lines: u32,
    pub throttled: bool,
}

#[derive(Debug, Clone)]
pub struct CoreState {
    cursor: WorkloadCursor,
    /// Per-op emitters, indexed like `MemOp::ALL`.
    emitters: Vec<Option<PulseEmitter>>,
    kernel_emitter: Option<PulseEmitter>,
    weights: Vec<(SignalId, f64)>,
    rng: ChaCha8Rng,
    credit: f64,
    reads_in_flight: u32,
    wb_used: u32,
    requests: VecDeque<Req>,
    in_flight: VecDeque<InFlight>,
    /// Pulse groups not yet driven, each tagged user (false) or kernel.
    pulses: VecDeque<(PulseGroup, bool)>,
    scratch: Vec<PulseGroup>,
    irq: IrqState,
    prev_request: bool,
    latched_edge: bool,
    kernel_busy: u64,
    first_assert: Option<u64>,
    first_exit_seen: bool,
    pub stats: CoreStats,
}

impl CoreState {
    pub(crate) fn new(
        cursor: WorkloadCursor,
        emitters: Vec<Option<PulseEmitter>>,
        kernel_emitter: Option<PulseEmitter>,
        weights: Vec<(SignalId, f64)>,
        rng: ChaCha8Rng,
    ) -> Self {
        CoreState {
            cursor,
            emitters,
            kernel_emitter,
            weights,
            rng,
            credit: 0.0,
            reads_in_flight: 0,
            wb_used: 0,
            requests: VecDeque::new(),
            in_flight: VecDeque::new(),
            pulses: VecDeque::new(),
            scratch: Vec::new(),
            irq: IrqState::None,
            prev_request: false,
            latched_edge: false,
            kernel_busy: 0,
            first_assert: None,
            first_exit_seen: false,
            stats: CoreStats::default(),
        }
    }

    pub fn irq(&self) -> IrqState {
        self.irq
    }

    pub fn throttled(&self) -> bool {
        matches!(self.irq, IrqState::InHandler(_))
    }

    pub fn reads_outstanding(&self) -> u32 {
        self.reads_in_flight
    }

    pub fn write_buffer_used(&self) -> u32 {
        self.wb_used
    }

    /// Requests waiting for the memory controller.
    pub fn pending_requests(&self) -> u32 {
        self.requests.len() as u32
    }

    /// Granted transactions that have not completed.
    pub fn in_flight(&self) -> u64 {
        self.in_flight.len() as u64
    }

    /// Nothing left to issue, drain or pulse.
    pub fn drained(&self) -> bool {
        self.cursor.is_done() && self.requests.is_empty() && self.in_flight.is_empty() && self.pulses.is_empty()
    }

    fn weight(&self, s: SignalId) -> f64 {
        self.weights.iter().find(|w| w.0 == s).map_or(0.0, |w| w.1)
    }

    fn emit(&mut self, idx: usize, refill: bool, kernel: bool) {
        let em = if kernel { self.kernel_emitter.as_mut() } else { self.emitters[idx].as_mut() };
        let Some(em) = em else { return };
        self.scratch.clear();
        if refill {
            em.refill(&mut self.rng, &mut self.scratch);
        } else {
            em.writeback(&mut self.rng, &mut self.scratch);
        }
        self.pulses.extend(self.scratch.drain(..).map(|g| (g, kernel)));
    }

    fn enter_handler(&mut self, cfg: &CoreModelConfig, cycle: u64) {
        self.irq = IrqState::InHandler(HandlerPhase::Entry { until: cycle + cfg.handler_entry_cycles as u64 });
        self.stats.irq_count += 1;
        self.stats.throttle_entries += 1;
        for _ in 0..cfg.handler_kernel_events {
            self.requests.push_back(Req::Read { modify: false, kernel: true, op: 0 });
            self.stats.kernel_transactions += 1;
            self.emit(0, true, true);
        }
    }

    fn step_irq(&mut self, cfg: &CoreModelConfig, cycle: u64, req: bool) {
        let rising = req && !self.prev_request;
        self.prev_request = req;
        if req && self.first_assert.is_none() {
            self.first_assert = Some(cycle);
        }
        if self.irq == IrqState::None {
            let fire = match cfg.irq_trigger {
                IrqTrigger::Level => req,
                IrqTrigger::Edge => rising || std::mem::take(&mut self.latched_edge),
            };
            if fire {
                if cfg.irq_latency_cycles == 0 {
                    self.enter_handler(cfg, cycle);
                } else {
                    self.irq = IrqState::Pending { deliver_at: cycle + cfg.irq_latency_cycles as u64 };
                }
            }
        } else if rising {
            self.latched_edge = true;
        }
        if let IrqState::Pending { deliver_at } = self.irq {
            if cycle >= deliver_at {
                self.enter_handler(cfg, cycle);
            }
        }
        while let IrqState::InHandler(phase) = self.irq {
            match phase {
                HandlerPhase::Entry { until } if cycle >= until => {
                    self.irq = IrqState::InHandler(HandlerPhase::Poll { next: cycle });
                }
                HandlerPhase::Poll { next } if cycle >= next => {
                    if req {
                        let next = cycle + cfg.handler_poll_cycles.max(1) as u64;
                        self.irq = IrqState::InHandler(HandlerPhase::Poll { next });
                        break;
                    }
                    self.irq =
                        IrqState::InHandler(HandlerPhase::Exit { until: cycle + cfg.handler_exit_cycles as u64 });
                }
                HandlerPhase::Exit { until } if cycle >= until => {
                    // The write to CTIINTACK; a level line still high re-pends next cycle.
                    self.irq = IrqState::None;
                    if self.first_assert.is_some() {
                        self.first_exit_seen = true;
                    }
                }
                _ => break,
            }
        }
    }

    fn try_issue(&mut self, cfg: &CoreModelConfig, idx: usize, kind: OpKind) -> bool {
        let rd_cap = cfg.read_outstanding.max(1);
        let wb_cap = cfg.write_buffer_depth.max(1);
        match kind {
            OpKind::Prefetch | OpKind::Read => {
                if self.reads_in_flight >= rd_cap {
                    return false;
                }
                self.reads_in_flight += 1;
                self.requests.push_back(Req::Read { modify: false, kernel: false, op: idx as u8 });
                self.stats.refills += 1;
                self.emit(idx, true, false);
            }
            OpKind::Write => {
                if self.wb_used >= wb_cap {
                    return false;
                }
                self.wb_used += 1;
                self.requests.push_back(Req::Write { op: idx as u8 });
            }
            OpKind::Modify => {
                if self.reads_in_flight >= rd_cap || self.wb_used >= wb_cap {
                    return false;
                }
                self.reads_in_flight += 1;
                self.wb_used += 1;
                self.requests.push_back(Req::Read { modify: true, kernel: false, op: idx as u8 });
                self.stats.refills += 1;
                self.emit(idx, true, false);
            }
        }
        self.stats.lines += 1;
        true
    }
}

fn op_index(op: crate::accounting::MemOp) -> usize {
    crate::accounting::MemOp::ALL.iter().position(|o| *o == op).unwrap_or(0)
}

/// Advance one core by one cycle. `grants` is how many of its pending
/// requests the memory controller accepted this cycle; `ctrl` carries the
/// regulator outputs of the previous cycle. The cycle's fabric inputs are
/// written to `out`.
pub fn step_core(
    st: &mut CoreState,
    cfg: &CoreModelConfig,
    cycle: u64,
    grants: u32,
    ctrl: Control,
    out: &mut CycleInputs,
) -> CycleDelta {
    out.clear();
    let mut delta = CycleDelta::default();
    let lat = cfg.mem_latency_cycles as u64;

    while let Some(f) = st.in_flight.front() {
        if f.done_at > cycle {
            break;
        }
        let f = st.in_flight.pop_front().unwrap();
        st.stats.completed += 1;
        if f.read && !f.kernel {
            st.reads_in_flight -= 1;
        }
        if f.modify {
            // The dirty line leaves through the slot reserved at issue.
            st.requests.push_back(Req::Write { op: f.op });
        }
    }

    for _ in 0..grants {
        let Some(r) = st.requests.pop_front() else { break };
        st.stats.granted += 1;
        match r {
            Req::Read { modify, kernel, op } => {
                st.in_flight.push_back(InFlight { done_at: cycle + lat, modify, kernel, read: true, op });
            }
            Req::Write { op } => {
                st.wb_used -= 1;
                st.stats.writebacks += 1;
                // Retirement from the write buffer is what the PMU sees.
                st.emit(op as usize, false, false);
                st.in_flight.push_back(InFlight {
                    done_at: cycle + lat,
                    modify: false,
                    kernel: false,
                    read: false,
                    op,
                });
            }
        }
    }

    if ctrl.timer_irq {
        st.kernel_busy += cfg.timer_irq_cycles as u64;
        st.stats.irq_count += 1;
        st.stats.timer_irqs += 1;
    }
    st.step_irq(cfg, cycle, ctrl.irq_request);

    let in_handler = st.throttled();
    let kernel = in_handler || st.kernel_busy > 0;
    if st.kernel_busy > 0 {
        st.kernel_busy -= 1;
    }
    delta.throttled = in_handler || ctrl.halt;
    if in_handler {
        st.stats.cycles_throttled += 1;
    }

    if ctrl.halt {
        st.stats.cycles_halted += 1;
        out.instruction_fetch_addr = None;
        out.exec_mode = if kernel { ExecMode::Kernel } else { ExecMode::User };
    } else if kernel {
        st.stats.cycles_kernel += 1;
        out.instruction_fetch_addr = Some(KERNEL_PC);
        out.exec_mode = ExecMode::Kernel;
    } else {
        out.instruction_fetch_addr = Some(USER_PC);
        out.exec_mode = ExecMode::User;
        match st.cursor.peek() {
            Action::Op(_) => {
                let ipc = st.cursor.ipc;
                st.credit = (st.credit + ipc).min(ipc.max(1.0));
                while st.credit >= 1.0 - super::memory::CREDIT_EPS {
                    let Action::Op(op) = st.cursor.peek() else { break };
                    let idx = op_index(op);
                    if !st.try_issue(cfg, idx, op.kind()) {
                        break;
                    }
                    st.cursor.consume_op();
                    st.credit -= 1.0;
                    delta.lines += 1;
                }
            }
            Action::Idle { wfi } => {
                st.cursor.consume_idle();
                if wfi {
                    out.core_idle = true;
                    out.instruction_fetch_addr = None;
                }
            }
            Action::Busy => {
                if let Some(p) = st.cursor.replay_due(cycle) {
                    st.pulses.push_back((p.group, p.mode == ExecMode::Kernel));
                    if p.mode == ExecMode::Kernel {
                        out.exec_mode = ExecMode::Kernel;
                        out.instruction_fetch_addr = Some(KERNEL_PC);
                    }
                }
            }
            Action::Done => {
                out.core_idle = st.pulses.is_empty() && st.requests.is_empty() && st.in_flight.is_empty();
                if out.core_idle {
                    out.instruction_fetch_addr = None;
                }
            }
        }
    }
    if out.core_idle {
        st.stats.cycles_idle += 1;
    }

    if let Some((g, is_kernel)) = st.pulses.pop_front() {
        let w: f64 = g.signals().iter().map(|&s| st.weight(s)).sum();
        out.active_signals.extend_from_slice(g.signals());
        st.stats.pulses += g.len() as u64;
        st.stats.pulse_cycles += 1;
        st.stats.pmu_events += w;
        delta.pmu_events = w;
        if !is_kernel {
            st.stats.user_events += w;
            delta.user_events = w;
            if st.first_assert.is_some() && !st.first_exit_seen {
                st.stats.first_throttle_overshoot += w;
            }
        }
    }
    delta
}
