//! Event-rate model of a processing element and its memory path: workload
//! issue, outstanding reads, the write buffer, signal pulses towards the ETM,
//! CTIIRQ delivery and the throttling interrupt handler, and a shared memory
//! controller.

mod core;
mod memory;
mod system;
mod workload;

pub use self::core::{step_core, Control, CoreState, CoreStats, HandlerPhase, IrqState, KERNEL_PC, USER_PC};
pub use memory::MemoryController;
pub use system::{
    run_system, CoreSetup, CoreTrace, FabricSample, RegulatorAttachment, SimError, SystemConfig, SystemTrace,
};
pub use workload::{load_trace, parse_trace, BurstStep, TraceError, TraceRecord, TraceSignal, WorkloadSpec};

use crate::accounting::{CoreType, ModelVariant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IrqTrigger {
    #[default]
    Level,
    Edge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreModelConfig {
    pub core_type: CoreType,
    /// Bandwidth model whose signals the core's pulse profile is drawn from.
    #[serde(default)]
    pub variant: Option<ModelVariant>,
    pub freq_mhz: f64,
    pub irq_latency_cycles: u32,
    #[serde(default)]
    pub irq_trigger: IrqTrigger,
    pub read_outstanding: u32,
    pub write_buffer_depth: u32,
    pub mem_latency_cycles: u32,
    #[serde(default = "defaults::entry")]
    pub handler_entry_cycles: u32,
    #[serde(default = "defaults::poll")]
    pub handler_poll_cycles: u32,
    #[serde(default = "defaults::exit")]
    pub handler_exit_cycles: u32,
    #[serde(default)]
    pub handler_kernel_events: u32,
    /// Cost of one periodic timer interrupt (software regulators only).
    #[serde(default = "defaults::timer")]
    pub timer_irq_cycles: u32,
    #[serde(default = "defaults::line")]
    pub cacheline_bytes: u32,
}

mod defaults {
    pub fn entry() -> u32 {
        40
    }
    pub fn poll() -> u32 {
        20
    }
    pub fn exit() -> u32 {
        40
    }
    pub fn timer() -> u32 {
        300
    }
    pub fn line() -> u32 {
        64
    }
}

impl CoreModelConfig {
    pub fn new(core_type: CoreType, freq_mhz: f64) -> Self {
        CoreModelConfig {
            core_type,
            variant: None,
            freq_mhz,
            irq_latency_cycles: 0,
            irq_trigger: IrqTrigger::Level,
            read_outstanding: 8,
            write_buffer_depth: 20,
            mem_latency_cycles: 100,
            handler_entry_cycles: defaults::entry(),
            handler_poll_cycles: defaults::poll(),
            handler_exit_cycles: defaults::exit(),
            handler_kernel_events: 0,
            timer_irq_cycles: defaults::timer(),
            cacheline_bytes: defaults::line(),
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant.unwrap_or_else(|| self.core_type.default_variant())
    }

    /// Cycles covering `us` microseconds, rounded to the nearest cycle.
    pub fn cycles_for_us(&self, us: f64) -> u64 {
        (us * self.freq_mhz).round() as u64
    }

    /// Controller slots per cycle for a bandwidth in MB/s.
    pub fn lines_per_cycle(&self, mbps: f64) -> f64 {
        mbps * 1e6 / self.cacheline_bytes as f64 / (self.freq_mhz * 1e6)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.freq_mhz.is_nan() || self.freq_mhz <= 0.0 {
            return Err("freq_mhz must be positive".into());
        }
        if self.cacheline_bytes == 0 {
            return Err("cacheline_bytes must be positive".into());
        }
        Ok(())
    }
}
