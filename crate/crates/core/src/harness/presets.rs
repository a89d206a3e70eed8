use crate::accounting::CoreType;
use crate::machine::{CoreModelConfig, IrqTrigger};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoardPreset {
    Zcu102,
    Lx2160a,
    #[serde(alias = "rk3588-a55")]
    Rk3588A55,
    #[serde(alias = "rk3588-a76")]
    Rk3588A76,
    /// No interrupt latency, no buffering, free handler: only the budget
    /// quantum limits precision.
    Ideal,
}

impl BoardPreset {
    pub const ALL: [BoardPreset; 5] =
        [BoardPreset::Zcu102, BoardPreset::Lx2160a, BoardPreset::Rk3588A55, BoardPreset::Rk3588A76, BoardPreset::Ideal];

    pub fn name(self) -> &'static str {
        match self {
            BoardPreset::Zcu102 => "zcu102",
            BoardPreset::Lx2160a => "lx2160a",
            BoardPreset::Rk3588A55 => "rk3588_a55",
            BoardPreset::Rk3588A76 => "rk3588_a76",
            BoardPreset::Ideal => "ideal",
        }
    }

    pub fn core_model(self) -> CoreModelConfig {
        let (core, freq, latency, trigger, mem_latency) = match self {
            BoardPreset::Zcu102 => (CoreType::A53, 1200.0, 81, IrqTrigger::Level, 100),
            BoardPreset::Lx2160a => (CoreType::A72, 2000.0, 259, IrqTrigger::Level, 200),
            BoardPreset::Rk3588A55 => (CoreType::A55, 1120.0, 272, IrqTrigger::Edge, 110),
            BoardPreset::Rk3588A76 => (CoreType::A76, 1200.0, 308, IrqTrigger::Edge, 120),
            BoardPreset::Ideal => (CoreType::A53, 1200.0, 0, IrqTrigger::Level, 0),
        };
        let mut m = CoreModelConfig::new(core, freq);
        m.irq_latency_cycles = latency;
        m.irq_trigger = trigger;
        m.mem_latency_cycles = mem_latency;
        if self == BoardPreset::Ideal {
            m.read_outstanding = 1;
            m.write_buffer_depth = 0;
            m.handler_entry_cycles = 0;
            m.handler_poll_cycles = 1;
            m.handler_exit_cycles = 0;
            m.timer_irq_cycles = 0;
        }
        m
    }

    /// Bandwidth of the memory path as one core sees it.
    pub fn mem_cap_mbps(self) -> f64 {
        match self {
            BoardPreset::Zcu102 | BoardPreset::Ideal => 1000.0,
            BoardPreset::Lx2160a | BoardPreset::Rk3588A55 | BoardPreset::Rk3588A76 => 2000.0,
        }
    }
}

impl fmt::Display for BoardPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoardPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        BoardPreset::ALL.into_iter().find(|b| b.name() == norm).ok_or_else(|| {
            let names: Vec<_> = BoardPreset::ALL.iter().map(|b| b.name()).collect();
            format!("unknown board '{s}', expected one of {}", names.join(", "))
        })
    }
}

/// Optional per-field changes to a preset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardOverrides {
    pub freq_mhz: Option<f64>,
    pub irq_latency_cycles: Option<u32>,
    pub irq_trigger: Option<IrqTrigger>,
    pub read_outstanding: Option<u32>,
    pub write_buffer_depth: Option<u32>,
    pub mem_latency_cycles: Option<u32>,
    pub handler_entry_cycles: Option<u32>,
    pub handler_poll_cycles: Option<u32>,
    pub handler_exit_cycles: Option<u32>,
    pub handler_kernel_events: Option<u32>,
    pub timer_irq_cycles: Option<u32>,
    pub mem_cap_mbps: Option<f64>,
}

impl BoardOverrides {
    pub fn apply(&self, m: &mut CoreModelConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { m.$f = v; } )* };
        }
        set!(
            freq_mhz,
            irq_latency_cycles,
            irq_trigger,
            read_outstanding,
            write_buffer_depth,
            mem_latency_cycles,
            handler_entry_cycles,
            handler_poll_cycles,
            handler_exit_cycles,
            handler_kernel_events,
            timer_irq_cycles
        );
    }
}

/// A preset with its overrides applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Board {
    pub preset: BoardPreset,
    pub model: CoreModelConfig,
    pub mem_cap_mbps: f64,
}

impl Board {
    pub fn new(preset: BoardPreset, overrides: &BoardOverrides) -> Self {
        let mut model = preset.core_model();
        overrides.apply(&mut model);
        Board { preset, model, mem_cap_mbps: overrides.mem_cap_mbps.unwrap_or(preset.mem_cap_mbps()) }
    }

    pub fn preset(preset: BoardPreset) -> Self {
        Self::new(preset, &BoardOverrides::default())
    }

    /// Controller capacity in cachelines per cycle.
    pub fn cap_lines_per_cycle(&self) -> f64 {
        self.model.lines_per_cycle(self.mem_cap_mbps)
    }
}
