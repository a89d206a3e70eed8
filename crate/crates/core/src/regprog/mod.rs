//! Symbolic CoreSight register programs: compile a regulator into the
//! ordered writes that would set up DBG, PMU, CTI and ETM, and lift such a
//! program back into the fabric configuration it describes.
//!
//! Registers are named, fields are named integers; no offsets or bit
//! positions are modelled.

mod compile;
mod lift;
mod text;

pub use compile::{advisory_floor, compile, compile_config, max_period};
pub use lift::lift;
pub use text::{parse_text, to_json, to_text};

use serde::{Deserialize, Serialize};
use std::fmt;

pub const LAR_KEY: u64 = 0xC5AC_CE55;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    #[serde(rename = "DBG")]
    Dbg,
    #[serde(rename = "PMU")]
    Pmu,
    #[serde(rename = "ETM")]
    Etm,
    #[serde(rename = "CTI")]
    Cti,
}

impl Device {
    pub fn name(self) -> &'static str {
        match self {
            Device::Dbg => "DBG",
            Device::Pmu => "PMU",
            Device::Etm => "ETM",
            Device::Cti => "CTI",
        }
    }

    pub fn parse(s: &str) -> Option<Device> {
        [Device::Dbg, Device::Pmu, Device::Etm, Device::Cti].into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Unlock,
    DisableAll,
    #[serde(rename = "ProgramCTI")]
    ProgramCti,
    #[serde(rename = "ProgramETM")]
    ProgramEtm,
    #[serde(rename = "EnablePMUExport")]
    EnablePmuExport,
    #[serde(rename = "EnableETM")]
    EnableEtm,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Unlock,
        Phase::DisableAll,
        Phase::ProgramCti,
        Phase::ProgramEtm,
        Phase::EnablePmuExport,
        Phase::EnableEtm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Unlock => "Unlock",
            Phase::DisableAll => "DisableAll",
            Phase::ProgramCti => "ProgramCTI",
            Phase::ProgramEtm => "ProgramETM",
            Phase::EnablePmuExport => "EnablePMUExport",
            Phase::EnableEtm => "EnableETM",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterWrite {
    pub phase: Phase,
    pub device: Device,
    pub register: String,
    pub fields: Vec<(String, u64)>,
    #[serde(default)]
    pub comment: String,
}

impl RegisterWrite {
    pub fn field(&self, name: &str) -> Option<u64> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RegisterProgram {
    pub writes: Vec<RegisterWrite>,
    /// Advisory diagnostics; they do not make the program invalid.
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("{0} is not an ETM design")]
    NotEtmDesign(String),
    #[error("model not realizable on the ETM: {0}")]
    NotEtmRealizable(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("resource budget exceeded: {0}")]
    ResourceBudgetExceeded(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LiftError {
    #[error("malformed program: {0}")]
    MalformedProgram(String),
}

/// Field names and widths of one catalogued register.
struct RegDef {
    device: Device,
    /// Name without the numeric suffix.
    base: &'static str,
    /// Allowed suffixes; `None` for unindexed registers.
    index: Option<(u32, u32)>,
    fields: &'static [(&'static str, u32)],
}

const CATALOG: &[RegDef] = &[
    RegDef { device: Device::Dbg, base: "LAR", index: None, fields: &[("key", 32)] },
    RegDef { device: Device::Dbg, base: "OSLAR", index: None, fields: &[("oslk", 1)] },
    RegDef { device: Device::Pmu, base: "LAR", index: None, fields: &[("key", 32)] },
    RegDef { device: Device::Pmu, base: "PMCR", index: None, fields: &[("e", 1), ("x", 1)] },
    RegDef { device: Device::Cti, base: "LAR", index: None, fields: &[("key", 32)] },
    RegDef { device: Device::Cti, base: "CTICONTROL", index: None, fields: &[("glben", 1)] },
    RegDef { device: Device::Cti, base: "CTIINEN", index: Some((0, 7)), fields: &[("chan", 4)] },
    RegDef { device: Device::Cti, base: "CTIOUTEN", index: Some((0, 7)), fields: &[("chan", 4)] },
    RegDef { device: Device::Cti, base: "CTIGATE", index: None, fields: &[("mask", 4)] },
    RegDef { device: Device::Cti, base: "CTIINTACK", index: None, fields: &[("ack", 8)] },
    RegDef { device: Device::Etm, base: "LAR", index: None, fields: &[("key", 32)] },
    RegDef { device: Device::Etm, base: "TRCOSLAR", index: None, fields: &[("oslk", 1)] },
    RegDef { device: Device::Etm, base: "TRCPRGCTLR", index: None, fields: &[("en", 1)] },
    RegDef { device: Device::Etm, base: "TRCEXTINSELR", index: Some((0, 3)), fields: &[("evtsel", 16), ("input", 2)] },
    RegDef {
        device: Device::Etm,
        base: "TRCRSCTLR",
        index: Some((2, 15)),
        fields: &[("group", 4), ("select", 16), ("inv", 1), ("pair", 4), ("pairop", 1)],
    },
    RegDef { device: Device::Etm, base: "TRCCNTRLDVR", index: Some((0, 1)), fields: &[("value", 16)] },
    RegDef { device: Device::Etm, base: "TRCCNTVR", index: Some((0, 1)), fields: &[("value", 16)] },
    RegDef {
        device: Device::Etm,
        base: "TRCCNTCTLR",
        index: Some((0, 1)),
        fields: &[("cntevent", 4), ("rldevent", 4), ("rldself", 1), ("cntchain", 1)],
    },
    RegDef { device: Device::Etm, base: "TRCSEQEVR", index: Some((0, 2)), fields: &[("f", 4), ("b", 4)] },
    RegDef { device: Device::Etm, base: "TRCSEQRSTEVR", index: None, fields: &[("rst", 4)] },
    RegDef { device: Device::Etm, base: "TRCACVR", index: Some((0, 7)), fields: &[("addr", 64)] },
    RegDef { device: Device::Etm, base: "TRCACATR", index: Some((0, 7)), fields: &[("modes", 2)] },
    RegDef {
        device: Device::Etm,
        base: "TRCEVENTCTL0R",
        index: None,
        fields: &[("evt0", 4), ("evt1", 4), ("evt2", 4), ("evt3", 4)],
    },
    RegDef { device: Device::Etm, base: "TRCEVENTCTL1R", index: None, fields: &[("en", 4)] },
];

/// Split `TRCRSCTLR12` into (`TRCRSCTLR`, Some(12)).
pub(crate) fn split_register(name: &str) -> (&str, Option<u32>) {
    let digits = name.bytes().rev().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return (name, None);
    }
    let (base, idx) = name.split_at(name.len() - digits);
    (base, idx.parse().ok())
}

/// Check a write against the catalog: known register, known fields, values
/// within their widths.
pub(crate) fn check_write(w: &RegisterWrite) -> Result<(), String> {
    let (base, idx) = split_register(&w.register);
    let def = CATALOG
        .iter()
        .find(|d| d.device == w.device && d.base == base && d.index.is_some() == idx.is_some())
        .ok_or_else(|| format!("unknown register {} {}", w.device, w.register))?;
    if let (Some((lo, hi)), Some(i)) = (def.index, idx) {
        if i < lo || i > hi {
            return Err(format!("register {} {} index out of range {lo}..{hi}", w.device, w.register));
        }
    }
    for (name, value) in &w.fields {
        let (_, width) = def
            .fields
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| format!("register {} {} has no field {name}", w.device, w.register))?;
        if *width < 64 && *value >> width != 0 {
            return Err(format!("{} {}.{name}={value} exceeds {width} bits", w.device, w.register));
        }
    }
    Ok(())
}
