//! Regulator designs: ETM resource programs for periodic-replenishment and
//! token-bucket regulation, plus behavioral models of the MemGuard and
//! MemPol software regulators used as baselines.

mod etm;
mod memguard;
mod mempol;

pub use etm::{build_config, build_counting_config, build_pr_config, build_pr_user_config, build_tb_config};
pub use memguard::{memguard_step, MemGuardConfig, MemGuardDecision, MemGuardState};
pub use mempol::{mempol_step, MemPolConfig, MemPolState};

use crate::accounting::{AccountingError, CoreType, ModelVariant};
use crate::fabric::InvalidConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default address where user space ends for PR_USER.
pub const DEFAULT_USER_SPLIT: u64 = 0x0000_8000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Pr,
    PrStop,
    PrUser,
    Tb31,
    Tb22,
    Tb13,
    #[serde(rename = "memguard")]
    MemGuard,
    #[serde(rename = "mempol")]
    MemPol,
}

impl Design {
    pub const ETM: [Design; 6] = [Design::Pr, Design::PrStop, Design::PrUser, Design::Tb31, Design::Tb22, Design::Tb13];

    pub fn is_etm(self) -> bool {
        !matches!(self, Design::MemGuard | Design::MemPol)
    }

    pub fn is_token_bucket(self) -> bool {
        matches!(self, Design::Tb31 | Design::Tb22 | Design::Tb13)
    }

    /// Sequencer states in which the design requests throttling.
    pub fn throttle_states(self) -> &'static [u8] {
        match self {
            Design::Pr | Design::PrStop | Design::Tb31 => &[3],
            Design::PrUser | Design::Tb22 => &[2, 3],
            Design::Tb13 => &[1, 2, 3],
            Design::MemGuard | Design::MemPol => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Design::Pr => "pr",
            Design::PrStop => "pr_stop",
            Design::PrUser => "pr_user",
            Design::Tb31 => "tb31",
            Design::Tb22 => "tb22",
            Design::Tb13 => "tb13",
            Design::MemGuard => "memguard",
            Design::MemPol => "mempol",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let all = [
            Design::Pr,
            Design::PrStop,
            Design::PrUser,
            Design::Tb31,
            Design::Tb22,
            Design::Tb13,
            Design::MemGuard,
            Design::MemPol,
        ];
        let norm = s.to_ascii_lowercase().replace('-', "_");
        all.into_iter().find(|d| d.name() == norm).ok_or_else(|| format!("unknown regulator design '{s}'"))
    }
}

/// What to regulate and how. `budget_events` is in units of the bandwidth
/// model (cachelines as the model estimates them) per `period_cycles`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegulatorSpec {
    pub design: Design,
    pub budget_events: u32,
    pub period_cycles: u64,
    pub core_type: CoreType,
    #[serde(default)]
    pub model_variant: Option<ModelVariant>,
    /// First non-user address, PR_USER only.
    #[serde(default)]
    pub user_split: Option<u64>,
}

impl RegulatorSpec {
    pub fn new(design: Design, budget_events: u32, period_cycles: u64, core_type: CoreType) -> Self {
        RegulatorSpec { design, budget_events, period_cycles, core_type, model_variant: None, user_split: None }
    }

    pub fn variant(&self) -> ModelVariant {
        self.model_variant.unwrap_or_else(|| self.core_type.default_variant())
    }

    pub fn throttle_states(&self) -> &'static [u8] {
        self.design.throttle_states()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegulatorError {
    #[error("range error: {0}")]
    Range(String),
    #[error("{0} is not an ETM design")]
    NotEtmDesign(Design),
    #[error("{0} cannot be built by this constructor")]
    WrongDesign(Design),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Invalid(#[from] InvalidConfig),
}
