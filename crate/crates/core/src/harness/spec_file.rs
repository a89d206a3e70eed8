use super::{Board, BoardOverrides, BoardPreset, HarnessError};
use crate::accounting::CoreType;
use crate::machine::CoreModelConfig;
use crate::regulators::RegulatorSpec;
use serde::{Deserialize, Serialize};

/// Input of `compile`: a regulator and the board it runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorFile {
    /// Defaults to the preset carrying the regulator's core type.
    #[serde(default)]
    pub board: Option<BoardPreset>,
    #[serde(default)]
    pub board_overrides: BoardOverrides,
    pub regulator: RegulatorSpec,
}

impl RegulatorFile {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn core_model(&self) -> CoreModelConfig {
        let preset = self.board.or(match self.regulator.core_type {
            CoreType::A53 => Some(BoardPreset::Zcu102),
            CoreType::A72 => Some(BoardPreset::Lx2160a),
            CoreType::A55 => Some(BoardPreset::Rk3588A55),
            CoreType::A76 => Some(BoardPreset::Rk3588A76),
            CoreType::A78 => None,
        });
        let mut model = match preset {
            Some(p) => Board::new(p, &self.board_overrides).model,
            None => {
                let mut m = CoreModelConfig::new(self.regulator.core_type, 2000.0);
                self.board_overrides.apply(&mut m);
                m
            }
        };
        model.core_type = self.regulator.core_type;
        model.variant = self.regulator.model_variant;
        model
    }
}
