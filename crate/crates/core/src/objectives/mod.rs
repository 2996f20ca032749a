//! Pretraining objectives that act purely on embedding sequences.

pub mod emix;
pub mod shed;

use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

pub use self::emix::{apply_mix, apply_mix_backward, emix_loss, sample_mix_plan, virtual_labels, LabelMode, MixPlan, VirtualLabels};
pub use self::shed::{apply_shuffle, sample_shuffle_plan, shed_loss, ShufflePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Objective {
    Emix,
    Shed,
    /// No pretraining: the randomly initialized baseline.
    None,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Emix, Objective::Shed, Objective::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Emix => "emix",
            Objective::Shed => "shed",
            Objective::None => "none",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown objective `{s}`; expected one of emix, shed, none")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveConfig {
    pub objective: Objective,
    /// Softmax temperature of the e-Mix contrastive loss.
    pub temperature: f64,
    /// Fraction of valid positions shuffled by ShED.
    pub shuffle_rate: f64,
    pub label_mode: LabelMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { objective: Objective::Emix, temperature: 0.2, shuffle_rate: 0.15, label_mode: LabelMode::Literal }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.shuffle_rate > 0.0 && self.shuffle_rate < 1.0) {
            return Err(Error::InvalidArgument(format!("shuffle_rate must lie in (0, 1), got {}", self.shuffle_rate)));
        }
        Ok(())
    }
}
