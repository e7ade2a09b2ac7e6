//! TOML run configuration, one section per pipeline stage. Unknown keys are
//! rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::PsiKind;
use crate::scenarios::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub admissibility: AdmissibilitySection,
    #[serde(default)]
    pub constant: ConstantSection,
    #[serde(default)]
    pub poincare: PoincareSection,
    #[serde(default)]
    pub logsob: LogsobSection,
}

fn default_growth_steps() -> usize {
    crate::selftest::GROWTH_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilitySection {
    /// Hops used for the growth fit.
    #[serde(default = "default_growth_steps")]
    pub growth_steps: usize,
    /// Fixed parameters; when any is absent the default grid is searched.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub s: Option<f64>,
}

impl Default for AdmissibilitySection {
    fn default() -> Self {
        Self {
            growth_steps: default_growth_steps(),
            lambda: None,
            epsilon: None,
            s: None,
        }
    }
}

fn default_p() -> f64 {
    2.0
}
fn default_restarts() -> usize {
    8
}
fn default_n_max() -> usize {
    50
}
fn default_validation() -> usize {
    200
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantSection {
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Run the constructive chain when a certificate is available.
    #[serde(default = "default_true")]
    pub chain: bool,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_validation")]
    pub validation_samples: usize,
}

impl Default for ConstantSection {
    fn default() -> Self {
        Self {
            p: default_p(),
            restarts: default_restarts(),
            chain: true,
            n_max: default_n_max(),
            validation_samples: default_validation(),
        }
    }
}

fn default_samples() -> usize {
    1000
}
fn default_slack() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Relative slack in `lhs <= C rhs`.
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for PoincareSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            slack: default_slack(),
        }
    }
}

fn default_kind() -> PsiKind {
    PsiKind::LogPower
}
fn default_alpha() -> f64 {
    0.5
}
fn default_family() -> usize {
    100
}
fn default_radii() -> Vec<f64> {
    vec![1.0, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogsobSection {
    #[serde(default = "default_kind")]
    pub psi: PsiKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_family")]
    pub family: usize,
    /// Radii of the nested scales `U_0 ⊇ U_1 ⊇ …` on lattice scenarios.
    #[serde(default = "default_radii")]
    pub scale_radii: Vec<f64>,
}

impl Default for LogsobSection {
    fn default() -> Self {
        Self {
            psi: default_kind(),
            alpha: default_alpha(),
            c: 0.0,
            p: default_p(),
            family: default_family(),
            scale_radii: default_radii(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
