//! JSON run configuration shared by all subcommands.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use switchstab::designer::{Bounds, ControlGains, DesignOptions};
use switchstab::{
    ControlLaw, GeneratorMatrix, LambdaVariant, PolynomialModel, Scenario, SimConfig,
};

use crate::CliError;

/// Name accepted by `{"builtin": ...}`.
pub const BUILTIN_TWO_MODE: &str = "two_mode";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub generator: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<LambdaVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Builtin(String),
    Polynomial(PolynomialModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Initial mode, one-based.
    #[serde(default = "one")]
    pub i0: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default = "one")]
    pub n_paths: usize,
    #[serde(default = "default_q")]
    pub q_list: Vec<f64>,
    /// Regression window for the moment exponents; `[T/4, T]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

fn one() -> usize {
    1
}

fn default_q() -> Vec<f64> {
    vec![2.0]
}

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn generator(&self) -> Result<GeneratorMatrix, CliError> {
        GeneratorMatrix::new(&self.generator).map_err(|e| config_err(format!("generator: {e}")))
    }

    pub fn gains(&self) -> Result<ControlGains, CliError> {
        let g = self
            .gains
            .clone()
            .ok_or_else(|| config_err("missing key `gains`"))?;
        ControlGains::new(g).map_err(|e| config_err(format!("gains: {e}")))
    }

    pub fn bounds(&self) -> Result<&Bounds, CliError> {
        self.bounds
            .as_ref()
            .ok_or_else(|| config_err("missing key `bounds`"))
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.scenario
            .ok_or_else(|| config_err("missing key `scenario`"))
    }

    pub fn sim(&self) -> Result<&SimSection, CliError> {
        self.sim
            .as_ref()
            .ok_or_else(|| config_err("missing key `sim`"))
    }

    pub fn model(&self) -> Result<PolynomialModel, CliError> {
        match self
            .model
            .as_ref()
            .ok_or_else(|| config_err("missing key `model`"))?
        {
            ModelSpec::Builtin(name) if name == BUILTIN_TWO_MODE => {
                Ok(PolynomialModel::two_mode_example())
            }
            ModelSpec::Builtin(name) => Err(config_err(format!(
                "model.builtin: unknown model `{name}`, expected `{BUILTIN_TWO_MODE}`"
            ))),
            ModelSpec::Polynomial(m) => Ok(m.clone()),
        }
    }

    /// The control law, present when `tau` is given.
    pub fn law(&self) -> Result<Option<ControlLaw>, CliError> {
        let Some(tau) = self.tau else {
            if self.tau0.is_some() {
                return Err(config_err("`tau0` given without `tau`"));
            }
            return Ok(None);
        };
        let alpha = self
            .gains
            .clone()
            .ok_or_else(|| config_err("`tau` given without `gains`"))?;
        ControlLaw::new(alpha, tau, self.tau0.unwrap_or(0.0))
            .map(Some)
            .map_err(config_err)
    }

    pub fn sim_config(&self, seed: Option<u64>) -> Result<SimConfig, CliError> {
        let s = self.sim()?;
        if s.i0 == 0 {
            return Err(config_err("sim.i0 is one-based"));
        }
        Ok(SimConfig {
            dt: s.dt,
            horizon: s.horizon,
            x0: s.x0.clone(),
            i0: s.i0 - 1,
            seed: seed.unwrap_or(s.seed),
            record_stride: s.record_stride,
        })
    }

    pub fn design_options(&self, variant: Option<LambdaVariant>) -> DesignOptions {
        let x0_norm_sq = self
            .sim
            .as_ref()
            .map(|s| s.x0.iter().map(|v| v * v).sum())
            .unwrap_or(1.0);
        DesignOptions {
            variant: variant.or(self.variant).unwrap_or_default(),
            tau: self.tau,
            tau0: self.tau0,
            x0_norm_sq,
        }
    }
}
