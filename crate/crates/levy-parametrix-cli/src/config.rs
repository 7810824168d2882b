use std::path::{Path, PathBuf};

use levy_parametrix::coefficient_model::{CoefficientModel, ModelConfig, Regime};
use levy_parametrix::parametrix::{LatticeSpec, ParametrixConfig, TimeSpec};
use levy_parametrix::stable_sim::SimSpec;
use levy_parametrix::verification::{Suite, VerifyConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Stable profile resolution and optional on-disk cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    pub resolution: usize,
    pub radius_max: Option<f64>,
    pub cache: Option<PathBuf>,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec { resolution: 4096, radius_max: None, cache: None }
    }
}

/// Where `density` evaluates the transition density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySpec {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// Arrival points; the interior lattice nodes when absent.
    pub y: Option<Vec<f64>>,
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec { times: vec![0.1, 0.5, 1.0], x: vec![-2.0, 0.0, 2.0], y: None }
    }
}

/// One run, read from a TOML file and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model TOML, relative to the run config.
    pub model_file: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub regime: Option<Regime>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub horizon: f64,
    pub lattice: LatticeSpec,
    pub time: TimeSpec,
    /// Series tolerance.
    pub tol: f64,
    pub simulation: SimSpec,
    pub out: PathBuf,
    pub suites: Vec<Suite>,
    pub profile: ProfileSpec,
    pub density: DensitySpec,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_file: None,
            model: None,
            regime: None,
            alpha: None,
            gamma: None,
            kappa: None,
            horizon: 1.0,
            lattice: LatticeSpec::default(),
            time: TimeSpec::default(),
            tol: 1e-6,
            simulation: SimSpec::default(),
            out: PathBuf::from("out"),
            suites: Suite::ALL.to_vec(),
            profile: ProfileSpec::default(),
            density: DensitySpec::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.model_file {
            cfg.model_file = Some(base.join(m));
        }
        if let Some(c) = &cfg.profile.cache {
            cfg.profile.cache = Some(base.join(c));
        }
        Ok(cfg)
    }

    /// The model description after overrides.
    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let mut m = match (&self.model, &self.model_file) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either `model` or `model_file`, not both".into())),
            (Some(m), None) => m.clone(),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            (None, None) => return Err(CliError::Config("no model given".into())),
        };
        if let Some(r) = self.regime {
            m.regime = r;
        }
        if let Some(a) = self.alpha {
            m.alpha = a;
        }
        if let Some(g) = self.gamma {
            m.gamma = g;
        }
        Ok(m)
    }

    pub fn build_model(&self) -> Result<CoefficientModel, CliError> {
        CoefficientModel::from_config(&self.model_config()?).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn parametrix_config(&self) -> ParametrixConfig {
        let mut required = self.time.required.clone();
        required.extend(&self.density.times);
        ParametrixConfig {
            lattice: self.lattice.clone(),
            time: TimeSpec { horizon: self.horizon, required, ..self.time.clone() },
            kappa: self.kappa,
            tol: self.tol,
            ..ParametrixConfig::default()
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig { suites: self.suites.clone(), simulation: self.simulation.clone(), ..self.verify.clone() }
    }

    /// Range checks that do not need the model.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::Config(what.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.lattice.nodes < 3 || !(self.lattice.hi > self.lattice.lo) {
            return bad("lattice needs at least 3 nodes and lo < hi");
        }
        if !(self.time.ratio > 1.0 && self.time.first > 0.0 && self.time.first < 1.0 && self.time.max_step > 0.0) {
            return bad("time grid needs ratio > 1, first in (0, 1) and max_step > 0");
        }
        if self.profile.resolution < 256 {
            return bad("profile resolution must be at least 256");
        }
        if self.density.times.iter().any(|&t| !(t > 0.0 && t <= self.horizon)) {
            return bad("density times must lie in (0, horizon]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_to_the_model() {
        let cfg: RunConfig = toml::from_str(
            r#"
            regime = "C"
            alpha = 0.8
            [model]
            a = "1 + 0.3*sin(x)"
            b = "0.5*cos(x)"
            alpha = 1.5
            regime = "A"
            "#,
        )
        .unwrap();
        let m = cfg.model_config().unwrap();
        assert_eq!(m.regime, Regime::C);
        assert_eq!(m.alpha, 0.8);
        assert!(cfg.build_model().is_ok());
        assert_eq!(cfg.parametrix_config().time.horizon, 1.0);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_model() {
        assert!(toml::from_str::<RunConfig>("nodes = 3").is_err());
        assert!(matches!(RunConfig::default().model_config(), Err(CliError::Config(_))));
    }
}
