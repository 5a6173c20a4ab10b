//! Experiment configuration and its provenance hash.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use helioinv_core::forward::ProblemConfig;
use helioinv_core::spectral::{TargetSpec, DEFAULT_WEIGHT_EXPONENT};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Rls,
    Sola,
    Pinsker,
}

impl MethodName {
    pub fn parameter_name(&self) -> &'static str {
        match self {
            MethodName::Rls => "alpha",
            MethodName::Sola => "mu",
            MethodName::Pinsker => "kappa",
        }
    }
}

/// How the regularization parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterRule {
    Fixed(f64),
    /// First parameter of the grid whose whitened residual is within the noise band.
    Discrepancy,
    /// Noise variance of the estimate at the target location.
    MatchVariance(f64),
}

/// Log-spaced scan used by the discrepancy rule and as the variance-matching bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl ParameterGrid {
    pub fn default_for(method: MethodName) -> Self {
        let (lo, hi) = match method {
            MethodName::Rls => (1e-6, 1e2),
            MethodName::Sola => (1e-4, 1e4),
            MethodName::Pinsker => (1e-3, 1.0),
        };
        ParameterGrid { lo, hi, n: 81 }
    }

    pub fn values(&self) -> Vec<f64> {
        helioinv_core::spectral::log_grid(self.lo, self.hi, self.n)
    }

    fn validate(&self, path: &str) -> CliResult<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite() && self.n >= 2) {
            return Err(CliError::Config(format!("{path}: need 0 < lo < hi and n >= 2")));
        }
        Ok(())
    }
}

/// Velocity component and depth (in Mm) at which variances are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetLocation {
    pub component: usize,
    pub depth: f64,
}

impl Default for TargetLocation {
    fn default() -> Self {
        TargetLocation { component: 2, depth: -3.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub method: MethodName,
    pub mass_conservation: bool,
    pub rule: ParameterRule,
    pub grid: Option<ParameterGrid>,
    pub target: TargetLocation,
    pub sola: TargetSpec,
    /// Exponent of the ellipsoid weights `a_l = l^exponent`.
    pub ellipsoid_exponent: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            method: MethodName::Pinsker,
            mass_conservation: true,
            rule: ParameterRule::Discrepancy,
            grid: None,
            target: TargetLocation::default(),
            sola: TargetSpec::default(),
            ellipsoid_exponent: DEFAULT_WEIGHT_EXPONENT,
        }
    }
}

impl InversionConfig {
    pub fn grid(&self) -> ParameterGrid {
        self.grid.unwrap_or_else(|| ParameterGrid::default_for(self.method))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.method == MethodName::Sola && self.mass_conservation {
            return Err(CliError::Config("inversion.mass_conservation: SOLA has no mass-conserving variant".into()));
        }
        match self.rule {
            ParameterRule::Fixed(x) if !(x > 0.0 && x.is_finite()) => {
                return Err(CliError::Config(format!(
                    "inversion.rule.fixed: {} must be positive, got {x}",
                    self.method.parameter_name()
                )));
            }
            ParameterRule::MatchVariance(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(CliError::Config(format!("inversion.rule.match_variance: target must be positive, got {v}")));
            }
            _ => {}
        }
        if let Some(g) = &self.grid {
            g.validate("inversion.grid")?;
        }
        if self.target.component > 2 {
            return Err(CliError::Config(format!("inversion.target.component: {} is not 0, 1 or 2", self.target.component)));
        }
        if !self.target.depth.is_finite() {
            return Err(CliError::Config("inversion.target.depth must be finite".into()));
        }
        if !(self.ellipsoid_exponent > 0.0 && self.ellipsoid_exponent.is_finite()) {
            return Err(CliError::Config("inversion.ellipsoid_exponent must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// 32 x 32 x 8 desk problem with 12 channels.
    pub fn desk(seed: u64) -> Self {
        ExperimentConfig { problem: ProblemConfig::desk(), seed, inversion: InversionConfig::default(), output_dir: None }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.inversion.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_the_hash() {
        let cfg = ExperimentConfig::desk(7);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(ExperimentConfig::desk(8).hash(), cfg.hash());
    }

    #[test]
    fn errors_name_the_field() {
        let mut v = serde_json::to_value(ExperimentConfig::desk(1)).unwrap();
        v["problem"]["noise"]["variances"][2] = serde_json::json!("loud");
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("problem.noise.variances[2]"), "{err}");
        let mut v = serde_json::to_value(ExperimentConfig::desk(1)).unwrap();
        v["problem"]["kernel"]["bogus"] = serde_json::json!(1);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("problem.kernel"), "{err}");
    }

    #[test]
    fn sola_cannot_conserve_mass() {
        let mut cfg = ExperimentConfig::desk(1);
        cfg.inversion.method = MethodName::Sola;
        assert!(cfg.inversion.validate().is_err());
        cfg.inversion.mass_conservation = false;
        assert!(cfg.inversion.validate().is_ok());
        cfg.inversion.rule = ParameterRule::Fixed(0.0);
        assert!(cfg.inversion.validate().is_err());
    }
}
