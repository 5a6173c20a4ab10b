//! Estimator construction and parameter selection shared by the commands.

use helioinv_core::constrained::{pinsker_constrained, rls_constrained, ConstrainedPinskerPlan};
use helioinv_core::diagnostics::{match_variance, nearest_depth, relative_error, variance_map};
use helioinv_core::forward::{div_residual, KernelSet, NoiseModel};
use helioinv_core::spectral::{
    discrepancy_choose, pinsker_estimator, rls_estimator, sola_estimator, whiten, whitened_residual, EllipsoidSpec,
    EstimatorSet, LChoice, PinskerParam, WhitenedProblem,
};
use helioinv_core::FourierField;
use serde::{Deserialize, Serialize};

use crate::config::{InversionConfig, MethodName, ParameterRule};
use crate::error::CliResult;

/// A configured estimator family, ready to be built for any parameter value.
pub struct Inverter<'a> {
    pub kernels: &'a KernelSet,
    pub noise: &'a NoiseModel,
    pub config: InversionConfig,
    pub whitened: WhitenedProblem,
    plan: Option<ConstrainedPinskerPlan>,
}

/// How the parameter was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub rule: String,
    pub parameter_name: String,
    pub parameter: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub achieved_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_search: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub struct Inversion {
    pub estimator: EstimatorSet,
    pub reconstruction: FourierField,
    pub selection: Selection,
}

/// Relative errors of the three velocity components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentErrors {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl<'a> Inverter<'a> {
    pub fn new(kernels: &'a KernelSet, noise: &'a NoiseModel, config: &InversionConfig) -> CliResult<Self> {
        config.validate()?;
        let whitened = whiten(kernels, noise)?;
        let plan = if config.method == MethodName::Pinsker && config.mass_conservation {
            Some(ConstrainedPinskerPlan::new(&whitened, &kernels.vgrid)?)
        } else {
            None
        };
        Ok(Inverter { kernels, noise, config: config.clone(), whitened, plan })
    }

    pub fn build(&self, param: f64) -> helioinv_core::Result<EstimatorSet> {
        let vgrid = &self.kernels.vgrid;
        let ell = EllipsoidSpec { exponent: self.config.ellipsoid_exponent, param: PinskerParam::Kappa(param) };
        match (self.config.method, &self.plan) {
            (MethodName::Rls, _) if self.config.mass_conservation => rls_constrained(&self.whitened, vgrid, param),
            (MethodName::Rls, _) => rls_estimator(&self.whitened, vgrid, param, LChoice::H1),
            (MethodName::Sola, _) => sola_estimator(self.kernels, self.noise, param, &self.config.sola),
            (MethodName::Pinsker, Some(plan)) => Ok(pinsker_constrained(&self.whitened, vgrid, plan, &ell)?.0),
            (MethodName::Pinsker, None) => Ok(pinsker_estimator(&self.whitened, &ell)?.0),
        }
    }

    /// Noise variance of the estimate at the configured target location.
    pub fn target_variance(&self, est: &EstimatorSet) -> helioinv_core::Result<f64> {
        let vgrid = &self.kernels.vgrid;
        let t = self.config.target;
        let depth = nearest_depth(vgrid, t.component, t.depth)?;
        variance_map(est, self.noise, vgrid, t.component, depth)
    }

    pub fn run(&self, tau: &FourierField) -> CliResult<Inversion> {
        let name = self.config.method.parameter_name().to_string();
        let grid = self.config.grid();
        let (estimator, selection) = match self.config.rule {
            ParameterRule::Fixed(p) => (
                self.build(p)?,
                Selection {
                    rule: "fixed".into(),
                    parameter_name: name,
                    parameter: p,
                    grid: None,
                    residuals: None,
                    target_variance: None,
                    achieved_variance: None,
                    grid_search: None,
                    warning: None,
                },
            ),
            ParameterRule::Discrepancy => {
                let values = grid.values();
                let choice = discrepancy_choose(&values, tau, &self.whitened, self.kernels, |p| self.build(p))?;
                (
                    self.build(choice.param)?,
                    Selection {
                        rule: "discrepancy".into(),
                        parameter_name: name,
                        parameter: choice.param,
                        grid: Some(values),
                        residuals: Some(choice.residuals),
                        target_variance: None,
                        achieved_variance: None,
                        grid_search: None,
                        warning: choice.warning,
                    },
                )
            }
            ParameterRule::MatchVariance(target) => {
                let m = match_variance(|p| self.target_variance(&self.build(p)?), target, grid.lo, grid.hi)?;
                (
                    self.build(m.param)?,
                    Selection {
                        rule: "match_variance".into(),
                        parameter_name: name,
                        parameter: m.param,
                        grid: None,
                        residuals: None,
                        target_variance: Some(target),
                        achieved_variance: Some(m.variance),
                        grid_search: Some(m.grid_search),
                        warning: None,
                    },
                )
            }
        };
        let reconstruction = estimator.apply(tau)?;
        Ok(Inversion { estimator, reconstruction, selection })
    }

    pub fn whitened_residual(&self, v: &FourierField, tau: &FourierField) -> helioinv_core::Result<f64> {
        whitened_residual(&self.whitened, self.kernels, v, tau)
    }

    /// Expected whitened residual of the true field, `n_a N`.
    pub fn expected_residual(&self) -> f64 {
        (self.whitened.n_a * self.whitened.grid.n_freq()) as f64
    }
}

pub fn component_errors(est: &FourierField, truth: &FourierField, inv: &Inverter) -> CliResult<ComponentErrors> {
    let vgrid = &inv.kernels.vgrid;
    Ok(ComponentErrors {
        vx: relative_error(est, truth, vgrid, 0)?,
        vy: relative_error(est, truth, vgrid, 1)?,
        vz: relative_error(est, truth, vgrid, 2)?,
    })
}

pub fn mass_residual(est: &FourierField, inv: &Inverter) -> f64 {
    div_residual(est, &inv.kernels.vgrid)
}
