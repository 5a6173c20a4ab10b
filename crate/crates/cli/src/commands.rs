//! The four commands, independent of argument parsing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use helioinv_core::diagnostics::{
    averaging_kernel, averaging_kernel_div, crosstalk, depth_profile, nearest_depth, row_index, variance_map,
    AveragingKernel,
};
use helioinv_core::forward::{apply_forward, Problem};
use helioinv_core::spectral::{EstimatorSet, Method};
use helioinv_core::FourierField;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, *};
use crate::bench::{self, BenchConfig, BenchRow};
use crate::config::{ExperimentConfig, MethodName, ParameterGrid, ParameterRule, TargetLocation};
use crate::error::{CliError, CliResult};
use crate::hif::HifArray;
use crate::pipeline::{component_errors, mass_residual, ComponentErrors, Inverter, Selection};

/// Relative tolerance of the bias-identity check.
pub const BIAS_IDENTITY_TOL: f64 = 1e-8;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Synthesizes kernels, noise covariances, the true flow and noisy travel times.
pub fn synth(config: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    config.inversion.validate()?;
    let problem = Problem::build(&config.problem)?;
    let tau = problem.noisy_data(config.seed);
    create_dir(out)?;
    let mut prov = Provenance::new(config);
    prov.write(out, KERNELS, &blocks_to_hif(&problem.grid, &problem.kernels.blocks)?)?;
    prov.write(out, NOISECOV, &blocks_to_hif(&problem.grid, &problem.noise.blocks)?)?;
    prov.write(out, TRUTH, &field_to_hif(&problem.truth.field)?)?;
    prov.write(out, TRAVELTIMES, &field_to_hif(&tau)?)?;
    let manifest = Manifest { command: "synth".into(), seed: config.seed, config: config.clone(), provenance: prov };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Command-line overrides of the inversion settings stored with the synthetic data.
#[derive(Debug, Clone, Default)]
pub struct InvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub method: Option<MethodName>,
    pub mass_conservation: Option<bool>,
    pub rule: Option<ParameterRule>,
    pub grid: Option<ParameterGrid>,
    pub target: Option<TargetLocation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertReport {
    pub command: String,
    pub method: MethodName,
    pub mass_conservation: bool,
    pub selection: Selection,
    pub whitened_residual: f64,
    pub expected_residual: f64,
    pub div_residual: f64,
    pub runtime_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ComponentErrors>,
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub provenance: Provenance,
}

pub fn invert(args: &InvertArgs) -> CliResult<InvertReport> {
    let start = Instant::now();
    let mut prov = Provenance::default();
    let inputs = load_synth(&args.input, &mut prov)?;
    let mut config = inputs.config.clone();
    let inv = &mut config.inversion;
    if let Some(m) = args.method {
        if m != inv.method {
            inv.grid = None;
        }
        inv.method = m;
    }
    if let Some(mc) = args.mass_conservation {
        inv.mass_conservation = mc;
    }
    if let Some(r) = args.rule {
        inv.rule = r;
    }
    if let Some(g) = args.grid {
        inv.grid = Some(g);
    }
    if let Some(t) = args.target {
        inv.target = t;
    }
    let inverter = Inverter::new(&inputs.kernels, &inputs.noise, &config.inversion)?;
    let result = inverter.run(&inputs.traveltimes)?;
    let errors = match &inputs.truth {
        Some(t) => Some(component_errors(&result.reconstruction, t, &inverter)?),
        None => None,
    };
    create_dir(&args.output)?;
    prov.config_hash = config.hash();
    prov.write(&args.output, RECONSTRUCTION, &field_to_hif(&result.reconstruction)?)?;
    prov.write(&args.output, ESTIMATOR, &estimator_to_hif(&result.estimator)?)?;
    let report = InvertReport {
        command: "invert".into(),
        method: config.inversion.method,
        mass_conservation: config.inversion.mass_conservation,
        selection: result.selection,
        whitened_residual: inverter.whitened_residual(&result.reconstruction, &inputs.traveltimes)?,
        expected_residual: inverter.expected_residual(),
        div_residual: mass_residual(&result.reconstruction, &inverter),
        runtime_seconds: start.elapsed().as_secs_f64(),
        errors,
        config,
        provenance: prov,
    };
    write_json(&args.output.join(REPORT), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    AveragingKernel,
    Crosstalk,
    DepthProfile,
    Variance,
}

#[derive(Debug, Clone)]
pub struct DiagnoseArgs {
    pub input: PathBuf,
    pub estimate: PathBuf,
    pub output: PathBuf,
    pub diagnostics: Vec<Diagnostic>,
    /// Target component and depth (Mm) of the kernel row.
    pub component: usize,
    pub depth: f64,
    /// Source component for cross-talk.
    pub from: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasIdentity {
    pub residual: f64,
    pub tolerance: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub command: String,
    pub component: usize,
    pub depth_index: usize,
    pub depth: f64,
    pub divergence_free_kernel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crosstalk_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_identity: Option<BiasIdentity>,
    #[serde(flatten)]
    pub provenance: Provenance,
}

fn method_of(report: &InvertReport) -> Method {
    match (report.method, report.mass_conservation) {
        (MethodName::Rls, false) => Method::Rls,
        (MethodName::Rls, true) => Method::RlsMc,
        (MethodName::Sola, _) => Method::Sola,
        (MethodName::Pinsker, false) => Method::Pinsker,
        (MethodName::Pinsker, true) => Method::PinskerMc,
    }
}

/// `max |W K v - AK v| / max |AK v|` on noise-free data.
pub fn bias_identity_residual(est: &EstimatorSet, ak: &AveragingKernel, ks: &helioinv_core::forward::KernelSet, truth: &FourierField) -> CliResult<f64> {
    let rec = est.apply(&apply_forward(ks, truth)?)?.to_space()?;
    let avg = ak.apply(truth)?.to_space()?;
    let mut diff = 0.0_f64;
    let mut scale = 0.0_f64;
    for (r, a) in rec.iter().zip(&avg) {
        for (x, y) in r.iter().zip(a) {
            diff = diff.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<DiagnoseReport> {
    let mut prov = Provenance::default();
    let inputs = load_synth(&args.input, &mut prov)?;
    let text = prov.read_json(&args.estimate, REPORT, "estimate/report.json")?;
    let inv_report: InvertReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Format(format!("{}: {e}", args.estimate.join(REPORT).display())))?;
    prov.config_hash = inv_report.config.hash();
    let blocks = hif_to_blocks(&inputs.grid, prov.read(&args.estimate, ESTIMATOR, "estimate/estimator.hif")?, ESTIMATOR)?;
    let ks = &inputs.kernels;
    let vgrid = &inputs.vgrid;
    if blocks.iter().any(|b| b.shape() != (vgrid.dim_x(), ks.n_a)) {
        return Err(CliError::Format(format!("{ESTIMATOR} blocks do not match the kernels")));
    }
    let est = EstimatorSet {
        grid: inputs.grid,
        dim_x: vgrid.dim_x(),
        n_a: ks.n_a,
        method: method_of(&inv_report),
        params: vec![(inv_report.selection.parameter_name.clone(), inv_report.selection.parameter)],
        blocks,
    };
    let div_free = inv_report.mass_conservation;
    let ak = if div_free { averaging_kernel_div(&est, ks)? } else { averaging_kernel(&est, ks)? };
    if args.component > 2 || args.from > 2 {
        return Err(CliError::Config("velocity components are 0 (x), 1 (y) and 2 (z)".into()));
    }
    let depth_index = nearest_depth(vgrid, args.component, args.depth)?;
    let row = row_index(vgrid, args.component, depth_index)?;
    create_dir(&args.output)?;
    let mut crosstalk_ratio = None;
    for d in &args.diagnostics {
        match d {
            Diagnostic::AveragingKernel => {
                let entries = (0..vgrid.dim_x()).map(|c| ak.space_entry(row, c)).collect::<helioinv_core::Result<Vec<_>>>()?;
                let dims = vec![vgrid.dim_x() as u64, inputs.grid.fy() as u64, inputs.grid.fx() as u64];
                prov.write(&args.output, "averaging_kernel.hif", &HifArray::real(dims, entries.concat())?)?;
            }
            Diagnostic::DepthProfile => {
                let prof = depth_profile(&ak, vgrid, args.component, depth_index)?;
                let z = vgrid.component_heights(args.component);
                let mut csv = String::from("level,z,norm\n");
                for (j, v) in prof.iter().enumerate() {
                    csv += &format!("{j},{},{v:e}\n", z[j]);
                }
                prov.write_text(&args.output, "depth_profile.csv", &csv)?;
            }
            Diagnostic::Crosstalk => {
                let ct = crosstalk(&ak, vgrid, args.from, args.component, depth_index)?;
                let z = vgrid.component_heights(args.from);
                let mut csv = String::from("level,z,peak\n");
                for (j, m) in ct.maps.iter().enumerate() {
                    let peak = m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
                    csv += &format!("{j},{},{peak:e}\n", z[j]);
                }
                prov.write_text(&args.output, "crosstalk.csv", &csv)?;
                crosstalk_ratio = Some(ct.ratio);
            }
            Diagnostic::Variance => {
                let mut csv = String::from("component,level,z,variance,std\n");
                for beta in 0..3 {
                    for (j, z) in vgrid.component_heights(beta).iter().enumerate() {
                        let v = variance_map(&est, &inputs.noise, vgrid, beta, j)?;
                        csv += &format!("{beta},{j},{z},{v:e},{:e}\n", v.max(0.0).sqrt());
                    }
                }
                prov.write_text(&args.output, "variance.csv", &csv)?;
            }
        }
    }
    let bias_identity = match &inputs.truth {
        Some(truth) => {
            let residual = bias_identity_residual(&est, &ak, ks, truth)?;
            let status = if residual <= BIAS_IDENTITY_TOL { "pass" } else { "fail" };
            Some(BiasIdentity { residual, tolerance: BIAS_IDENTITY_TOL, status: status.into() })
        }
        None => None,
    };
    let report = DiagnoseReport {
        command: "diagnose".into(),
        component: args.component,
        depth_index,
        depth: vgrid.component_heights(args.component)[depth_index],
        divergence_free_kernel: div_free,
        crosstalk_ratio,
        bias_identity,
        provenance: prov,
    };
    write_json(&args.output.join("diagnose.json"), &report)?;
    Ok(report)
}

/// Runs the self-checks; writes them as JSON when `output` is given.
pub fn riskbench(cfg: &BenchConfig, output: Option<&Path>) -> CliResult<Vec<BenchRow>> {
    let rows = bench::run_all(cfg)?;
    if let Some(path) = output {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        artifacts::write_json(path, &rows)?;
    }
    Ok(rows)
}
