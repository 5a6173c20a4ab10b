//! Whitening, per-frequency SVD and the unconstrained estimators (RLS, SOLA, Pinsker),
//! plus risk functionals and the discrepancy rule.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{KernelSet, NoiseModel};
use crate::fourier::{map_conjugate_pairs, FourierField, HorizontalGrid};
use crate::linalg::{self, block_diag, diag_real, hermitian_inv_sqrt, re, solve_hpd, vstack, CMat, CVec, Svd};
use crate::pinsker::{global_ordering, pinsker_kappa, ModeKey, PinskerWeights};
use crate::staggered::{assemble_operators, GramOperators, StaggeredGrid};

/// Largest admissible condition number of a noise covariance block.
pub const MAX_NOISE_CONDITION: f64 = 1e14;
/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_TRUNCATION: f64 = 1e-13;
/// Exponent of the default ellipsoid weights `a_l = l^{1/3}`.
pub const DEFAULT_WEIGHT_EXPONENT: f64 = 1.0 / 3.0;
/// Upper edge of the accepted discrepancy band, as a multiple of the expected noise norm.
pub const DISCREPANCY_BAND: f64 = 1.2;

/// Whitened kernels `Lambda_k^{-1/2} K_k` with the cached whitening transforms.
#[derive(Debug, Clone)]
pub struct WhitenedProblem {
    pub grid: HorizontalGrid,
    pub n_a: usize,
    pub dim_x: usize,
    pub inv_sqrt: Vec<CMat>,
    pub kernels: Vec<CMat>,
}

pub fn whiten(ks: &KernelSet, nm: &NoiseModel) -> Result<WhitenedProblem> {
    if ks.grid != nm.grid || ks.n_a != nm.n_a {
        return Err(Error::DimensionMismatch("kernel and noise layouts differ".into()));
    }
    let inv_sqrt = map_conjugate_pairs(&ks.grid, |idx| {
        let freq = ks.grid.freq(idx);
        let (m, cond) = hermitian_inv_sqrt(&nm.blocks[idx]).map_err(|e| e.at(freq))?;
        if cond > MAX_NOISE_CONDITION {
            return Err(Error::Singular { freq, detail: format!("noise covariance condition {cond:.3e}") });
        }
        Ok(m)
    })?;
    let kernels = inv_sqrt.iter().zip(&ks.blocks).map(|(w, k)| w * k).collect();
    Ok(WhitenedProblem { grid: ks.grid, n_a: ks.n_a, dim_x: ks.dim_x(), inv_sqrt, kernels })
}

impl WhitenedProblem {
    pub fn whiten_data(&self, tau: &FourierField) -> Result<FourierField> {
        check_data(&self.grid, self.n_a, tau)?;
        let blocks: Vec<CVec> = (0..self.grid.n_freq()).map(|idx| &self.inv_sqrt[idx] * tau.get(idx)).collect();
        FourierField::from_blocks(self.grid, &blocks)
    }

    /// Frequencies that carry an estimate: canonical and off the Nyquist lines.
    pub fn active_canonical(&self) -> Vec<usize> {
        active_canonical(&self.grid)
    }
}

pub(crate) fn active_canonical(grid: &HorizontalGrid) -> Vec<usize> {
    grid.canonical_indices().into_iter().filter(|&i| !grid.is_nyquist(i)).collect()
}

fn check_data(grid: &HorizontalGrid, n_a: usize, tau: &FourierField) -> Result<()> {
    if tau.grid != *grid || tau.n_comp != n_a {
        return Err(Error::DimensionMismatch(format!(
            "data has {} channels on a different or mismatched grid (expected {n_a})",
            tau.n_comp
        )));
    }
    Ok(())
}

/// Singular triplets of `K~_k` at the canonical frequencies, plus the global mode list.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub grid: HorizontalGrid,
    /// Indexed by frequency; `None` off the canonical active set.
    pub svds: Vec<Option<Svd>>,
    /// Every retained mode of every active frequency (both members of a conjugate pair).
    pub modes: Vec<ModeKey>,
    /// Global position `l` of each entry of `modes`.
    pub order: Vec<usize>,
}

impl SpectralDecomposition {
    pub fn new(wp: &WhitenedProblem) -> Result<Self> {
        let grid = wp.grid;
        let canon = wp.active_canonical();
        let computed: Vec<(usize, Svd)> = canon
            .par_iter()
            .map(|&idx| linalg::svd(&wp.kernels[idx]).map(|s| (idx, s)).map_err(|e| e.at(grid.freq(idx))))
            .collect::<Result<_>>()?;
        let smax = computed.iter().flat_map(|(_, s)| s.s.first().copied()).fold(0.0, f64::max);
        let mut svds = vec![None; grid.n_freq()];
        let mut modes = Vec::new();
        for (idx, dec) in computed {
            let kept = dec.s.iter().take_while(|&&s| s > SVD_TRUNCATION * smax).count();
            let cj = grid.conj_index(idx);
            for &i in if cj == idx { vec![idx] } else { vec![idx, cj] }.iter() {
                for j in 0..kept {
                    modes.push(ModeKey { freq: grid.freq(i), j, value: dec.s[j], unbounded: false });
                }
            }
            svds[idx] = Some(dec);
        }
        let order = global_ordering(&modes);
        Ok(SpectralDecomposition { grid, svds, modes, order })
    }

    /// Global singular values in ordering order.
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.modes.len()];
        for (m, &l) in self.modes.iter().zip(&self.order) {
            v[l - 1] = m.value;
        }
        v
    }
}

/// Ellipsoid weights `a = l^p` averaged over each conjugate pair so that both
/// members carry the same weight; keyed by `(frequency index, j)`.
pub(crate) fn symmetric_weights(
    grid: &HorizontalGrid,
    modes: &[ModeKey],
    order: &[usize],
    exponent: f64,
) -> HashMap<(usize, usize), f64> {
    let raw: HashMap<(usize, usize), f64> = modes
        .iter()
        .zip(order)
        .map(|(m, &l)| ((grid.index(m.freq), m.j), (l as f64).powf(exponent)))
        .collect();
    raw.iter()
        .map(|(&(idx, j), &a)| {
            let partner = raw.get(&(grid.conj_index(idx), j)).copied().unwrap_or(a);
            ((idx, j), 0.5 * (a + partner))
        })
        .collect()
}

/// How the ellipsoid is specified: by its radius or directly by `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinskerParam {
    Radius(f64),
    Kappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    /// `a_l = l^exponent`.
    pub exponent: f64,
    pub param: PinskerParam,
}

impl EllipsoidSpec {
    pub fn radius(q: f64) -> Self {
        EllipsoidSpec { exponent: DEFAULT_WEIGHT_EXPONENT, param: PinskerParam::Radius(q) }
    }

    pub fn kappa(kappa: f64) -> Self {
        EllipsoidSpec { exponent: DEFAULT_WEIGHT_EXPONENT, param: PinskerParam::Kappa(kappa) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(Error::InvalidParameter("ellipsoid exponent must be positive".into()));
        }
        let v = match self.param {
            PinskerParam::Radius(q) => q,
            PinskerParam::Kappa(k) => k,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter("Pinsker parameter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rls,
    Sola,
    Pinsker,
    PinskerMc,
    RlsMc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Rls => "rls",
            Method::Sola => "sola",
            Method::Pinsker => "pinsker",
            Method::PinskerMc => "pinsker-mc",
            Method::RlsMc => "rls-mc",
        };
        f.write_str(s)
    }
}

/// Reconstruction matrices `W_k` (`dim X x n_a`) for every frequency.
#[derive(Debug, Clone)]
pub struct EstimatorSet {
    pub grid: HorizontalGrid,
    pub dim_x: usize,
    pub n_a: usize,
    pub method: Method,
    /// Named parameters (regularization strength first).
    pub params: Vec<(String, f64)>,
    pub blocks: Vec<CMat>,
}

impl EstimatorSet {
    /// Evaluates `f` at active canonical frequencies, mirrors to the conjugates and
    /// leaves the Nyquist lines at zero.
    pub fn build<F>(
        grid: HorizontalGrid,
        dim_x: usize,
        n_a: usize,
        method: Method,
        params: Vec<(String, f64)>,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(usize) -> Result<CMat> + Sync,
    {
        let blocks = map_conjugate_pairs(&grid, |idx| {
            if grid.is_nyquist(idx) {
                Ok(CMat::zeros(dim_x, n_a))
            } else {
                f(idx).map_err(|e| e.at(grid.freq(idx)))
            }
        })?;
        Ok(EstimatorSet { grid, dim_x, n_a, method, params, blocks })
    }

    pub fn zeros(grid: HorizontalGrid, dim_x: usize, n_a: usize, method: Method) -> Self {
        EstimatorSet { grid, dim_x, n_a, method, params: vec![], blocks: vec![CMat::zeros(dim_x, n_a); grid.n_freq()] }
    }

    /// Main regularization parameter, if any.
    pub fn parameter(&self) -> Option<f64> {
        self.params.first().map(|p| p.1)
    }

    pub fn apply(&self, tau: &FourierField) -> Result<FourierField> {
        check_data(&self.grid, self.n_a, tau)?;
        let blocks: Vec<CVec> =
            (0..self.grid.n_freq()).into_par_iter().map(|idx| &self.blocks[idx] * tau.get(idx)).collect();
        FourierField::from_blocks(self.grid, &blocks)
    }

    pub fn hermitian_residual(&self) -> f64 {
        (0..self.grid.n_freq())
            .map(|idx| linalg::max_abs(&(&self.blocks[self.grid.conj_index(idx)] - self.blocks[idx].conjugate())))
            .fold(0.0, f64::max)
    }
}

/// `W_k = Phi diag(lambda / sigma) Psi* Lambda^{-1/2}` with ellipsoid weights on the global ordering.
pub fn pinsker_estimator(wp: &WhitenedProblem, ell: &EllipsoidSpec) -> Result<(EstimatorSet, PinskerWeights)> {
    ell.validate()?;
    let dec = SpectralDecomposition::new(wp)?;
    let weights = symmetric_weights(&wp.grid, &dec.modes, &dec.order, ell.exponent);
    let a: Vec<f64> = dec.modes.iter().map(|m| weights[&(wp.grid.index(m.freq), m.j)]).collect();
    let sigma: Vec<f64> = dec.modes.iter().map(|m| m.value).collect();
    let kappa = match ell.param {
        PinskerParam::Kappa(k) => k,
        PinskerParam::Radius(q) => pinsker_kappa(&a, &sigma, q)?,
    };
    let pw = PinskerWeights::new(&a, &sigma, kappa);
    let lambda: HashMap<(usize, usize), f64> =
        dec.modes.iter().zip(&pw.lambda).map(|(m, &l)| ((wp.grid.index(m.freq), m.j), l)).collect();
    let mut params = vec![("kappa".to_string(), kappa)];
    if let PinskerParam::Radius(q) = ell.param {
        params.push(("radius".to_string(), q));
    }
    let est = EstimatorSet::build(wp.grid, wp.dim_x, wp.n_a, Method::Pinsker, params, |idx| {
        let svd = dec.svds[idx].as_ref().expect("active frequency has an SVD");
        let mut w = CMat::zeros(wp.dim_x, wp.n_a);
        for j in 0..svd.s.len() {
            let l = lambda.get(&(idx, j)).copied().unwrap_or(0.0);
            if l > 0.0 {
                let u = svd.u.column(j);
                let v = svd.v.column(j);
                w += v * u.adjoint() * re(l / svd.s[j]);
            }
        }
        Ok(w * &wp.inv_sqrt[idx])
    })?;
    Ok((est, pw))
}

/// Penalty operator of the unconstrained RLS functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LChoice {
    Identity,
    Gradient,
    #[default]
    H1,
}

/// Quadrature-weighted gradient of every component (no density weighting).
fn gradient_penalty(vgrid: &StaggeredGrid, kvec: (f64, f64)) -> CMat {
    let ops = assemble_operators(vgrid, kvec);
    let (kx, ky) = kvec;
    let sq = |d: &[f64]| diag_real(&d.iter().map(|x| x.sqrt()).collect::<Vec<_>>());
    let (gv, gw) = (sq(&vgrid.delta_mid), sq(&vgrid.delta_node));
    let ikx = Complex64::new(0.0, kx);
    let iky = Complex64::new(0.0, ky);
    let lv = vstack(&[&(&gv * ikx), &(&gv * iky), &(&gw * &ops.dz_v)]);
    let lw = vstack(&[&(&gw * ikx), &(&gw * iky), &(&gv * &ops.dz_w)]);
    block_diag(&[&lv, &lv, &lw])
}

fn penalty(vgrid: &StaggeredGrid, kvec: (f64, f64), choice: LChoice) -> CMat {
    match choice {
        LChoice::Identity => CMat::identity(vgrid.dim_x(), vgrid.dim_x()),
        LChoice::Gradient => gradient_penalty(vgrid, kvec),
        LChoice::H1 => {
            let w: Vec<f64> = [&vgrid.delta_mid, &vgrid.delta_mid, &vgrid.delta_node]
                .iter()
                .flat_map(|d| d.iter().map(|x| x.sqrt()))
                .collect();
            vstack(&[&diag_real(&w), &gradient_penalty(vgrid, kvec)])
        }
    }
}

/// `W_k = (K*Lambda^{-1}K + alpha L*L)^{-1} K*Lambda^{-1}`.
pub fn rls_estimator(wp: &WhitenedProblem, vgrid: &StaggeredGrid, alpha: f64, choice: LChoice) -> Result<EstimatorSet> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    check_layout(wp, vgrid)?;
    EstimatorSet::build(wp.grid, wp.dim_x, wp.n_a, Method::Rls, vec![("alpha".into(), alpha)], |idx| {
        let k = &wp.kernels[idx];
        let l = penalty(vgrid, wp.grid.wavevector(wp.grid.freq(idx)), choice);
        let normal = k.adjoint() * k + l.adjoint() * &l * re(alpha);
        solve_hpd(&normal, &(k.adjoint() * &wp.inv_sqrt[idx]))
    })
}

/// Same normal equations for explicit small matrices (used for toy problems).
pub fn rls_block(k: &CMat, lambda: &CMat, l: &CMat, alpha: f64) -> Result<CMat> {
    let (li, _) = hermitian_inv_sqrt(lambda)?;
    let kt = &li * k;
    solve_hpd(&(kt.adjoint() * &kt + l.adjoint() * l * re(alpha)), &(kt.adjoint() * li))
}

fn check_layout(wp: &WhitenedProblem, vgrid: &StaggeredGrid) -> Result<()> {
    if wp.dim_x != vgrid.dim_x() {
        return Err(Error::DimensionMismatch(format!(
            "kernels have {} unknowns, vertical grid {}",
            wp.dim_x,
            vgrid.dim_x()
        )));
    }
    Ok(())
}

/// Gaussian target kernels: `exp(-|k|^2 s_h^2 / 2)` horizontally times a vertical
/// Gaussian of width `s_v` normalized to unit sum, same component only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub s_h: f64,
    pub s_v: f64,
    /// Force the horizontal-component averaging kernels to integrate to one.
    pub unit_integral: bool,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec { s_h: 3.0, s_v: 1.0, unit_integral: true }
    }
}

/// Target block `T_k` on `X`.
pub fn sola_target(vgrid: &StaggeredGrid, kvec: (f64, f64), spec: &TargetSpec) -> CMat {
    let horiz = (-(kvec.0 * kvec.0 + kvec.1 * kvec.1) * spec.s_h * spec.s_h / 2.0).exp();
    let blocks: Vec<CMat> = (0..3)
        .map(|beta| {
            let z = vgrid.component_heights(beta);
            let n = z.len();
            let mut t = CMat::zeros(n, n);
            for i in 0..n {
                let row: Vec<f64> = z.iter().map(|zj| (-(zj - z[i]).powi(2) / (2.0 * spec.s_v * spec.s_v)).exp()).collect();
                let sum: f64 = row.iter().sum();
                for j in 0..n {
                    t[(i, j)] = re(horiz * row[j] / sum);
                }
            }
            t
        })
        .collect();
    block_diag(&[&blocks[0], &blocks[1], &blocks[2]])
}

/// `W = T K* (K K* + mu Lambda)^{-1}`, with the horizontal rows at `k = 0`
/// corrected so that `w K_0 e_beta = 1`.
pub fn sola_estimator(
    ks: &KernelSet,
    nm: &NoiseModel,
    mu: f64,
    spec: &TargetSpec,
) -> Result<EstimatorSet> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
    }
    if !(spec.s_h >= 0.0 && spec.s_v > 0.0) {
        return Err(Error::InvalidParameter("target widths must be positive".into()));
    }
    let vgrid = &ks.vgrid;
    let nv = vgrid.dim_v();
    let params = vec![("mu".into(), mu), ("s_h".into(), spec.s_h), ("s_v".into(), spec.s_v)];
    EstimatorSet::build(ks.grid, ks.dim_x(), ks.n_a, Method::Sola, params, |idx| {
        let k = &ks.blocks[idx];
        let kvec = ks.grid.wavevector(ks.grid.freq(idx));
        let t = sola_target(vgrid, kvec, spec);
        let a = k * k.adjoint() + &nm.blocks[idx] * re(mu);
        let a_inv_kt = solve_hpd(&a, &(k * t.adjoint()))?;
        let mut w = a_inv_kt.adjoint();
        if spec.unit_integral && idx == ks.grid.zero_index() {
            for beta in 0..2 {
                let mut e = CVec::zeros(vgrid.dim_x());
                for j in 0..nv {
                    e[beta * nv + j] = re(1.0);
                }
                let b = k * e;
                let a_inv_b = solve_hpd(&a, &CMat::from_column_slice(b.len(), 1, b.as_slice()))?;
                let denom = (b.adjoint() * &a_inv_b)[(0, 0)];
                if denom.norm() == 0.0 {
                    return Err(Error::Numerical("horizontal component invisible at k = 0".into()));
                }
                for row in beta * nv..(beta + 1) * nv {
                    let w0b = (w.row(row) * &b)[(0, 0)];
                    let nu = (re(1.0) - w0b) / denom;
                    let corr = a_inv_b.adjoint() * nu;
                    let updated = w.row(row) + corr;
                    w.set_row(row, &updated);
                }
            }
        }
        Ok(w)
    })
}

/// Bias-variance decomposition of the mean square error in the `G_X` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub bias_sq: f64,
    pub variance: f64,
    pub total: f64,
}

pub fn risk(w: &EstimatorSet, ks: &KernelSet, nm: &NoiseModel, v: &FourierField, gram: &GramOperators) -> Result<RiskReport> {
    if w.grid != ks.grid || v.grid != ks.grid || w.n_a != ks.n_a || v.n_comp != ks.dim_x() || w.dim_x != ks.dim_x() {
        return Err(Error::DimensionMismatch("estimator, kernels and truth disagree".into()));
    }
    let gx = diag_real(&gram.g_x);
    let parts: Vec<(f64, f64)> = (0..ks.grid.n_freq())
        .into_par_iter()
        .map(|idx| {
            let wk = &w.blocks[idx];
            let vk = v.get(idx);
            let e = wk * (&ks.blocks[idx] * &vk) - &vk;
            let bias = gram.x_norm_sqr(&e);
            let var = (wk * &nm.blocks[idx] * wk.adjoint() * &gx).trace().re;
            (bias, var)
        })
        .collect();
    let bias_sq: f64 = parts.iter().map(|p| p.0).sum();
    let variance: f64 = parts.iter().map(|p| p.1).sum();
    Ok(RiskReport { bias_sq, variance, total: bias_sq + variance })
}

/// `sum_k ||Lambda_k^{-1/2} (K_k v_k - tau_k)||^2`.
pub fn whitened_residual(wp: &WhitenedProblem, ks: &KernelSet, v: &FourierField, tau: &FourierField) -> Result<f64> {
    check_data(&wp.grid, wp.n_a, tau)?;
    Ok((0..wp.grid.n_freq())
        .into_par_iter()
        .map(|idx| (&wp.inv_sqrt[idx] * (&ks.blocks[idx] * v.get(idx) - tau.get(idx))).norm_squared())
        .collect::<Vec<f64>>()
        .iter()
        .sum())
}

/// Outcome of the discrepancy rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyChoice {
    pub index: usize,
    pub param: f64,
    pub residuals: Vec<f64>,
    pub expected: f64,
    pub warning: Option<String>,
}

/// Scans `params` (ascending regularization strength) and picks the first whose
/// whitened residual lies in `[1, 1.2]` times the expected noise norm `n_a N`.
/// Outside the band: all residuals small selects the strongest, all large the
/// weakest, and a band skipped between neighbours selects the last one below it.
pub fn discrepancy_choose<F>(
    params: &[f64],
    tau: &FourierField,
    wp: &WhitenedProblem,
    ks: &KernelSet,
    build: F,
) -> Result<DiscrepancyChoice>
where
    F: Fn(f64) -> Result<EstimatorSet>,
{
    if params.is_empty() {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    if params.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("parameter grid must be strictly increasing".into()));
    }
    let expected = (wp.n_a * wp.grid.n_freq()) as f64;
    let residuals: Vec<f64> = params
        .iter()
        .map(|&p| {
            let est = build(p)?;
            whitened_residual(wp, ks, &est.apply(tau)?, tau)
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = (expected, DISCREPANCY_BAND * expected);
    let (index, warning) = if let Some(i) = residuals.iter().position(|&r| r >= lo && r <= hi) {
        (i, None)
    } else if residuals.iter().all(|&r| r < lo) {
        (params.len() - 1, Some("residual stays below the noise level; strongest regularization used".to_string()))
    } else if residuals.iter().all(|&r| r > hi) {
        (0, Some("residual exceeds the noise band everywhere; weakest regularization used".to_string()))
    } else {
        let i = residuals.iter().rposition(|&r| r < lo).unwrap_or(0);
        (i, Some("parameter grid skips the discrepancy band; last value below it used".to_string()))
    };
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(DiscrepancyChoice { index, param: params[index], residuals, expected, warning })
}

/// Logarithmically spaced grid from `lo` to `hi` (inclusive).
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
