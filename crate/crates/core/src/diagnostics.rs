//! Averaging kernels, cross-talk maps, noise variance at a target depth and the
//! variance-matched parameter search.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{KernelSet, NoiseModel};
use crate::fourier::{fft2_inverse, map_conjugate_pairs, FourierField, HorizontalGrid};
use crate::linalg::{CMat, CVec};
use crate::spectral::EstimatorSet;
use crate::staggered::{FrequencyOperators, StaggeredGrid};

/// Samples used to check that variance is monotone in the parameter.
pub const MONOTONICITY_SAMPLES: usize = 8;
/// Relative accuracy required from [`match_variance`].
pub const MATCH_TOLERANCE: f64 = 1e-2;

/// Fourier blocks `W_k K_k` of the map from the true field to the expected estimate.
#[derive(Debug, Clone)]
pub struct AveragingKernel {
    pub grid: HorizontalGrid,
    pub dim_x: usize,
    pub blocks: Vec<CMat>,
    /// Built as `(I - P) + P W K P`.
    pub divergence_free: bool,
}

/// Row of the velocity vector holding component `beta` at depth index `depth`.
pub fn row_index(vgrid: &StaggeredGrid, beta: usize, depth: usize) -> Result<usize> {
    if beta > 2 {
        return Err(Error::InvalidParameter(format!("velocity component {beta} does not exist")));
    }
    let (offset, len) = vgrid.component_range(beta);
    if depth >= len {
        return Err(Error::InvalidParameter(format!(
            "depth index {depth} out of range for component {beta} ({len} levels)"
        )));
    }
    Ok(offset + depth)
}

/// Depth index of component `beta` closest to height `z`.
pub fn nearest_depth(vgrid: &StaggeredGrid, beta: usize, z: f64) -> Result<usize> {
    if beta > 2 {
        return Err(Error::InvalidParameter(format!("velocity component {beta} does not exist")));
    }
    let heights = vgrid.component_heights(beta);
    (0..heights.len())
        .min_by(|&a, &b| (heights[a] - z).abs().total_cmp(&(heights[b] - z).abs()))
        .ok_or_else(|| Error::InvalidParameter(format!("component {beta} has no levels")))
}

pub fn averaging_kernel(w: &EstimatorSet, ks: &KernelSet) -> Result<AveragingKernel> {
    check_pair(w, ks)?;
    let blocks = (0..ks.grid.n_freq()).into_par_iter().map(|idx| &w.blocks[idx] * &ks.blocks[idx]).collect();
    Ok(AveragingKernel { grid: ks.grid, dim_x: ks.dim_x(), blocks, divergence_free: false })
}

/// `K_div = (I - P_k) + P_k W_k K_k P_k`.
pub fn averaging_kernel_div(w: &EstimatorSet, ks: &KernelSet) -> Result<AveragingKernel> {
    check_pair(w, ks)?;
    let grid = ks.grid;
    let vgrid = &ks.vgrid;
    let gram = vgrid.gram();
    let n = ks.dim_x();
    let blocks = map_conjugate_pairs(&grid, |idx| {
        let p = FrequencyOperators::new(vgrid, &gram, grid.wavevector(grid.freq(idx))).projection.p;
        let inner = &w.blocks[idx] * &ks.blocks[idx];
        Ok(CMat::identity(n, n) - &p + &p * inner * &p)
    })?;
    Ok(AveragingKernel { grid, dim_x: n, blocks, divergence_free: true })
}

impl AveragingKernel {
    /// `K * v`, evaluated frequency by frequency.
    pub fn apply(&self, v: &FourierField) -> Result<FourierField> {
        if v.grid != self.grid || v.n_comp != self.dim_x {
            return Err(Error::DimensionMismatch(format!(
                "field with {} components does not match an averaging kernel on {} unknowns",
                v.n_comp, self.dim_x
            )));
        }
        let blocks: Vec<CVec> = (0..self.grid.n_freq()).into_par_iter().map(|idx| &self.blocks[idx] * v.get(idx)).collect();
        FourierField::from_blocks(self.grid, &blocks)
    }

    /// Convolution weights of entry `(row, col)`: `(K * v)_row(r) = sum_{r'} k(r - r') v_col(r')`,
    /// indexed by offset in storage order. The identity kernel gives a unit spike at the origin.
    pub fn space_entry(&self, row: usize, col: usize) -> Result<Vec<f64>> {
        if row >= self.dim_x || col >= self.dim_x {
            return Err(Error::InvalidParameter(format!(
                "entry ({row}, {col}) outside a {} x {} kernel",
                self.dim_x, self.dim_x
            )));
        }
        let coeffs: Vec<_> = self.blocks.iter().map(|b| b[(row, col)]).collect();
        let n = self.grid.n_space() as f64;
        Ok(fft2_inverse(&self.grid, &coeffs)?.into_iter().map(|x| x / n).collect())
    }

    pub fn hermitian_residual(&self) -> f64 {
        (0..self.grid.n_freq())
            .map(|idx| crate::linalg::max_abs(&(&self.blocks[self.grid.conj_index(idx)] - self.blocks[idx].conjugate())))
            .fold(0.0, f64::max)
    }

    /// Euclidean norm of the convolution weights over offsets within the physical window.
    fn horizontal_norm(&self, row: usize, col: usize) -> Result<f64> {
        let k = self.space_entry(row, col)?;
        let (hx, hy) = (self.grid.nx as i64 / 2, self.grid.ny as i64 / 2);
        Ok(k.iter()
            .enumerate()
            .filter(|(i, _)| {
                let (dx, dy) = self.grid.offset(*i);
                (-hx..hx).contains(&dx) && (-hy..hy).contains(&dy)
            })
            .map(|(_, x)| x * x)
            .sum::<f64>()
            .sqrt())
    }
}

/// Horizontal norm of `K[beta, z_t; beta, z_j]` for every level `z_j` of component `beta`.
pub fn depth_profile(ak: &AveragingKernel, vgrid: &StaggeredGrid, beta: usize, depth: usize) -> Result<Vec<f64>> {
    check_kernel(ak, vgrid)?;
    let row = row_index(vgrid, beta, depth)?;
    let (offset, len) = vgrid.component_range(beta);
    (offset..offset + len).into_par_iter().map(|col| ak.horizontal_norm(row, col)).collect()
}

/// Off-diagonal kernel maps and their size relative to the diagonal kernel.
#[derive(Debug, Clone)]
pub struct Crosstalk {
    /// `K[beta_to, z_t; beta_from, z_j]` for every level `z_j` of `beta_from`.
    pub maps: Vec<Vec<f64>>,
    /// `max |off-diagonal| / max |diagonal|` over offsets and levels.
    pub ratio: f64,
}

/// How strongly component `beta_from` leaks into the estimate of `beta_to` at depth index `depth`.
pub fn crosstalk(
    ak: &AveragingKernel,
    vgrid: &StaggeredGrid,
    beta_from: usize,
    beta_to: usize,
    depth: usize,
) -> Result<Crosstalk> {
    check_kernel(ak, vgrid)?;
    let row = row_index(vgrid, beta_to, depth)?;
    row_index(vgrid, beta_from, 0)?;
    let entries = |beta: usize| -> Result<Vec<Vec<f64>>> {
        let (offset, len) = vgrid.component_range(beta);
        (offset..offset + len).into_par_iter().map(|col| ak.space_entry(row, col)).collect()
    };
    let peak = |maps: &[Vec<f64>]| maps.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()));
    let maps = entries(beta_from)?;
    let diag = peak(&entries(beta_to)?);
    let off = peak(&maps);
    let ratio = if diag > 0.0 {
        off / diag
    } else if off > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(Crosstalk { maps, ratio })
}

/// Pointwise variance `E|(W n)_row(r)|^2 = sum_k (W_k Lambda_k W_k*)_{row,row}` of the
/// estimate of component `beta` at depth index `depth`; the same at every `r`.
pub fn variance_map(w: &EstimatorSet, nm: &NoiseModel, vgrid: &StaggeredGrid, beta: usize, depth: usize) -> Result<f64> {
    if w.grid != nm.grid || w.n_a != nm.n_a || w.dim_x != vgrid.dim_x() {
        return Err(Error::DimensionMismatch("estimator, noise model and vertical grid disagree".into()));
    }
    let row = row_index(vgrid, beta, depth)?;
    Ok((0..w.grid.n_freq())
        .into_par_iter()
        .map(|idx| {
            let r = w.blocks[idx].row(row);
            (r * &nm.blocks[idx] * r.adjoint())[(0, 0)].re
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum())
}

/// Outcome of [`match_variance`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatch {
    pub param: f64,
    pub variance: f64,
    /// The parameter scan was not monotone and grid search was used.
    pub grid_search: bool,
}

/// Finds the parameter in `[lo, hi]` at which `variance(param)` equals `target` within
/// [`MATCH_TOLERANCE`], by bisection on `log(param)`.
///
/// A scan of [`MONOTONICITY_SAMPLES`] log-spaced points guards the bisection; when the
/// scan is not monotone the bracket containing the target is refined by a finer grid.
pub fn match_variance<F>(variance: F, target: f64, lo: f64, hi: f64) -> Result<VarianceMatch>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("parameter bracket [{lo}, {hi}] must satisfy 0 < lo < hi")));
    }
    if !target.is_finite() || target < 0.0 {
        return Err(Error::InvalidParameter(format!("target variance {target} must be non-negative")));
    }
    let params = crate::spectral::log_grid(lo, hi, MONOTONICITY_SAMPLES);
    let values = params.iter().map(|&p| variance(p)).collect::<Result<Vec<_>>>()?;
    let low = values.iter().copied().fold(f64::INFINITY, f64::min);
    let high = values.iter().copied().fold(0.0, f64::max);
    let close = |v: f64| (v - target).abs() <= MATCH_TOLERANCE * target;
    if let Some(i) = (0..params.len()).find(|&i| close(values[i])) {
        return Ok(VarianceMatch { param: params[i], variance: values[i], grid_search: false });
    }
    if target < low || target > high {
        return Err(Error::Unreachable { target, low, high });
    }
    let increasing = values.windows(2).all(|w| w[1] >= w[0]);
    let decreasing = values.windows(2).all(|w| w[1] <= w[0]);
    let monotone = increasing || decreasing;
    if !monotone {
        log::warn!("variance is not monotone in the parameter; using grid search");
    }
    let bracket = |ps: &[f64], vs: &[f64]| {
        (0..ps.len() - 1).find(|&i| (vs[i] - target) * (vs[i + 1] - target) <= 0.0).map(|i| (ps[i], vs[i], ps[i + 1], vs[i + 1]))
    };
    let (mut a, mut va, mut b, mut vb) = if monotone {
        bracket(&params, &values).expect("target lies within the scanned range")
    } else {
        let fine = crate::spectral::log_grid(lo, hi, 8 * MONOTONICITY_SAMPLES);
        let fine_values = fine.iter().map(|&p| variance(p)).collect::<Result<Vec<_>>>()?;
        if let Some(i) = (0..fine.len()).find(|&i| close(fine_values[i])) {
            return Ok(VarianceMatch { param: fine[i], variance: fine_values[i], grid_search: true });
        }
        bracket(&fine, &fine_values).ok_or(Error::Unreachable { target, low, high })?
    };
    for _ in 0..100 {
        let m = (0.5 * (a.ln() + b.ln())).exp();
        let vm = variance(m)?;
        if close(vm) {
            return Ok(VarianceMatch { param: m, variance: vm, grid_search: !monotone });
        }
        if (va - target) * (vm - target) <= 0.0 {
            b = m;
            vb = vm;
        } else {
            a = m;
            va = vm;
        }
    }
    let (param, value) = if (va - target).abs() < (vb - target).abs() { (a, va) } else { (b, vb) };
    Err(Error::Numerical(format!(
        "variance matching stalled at parameter {param:.4e} with variance {value:.4e} (target {target:.4e})"
    )))
}

fn check_pair(w: &EstimatorSet, ks: &KernelSet) -> Result<()> {
    if w.grid != ks.grid || w.n_a != ks.n_a || w.dim_x != ks.dim_x() {
        return Err(Error::DimensionMismatch(format!(
            "estimator ({} x {}) does not match kernels ({} x {})",
            w.dim_x,
            w.n_a,
            ks.n_a,
            ks.dim_x()
        )));
    }
    Ok(())
}

fn check_kernel(ak: &AveragingKernel, vgrid: &StaggeredGrid) -> Result<()> {
    if ak.dim_x != vgrid.dim_x() {
        return Err(Error::DimensionMismatch("averaging kernel and vertical grid disagree".into()));
    }
    Ok(())
}

/// Relative `L^2` error `||est - truth|| / ||truth||` of component `beta`, with the
/// vertical quadrature weights and the horizontal sum restricted to the physical window.
pub fn relative_error(est: &FourierField, truth: &FourierField, vgrid: &StaggeredGrid, beta: usize) -> Result<f64> {
    if est.grid != truth.grid || est.n_comp != vgrid.dim_x() || truth.n_comp != vgrid.dim_x() {
        return Err(Error::DimensionMismatch("estimate, truth and vertical grid disagree".into()));
    }
    if beta > 2 {
        return Err(Error::InvalidParameter(format!("velocity component {beta} does not exist")));
    }
    let grid = est.grid;
    let (offset, len) = vgrid.component_range(beta);
    let weights = vgrid.component_weights(beta);
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..len {
        let e = fft2_inverse(&grid, &est.component(offset + j))?;
        let t = fft2_inverse(&grid, &truth.component(offset + j))?;
        for i in (0..grid.n_space()).filter(|&i| grid.in_window(i)) {
            num += weights[j] * (e[i] - t[i]).powi(2);
            den += weights[j] * t[i] * t[i];
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidParameter(format!("component {beta} of the truth vanishes")));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::Frequency;
    use crate::linalg::re;
    use crate::spectral::Method;
    use crate::staggered::DensityProfile;

    fn setup() -> (HorizontalGrid, StaggeredGrid) {
        let grid = HorizontalGrid::new(8, 8, 1.0).unwrap();
        let vgrid = StaggeredGrid::new(vec![0.0, -1.0, -2.5, -4.0], &DensityProfile::Uniform { value: 1.0 }).unwrap();
        (grid, vgrid)
    }

    fn identity_pair(grid: HorizontalGrid, vgrid: &StaggeredGrid) -> (EstimatorSet, KernelSet) {
        let n = vgrid.dim_x();
        let ks = KernelSet::from_blocks(grid, vgrid.clone(), vec![CMat::identity(n, n); grid.n_freq()]).unwrap();
        let w = EstimatorSet { grid, dim_x: n, n_a: n, method: Method::Rls, params: vec![], blocks: ks.blocks.clone() };
        (w, ks)
    }

    #[test]
    fn identity_kernel_is_a_spike() {
        let (grid, vgrid) = setup();
        let (w, ks) = identity_pair(grid, &vgrid);
        let ak = averaging_kernel(&w, &ks).unwrap();
        let k = ak.space_entry(2, 2).unwrap();
        assert!((k[0] - 1.0).abs() < 1e-12);
        assert!(k[1..].iter().all(|x| x.abs() < 1e-12));
        assert!(ak.space_entry(2, 3).unwrap().iter().all(|x| x.abs() < 1e-12));
        let profile = depth_profile(&ak, &vgrid, 0, 1).unwrap();
        assert!((profile[1] - 1.0).abs() < 1e-12 && profile[0].abs() < 1e-12 && profile[2].abs() < 1e-12);
        assert_eq!(crosstalk(&ak, &vgrid, 1, 0, 1).unwrap().ratio, 0.0);
    }

    #[test]
    fn zero_estimator_gives_zero_kernel() {
        let (grid, vgrid) = setup();
        let (_, ks) = identity_pair(grid, &vgrid);
        let w = EstimatorSet::zeros(grid, vgrid.dim_x(), ks.n_a, Method::Rls);
        let ak = averaging_kernel(&w, &ks).unwrap();
        assert!(ak.blocks.iter().all(|b| b.norm() == 0.0));
        assert!(depth_profile(&ak, &vgrid, 2, 0).unwrap().iter().all(|&x| x == 0.0));
        let nm = NoiseModel::white(grid, ks.n_a, 1.0).unwrap();
        assert_eq!(variance_map(&w, &nm, &vgrid, 2, 0).unwrap(), 0.0);
        let div = averaging_kernel_div(&w, &ks).unwrap();
        let gram = vgrid.gram();
        let idx = grid.index(Frequency::new(1, 2));
        let p = FrequencyOperators::new(&vgrid, &gram, grid.wavevector(grid.freq(idx))).projection.p;
        let n = vgrid.dim_x();
        assert!(crate::linalg::max_abs(&(&div.blocks[idx] - (CMat::identity(n, n) - p))) < 1e-12);
    }

    #[test]
    fn identity_kernel_survives_projection() {
        let (grid, vgrid) = setup();
        let (w, ks) = identity_pair(grid, &vgrid);
        let div = averaging_kernel_div(&w, &ks).unwrap();
        let n = vgrid.dim_x();
        for b in &div.blocks {
            assert!(crate::linalg::max_abs(&(b - CMat::identity(n, n))) < 1e-10);
        }
        assert!(div.hermitian_residual() < 1e-12);
    }

    #[test]
    fn equal_offdiagonal_gives_unit_ratio() {
        let (grid, vgrid) = setup();
        let n = vgrid.dim_x();
        let nv = vgrid.dim_v();
        let mut m = CMat::identity(n, n);
        for j in 0..nv {
            m[(j, nv + j)] = re(1.0);
        }
        let ak = AveragingKernel { grid, dim_x: n, blocks: vec![m; grid.n_freq()], divergence_free: false };
        assert!((crosstalk(&ak, &vgrid, 1, 0, 0).unwrap().ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_indices_are_rejected() {
        let (grid, vgrid) = setup();
        let (w, ks) = identity_pair(grid, &vgrid);
        let ak = averaging_kernel(&w, &ks).unwrap();
        assert!(depth_profile(&ak, &vgrid, 3, 0).is_err());
        assert!(depth_profile(&ak, &vgrid, 2, 2).is_err());
        assert!(crosstalk(&ak, &vgrid, 0, 2, 7).is_err());
        assert!(ak.space_entry(0, 99).is_err());
    }

    #[test]
    fn variance_is_linear_in_noise() {
        let (grid, vgrid) = setup();
        let (w, _) = identity_pair(grid, &vgrid);
        let nm = NoiseModel::white(grid, vgrid.dim_x(), 1.0).unwrap();
        let v1 = variance_map(&w, &nm, &vgrid, 0, 2).unwrap();
        assert!((v1 - grid.n_freq() as f64).abs() < 1e-9);
        let v2 = variance_map(&w, &nm.scaled(2.0).unwrap(), &vgrid, 0, 2).unwrap();
        assert!((v2 - 2.0 * v1).abs() < 1e-9);
    }

    #[test]
    fn matching_inverts_a_monotone_curve() {
        let f = |p: f64| Ok(1.0 / (1.0 + p));
        let m = match_variance(f, 0.25, 1e-3, 1e3).unwrap();
        assert!((m.variance / 0.25 - 1.0).abs() <= MATCH_TOLERANCE);
        assert!((m.param - 3.0).abs() < 0.1);
        assert!(!m.grid_search);
        assert!(matches!(match_variance(f, 0.0, 1e-3, 1e3), Err(Error::Unreachable { .. })));
        assert!(matches!(match_variance(f, 2.0, 1e-3, 1e3), Err(Error::Unreachable { .. })));
    }

    #[test]
    fn matching_falls_back_on_non_monotone_curves() {
        let f = |p: f64| Ok(2.0 + (3.0 * p.ln()).sin());
        let m = match_variance(f, 2.5, 1e-2, 1e2).unwrap();
        assert!(m.grid_search);
        assert!((m.variance / 2.5 - 1.0).abs() <= MATCH_TOLERANCE);
    }
}
