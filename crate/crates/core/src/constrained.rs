//! Mass-conserving estimators: the GSVD-based Pinsker estimator restricted to
//! divergence-free fields and the saddle-point constrained RLS.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gsvd::{gsvd, GsvdFactors};
use crate::linalg::{self, re, CMat};
use crate::pinsker::{global_ordering, pinsker_kappa, ModeKey, PinskerWeights};
use crate::spectral::{
    active_canonical, symmetric_weights, EllipsoidSpec, EstimatorSet, Method, PinskerParam, WhitenedProblem,
    SVD_TRUNCATION,
};
use crate::staggered::{FrequencyOperators, GramOperators, StaggeredGrid};

/// Largest admissible condition number of the saddle-point matrix.
pub const MAX_SADDLE_CONDITION: f64 = 1e14;
/// Generalized modes with `s_j` below this fraction of the largest `s` at the same
/// frequency are dropped: the stacked-QR factorization resolves them too poorly.
pub const MODE_RANK_TOL: f64 = 1e-6;

/// Per-frequency GSVD of `(Lambda^{-1/2} K P, [G_Y^{1/2} curl_rho; G_V^{1/2} div_rho])`,
/// computed on a basis `B` of `range(P)`: the factors belong to the pair `(A B, L B)`
/// and the full-space vectors are `x_j = B x'_j`.
#[derive(Debug, Clone)]
pub struct FrequencyPlan {
    pub factors: GsvdFactors,
    pub basis: CMat,
    /// Columns `x_j` in the full velocity space.
    pub x: CMat,
}

/// GSVDs of all active canonical frequencies plus the global mode ordering.
#[derive(Debug, Clone)]
pub struct ConstrainedPinskerPlan {
    pub plans: Vec<Option<FrequencyPlan>>,
    pub modes: Vec<ModeKey>,
    pub order: Vec<usize>,
}

impl ConstrainedPinskerPlan {
    pub fn new(wp: &WhitenedProblem, vgrid: &StaggeredGrid) -> Result<Self> {
        if wp.dim_x != vgrid.dim_x() {
            return Err(Error::DimensionMismatch("kernels and vertical grid disagree".into()));
        }
        let grid = wp.grid;
        let gram = vgrid.gram();
        let computed: Vec<(usize, FrequencyPlan)> = active_canonical(&grid)
            .par_iter()
            .map(|&idx| {
                let fo = FrequencyOperators::new(vgrid, &gram, grid.wavevector(grid.freq(idx)));
                let basis = gram.g_x_inv_sqrt() * &fo.projection.q;
                let a = &wp.kernels[idx] * &basis;
                let l = fo.ops.h1_regularizer(&gram) * &basis;
                let factors = gsvd(&a, &l).map_err(|e| e.at(grid.freq(idx)))?;
                let x = &basis * &factors.x;
                Ok((idx, FrequencyPlan { factors, basis, x }))
            })
            .collect::<Result<_>>()?;
        let smax = computed.iter().flat_map(|(_, p)| p.factors.s.iter().copied()).fold(0.0, f64::max);
        let mut plans = vec![None; grid.n_freq()];
        let mut modes = Vec::new();
        for (idx, plan) in computed {
            let f = &plan.factors;
            let local = MODE_RANK_TOL * f.s.iter().copied().fold(0.0, f64::max);
            let cj = grid.conj_index(idx);
            let members = if cj == idx { vec![idx] } else { vec![idx, cj] };
            for &i in &members {
                for j in 0..f.s.len() {
                    if f.s[j] <= SVD_TRUNCATION * smax || f.s[j] <= local {
                        continue;
                    }
                    let unbounded = j >= f.p;
                    let value = if unbounded { f64::INFINITY } else { f.s[j] / f.c[j] };
                    modes.push(ModeKey { freq: grid.freq(i), j, value, unbounded });
                }
            }
            plans[idx] = Some(plan);
        }
        let order = global_ordering(&modes);
        Ok(ConstrainedPinskerPlan { plans, modes, order })
    }
}

/// Mass-conserving Pinsker estimator,
/// `W_k = X[:, 1:p] diag(lambda / s) U[:, 1:p]* Lambda^{-1/2}`.
///
/// Modes the regularizer does not see (`c = 0`, the constant horizontal flows at
/// `k = 0`) are kept with weight one.
pub fn pinsker_constrained(
    wp: &WhitenedProblem,
    vgrid: &StaggeredGrid,
    plan: &ConstrainedPinskerPlan,
    ell: &EllipsoidSpec,
) -> Result<(EstimatorSet, PinskerWeights)> {
    let grid = wp.grid;
    let weights = symmetric_weights(&grid, &plan.modes, &plan.order, ell.exponent);
    let bounded: Vec<usize> = (0..plan.modes.len()).filter(|&i| !plan.modes[i].unbounded).collect();
    let a: Vec<f64> = bounded.iter().map(|&i| weights[&(grid.index(plan.modes[i].freq), plan.modes[i].j)]).collect();
    let sigma: Vec<f64> = bounded.iter().map(|&i| plan.modes[i].value).collect();
    let kappa = match ell.param {
        PinskerParam::Kappa(k) if k > 0.0 && k.is_finite() => k,
        PinskerParam::Radius(q) => pinsker_kappa(&a, &sigma, q)?,
        PinskerParam::Kappa(k) => return Err(Error::InvalidParameter(format!("kappa must be positive, got {k}"))),
    };
    let pw = PinskerWeights::new(&a, &sigma, kappa);
    let mut lambda: HashMap<(usize, usize), f64> = HashMap::new();
    for (&i, &l) in bounded.iter().zip(&pw.lambda) {
        lambda.insert((grid.index(plan.modes[i].freq), plan.modes[i].j), l);
    }
    for m in plan.modes.iter().filter(|m| m.unbounded) {
        lambda.insert((grid.index(m.freq), m.j), 1.0);
    }
    let mut params = vec![("kappa".to_string(), kappa)];
    if let PinskerParam::Radius(q) = ell.param {
        params.push(("radius".to_string(), q));
    }
    let est = EstimatorSet::build(grid, vgrid.dim_x(), wp.n_a, Method::PinskerMc, params, |idx| {
        let plan = plan.plans[idx].as_ref().expect("active frequency has a plan");
        let f = &plan.factors;
        let mut w = CMat::zeros(vgrid.dim_x(), wp.n_a);
        for j in 0..f.s.len() {
            let l = lambda.get(&(idx, j)).copied().unwrap_or(0.0);
            if l > 0.0 {
                let u = f.u.column(j).rows(0, wp.n_a).into_owned();
                w += plan.x.column(j) * u.adjoint() * re(l / f.s[j]);
            }
        }
        Ok(w * &wp.inv_sqrt[idx])
    })?;
    Ok((est, pw))
}

/// Independent rows spanning the row space of `div_rho` (rank drops at `k = 0`).
fn constraint_rows(div_rho: &CMat) -> Result<CMat> {
    let dec = linalg::svd(div_rho)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let r = dec.s.iter().filter(|&&s| s > 1e-12 * smax).count();
    let mut b = CMat::zeros(r, div_rho.ncols());
    for i in 0..r {
        b.set_row(i, &(dec.v.column(i).adjoint() * Complex64::new(dec.s[i], 0.0)));
    }
    Ok(b)
}

/// Saddle-point constrained RLS:
/// `[[K*Lambda^{-1}K + alpha L*L, alpha B*], [alpha B, 0]] (v, mu) = (K*Lambda^{-1} tau, 0)`
/// with `B = div_rho` and `L` the stacked curl/div regularizer.
pub fn rls_constrained(wp: &WhitenedProblem, vgrid: &StaggeredGrid, alpha: f64) -> Result<EstimatorSet> {
    rls_constrained_scaled(wp, vgrid, alpha, true)
}

/// As [`rls_constrained`]; `scale_constraint = false` uses `B` instead of `alpha B`.
pub fn rls_constrained_scaled(
    wp: &WhitenedProblem,
    vgrid: &StaggeredGrid,
    alpha: f64,
    scale_constraint: bool,
) -> Result<EstimatorSet> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if wp.dim_x != vgrid.dim_x() {
        return Err(Error::DimensionMismatch("kernels and vertical grid disagree".into()));
    }
    let gram = vgrid.gram();
    let n = vgrid.dim_x();
    let grid = wp.grid;
    EstimatorSet::build(grid, n, wp.n_a, Method::RlsMc, vec![("alpha".into(), alpha)], |idx| {
        let ops = crate::staggered::assemble_operators(vgrid, grid.wavevector(grid.freq(idx)));
        saddle_block(&wp.kernels[idx], &wp.inv_sqrt[idx], &ops, &gram, alpha, scale_constraint)
    })
}

fn saddle_block(
    k: &CMat,
    inv_sqrt: &CMat,
    ops: &crate::staggered::DiscreteOperators,
    gram: &GramOperators,
    alpha: f64,
    scale_constraint: bool,
) -> Result<CMat> {
    let n = k.ncols();
    let l = ops.h1_regularizer(gram);
    let b = constraint_rows(&ops.div_rho)?;
    let nb = b.nrows();
    let bs = if scale_constraint { &b * re(alpha) } else { b.clone() };
    let mut sys = CMat::zeros(n + nb, n + nb);
    sys.view_mut((0, 0), (n, n)).copy_from(&(k.adjoint() * k + l.adjoint() * &l * re(alpha)));
    sys.view_mut((0, n), (n, nb)).copy_from(&bs.adjoint());
    sys.view_mut((n, 0), (nb, n)).copy_from(&bs);
    let sv = linalg::svd(&sys)?;
    let (hi, lo) = (sv.s[0], *sv.s.last().expect("nonempty system"));
    if !(lo > 0.0) || hi / lo > MAX_SADDLE_CONDITION {
        return Err(Error::Numerical(format!("saddle-point matrix condition {:.3e}", hi / lo)));
    }
    let mut rhs = CMat::zeros(n + nb, k.nrows());
    rhs.view_mut((0, 0), (n, k.nrows())).copy_from(&(k.adjoint() * inv_sqrt));
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("saddle-point matrix is singular".into()))?;
    Ok(sol.rows(0, n).into_owned())
}
