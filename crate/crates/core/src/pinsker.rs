//! Minimax linear estimation on ellipsoids in the diagonal sequence model
//! `y_l = sigma_l v_l + eps_l`, `sum a_l^2 |v_l|^2 <= Q`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Frequency;

const MAX_BISECTIONS: usize = 200;
const BISECTION_TOL: f64 = 1e-14;

/// Pinsker filter weights `lambda_l = max(1 - kappa a_l, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinskerWeights {
    pub kappa: f64,
    pub lambda: Vec<f64>,
    /// Number of strictly positive weights.
    pub cutoff: usize,
    /// Minimax linear risk `sum sigma_l^{-2} max(1 - kappa a_l, 0)`.
    pub risk: f64,
}

impl PinskerWeights {
    pub fn new(a: &[f64], sigma: &[f64], kappa: f64) -> Self {
        let lambda: Vec<f64> = a.iter().map(|&al| (1.0 - kappa * al).max(0.0)).collect();
        let cutoff = lambda.iter().filter(|&&l| l > 0.0).count();
        let risk = lambda.iter().zip(sigma).map(|(l, s)| l / (s * s)).sum();
        PinskerWeights { kappa, lambda, cutoff, risk }
    }
}

fn check_inputs(a: &[f64], sigma: &[f64], q: f64) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    if a.len() != sigma.len() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} singular values", a.len(), sigma.len())));
    }
    if a.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter("ellipsoid weights must be positive".into()));
    }
    if sigma.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter("singular values must be positive".into()));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::InvalidParameter("ellipsoid radius must be positive".into()));
    }
    Ok(())
}

/// `kappa Q - sum (a_l / sigma_l^2) max(1 - kappa a_l, 0)`.
pub fn fixed_point_residual(a: &[f64], sigma: &[f64], q: f64, kappa: f64) -> f64 {
    kappa * q
        - a.iter()
            .zip(sigma)
            .map(|(&al, &s)| al / (s * s) * (1.0 - kappa * al).max(0.0))
            .sum::<f64>()
}

/// Solves the fixed-point equation for `kappa` by bisection on `(0, 1 / min a]`.
///
/// The left side is piecewise linear, so the bracket is finished by one
/// interpolation step on the linear piece containing the root.
pub fn pinsker_kappa(a: &[f64], sigma: &[f64], q: f64) -> Result<f64> {
    check_inputs(a, sigma, q)?;
    let f = |k: f64| fixed_point_residual(a, sigma, q, k);
    let amin = a.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, 1.0 / amin);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL * hi {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (&al, &s) in a.iter().zip(sigma) {
        if 1.0 - mid * al > 0.0 {
            s1 += al / (s * s);
            s2 += al * al / (s * s);
        }
    }
    let linear = s1 / (q + s2);
    if (lo..=hi).contains(&linear) {
        return Ok(linear);
    }
    let (flo, fhi) = (f(lo), f(hi));
    if fhi > flo {
        Ok((lo - flo * (hi - lo) / (fhi - flo)).clamp(lo, hi))
    } else {
        Ok(mid)
    }
}

/// Explicit solution for nondecreasing `a`:
/// `N = max{n : sum_{l<=n} a_l (a_n - a_l) / sigma_l^2 < Q}`,
/// `kappa = sum_{l<=N} a_l/sigma_l^2 / (Q + sum_{l<=N} a_l^2/sigma_l^2)`.
pub fn pinsker_kappa_closed_form(a: &[f64], sigma: &[f64], q: f64) -> Result<f64> {
    check_inputs(a, sigma, q)?;
    if a.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("closed form needs nondecreasing weights".into()));
    }
    let mut n_cut = 1;
    for n in 1..=a.len() {
        let lhs: f64 = (0..n).map(|l| a[l] * (a[n - 1] - a[l]) / (sigma[l] * sigma[l])).sum();
        if lhs < q {
            n_cut = n;
        } else {
            break;
        }
    }
    let s1: f64 = (0..n_cut).map(|l| a[l] / (sigma[l] * sigma[l])).sum();
    let s2: f64 = (0..n_cut).map(|l| a[l] * a[l] / (sigma[l] * sigma[l])).sum();
    Ok(s1 / (q + s2))
}

/// Maximal risk of a diagonal filter over the ellipsoid:
/// `Q sup_l (1 - lambda_l)^2 / a_l^2 + sum lambda_l^2 / sigma_l^2`.
pub fn maxrisk_diagonal(lambda: &[f64], a: &[f64], sigma: &[f64], q: f64) -> f64 {
    let bias = lambda
        .iter()
        .zip(a)
        .map(|(l, al)| (1.0 - l).powi(2) / (al * al))
        .fold(0.0, f64::max);
    let var: f64 = lambda.iter().zip(sigma).map(|(l, s)| l * l / (s * s)).sum();
    q * bias + var
}

/// Pointwise risk `||(W diag(sigma) - I) v||^2 + ||W||_F^2` of a general linear estimator.
pub fn pointwise_risk(w: &nalgebra::DMatrix<f64>, sigma: &[f64], v: &[f64]) -> f64 {
    let n = sigma.len();
    let mut bias = 0.0;
    for i in 0..n {
        let mut r = -v[i];
        for j in 0..n {
            r += w[(i, j)] * sigma[j] * v[j];
        }
        bias += r * r;
    }
    bias + w.iter().map(|x| x * x).sum::<f64>()
}

/// Worst-case point of the ellipsoid for a diagonal filter `d` (estimate `d_l y_l`):
/// all mass on the coordinate maximizing `(d_l sigma_l - 1)^2 / a_l^2`.
pub fn extremal_point(d: &[f64], a: &[f64], sigma: &[f64], q: f64) -> Vec<f64> {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for l in 0..d.len() {
        let val = (d[l] * sigma[l] - 1.0).powi(2) / (a[l] * a[l]);
        if val > best_val {
            best_val = val;
            best = l;
        }
    }
    let mut v = vec![0.0; d.len()];
    v[best] = q.sqrt() / a[best];
    v
}

/// One spectral mode entering the global ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeKey {
    pub freq: Frequency,
    pub j: usize,
    /// Singular or generalized singular value.
    pub value: f64,
    /// Modes not bounded by the regularizer (`c = 0`) go last.
    pub unbounded: bool,
}

fn compare_modes(x: &ModeKey, y: &ModeKey) -> Ordering {
    x.unbounded
        .cmp(&y.unbounded)
        .then_with(|| y.value.total_cmp(&x.value))
        .then_with(|| (x.freq.ky, x.freq.kx, x.j).cmp(&(y.freq.ky, y.freq.kx, y.j)))
}

/// Global 1-based index `l` of every mode: values descending, unbounded modes last,
/// ties broken by `(k_y, k_x, j)`.
pub fn global_ordering(modes: &[ModeKey]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&i, &j| compare_modes(&modes[i], &modes[j]));
    let mut l = vec![0; modes.len()];
    for (rank, &i) in order.iter().enumerate() {
        l[i] = rank + 1;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let k = pinsker_kappa(&[1.0], &[1.0], 1.0).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
        let k = pinsker_kappa(&[1.0, 2.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
        let w = PinskerWeights::new(&[1.0, 2.0], &[1.0, 1.0], k);
        assert!((w.lambda[0] - 0.5).abs() < 1e-12 && w.lambda[1] == 0.0);
        assert!((w.risk - 0.5).abs() < 1e-12);
        assert!((maxrisk_diagonal(&w.lambda, &[1.0, 2.0], &[1.0, 1.0], 1.0) - 0.5).abs() < 1e-12);
        let cf = pinsker_kappa_closed_form(&[1.0, 2.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((cf - 0.5).abs() < 1e-12);
    }

    #[test]
    fn large_radius_vanishing_regularization() {
        let k = pinsker_kappa(&[1.0, 2.0], &[1.0, 1.0], 1e6).unwrap();
        assert!(k < 1e-5);
        let w = PinskerWeights::new(&[1.0, 2.0], &[1.0, 1.0], k);
        assert!(w.lambda.iter().all(|&l| l > 1.0 - 1e-4));
    }

    #[test]
    fn maxrisk_branches() {
        let (a, s) = ([1.0, 2.0, 4.0], [2.0, 1.0, 0.5]);
        let no_reg = maxrisk_diagonal(&[1.0; 3], &a, &s, 3.0);
        assert!((no_reg - (0.25 + 1.0 + 4.0)).abs() < 1e-14);
        assert!((maxrisk_diagonal(&[0.0; 3], &a, &s, 3.0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(pinsker_kappa(&[], &[], 1.0), Err(Error::EmptySpectrum));
        assert!(pinsker_kappa(&[1.0], &[0.0], 1.0).is_err());
        assert!(pinsker_kappa(&[1.0], &[1.0], -1.0).is_err());
        assert!(pinsker_kappa_closed_form(&[2.0, 1.0], &[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn kappa_decreases_with_radius() {
        let a: Vec<f64> = (1..=10).map(|l| (l as f64).cbrt()).collect();
        let s: Vec<f64> = (0..10).map(|l| (-0.3 * l as f64).exp()).collect();
        let mut last = f64::INFINITY;
        for q in [0.1, 1.0, 10.0, 100.0, 1000.0] {
            let k = pinsker_kappa(&a, &s, q).unwrap();
            assert!(k < last);
            last = k;
        }
    }

    #[test]
    fn ordering_sorts_and_breaks_ties() {
        let f = |kx, ky| Frequency::new(kx, ky);
        let modes = [
            ModeKey { freq: f(0, 0), j: 0, value: 3.0, unbounded: false },
            ModeKey { freq: f(0, 0), j: 1, value: 1.0, unbounded: false },
            ModeKey { freq: f(1, 0), j: 0, value: 2.0, unbounded: false },
        ];
        assert_eq!(global_ordering(&modes), vec![1, 3, 2]);
        let tied = [
            ModeKey { freq: f(1, 0), j: 0, value: 1.0, unbounded: false },
            ModeKey { freq: f(-1, 0), j: 0, value: 1.0, unbounded: false },
            ModeKey { freq: f(0, -1), j: 0, value: 1.0, unbounded: false },
            ModeKey { freq: f(5, 5), j: 0, value: 0.0, unbounded: true },
        ];
        assert_eq!(global_ordering(&tied), vec![3, 2, 1, 4]);
    }
}
