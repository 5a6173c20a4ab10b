//! Generalized singular value decomposition `A = U S X^{-1}`, `L = V C X^{-1}`.
//!
//! Computed from a QR factorization of the stacked matrix `[A; L] = [Q1; Q2] R`
//! followed by an SVD `Q2 = V C Z*`; then `X = R^{-1} Z` and `Q1 Z = U S`.
//! `L` is first rescaled to the Frobenius norm of `A`, so `s_i^2 + (beta c_i)^2 = 1`
//! with `beta = |A| / |L|`; the `c_i` descend and the `s_i` ascend.
//! Each `x_j` is scaled by a phase so that its first non-negligible entry is real
//! and positive; `u_j` and `v_j` carry the same phase.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{complete_unitary, max_abs, svd, CMat, PivotedQr, ZERO};

/// Largest admissible condition number of `X`.
pub const MAX_X_CONDITION: f64 = 1e14;
/// `c_j` counts as zero below this fraction of `c_1`.
pub const C_RANK_TOL: f64 = 1e-12;
/// Columns of `U` with `s_j` below this fraction of the largest `s` are completed
/// to an orthonormal basis rather than normalized.
pub const U_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GsvdFactors {
    /// Unitary, `max(m, n) x max(m, n)`; rows beyond `a_rows` belong to the zero padding.
    pub u: CMat,
    pub x: CMat,
    pub x_inv: CMat,
    /// Unitary, `q x q`.
    pub v: CMat,
    pub s: Vec<f64>,
    pub c: Vec<f64>,
    /// Number of `c_j` above the rank threshold.
    pub p: usize,
    pub a_rows: usize,
}

impl GsvdFactors {
    /// Rebuilds `A` from the factors.
    pub fn reconstruct_a(&self) -> CMat {
        let n = self.s.len();
        let mut us = self.u.columns(0, n).rows(0, self.a_rows).into_owned();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.x_inv
    }

    pub fn reconstruct_l(&self) -> CMat {
        let n = self.c.len();
        let q = self.v.nrows();
        let mut vc = CMat::zeros(q, n);
        for j in 0..n.min(q) {
            vc.set_column(j, &(self.v.column(j) * Complex64::new(self.c[j], 0.0)));
        }
        vc * &self.x_inv
    }

    /// Generalized values `s_j / c_j` for `j < p`.
    pub fn generalized_values(&self) -> Vec<f64> {
        (0..self.p).map(|j| self.s[j] / self.c[j]).collect()
    }
}

/// Factorizes the pair `(A, L)` with `A` of size `m x n` and `L` of size `q x n`, `q >= n`.
pub fn gsvd(a: &CMat, l: &CMat) -> Result<GsvdFactors> {
    let (m, n) = a.shape();
    let q = l.nrows();
    if l.ncols() != n {
        return Err(Error::DimensionMismatch(format!("A has {n} columns, L has {}", l.ncols())));
    }
    if q < n {
        return Err(Error::DimensionMismatch(format!("L needs at least {n} rows, has {q}")));
    }
    let (na, nl) = (a.norm(), l.norm());
    let beta = if na > 0.0 && nl > 0.0 { na / nl } else { 1.0 };
    let mp = m.max(n);
    let mut stacked = CMat::zeros(mp + q, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(a);
    stacked.view_mut((mp, 0), (q, n)).copy_from(&(l * Complex64::new(beta, 0.0)));

    let qr = stacked.clone().qr();
    let qfull = qr.q();
    let r = qr.r();
    let rdec = svd(&r)?;
    let rmax = rdec.s.first().copied().unwrap_or(0.0);
    let rmin = rdec.s.last().copied().unwrap_or(0.0);
    if !(rmin > 0.0) || rmax / rmin > MAX_X_CONDITION {
        return Err(Error::Numerical(format!(
            "stacked matrix is rank deficient (condition {:.3e})",
            if rmin > 0.0 { rmax / rmin } else { f64::INFINITY }
        )));
    }
    let q1 = qfull.rows(0, mp).into_owned();
    let q2 = qfull.rows(mp, q).into_owned();

    let cs = svd(&q2)?;
    let c: Vec<f64> = cs.s.iter().map(|v| v.min(1.0) / beta).collect();
    let mut z = cs.v.clone();
    let mut vcols = cs.u.clone();
    let mut q1z = &q1 * &z;

    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("triangular factor is singular".into()))?;
    let mut x = &r_inv * &z;

    for j in 0..n {
        let col = x.column(j);
        let big = col.iter().fold(0.0_f64, |acc, e| acc.max(e.norm()));
        if let Some(first) = col.iter().find(|e| e.norm() > 1e-12 * big) {
            let phase = first.conj() / first.norm();
            x.column_mut(j).scale_mut_complex(phase);
            z.column_mut(j).scale_mut_complex(phase);
            q1z.column_mut(j).scale_mut_complex(phase);
            vcols.column_mut(j).scale_mut_complex(phase);
        }
    }

    let s: Vec<f64> = (0..n).map(|j| q1z.column(j).norm()).collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let mut u_known = Vec::new();
    let mut u = CMat::from_element(mp, mp, ZERO);
    for j in 0..n {
        if s[j] > U_RANK_TOL * smax.max(1e-300) {
            u.set_column(j, &(q1z.column(j) / Complex64::new(s[j], 0.0)));
            u_known.push(j);
        }
    }
    let u = fill_missing(u, &u_known);
    let v_known: Vec<usize> = (0..n).collect();
    let mut v = CMat::from_element(q, q, ZERO);
    v.view_mut((0, 0), (q, n)).copy_from(&vcols);
    let v = fill_missing(v, &v_known);

    let c1 = c.first().copied().unwrap_or(0.0);
    let p = c.iter().filter(|&&cj| cj > C_RANK_TOL * c1 && cj > 0.0).count();
    let x_inv = z.adjoint() * &r;
    Ok(GsvdFactors { u, x, x_inv, v, s, c, p, a_rows: m })
}

/// Replaces the columns not listed in `known` by an orthonormal completion.
fn fill_missing(mut m: CMat, known: &[usize]) -> CMat {
    let dim = m.nrows();
    if known.len() == dim {
        return m;
    }
    let mut basis = CMat::zeros(dim, known.len());
    for (i, &j) in known.iter().enumerate() {
        basis.set_column(i, &m.column(j));
    }
    let full = if known.is_empty() { PivotedQr::new(&CMat::identity(dim, dim)).q } else { complete_unitary(&basis) };
    let mut next = known.len();
    for j in 0..dim {
        if !known.contains(&j) {
            m.set_column(j, &full.column(next));
            next += 1;
        }
    }
    m
}

/// Largest residual of `A = U S X^{-1}` and `L = V C X^{-1}`, relative to the matrix norms.
pub fn reconstruction_residual(f: &GsvdFactors, a: &CMat, l: &CMat) -> f64 {
    let ra = max_abs(&(f.reconstruct_a() - a)) / max_abs(a).max(1.0);
    let rl = max_abs(&(f.reconstruct_l() - l)) / max_abs(l).max(1.0);
    ra.max(rl)
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, s: Complex64);
}

impl<S: nalgebra::StorageMut<Complex64, nalgebra::Dyn, nalgebra::U1>> ScaleComplex
    for nalgebra::Matrix<Complex64, nalgebra::Dyn, nalgebra::U1, S>
{
    fn scale_mut_complex(&mut self, s: Complex64) {
        for e in self.iter_mut() {
            *e *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(m, n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn random_pair_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(6, 4, &mut rng);
        let l = random(4, 4, &mut rng);
        let f = gsvd(&a, &l).unwrap();
        assert!(reconstruction_residual(&f, &a, &l) < 1e-10);
        let lx = &l * &f.x;
        let gram = lx.adjoint() * &lx;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { f.c[i] * f.c[i] } else { 0.0 };
                assert!((gram[(i, j)].re - expect).abs() < 1e-10 && gram[(i, j)].im.abs() < 1e-10);
            }
        }
        assert!(f.c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identity_regularizer_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(5, 3, &mut rng);
        let f = gsvd(&a, &CMat::identity(3, 3)).unwrap();
        let mut gv = f.generalized_values();
        gv.sort_by(|x, y| y.total_cmp(x));
        let sv = svd(&a).unwrap().s;
        for (g, s) in gv.iter().zip(&sv) {
            assert!((g - s).abs() < 1e-10);
        }
    }

    #[test]
    fn short_a_is_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(2, 4, &mut rng);
        let l = random(5, 4, &mut rng);
        let f = gsvd(&a, &l).unwrap();
        assert_eq!(f.u.nrows(), 4);
        assert!(reconstruction_residual(&f, &a, &l) < 1e-10);
    }

    #[test]
    fn zero_a_gives_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random(4, 3, &mut rng);
        let f = gsvd(&CMat::zeros(3, 3), &l).unwrap();
        assert!(f.s.iter().all(|&s| s < 1e-14));
        assert!(f.generalized_values().iter().all(|&g| g < 1e-14));
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = gsvd(&random(5, 3, &mut rng), &random(3, 3, &mut rng)).unwrap();
        for j in 0..3 {
            let first = f.x.column(j).iter().copied().find(|e| e.norm() > 1e-12).unwrap();
            assert!(first.re > 0.0 && first.im.abs() < 1e-14);
        }
    }
}
