//! Dense complex linear-algebra helpers shared by the per-frequency solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn diag_real(values: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(values.len(), values.iter().map(|&v| re(v))))
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_vec(v: &CVec) -> f64 {
    v.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Stacks matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&CMat]) -> CMat {
    let ncols = blocks.first().map_or(0, |b| b.ncols());
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), ncols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Stacks matrices with equal row counts side by side.
pub fn hstack(blocks: &[&CMat]) -> CMat {
    let nrows = blocks.first().map_or(0, |b| b.nrows());
    let ncols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(nrows, ncols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), nrows, "hstack row mismatch");
        out.view_mut((0, c), (nrows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn block_diag(blocks: &[&CMat]) -> CMat {
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let ncols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(nrows, ncols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted ascending.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let h = (a + a.adjoint()) * re(0.5);
    let eig = SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Hermitian inverse square root `A^{-1/2}` together with the spectral condition number.
pub fn hermitian_inv_sqrt(a: &CMat) -> Result<(CMat, f64)> {
    let (values, vectors) = hermitian_eigen(a);
    let lo = values.first().copied().unwrap_or(0.0);
    let hi = values.last().copied().unwrap_or(0.0);
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Numerical(format!("smallest eigenvalue {lo:.3e} is not positive")));
    }
    let scaled = CMat::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * (1.0 / values[j].sqrt())
    });
    let mut inv_sqrt = &scaled * vectors.adjoint();
    inv_sqrt = (&inv_sqrt + inv_sqrt.adjoint()) * re(0.5);
    Ok((inv_sqrt, hi / lo))
}

/// Lower Cholesky factor `C` with `A = C C*`.
pub fn cholesky_lower(a: &CMat) -> Result<CMat> {
    let h = (a + a.adjoint()) * re(0.5);
    nalgebra::Cholesky::new(h)
        .map(|c| c.unpack())
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    let h = (a + a.adjoint()) * re(0.5);
    let chol = nalgebra::Cholesky::new(h)
        .ok_or_else(|| Error::Numerical("normal matrix is not positive definite".into()))?;
    let x = chol.solve(b);
    if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical("non-finite solution".into()))
    }
}

/// Singular value decomposition with singular values in descending order.
///
/// `u` is `m x r` and `v` is `n x r` with `r = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn svd(a: &CMat) -> Result<Svd> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(Svd { u: CMat::zeros(m, 0), s: vec![], v: CMat::zeros(n, 0) });
    }
    let dec = faer::Mat::<Complex64>::from_fn(m, n, |i, j| a[(i, j)])
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (dec.U(), dec.S().column_vector(), dec.V());
    let r = m.min(n);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s[j].re.total_cmp(&s[i].re));
    Ok(Svd {
        u: CMat::from_fn(m, r, |i, j| u[(i, order[j])]),
        s: order.iter().map(|&j| s[j].re).collect(),
        v: CMat::from_fn(n, r, |i, j| v[(i, order[j])]),
    })
}

/// Orthonormal basis of the null space, using a relative singular value threshold.
pub fn null_space(a: &CMat, rel_tol: f64) -> Result<CMat> {
    let (m, n) = a.shape();
    let padded = if m < n {
        let mut p = CMat::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let dec = svd(&padded)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..dec.s.len()).filter(|&i| dec.s[i] <= rel_tol * smax).collect();
    let mut out = CMat::zeros(n, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &dec.v.column(src));
    }
    Ok(out)
}

pub fn rank(a: &CMat, rel_tol: f64) -> Result<usize> {
    let dec = svd(a)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    Ok(dec.s.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count())
}

/// Householder QR with column pivoting, `A P = Q R`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Full unitary factor, `m x m`.
    pub q: CMat,
    /// Upper trapezoidal factor, `m x n`, columns in pivoted order.
    pub r: CMat,
    /// `perm[j]` is the original column placed at position `j`.
    pub perm: Vec<usize>,
}

impl PivotedQr {
    pub fn new(a: &CMat) -> Self {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let mut q = CMat::identity(m, m);
        let mut perm: Vec<usize> = (0..n).collect();
        for j in 0..m.min(n) {
            // Column norms are recomputed each step; the matrices here are tiny.
            let mut best = j;
            let mut best_norm = -1.0;
            for c in j..n {
                let nrm: f64 = (j..m).map(|i| r[(i, c)].norm_sqr()).sum();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = c;
                }
            }
            if best != j {
                r.swap_columns(j, best);
                perm.swap(j, best);
            }
            let norm = best_norm.max(0.0).sqrt();
            if norm == 0.0 {
                continue;
            }
            let x0 = r[(j, j)];
            let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { ONE };
            let alpha = -phase * norm;
            let mut v = CVec::zeros(m - j);
            for i in j..m {
                v[i - j] = r[(i, j)];
            }
            v[0] -= alpha;
            let vnorm = v.norm();
            if vnorm == 0.0 {
                continue;
            }
            v /= re(vnorm);
            // R <- H R on rows j.., H = I - 2 v v*
            for c in j..n {
                let mut dot = ZERO;
                for i in j..m {
                    dot += v[i - j].conj() * r[(i, c)];
                }
                for i in j..m {
                    r[(i, c)] -= v[i - j] * dot * 2.0;
                }
            }
            // Q <- Q H on columns j..
            for row in 0..m {
                let mut dot = ZERO;
                for i in j..m {
                    dot += q[(row, i)] * v[i - j];
                }
                for i in j..m {
                    q[(row, i)] -= dot * v[i - j].conj() * 2.0;
                }
            }
            r[(j, j)] = alpha;
            for i in j + 1..m {
                r[(i, j)] = ZERO;
            }
        }
        PivotedQr { q, r, perm }
    }

    /// Magnitudes of the diagonal of `R`.
    pub fn pivots(&self) -> Vec<f64> {
        let k = self.r.nrows().min(self.r.ncols());
        (0..k).map(|i| self.r[(i, i)].norm()).collect()
    }

    /// Numerical rank: pivots above `rel_tol` times the largest pivot.
    /// The flag reports a pivot within a factor of ten of the threshold.
    pub fn rank(&self, rel_tol: f64) -> (usize, bool) {
        let piv = self.pivots();
        let largest = piv.first().copied().unwrap_or(0.0);
        let thresh = rel_tol * largest;
        let rank = piv.iter().filter(|&&p| p > thresh && p > 0.0).count();
        let ambiguous = piv.iter().any(|&p| p > thresh / 10.0 && p < thresh * 10.0);
        (rank, ambiguous)
    }

    pub fn q_columns(&self, k: usize) -> CMat {
        self.q.columns(0, k).into_owned()
    }
}

/// Extends orthonormal columns to a full unitary matrix.
pub fn complete_unitary(q: &CMat) -> CMat {
    let (m, k) = q.shape();
    if k == m {
        return q.clone();
    }
    let full = PivotedQr::new(q).q;
    let mut out = CMat::zeros(m, m);
    out.view_mut((0, 0), (m, k)).copy_from(q);
    out.view_mut((0, k), (m, m - k)).copy_from(&full.columns(k, m - k));
    out
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
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
    fn pivoted_qr_reconstructs_and_reveals_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random(7, 3, &mut rng);
        let c = random(3, 5, &mut rng);
        let a = &b * &c;
        let qr = PivotedQr::new(&a);
        let mut ap = CMat::zeros(7, 5);
        for (j, &p) in qr.perm.iter().enumerate() {
            ap.set_column(j, &a.column(p));
        }
        assert!(max_abs(&(&qr.q * &qr.r - ap)) < 1e-13);
        assert!(max_abs(&(qr.q.adjoint() * &qr.q - CMat::identity(7, 7))) < 1e-13);
        assert_eq!(qr.rank(1e-12).0, 3);
    }

    #[test]
    fn svd_resolves_repeated_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.random_range(2..=6);
            let q = rng.random_range(n..=n + 3);
            let u = random(q, n, &mut rng).qr().q();
            let v = random(n, n, &mut rng).qr().q();
            let s: Vec<f64> = (0..n).map(|i| if i + 1 < n { 1.0 } else { 0.3 }).collect();
            let a = &u * diag_real(&s) * v.adjoint();
            let d = svd(&a).unwrap();
            assert!(max_abs(&(&d.u * diag_real(&d.s) * d.v.adjoint() - &a)) < 1e-13);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn inverse_square_root_whitens() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random(5, 5, &mut rng);
        let a = &b * b.adjoint() + CMat::identity(5, 5) * re(0.1);
        let (s, cond) = hermitian_inv_sqrt(&a).unwrap();
        assert!(max_abs(&(&s * &a * &s - CMat::identity(5, 5))) < 1e-10);
        assert!(cond > 1.0);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(3, 6, &mut rng);
        let n = null_space(&a, 1e-12).unwrap();
        assert_eq!(n.ncols(), 3);
        assert!(max_abs(&(&a * &n)) < 1e-13);
    }

    #[test]
    fn completion_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(6, 2, &mut rng);
        let q = PivotedQr::new(&a).q_columns(2);
        let u = complete_unitary(&q);
        assert!(max_abs(&(u.adjoint() * &u - CMat::identity(6, 6))) < 1e-13);
        assert!(max_abs(&(u.columns(0, 2).into_owned() - q)) == 0.0);
    }
}
