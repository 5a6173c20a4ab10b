//! Vertical staggered discretization with density weighting.
//!
//! Horizontal velocity components live on the cell midpoints
//! `z_{1/2}, ..., z_{N_z - 1/2}` (space `V`, dimension `N_z`), the vertical
//! component on the interior nodes `z_1, ..., z_{N_z - 1}` (space `W`,
//! dimension `N_z - 1`; Dirichlet conditions at `z_0` and `z_{N_z}`). Per
//! horizontal frequency the unknowns form `X = V x V x W` and the curl lives in
//! `Y = W x W x V`.
//!
//! The discrete operators reproduce the continuous identities exactly:
//! `div curl# = 0`, `curl grad = 0`, and `curl#_rho`, `-grad_rho` are the
//! adjoints of `curl_rho`, `div_rho` with respect to the Gram matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, diag_real, hstack, max_abs, re, vstack, CMat, CVec, PivotedQr, I};

/// Relative pivot threshold for the rank decision in the projection QR.
pub const QR_RANK_TOL: f64 = 1e-12;

/// Density profile `rho(z)` in kg/m^3; `z` is height in Mm (negative below the surface).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityProfile {
    Uniform { value: f64 },
    /// `rho(z) = surface * exp(-z / scale_height)`, increasing with depth.
    Exponential { surface: f64, scale_height: f64 },
    /// Values at the nodes `z_0..z_{N_z}`; midpoints use the geometric mean.
    Tabulated { nodes: Vec<f64> },
}

impl DensityProfile {
    fn eval(&self, z: f64) -> f64 {
        match self {
            DensityProfile::Uniform { value } => *value,
            DensityProfile::Exponential { surface, scale_height } => surface * (-z / scale_height).exp(),
            DensityProfile::Tabulated { .. } => unreachable!("tabulated profiles are not evaluated pointwise"),
        }
    }

    /// Density at the nodes and at the midpoints.
    pub fn sample(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            DensityProfile::Tabulated { nodes } => {
                if nodes.len() != z.len() {
                    return Err(Error::InvalidGrid(format!(
                        "{} tabulated densities for {} nodes",
                        nodes.len(),
                        z.len()
                    )));
                }
                let mid = nodes.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
                Ok((nodes.clone(), mid))
            }
            _ => {
                let nodes = z.iter().map(|&zz| self.eval(zz)).collect();
                let mid = z.windows(2).map(|w| self.eval(0.5 * (w[0] + w[1]))).collect();
                Ok((nodes, mid))
            }
        }
    }
}

/// Vertical grid `z_0 > z_1 > ... > z_{N_z}` with densities and quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaggeredGrid {
    pub z: Vec<f64>,
    pub z_mid: Vec<f64>,
    /// `delta_{j+1/2} = z_j - z_{j+1}`, `j = 0..N_z-1` (weights of `V`).
    pub delta_mid: Vec<f64>,
    /// `delta_j = z_{j-1/2} - z_{j+1/2}`, `j = 1..N_z-1` (weights of `W`).
    pub delta_node: Vec<f64>,
    pub rho_node: Vec<f64>,
    pub rho_mid: Vec<f64>,
}

impl StaggeredGrid {
    pub fn new(z_nodes: Vec<f64>, profile: &DensityProfile) -> Result<Self> {
        let (rho_node, rho_mid) = profile.sample(&z_nodes)?;
        Self::from_samples(z_nodes, rho_node, rho_mid)
    }

    /// Grid with a density given as a function of height.
    pub fn from_fn(z_nodes: Vec<f64>, rho: impl Fn(f64) -> f64) -> Result<Self> {
        let rho_node = z_nodes.iter().map(|&z| rho(z)).collect();
        let rho_mid = z_nodes.windows(2).map(|w| rho(0.5 * (w[0] + w[1]))).collect();
        Self::from_samples(z_nodes, rho_node, rho_mid)
    }

    fn from_samples(z: Vec<f64>, rho_node: Vec<f64>, rho_mid: Vec<f64>) -> Result<Self> {
        if z.len() < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes (N_z >= 2), got {}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node height".into()));
        }
        if let Some(j) = z.windows(2).position(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidGrid(format!(
                "heights must be strictly decreasing: z[{}] = {} <= z[{}] = {}",
                j,
                z[j],
                j + 1,
                z[j + 1]
            )));
        }
        if let Some(r) = rho_node.iter().chain(&rho_mid).find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidGrid(format!("density must be positive and finite, got {r}")));
        }
        let z_mid: Vec<f64> = z.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let delta_mid = z.windows(2).map(|w| w[0] - w[1]).collect();
        let delta_node = z_mid.windows(2).map(|w| w[0] - w[1]).collect();
        Ok(StaggeredGrid { z, z_mid, delta_mid, delta_node, rho_node, rho_mid })
    }

    /// Nodes from the surface `top` down to `bottom` with spacing growing geometrically by `ratio`.
    pub fn graded_nodes(top: f64, bottom: f64, nz: usize, ratio: f64) -> Vec<f64> {
        let weights: Vec<f64> = (0..nz).map(|j| ratio.powi(j as i32)).collect();
        let total: f64 = weights.iter().sum();
        let mut z = vec![top];
        let mut acc = top;
        for w in &weights {
            acc -= (top - bottom) * w / total;
            z.push(acc);
        }
        z[nz] = bottom;
        z
    }

    pub fn nz(&self) -> usize {
        self.z.len() - 1
    }

    pub fn dim_v(&self) -> usize {
        self.nz()
    }

    pub fn dim_w(&self) -> usize {
        self.nz() - 1
    }

    /// `dim X = 2 N_z + (N_z - 1)`.
    pub fn dim_x(&self) -> usize {
        2 * self.dim_v() + self.dim_w()
    }

    pub fn dim_y(&self) -> usize {
        2 * self.dim_w() + self.dim_v()
    }

    /// Interior-node heights, the support of the vertical component.
    pub fn z_interior(&self) -> &[f64] {
        &self.z[1..self.nz()]
    }

    /// Offset and length of component `beta` (0 = x, 1 = y, 2 = z) within `X`.
    pub fn component_range(&self, beta: usize) -> (usize, usize) {
        let nv = self.dim_v();
        match beta {
            0 => (0, nv),
            1 => (nv, nv),
            2 => (2 * nv, self.dim_w()),
            _ => panic!("velocity component index {beta} out of range"),
        }
    }

    /// Heights at which component `beta` is represented.
    pub fn component_heights(&self, beta: usize) -> &[f64] {
        if beta == 2 {
            self.z_interior()
        } else {
            &self.z_mid
        }
    }

    /// Quadrature weights of component `beta` (without density).
    pub fn component_weights(&self, beta: usize) -> &[f64] {
        if beta == 2 {
            &self.delta_node
        } else {
            &self.delta_mid
        }
    }

    pub fn gram(&self) -> GramOperators {
        let g_v = self.delta_mid.clone();
        let g_w = self.delta_node.clone();
        let m_v = self.rho_mid.clone();
        let m_w = self.rho_node[1..self.nz()].to_vec();
        let m_x: Vec<f64> = m_v.iter().chain(&m_v).chain(&m_w).copied().collect();
        let blk: Vec<f64> = g_v.iter().chain(&g_v).chain(&g_w).copied().collect();
        let g_x = m_x.iter().zip(&blk).map(|(m, g)| m * m * g).collect();
        let g_y = g_w.iter().chain(&g_w).chain(&g_v).copied().collect();
        GramOperators { g_v, g_w, m_v, m_w, m_x, g_x, g_y }
    }

    /// `D_z^V : V -> W`, `(D v)_j = (v_{j-1/2} - v_{j+1/2}) / delta_j`.
    pub fn dz_v(&self) -> CMat {
        let (nv, nw) = (self.dim_v(), self.dim_w());
        let mut d = CMat::zeros(nw, nv);
        for j in 0..nw {
            let inv = 1.0 / self.delta_node[j];
            d[(j, j)] = re(inv);
            d[(j, j + 1)] = re(-inv);
        }
        d
    }

    /// `D_z^W : W -> V`, `(D w)_{j+1/2} = (w_j - w_{j+1}) / delta_{j+1/2}` with `w_0 = w_{N_z} = 0`.
    pub fn dz_w(&self) -> CMat {
        let (nv, nw) = (self.dim_v(), self.dim_w());
        let mut d = CMat::zeros(nv, nw);
        for j in 0..nv {
            let inv = 1.0 / self.delta_mid[j];
            if j >= 1 {
                d[(j, j - 1)] = re(inv);
            }
            if j < nw {
                d[(j, j)] = re(-inv);
            }
        }
        d
    }

    /// The constant horizontal-momentum modes `(M_V^{-1} e, 0, 0)` and `(0, M_V^{-1} e, 0)`.
    pub fn momentum_modes(&self) -> [CVec; 2] {
        let nv = self.dim_v();
        let mut ex = CVec::zeros(self.dim_x());
        let mut ey = CVec::zeros(self.dim_x());
        for j in 0..nv {
            ex[j] = re(1.0 / self.rho_mid[j]);
            ey[nv + j] = re(1.0 / self.rho_mid[j]);
        }
        [ex, ey]
    }
}

/// Diagonal Gram and density matrices, stored as their diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct GramOperators {
    pub g_v: Vec<f64>,
    pub g_w: Vec<f64>,
    pub m_v: Vec<f64>,
    pub m_w: Vec<f64>,
    pub m_x: Vec<f64>,
    /// `G_X = M_X^2 blockdiag(G_V, G_V, G_W)`.
    pub g_x: Vec<f64>,
    /// `G_Y = blockdiag(G_W, G_W, G_V)`.
    pub g_y: Vec<f64>,
}

impl GramOperators {
    pub fn g_x_mat(&self) -> CMat {
        diag_real(&self.g_x)
    }

    pub fn g_y_mat(&self) -> CMat {
        diag_real(&self.g_y)
    }

    pub fn g_v_mat(&self) -> CMat {
        diag_real(&self.g_v)
    }

    pub fn g_x_sqrt(&self) -> CMat {
        diag_real(&self.g_x.iter().map(|g| g.sqrt()).collect::<Vec<_>>())
    }

    pub fn g_x_inv_sqrt(&self) -> CMat {
        diag_real(&self.g_x.iter().map(|g| 1.0 / g.sqrt()).collect::<Vec<_>>())
    }

    pub fn g_y_sqrt(&self) -> CMat {
        diag_real(&self.g_y.iter().map(|g| g.sqrt()).collect::<Vec<_>>())
    }

    pub fn g_v_sqrt(&self) -> CMat {
        diag_real(&self.g_v.iter().map(|g| g.sqrt()).collect::<Vec<_>>())
    }

    /// `||v||^2` in the `G_X` inner product.
    pub fn x_norm_sqr(&self, v: &CVec) -> f64 {
        v.iter().zip(&self.g_x).map(|(z, g)| g * z.norm_sqr()).sum()
    }
}

/// Discrete differential operators at one horizontal wavevector.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub kvec: (f64, f64),
    pub dz_v: CMat,
    pub dz_w: CMat,
    pub div: CMat,
    pub grad: CMat,
    pub curl: CMat,
    pub curl_sharp: CMat,
    pub div_rho: CMat,
    pub grad_rho: CMat,
    pub curl_rho: CMat,
    pub curl_sharp_rho: CMat,
}

/// Assembles the operator blocks for wavevector `kvec = (k_x, k_y)` (rad/Mm).
pub fn assemble_operators(grid: &StaggeredGrid, kvec: (f64, f64)) -> DiscreteOperators {
    let (nv, nw) = (grid.dim_v(), grid.dim_w());
    let (kx, ky) = kvec;
    let dz_v = grid.dz_v();
    let dz_w = grid.dz_w();
    let ikx_v = CMat::identity(nv, nv) * (I * kx);
    let iky_v = CMat::identity(nv, nv) * (I * ky);
    let ikx_w = CMat::identity(nw, nw) * (I * kx);
    let iky_w = CMat::identity(nw, nw) * (I * ky);
    let z_vv = CMat::zeros(nv, nv);
    let z_ww = CMat::zeros(nw, nw);
    let z_wv = CMat::zeros(nw, nv);
    let z_vw = CMat::zeros(nv, nw);

    let div = hstack(&[&ikx_v, &iky_v, &dz_w]);
    let grad = vstack(&[&ikx_v, &iky_v, &dz_v]);
    let curl = vstack(&[
        &hstack(&[&z_wv, &(-&dz_v), &iky_w]),
        &hstack(&[&dz_v, &z_wv, &(-&ikx_w)]),
        &hstack(&[&(-&iky_v), &ikx_v, &z_vw]),
    ]);
    let curl_sharp = vstack(&[
        &hstack(&[&z_vw, &(-&dz_w), &iky_v]),
        &hstack(&[&dz_w, &z_vw, &(-&ikx_v)]),
        &hstack(&[&(-&iky_w), &ikx_w, &z_wv]),
    ]);
    let _ = (&z_vv, &z_ww);

    let m_x: Vec<f64> = grid.rho_mid.iter().chain(&grid.rho_mid).chain(&grid.rho_node[1..grid.nz()]).copied().collect();
    let m = diag_real(&m_x);
    let m_inv = diag_real(&m_x.iter().map(|r| 1.0 / r).collect::<Vec<_>>());
    let div_rho = &div * &m;
    let curl_rho = &curl * &m;
    let curl_sharp_rho = &m_inv * &curl_sharp;
    let grad_rho = &m_inv * &grad;
    DiscreteOperators {
        kvec,
        dz_v,
        dz_w,
        div,
        grad,
        curl,
        curl_sharp,
        div_rho,
        grad_rho,
        curl_rho,
        curl_sharp_rho,
    }
}

impl DiscreteOperators {
    pub fn is_zero_wavevector(&self) -> bool {
        self.kvec.0 == 0.0 && self.kvec.1 == 0.0
    }

    /// Gram matrix of the seminorm `||curl_rho v||_Y^2 + ||div_rho v||_V^2`,
    /// i.e. `G_X curl#_rho curl_rho - G_X grad_rho div_rho`.
    pub fn g_h1(&self, gram: &GramOperators) -> CMat {
        let gx = gram.g_x_mat();
        let h = &gx * &self.curl_sharp_rho * &self.curl_rho - &gx * &self.grad_rho * &self.div_rho;
        (&h + h.adjoint()) * re(0.5)
    }

    /// Stacked regularizer `[G_Y^{1/2} curl_rho; G_V^{1/2} div_rho]`; `L* L = G_H1`.
    pub fn h1_regularizer(&self, gram: &GramOperators) -> CMat {
        vstack(&[&(gram.g_y_sqrt() * &self.curl_rho), &(gram.g_v_sqrt() * &self.div_rho)])
    }
}

/// Largest entry of `G_X curl#_rho - (G_Y curl_rho)*` and `G_V div_rho + (G_X grad_rho)*`.
pub fn adjointness_check(gram: &GramOperators, ops: &DiscreteOperators) -> f64 {
    let curl_res = gram.g_x_mat() * &ops.curl_sharp_rho - (gram.g_y_mat() * &ops.curl_rho).adjoint();
    let div_res = gram.g_v_mat() * &ops.div_rho + (gram.g_x_mat() * &ops.grad_rho).adjoint();
    max_abs(&curl_res).max(max_abs(&div_res))
}

/// Skew-adjointness residual of the vertical differences, `G_V D_z^W + (G_W D_z^V)*`.
pub fn dz_skew_residual(grid: &StaggeredGrid) -> f64 {
    let gram = grid.gram();
    let lhs = diag_real(&gram.g_v) * grid.dz_w();
    let rhs = (diag_real(&gram.g_w) * grid.dz_v()).adjoint();
    max_abs(&(lhs + rhs))
}

/// Projection onto the divergence-free subspace at one frequency.
#[derive(Debug, Clone)]
pub struct DivFreeProjection {
    pub p: CMat,
    pub rank: usize,
    /// Orthonormal columns spanning `G_X^{1/2} range(P)`.
    pub q: CMat,
    /// A pivot fell within a factor of ten of the rank threshold.
    pub ambiguous: bool,
}

/// Builds `P_k = G_X^{-1/2} Q Q* G_X^{1/2}` from a pivoted QR of `G_X^{1/2} curl#_rho`.
/// At the zero wavevector the two constant-momentum modes are appended.
pub fn build_projection(grid: &StaggeredGrid, gram: &GramOperators, ops: &DiscreteOperators) -> DivFreeProjection {
    let gs = gram.g_x_sqrt();
    let mut m = &gs * &ops.curl_sharp_rho;
    if ops.is_zero_wavevector() {
        let [ex, ey] = grid.momentum_modes();
        let cols = linalg::hstack(&[&CMat::from_column_slice(ex.len(), 1, ex.as_slice()), &CMat::from_column_slice(ey.len(), 1, ey.as_slice())]);
        m = hstack(&[&m, &(&gs * cols)]);
    }
    let qr = PivotedQr::new(&m);
    let (rank, ambiguous) = qr.rank(QR_RANK_TOL);
    if ambiguous {
        log::warn!("projection rank decision is ambiguous at wavevector {:?}", ops.kvec);
    }
    let q = qr.q_columns(rank);
    let p = gram.g_x_inv_sqrt() * &q * q.adjoint() * gs;
    DivFreeProjection { p, rank, q, ambiguous }
}

/// Operators plus projection for one frequency.
#[derive(Debug, Clone)]
pub struct FrequencyOperators {
    pub ops: DiscreteOperators,
    pub projection: DivFreeProjection,
}

impl FrequencyOperators {
    pub fn new(grid: &StaggeredGrid, gram: &GramOperators, kvec: (f64, f64)) -> Self {
        let ops = assemble_operators(grid, kvec);
        let projection = build_projection(grid, gram, &ops);
        FrequencyOperators { ops, projection }
    }
}

/// Expands a list of per-component vectors into block-diagonal form (test helper as well).
pub fn blockdiag3(a: &CMat, b: &CMat, c: &CMat) -> CMat {
    block_diag(&[a, b, c])
}
