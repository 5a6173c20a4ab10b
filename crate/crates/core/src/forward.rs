//! Synthetic forward problems: kernels, stationary noise, test flows and
//! travel-time synthesis `tau_k = K_k v_k + n_k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fft2_forward, fft2_inverse, map_conjugate_pairs, FourierField, HorizontalGrid};
use crate::linalg::{cholesky_lower, hermitian_eigen, max_abs, re, CMat, CVec, ZERO};
use crate::staggered::{assemble_operators, StaggeredGrid};

/// Number of averaging geometries: east-west, north-south and in-out.
pub const N_GEOMETRIES: usize = 3;

/// Forward blocks `K_k` of shape `n_a x dim X` for every frequency.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub grid: HorizontalGrid,
    pub vgrid: StaggeredGrid,
    pub n_a: usize,
    pub blocks: Vec<CMat>,
}

impl KernelSet {
    pub fn from_blocks(grid: HorizontalGrid, vgrid: StaggeredGrid, blocks: Vec<CMat>) -> Result<Self> {
        if blocks.len() != grid.n_freq() {
            return Err(Error::DimensionMismatch(format!(
                "{} kernel blocks for {} frequencies",
                blocks.len(),
                grid.n_freq()
            )));
        }
        let n_a = blocks.first().map_or(0, |b| b.nrows());
        if let Some(b) = blocks.iter().find(|b| b.nrows() != n_a || b.ncols() != vgrid.dim_x()) {
            return Err(Error::DimensionMismatch(format!(
                "kernel block is {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                n_a,
                vgrid.dim_x()
            )));
        }
        if blocks.iter().any(|b| !crate::linalg::is_finite(b)) {
            return Err(Error::Numerical("non-finite kernel entry".into()));
        }
        Ok(KernelSet { grid, vgrid, n_a, blocks })
    }

    /// Transforms space-domain kernels; `kernel(a, col)` returns the padded
    /// space array of channel `a` against unknown `col` of `X`.
    pub fn from_space<F>(grid: HorizontalGrid, vgrid: StaggeredGrid, n_a: usize, kernel: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Vec<f64> + Sync,
    {
        let n_x = vgrid.dim_x();
        let columns: Vec<Vec<Complex64>> = (0..n_a * n_x)
            .into_par_iter()
            .map(|ac| fft2_forward(&grid, &kernel(ac / n_x, ac % n_x)))
            .collect::<Result<_>>()?;
        let blocks = map_conjugate_pairs(&grid, |idx| {
            Ok(CMat::from_fn(n_a, n_x, |a, c| columns[a * n_x + c][idx]))
        })?;
        KernelSet::from_blocks(grid, vgrid, blocks)
    }

    pub fn dim_x(&self) -> usize {
        self.vgrid.dim_x()
    }

    /// Largest `|K_{-k} - conj(K_k)|`.
    pub fn hermitian_residual(&self) -> f64 {
        (0..self.grid.n_freq())
            .map(|idx| max_abs(&(&self.blocks[self.grid.conj_index(idx)] - self.blocks[idx].conjugate())))
            .fold(0.0, f64::max)
    }
}

/// Analytic kernel family: per wave branch an e-folding depth and a horizontal width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Depth reach of each branch in Mm.
    pub branch_depths: Vec<f64>,
    /// Horizontal Gaussian width of each branch in Mm.
    pub branch_widths: Vec<f64>,
    /// Overall sensitivity scale.
    pub amplitude: f64,
    /// Coupling of the east-west and north-south channels to the other horizontal component.
    pub crosstalk: f64,
    /// Direct sensitivity of the in-out channels to `v_z`.
    pub vertical_sensitivity: f64,
    /// Sensitivity of the in-out channels to horizontal divergence.
    pub divergence_sensitivity: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            branch_depths: vec![0.8, 1.6, 3.0, 5.0],
            branch_widths: vec![2.0, 2.5, 3.5, 5.0],
            amplitude: 0.01,
            crosstalk: 0.05,
            vertical_sensitivity: 0.3,
            divergence_sensitivity: 0.5,
        }
    }
}

impl KernelConfig {
    pub fn n_branches(&self) -> usize {
        self.branch_depths.len()
    }

    pub fn n_channels(&self) -> usize {
        N_GEOMETRIES * self.n_branches()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.branch_depths.is_empty() {
            return bad("kernel.branch_depths must not be empty");
        }
        if self.branch_depths.len() != self.branch_widths.len() {
            return bad("kernel.branch_depths and kernel.branch_widths differ in length");
        }
        if self.branch_depths.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return bad("kernel.branch_depths must be positive");
        }
        if self.branch_widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("kernel.branch_widths must be positive");
        }
        if !self.amplitude.is_finite() || self.amplitude == 0.0 {
            return bad("kernel.amplitude must be finite and nonzero");
        }
        for (name, v) in [
            ("kernel.crosstalk", self.crosstalk),
            ("kernel.vertical_sensitivity", self.vertical_sensitivity),
            ("kernel.divergence_sensitivity", self.divergence_sensitivity),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Horizontal kernel shapes relative to a Gaussian `G` of width `w`.
#[derive(Clone, Copy)]
enum Shape {
    Gauss,
    /// `-(x/w) G`, transform `i k_x w G_k`.
    DerivX,
    DerivY,
}

fn horizontal_shape(grid: &HorizontalGrid, width: f64, shape: Shape) -> Vec<f64> {
    let n = grid.n_space() as f64;
    let norm = n * grid.h * grid.h / (2.0 * PI * width * width);
    (0..grid.n_space())
        .map(|s| {
            let (ox, oy) = grid.offset(s);
            let (x, y) = (ox as f64 * grid.h, oy as f64 * grid.h);
            let g = norm * (-(x * x + y * y) / (2.0 * width * width)).exp();
            match shape {
                Shape::Gauss => g,
                Shape::DerivX => -(x / width) * g,
                Shape::DerivY => -(y / width) * g,
            }
        })
        .collect()
}

/// Builds the analytic kernel set. Channel `a = geometry * n_branches + branch`.
pub fn synth_kernels(grid: &HorizontalGrid, vgrid: &StaggeredGrid, cfg: &KernelConfig) -> Result<KernelSet> {
    grid.validate()?;
    cfg.validate()?;
    let nb = cfg.n_branches();
    let shapes: Vec<[Vec<f64>; 3]> = cfg
        .branch_widths
        .iter()
        .map(|&w| {
            [
                horizontal_shape(grid, w, Shape::Gauss),
                horizontal_shape(grid, w, Shape::DerivX),
                horizontal_shape(grid, w, Shape::DerivY),
            ]
        })
        .collect();
    let nv = vgrid.dim_v();
    let kernel = |a: usize, col: usize| -> Vec<f64> {
        let (geometry, branch) = (a / nb, a % nb);
        let (beta, j) = if col < 2 * nv { (col / nv, col % nv) } else { (2, col - 2 * nv) };
        let z = vgrid.component_heights(beta)[j];
        let weight = vgrid.component_weights(beta)[j];
        let depth = cfg.amplitude * (z / cfg.branch_depths[branch]).exp() * weight;
        let (coef, shape) = match (geometry, beta) {
            (0, 0) | (1, 1) => (1.0, Shape::Gauss),
            (0, 1) | (1, 0) => (cfg.crosstalk, Shape::Gauss),
            (0, 2) => (cfg.crosstalk, Shape::DerivX),
            (1, 2) => (cfg.crosstalk, Shape::DerivY),
            (2, 0) => (cfg.divergence_sensitivity, Shape::DerivX),
            (2, 1) => (cfg.divergence_sensitivity, Shape::DerivY),
            _ => (cfg.vertical_sensitivity, Shape::Gauss),
        };
        let s = &shapes[branch][shape as usize];
        s.iter().map(|v| v * depth * coef).collect()
    };
    KernelSet::from_space(*grid, vgrid.clone(), cfg.n_channels(), kernel)
}

/// Per-frequency noise covariances with their lower Cholesky factors.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub grid: HorizontalGrid,
    pub n_a: usize,
    pub blocks: Vec<CMat>,
    pub factors: Vec<CMat>,
}

impl NoiseModel {
    /// Validates Hermitian positive definiteness and conjugate symmetry, then factors every block.
    pub fn new(grid: HorizontalGrid, blocks: Vec<CMat>) -> Result<Self> {
        if blocks.len() != grid.n_freq() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariance blocks for {} frequencies",
                blocks.len(),
                grid.n_freq()
            )));
        }
        let n_a = blocks.first().map_or(0, |b| b.nrows());
        let factors = blocks
            .par_iter()
            .enumerate()
            .map(|(idx, b)| {
                let freq = grid.freq(idx);
                if b.nrows() != n_a || b.ncols() != n_a {
                    return Err(Error::DimensionMismatch(format!("covariance block at {freq} is not {n_a}x{n_a}")));
                }
                let scale = max_abs(b);
                if max_abs(&(b - b.adjoint())) > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite { freq, detail: "block is not Hermitian".into() });
                }
                let cj = grid.conj_index(idx);
                if max_abs(&(&blocks[cj] - b.conjugate())) > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!("covariance at {freq} breaks conjugate symmetry")));
                }
                let (vals, _) = hermitian_eigen(b);
                if vals[0] <= 1e-14 * vals[n_a - 1].abs() {
                    return Err(Error::NotPositiveDefinite {
                        freq,
                        detail: format!("smallest eigenvalue {:.3e}", vals[0]),
                    });
                }
                cholesky_lower(b).map_err(|e| e.at(freq))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseModel { grid, n_a, blocks, factors })
    }

    /// `Lambda_k = variance * I` at every frequency.
    pub fn white(grid: HorizontalGrid, n_a: usize, variance: f64) -> Result<Self> {
        NoiseModel::new(grid, vec![CMat::identity(n_a, n_a) * re(variance); grid.n_freq()])
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        NoiseModel::new(self.grid, self.blocks.iter().map(|b| b * re(s)).collect())
    }

    /// Smallest eigenvalue over all frequencies.
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks.par_iter().map(|b| hermitian_eigen(b).0[0]).reduce(|| f64::INFINITY, f64::min)
    }
}

/// Stationary correlated noise: `Lambda_k = s(k) D^{1/2} R D^{1/2} / T` plus an optional
/// Hermitian coupling between the east-west and north-south channels of each branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-channel spectral variances (one per channel).
    pub variances: Vec<f64>,
    /// Horizontal correlation length in Mm; 0 gives white noise.
    pub correlation_length: f64,
    /// Correlation between neighbouring branches of one geometry, `R_ab = c^{|b_a - b_b|}`.
    pub channel_correlation: f64,
    /// Number of branches per geometry (used to group channels).
    pub n_branches: usize,
    /// Averaging time; covariances scale as `1/T`.
    pub averaging_time: f64,
    /// Strength of the imaginary east-west/north-south coupling.
    pub skew: f64,
}

impl NoiseConfig {
    pub fn white(n_a: usize, variance: f64) -> Self {
        NoiseConfig {
            variances: vec![variance; n_a],
            correlation_length: 0.0,
            channel_correlation: 0.0,
            n_branches: n_a,
            averaging_time: 1.0,
            skew: 0.0,
        }
    }

    pub fn desk(n_branches: usize, level: f64) -> Self {
        let per_branch = [1.0, 1.5, 2.0, 3.0];
        let variances = (0..N_GEOMETRIES * n_branches)
            .map(|a| level * per_branch[(a % n_branches).min(per_branch.len() - 1)])
            .collect();
        NoiseConfig {
            variances,
            correlation_length: 2.0,
            channel_correlation: 0.3,
            n_branches,
            averaging_time: 1.0,
            skew: 0.1,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.variances.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.variances.is_empty() || self.variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("noise.variances must be positive");
        }
        if !(self.correlation_length >= 0.0 && self.correlation_length.is_finite()) {
            return bad("noise.correlation_length must be non-negative");
        }
        if !(self.averaging_time > 0.0 && self.averaging_time.is_finite()) {
            return bad("noise.averaging_time must be positive");
        }
        if self.n_branches == 0 || !self.variances.len().is_multiple_of(self.n_branches) {
            return bad("noise.n_branches must divide the channel count");
        }
        if !self.channel_correlation.is_finite() || !self.skew.is_finite() {
            return bad("noise.channel_correlation and noise.skew must be finite");
        }
        Ok(())
    }
}

pub fn synth_noise_model(grid: &HorizontalGrid, cfg: &NoiseConfig) -> Result<NoiseModel> {
    grid.validate()?;
    cfg.validate()?;
    let n_a = cfg.n_channels();
    let nb = cfg.n_branches;
    let floor = 0.1;
    let ell = cfg.correlation_length;
    let raw_shape = |idx: usize| {
        let (kx, ky) = grid.wavevector(grid.freq(idx));
        floor + (-(kx * kx + ky * ky) * ell * ell / 2.0).exp()
    };
    let mean_shape = (0..grid.n_freq()).map(raw_shape).sum::<f64>() / grid.n_freq() as f64;
    let kmax = PI / grid.h;
    let mut base = CMat::zeros(n_a, n_a);
    for a in 0..n_a {
        for b in 0..n_a {
            let corr = if a == b {
                1.0
            } else if a / nb == b / nb {
                cfg.channel_correlation.powi((a % nb).abs_diff(b % nb) as i32)
            } else {
                0.0
            };
            base[(a, b)] = re(corr * (cfg.variances[a] * cfg.variances[b]).sqrt());
        }
    }
    let blocks = map_conjugate_pairs(grid, |idx| {
        let s = raw_shape(idx) / mean_shape / cfg.averaging_time;
        let mut lam = &base * re(s);
        if cfg.skew != 0.0 && nb < n_a {
            let (kx, _) = grid.wavevector(grid.freq(idx));
            for b in 0..nb {
                let (ew, ns) = (b, nb + b);
                let amp = cfg.skew * (kx / kmax) * s * (cfg.variances[ew] * cfg.variances[ns]).sqrt();
                lam[(ew, ns)] += Complex64::new(0.0, amp);
                lam[(ns, ew)] -= Complex64::new(0.0, amp);
            }
        }
        Ok(lam)
    })?;
    NoiseModel::new(*grid, blocks)
}

fn frequency_rng(seed: u64, grid: &HorizontalGrid, idx: usize) -> ChaCha20Rng {
    let f = grid.freq(idx);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let stream = ((f.kx as i64 + (1 << 20)) as u64) << 32 | (f.ky as i64 + (1 << 20)) as u64;
    rng.set_stream(stream);
    rng
}

/// Draws one noise realization with covariance `Lambda_k` per frequency.
///
/// Canonical frequencies get `C_k g` with `E[g g*] = I` (real and imaginary parts of
/// variance 1/2); partners get the conjugate; self-conjugate frequencies draw real `g`.
pub fn sample_noise(nm: &NoiseModel, seed: u64) -> FourierField {
    let grid = nm.grid;
    let blocks = map_conjugate_pairs(&grid, |idx| {
        let mut rng = frequency_rng(seed, &grid, idx);
        let g = if grid.is_self_conjugate(idx) {
            CVec::from_fn(nm.n_a, |_, _| re(StandardNormal.sample(&mut rng)))
        } else {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            CVec::from_fn(nm.n_a, |_, _| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(a * s, b * s)
            })
        };
        let n = &nm.factors[idx] * g;
        Ok(CMat::from_column_slice(nm.n_a, 1, n.as_slice()))
    })
    .expect("noise sampling is infallible");
    let cols: Vec<CVec> = blocks.into_iter().map(|m| m.column(0).into_owned()).collect();
    FourierField::from_blocks(grid, &cols).expect("noise blocks match the grid")
}

/// Velocity field in the staggered layout `(v_x, v_y, v_z)` per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub field: FourierField,
    pub mass_conserving: bool,
}

impl VelocityModel {
    pub fn new(field: FourierField, vgrid: &StaggeredGrid, mass_conserving: bool) -> Result<Self> {
        if field.n_comp != vgrid.dim_x() {
            return Err(Error::DimensionMismatch(format!(
                "velocity has {} components per frequency, grid needs {}",
                field.n_comp,
                vgrid.dim_x()
            )));
        }
        Ok(VelocityModel { field, mass_conserving })
    }

    /// Largest `||div_rho v_k|| / (||div_rho||_max ||v_k||)` over frequencies with content.
    pub fn div_residual(&self, vgrid: &StaggeredGrid) -> f64 {
        div_residual(&self.field, vgrid)
    }

    /// Space-domain samples of one velocity component, `[depth][padded space]`.
    pub fn component_space(&self, vgrid: &StaggeredGrid, beta: usize) -> Result<Vec<Vec<f64>>> {
        let (off, len) = vgrid.component_range(beta);
        (off..off + len).map(|c| fft2_inverse(&self.field.grid, &self.field.component(c))).collect()
    }
}

/// Relative mass-conservation residual of a staggered field (see [`VelocityModel::div_residual`]).
pub fn div_residual(field: &FourierField, vgrid: &StaggeredGrid) -> f64 {
    let grid = field.grid;
    (0..grid.n_freq())
        .into_par_iter()
        .map(|idx| {
            let v = field.get(idx);
            let norm = v.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let ops = assemble_operators(vgrid, grid.wavevector(grid.freq(idx)));
            (&ops.div_rho * &v).norm() / (max_abs(&ops.div_rho) * norm)
        })
        .reduce(|| 0.0, f64::max)
}

/// Single convective cell built from a poloidal potential, mass conserving by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupergranuleConfig {
    /// Characteristic horizontal size in Mm.
    pub cell_size: f64,
    /// Peak horizontal speed in m/s.
    pub peak_horizontal: f64,
}

impl Default for SupergranuleConfig {
    fn default() -> Self {
        SupergranuleConfig { cell_size: 30.0, peak_horizontal: 500.0 }
    }
}

/// `v_k = curl#_rho psi_k` with `psi = (i k_y chi, -i k_x chi, 0)`, `chi(r, z) = G(r) g(z)`;
/// `g` vanishes at the top and bottom so the return flow closes inside the box, and the
/// momentum `rho v` is depth-independent in scale, so `v` decays with the density.
pub fn synth_supergranule(grid: &HorizontalGrid, vgrid: &StaggeredGrid, cfg: &SupergranuleConfig) -> Result<VelocityModel> {
    if !(cfg.cell_size > 0.0 && cfg.cell_size.is_finite()) {
        return Err(Error::InvalidParameter("truth.cell_size must be positive".into()));
    }
    if !cfg.peak_horizontal.is_finite() || cfg.peak_horizontal < 0.0 {
        return Err(Error::InvalidParameter("truth.peak_horizontal must be non-negative".into()));
    }
    let s = cfg.cell_size / 4.0;
    let (cx, cy) = ((grid.nx / 2) as f64, (grid.ny / 2) as f64);
    let blob: Vec<f64> = (0..grid.n_space())
        .map(|i| {
            let (x, y) = ((i % grid.fx()) as f64 - cx, (i / grid.fx()) as f64 - cy);
            (-(x * x + y * y) * grid.h * grid.h / (2.0 * s * s)).exp()
        })
        .collect();
    let blob_k = fft2_forward(grid, &blob)?;
    let (top, bottom) = (vgrid.z[0], vgrid.z[vgrid.nz()]);
    let depth = top - bottom;
    let profile: Vec<f64> = vgrid
        .z_interior()
        .iter()
        .map(|&z| (PI * (top - z) / depth).sin())
        .collect();
    let nw = vgrid.dim_w();
    let blocks = map_conjugate_pairs(grid, |idx| {
        if grid.is_nyquist(idx) {
            return Ok(CMat::zeros(vgrid.dim_x(), 1));
        }
        let ops = assemble_operators(vgrid, grid.wavevector(grid.freq(idx)));
        let (kx, ky) = ops.kvec;
        let mut psi = CVec::from_element(vgrid.dim_y(), ZERO);
        for j in 0..nw {
            let chi = blob_k[idx] * profile[j];
            psi[j] = Complex64::new(0.0, ky) * chi;
            psi[nw + j] = Complex64::new(0.0, -kx) * chi;
        }
        Ok(CMat::from_column_slice(vgrid.dim_x(), 1, (&ops.curl_sharp_rho * psi).as_slice()))
    })?;
    let cols: Vec<CVec> = blocks.into_iter().map(|m| m.column(0).into_owned()).collect();
    let mut field = FourierField::from_blocks(*grid, &cols)?;
    let nv = vgrid.dim_v();
    let mut peak = 0.0_f64;
    for j in 0..nv {
        let vx = fft2_inverse(grid, &field.component(j))?;
        let vy = fft2_inverse(grid, &field.component(nv + j))?;
        for (a, b) in vx.iter().zip(&vy) {
            peak = peak.max(a.hypot(*b));
        }
    }
    if peak > 0.0 {
        field = field.scale(cfg.peak_horizontal / peak);
    }
    VelocityModel::new(field, vgrid, true)
}

/// Noise-free travel times `tau_k = K_k v_k`.
pub fn apply_forward(ks: &KernelSet, v: &FourierField) -> Result<FourierField> {
    if v.grid != ks.grid || v.n_comp != ks.dim_x() {
        return Err(Error::DimensionMismatch(format!(
            "velocity layout ({} components) does not match kernels ({} unknowns)",
            v.n_comp,
            ks.dim_x()
        )));
    }
    let blocks: Vec<CVec> = (0..ks.grid.n_freq()).into_par_iter().map(|idx| &ks.blocks[idx] * v.get(idx)).collect();
    FourierField::from_blocks(ks.grid, &blocks)
}

/// Settings of a complete synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    #[serde(default = "one")]
    pub pad_factor: usize,
    pub z_nodes: Vec<f64>,
    pub density: crate::staggered::DensityProfile,
    pub kernel: KernelConfig,
    pub noise: NoiseConfig,
    pub truth: SupergranuleConfig,
}

fn one() -> usize {
    1
}

impl ProblemConfig {
    /// 32 x 32 x 8 grid, 12 channels, exponentially stratified density.
    pub fn desk() -> Self {
        let kernel = KernelConfig::default();
        ProblemConfig {
            nx: 32,
            ny: 32,
            spacing: HorizontalGrid::DEFAULT_SPACING,
            pad_factor: 1,
            z_nodes: StaggeredGrid::graded_nodes(0.0, -12.0, 8, 1.25),
            density: crate::staggered::DensityProfile::Exponential { surface: 1.0, scale_height: 2.0 },
            noise: NoiseConfig::desk(kernel.n_branches(), 1e-2),
            kernel,
            truth: SupergranuleConfig::default(),
        }
    }
}

/// A fully assembled synthetic problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: HorizontalGrid,
    pub vgrid: StaggeredGrid,
    pub kernels: KernelSet,
    pub noise: NoiseModel,
    pub truth: VelocityModel,
}

impl Problem {
    pub fn build(cfg: &ProblemConfig) -> Result<Self> {
        let grid = HorizontalGrid::with_padding(cfg.nx, cfg.ny, cfg.spacing, cfg.pad_factor)?;
        let vgrid = StaggeredGrid::new(cfg.z_nodes.clone(), &cfg.density)?;
        let kernels = synth_kernels(&grid, &vgrid, &cfg.kernel)?;
        if cfg.noise.n_channels() != kernels.n_a {
            return Err(Error::InvalidParameter(format!(
                "noise.variances has {} entries for {} channels",
                cfg.noise.n_channels(),
                kernels.n_a
            )));
        }
        let noise = synth_noise_model(&grid, &cfg.noise)?;
        let truth = synth_supergranule(&grid, &vgrid, &cfg.truth)?;
        Ok(Problem { grid, vgrid, kernels, noise, truth })
    }

    pub fn clean_data(&self) -> FourierField {
        apply_forward(&self.kernels, &self.truth.field).expect("problem layouts agree")
    }

    pub fn noisy_data(&self, seed: u64) -> FourierField {
        self.clean_data().add(&sample_noise(&self.noise, seed)).expect("problem layouts agree")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::staggered::DensityProfile;

    fn small() -> (HorizontalGrid, StaggeredGrid) {
        let grid = HorizontalGrid::new(8, 8, 1.46).unwrap();
        let vgrid = StaggeredGrid::new(
            StaggeredGrid::graded_nodes(0.0, -8.0, 4, 1.3),
            &DensityProfile::Exponential { surface: 1.0, scale_height: 2.0 },
        )
        .unwrap();
        (grid, vgrid)
    }

    #[test]
    fn kernels_are_conjugate_symmetric() {
        let (grid, vgrid) = small();
        let ks = synth_kernels(&grid, &vgrid, &KernelConfig::default()).unwrap();
        assert_eq!(ks.n_a, 12);
        assert_eq!(ks.hermitian_residual(), 0.0);
    }

    #[test]
    fn gaussian_kernel_transform_shape() {
        let grid = HorizontalGrid::new(32, 32, 1.0).unwrap();
        let w = 3.0;
        let g = horizontal_shape(&grid, w, Shape::Gauss);
        let c = fft2_forward(&grid, &g).unwrap();
        for kx in 0..6 {
            let idx = grid.index(crate::fourier::Frequency::new(kx, 0));
            let (k, _) = grid.wavevector(grid.freq(idx));
            let expected = (-k * k * w * w / 2.0).exp();
            assert!((c[idx].re - expected).abs() < 1e-6, "kx={kx}: {} vs {expected}", c[idx].re);
        }
    }

    #[test]
    fn rejects_invalid_widths() {
        let (grid, vgrid) = small();
        let cfg = KernelConfig { branch_widths: vec![1.0, -1.0, 2.0, 3.0], ..KernelConfig::default() };
        assert!(synth_kernels(&grid, &vgrid, &cfg).is_err());
    }

    #[test]
    fn white_noise_config_gives_identity() {
        let (grid, _) = small();
        let nm = synth_noise_model(&grid, &NoiseConfig::white(5, 1.0)).unwrap();
        for b in &nm.blocks {
            assert!(max_abs(&(b - CMat::identity(5, 5))) < 1e-14);
        }
    }

    #[test]
    fn averaging_time_scales_covariance() {
        let (grid, _) = small();
        let cfg = NoiseConfig::desk(4, 1.0);
        let a = synth_noise_model(&grid, &cfg).unwrap();
        let b = synth_noise_model(&grid, &NoiseConfig { averaging_time: 2.0, ..cfg }).unwrap();
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert!(max_abs(&(x * re(0.5) - y)) < 1e-14);
        }
    }

    #[test]
    fn desk_noise_is_positive_definite_everywhere() {
        let grid = HorizontalGrid::new(32, 32, 1.46).unwrap();
        let nm = synth_noise_model(&grid, &NoiseConfig::desk(4, 1.0)).unwrap();
        assert!(nm.min_eigenvalue() > 0.0);
    }

    #[test]
    fn perfect_correlation_is_rejected() {
        let (grid, _) = small();
        let cfg = NoiseConfig { channel_correlation: 1.0, skew: 0.0, ..NoiseConfig::desk(4, 1.0) };
        assert!(matches!(synth_noise_model(&grid, &cfg), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn noise_is_reproducible_and_real() {
        let (grid, _) = small();
        let nm = synth_noise_model(&grid, &NoiseConfig::desk(4, 1.0)).unwrap();
        let a = sample_noise(&nm, 7);
        let b = sample_noise(&nm, 7);
        let c = sample_noise(&nm, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.hermitian_residual(), 0.0);
        assert!(a.to_space().is_ok());
    }

    #[test]
    fn supergranule_is_mass_conserving() {
        let (grid, vgrid) = small();
        let v = synth_supergranule(&grid, &vgrid, &SupergranuleConfig::default()).unwrap();
        assert!(v.div_residual(&vgrid) <= 1e-12);
        assert!(v.field.hermitian_residual() < 1e-12);
        let zero = synth_supergranule(&grid, &vgrid, &SupergranuleConfig { peak_horizontal: 0.0, ..Default::default() })
            .unwrap();
        assert_eq!(zero.field.norm_sqr(), 0.0);
    }

    #[test]
    fn forward_is_linear_and_frequency_local() {
        let (grid, vgrid) = small();
        let ks = synth_kernels(&grid, &vgrid, &KernelConfig::default()).unwrap();
        let v = synth_supergranule(&grid, &vgrid, &SupergranuleConfig::default()).unwrap().field;
        let zero = FourierField::zeros(grid, vgrid.dim_x());
        assert_eq!(apply_forward(&ks, &zero).unwrap().norm_sqr(), 0.0);

        let idx = grid.index(crate::fourier::Frequency::new(1, 2));
        let mut single = FourierField::zeros(grid, vgrid.dim_x());
        single.set(idx, &v.get(idx)).unwrap();
        single.set(grid.conj_index(idx), &v.get(grid.conj_index(idx))).unwrap();
        let tau = apply_forward(&ks, &single).unwrap();
        for i in 0..grid.n_freq() {
            if i != idx && i != grid.conj_index(idx) {
                assert_eq!(tau.get(i).norm(), 0.0);
            }
        }
        let two = apply_forward(&ks, &v.scale(2.0)).unwrap();
        let one = apply_forward(&ks, &v).unwrap();
        assert!(two.sub(&one.scale(2.0)).unwrap().norm_sqr() <= 1e-28 * two.norm_sqr());
    }
}
