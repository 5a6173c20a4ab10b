//! Periodic horizontal grids and their Fourier-block representation.
//!
//! Coefficients follow `c_k = N^{-1} sum_r f(r) exp(-i k.r)` with the inverse
//! `f(r) = sum_k c_k exp(i k.r)`, the discrete counterpart of the
//! `(2 pi)^{-2}` normalized integral on `[-pi, pi]^2`. With the periodic
//! convolution `(a * b)(r) = N^{-1} sum_{r'} a(r - r') b(r')` the transform of a
//! convolution is the plain pointwise product of the transforms.
//!
//! Frequencies are stored row-major over `(k_y, k_x)` in FFT-shifted order,
//! so `k = (0, 0)` lives at row `n_y / 2`, column `n_x / 2`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, ZERO};

/// Imaginary residue tolerated (relative to the field magnitude) when returning to real space.
pub const REALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frequency {
    pub kx: i32,
    pub ky: i32,
}

impl Frequency {
    pub const ZERO: Frequency = Frequency { kx: 0, ky: 0 };

    pub fn new(kx: i32, ky: i32) -> Self {
        Frequency { kx, ky }
    }

    pub fn is_zero(&self) -> bool {
        self.kx == 0 && self.ky == 0
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.kx, self.ky)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalGrid {
    pub nx: usize,
    pub ny: usize,
    /// Sample spacing in Mm.
    pub h: f64,
    /// Zero-padding multiplier applied to both directions.
    #[serde(default = "default_pad")]
    pub pad_factor: usize,
}

fn default_pad() -> usize {
    1
}

impl HorizontalGrid {
    pub const DEFAULT_SPACING: f64 = 1.46;

    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self> {
        Self::with_padding(nx, ny, h, 1)
    }

    pub fn with_padding(nx: usize, ny: usize, h: f64, pad_factor: usize) -> Result<Self> {
        let grid = HorizontalGrid { nx, ny, h, pad_factor };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 || !self.nx.is_multiple_of(2) || !self.ny.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_x = {}, n_y = {} must be even and at least 4",
                self.nx, self.ny
            )));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing h = {} must be positive", self.h)));
        }
        if self.pad_factor < 1 {
            return Err(Error::InvalidGrid("pad_factor must be at least 1".into()));
        }
        Ok(())
    }

    /// Transform size in x (padded).
    pub fn fx(&self) -> usize {
        self.nx * self.pad_factor
    }

    pub fn fy(&self) -> usize {
        self.ny * self.pad_factor
    }

    pub fn n_freq(&self) -> usize {
        self.fx() * self.fy()
    }

    /// Number of points in the (padded) space domain; equals `n_freq`.
    pub fn n_space(&self) -> usize {
        self.n_freq()
    }

    pub fn freq(&self, idx: usize) -> Frequency {
        let (fx, fy) = (self.fx(), self.fy());
        let iy = idx / fx;
        let ix = idx % fx;
        Frequency { kx: ix as i32 - (fx / 2) as i32, ky: iy as i32 - (fy / 2) as i32 }
    }

    /// Index of a frequency; components are wrapped into the stored lattice.
    pub fn index(&self, f: Frequency) -> usize {
        let (fx, fy) = (self.fx() as i32, self.fy() as i32);
        let ix = (f.kx + fx / 2).rem_euclid(fx) as usize;
        let iy = (f.ky + fy / 2).rem_euclid(fy) as usize;
        iy * self.fx() + ix
    }

    pub fn conj_index(&self, idx: usize) -> usize {
        let f = self.freq(idx);
        self.index(Frequency::new(-f.kx, -f.ky))
    }

    pub fn is_self_conjugate(&self, idx: usize) -> bool {
        self.conj_index(idx) == idx
    }

    /// One representative per conjugate pair (the smaller index).
    pub fn is_canonical(&self, idx: usize) -> bool {
        idx <= self.conj_index(idx)
    }

    /// Frequencies on the Nyquist lines, whose derivative multipliers have no
    /// conjugate-consistent representation.
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let f = self.freq(idx);
        f.kx == -(self.fx() as i32) / 2 || f.ky == -(self.fy() as i32) / 2
    }

    /// Canonical representatives of all conjugate pairs, in storage order.
    pub fn canonical_indices(&self) -> Vec<usize> {
        (0..self.n_freq()).filter(|&i| self.is_canonical(i)).collect()
    }

    pub fn zero_index(&self) -> usize {
        self.index(Frequency::ZERO)
    }

    /// Physical wavevector in rad/Mm.
    pub fn wavevector(&self, f: Frequency) -> (f64, f64) {
        (
            2.0 * PI * f.kx as f64 / (self.fx() as f64 * self.h),
            2.0 * PI * f.ky as f64 / (self.fy() as f64 * self.h),
        )
    }

    /// Whether a padded space sample lies inside the physical `n_x x n_y` window.
    pub fn in_window(&self, space_idx: usize) -> bool {
        let iy = space_idx / self.fx();
        let ix = space_idx % self.fx();
        ix < self.nx && iy < self.ny
    }

    /// Signed periodic offset (in samples) of a space index from the origin.
    pub fn offset(&self, space_idx: usize) -> (i64, i64) {
        let (fx, fy) = (self.fx() as i64, self.fy() as i64);
        let iy = (space_idx / self.fx()) as i64;
        let ix = (space_idx % self.fx()) as i64;
        let wrap = |i: i64, n: i64| if i >= n / 2 { i - n } else { i };
        (wrap(ix, fx), wrap(iy, fy))
    }

    /// Places an `n_y x n_x` field into the padded domain (zeros outside the window).
    pub fn pad_space(&self, data: &[f64]) -> Result<Vec<f64>> {
        if data.len() != self.nx * self.ny {
            return Err(Error::DimensionMismatch(format!(
                "field has {} samples, grid window has {}",
                data.len(),
                self.nx * self.ny
            )));
        }
        let mut out = vec![0.0; self.n_space()];
        for iy in 0..self.ny {
            out[iy * self.fx()..iy * self.fx() + self.nx]
                .copy_from_slice(&data[iy * self.nx..(iy + 1) * self.nx]);
        }
        Ok(out)
    }

    pub fn crop_space(&self, data: &[f64]) -> Result<Vec<f64>> {
        self.check_space(data.len())?;
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            out.extend_from_slice(&data[iy * self.fx()..iy * self.fx() + self.nx]);
        }
        Ok(out)
    }

    fn check_space(&self, len: usize) -> Result<()> {
        if len != self.n_space() {
            return Err(Error::DimensionMismatch(format!(
                "space array has {len} samples, grid expects {}",
                self.n_space()
            )));
        }
        Ok(())
    }
}

/// Forward transform of one real (padded) space array, in shifted storage order.
pub fn fft2_forward(grid: &HorizontalGrid, data: &[f64]) -> Result<Vec<Complex64>> {
    grid.check_space(data.len())?;
    let buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let raw = fft2_raw(grid, buf, false);
    let scale = 1.0 / grid.n_freq() as f64;
    let (fx, fy) = (grid.fx(), grid.fy());
    let mut out = vec![ZERO; grid.n_freq()];
    for iy in 0..fy {
        for ix in 0..fx {
            let sy = (iy + fy / 2) % fy;
            let sx = (ix + fx / 2) % fx;
            out[sy * fx + sx] = raw[iy * fx + ix] * scale;
        }
    }
    Ok(out)
}

/// Inverse transform to a real space array.
///
/// Imaginary residue up to [`REALITY_TOLERANCE`] (relative) is dropped;
/// larger residue means the coefficients are not conjugate symmetric.
pub fn fft2_inverse(grid: &HorizontalGrid, coeffs: &[Complex64]) -> Result<Vec<f64>> {
    let values = fft2_inverse_complex(grid, coeffs)?;
    let scale = values.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let residue = values.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    if residue > REALITY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::HermitianViolation {
            residual: residue / scale,
            tolerance: REALITY_TOLERANCE,
        });
    }
    Ok(values.into_iter().map(|z| z.re).collect())
}

pub fn fft2_inverse_complex(grid: &HorizontalGrid, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    if coeffs.len() != grid.n_freq() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a grid with {} frequencies",
            coeffs.len(),
            grid.n_freq()
        )));
    }
    let (fx, fy) = (grid.fx(), grid.fy());
    let mut buf = vec![ZERO; grid.n_freq()];
    for sy in 0..fy {
        for sx in 0..fx {
            let iy = (sy + fy - fy / 2) % fy;
            let ix = (sx + fx - fx / 2) % fx;
            buf[iy * fx + ix] = coeffs[sy * fx + sx];
        }
    }
    Ok(fft2_raw(grid, buf, true))
}

fn fft2_raw(grid: &HorizontalGrid, mut buf: Vec<Complex64>, inverse: bool) -> Vec<Complex64> {
    let (fx, fy) = (grid.fx(), grid.fy());
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(fx), planner.plan_fft_inverse(fy))
    } else {
        (planner.plan_fft_forward(fx), planner.plan_fft_forward(fy))
    };
    for chunk in buf.chunks_mut(fx) {
        row.process(chunk);
    }
    let mut column = vec![ZERO; fy];
    for ix in 0..fx {
        for iy in 0..fy {
            column[iy] = buf[iy * fx + ix];
        }
        col.process(&mut column);
        for iy in 0..fy {
            buf[iy * fx + ix] = column[iy];
        }
    }
    buf
}

/// Periodic convolution `(a * b)(r) = N^{-1} sum_{r'} a(r - r') b(r')`, evaluated directly.
pub fn periodic_convolve(grid: &HorizontalGrid, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    grid.check_space(a.len())?;
    grid.check_space(b.len())?;
    let (fx, fy) = (grid.fx(), grid.fy());
    let n = grid.n_space() as f64;
    let mut out = vec![0.0; grid.n_space()];
    for y in 0..fy {
        for x in 0..fx {
            let mut acc = 0.0;
            for yp in 0..fy {
                let dy = (y + fy - yp) % fy;
                for xp in 0..fx {
                    let dx = (x + fx - xp) % fx;
                    acc += a[dy * fx + dx] * b[yp * fx + xp];
                }
            }
            out[y * fx + x] = acc / n;
        }
    }
    Ok(out)
}

/// Multi-component field in Fourier space, one coefficient vector per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierField {
    pub grid: HorizontalGrid,
    pub n_comp: usize,
    /// Frequency-major: `coeffs[idx * n_comp + c]`.
    pub coeffs: Vec<Complex64>,
}

impl FourierField {
    pub fn zeros(grid: HorizontalGrid, n_comp: usize) -> Self {
        FourierField { grid, n_comp, coeffs: vec![ZERO; grid.n_freq() * n_comp] }
    }

    pub fn from_blocks(grid: HorizontalGrid, blocks: &[CVec]) -> Result<Self> {
        if blocks.len() != grid.n_freq() {
            return Err(Error::DimensionMismatch(format!(
                "{} blocks for {} frequencies",
                blocks.len(),
                grid.n_freq()
            )));
        }
        let n_comp = blocks.first().map_or(0, |b| b.len());
        let mut field = FourierField::zeros(grid, n_comp);
        for (idx, b) in blocks.iter().enumerate() {
            field.set(idx, b)?;
        }
        Ok(field)
    }

    /// Transforms each space-domain component (padded layout).
    pub fn from_space(grid: HorizontalGrid, components: &[Vec<f64>]) -> Result<Self> {
        let n_comp = components.len();
        let mut field = FourierField::zeros(grid, n_comp);
        for (c, data) in components.iter().enumerate() {
            let coeffs = fft2_forward(&grid, data)?;
            for (idx, z) in coeffs.into_iter().enumerate() {
                field.coeffs[idx * n_comp + c] = z;
            }
        }
        Ok(field)
    }

    pub fn to_space(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n_comp).map(|c| fft2_inverse(&self.grid, &self.component(c))).collect()
    }

    /// All frequency coefficients of one component.
    pub fn component(&self, c: usize) -> Vec<Complex64> {
        (0..self.grid.n_freq()).map(|idx| self.coeffs[idx * self.n_comp + c]).collect()
    }

    pub fn get(&self, idx: usize) -> CVec {
        CVec::from_column_slice(&self.coeffs[idx * self.n_comp..(idx + 1) * self.n_comp])
    }

    pub fn set(&mut self, idx: usize, v: &CVec) -> Result<()> {
        if v.len() != self.n_comp {
            return Err(Error::DimensionMismatch(format!(
                "block of length {} for a field with {} components",
                v.len(),
                self.n_comp
            )));
        }
        self.coeffs[idx * self.n_comp..(idx + 1) * self.n_comp].copy_from_slice(v.as_slice());
        Ok(())
    }

    /// Largest deviation `|c(k) - conj(c(-k))|` over all frequencies and components.
    pub fn hermitian_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for idx in 0..self.grid.n_freq() {
            let cj = self.grid.conj_index(idx);
            for c in 0..self.n_comp {
                let d = self.coeffs[idx * self.n_comp + c] - self.coeffs[cj * self.n_comp + c].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|z| *z *= s);
        out
    }

    pub fn add(&self, other: &FourierField) -> Result<Self> {
        if self.grid != other.grid || self.n_comp != other.n_comp {
            return Err(Error::DimensionMismatch("field layouts differ".into()));
        }
        let mut out = self.clone();
        out.coeffs.iter_mut().zip(&other.coeffs).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn sub(&self, other: &FourierField) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }
}

/// Evaluates `f` on canonical frequencies (in parallel) and fills the
/// conjugate partners with `conj(f(k))`; self-conjugate blocks keep their real part.
pub fn map_conjugate_pairs<F>(grid: &HorizontalGrid, f: F) -> Result<Vec<CMat>>
where
    F: Fn(usize) -> Result<CMat> + Sync,
{
    let canon = grid.canonical_indices();
    let computed: Vec<CMat> = canon.par_iter().map(|&idx| f(idx)).collect::<Result<_>>()?;
    let mut out: Vec<Option<CMat>> = vec![None; grid.n_freq()];
    for (idx, m) in canon.into_iter().zip(computed) {
        let cj = grid.conj_index(idx);
        if cj == idx {
            out[idx] = Some(m.map(|z| Complex64::new(z.re, 0.0)));
        } else {
            out[cj] = Some(m.conjugate());
            out[idx] = Some(m);
        }
    }
    Ok(out.into_iter().map(|m| m.expect("every frequency has a canonical partner")).collect())
}

/// Replaces each conjugate pair by its Hermitian-symmetric average.
pub fn enforce_hermitian(ff: &FourierField) -> FourierField {
    let mut out = ff.clone();
    let n = ff.n_comp;
    for idx in 0..ff.grid.n_freq() {
        let cj = ff.grid.conj_index(idx);
        if cj < idx {
            continue;
        }
        for c in 0..n {
            let a = ff.coeffs[idx * n + c];
            let b = ff.coeffs[cj * n + c];
            let avg = (a + b.conj()) * 0.5;
            out.coeffs[idx * n + c] = avg;
            out.coeffs[cj * n + c] = avg.conj();
        }
    }
    out
}
