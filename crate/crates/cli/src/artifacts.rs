//! On-disk layouts of the pipeline arrays and the JSON provenance records.
//!
//! Frequency-domain blocks are stored as complex128 `[f_y, f_x, rows, cols]` in the
//! shifted storage order of the grid (zero frequency at `(f_y/2, f_x/2)`); fields are
//! stored in the space domain as float64 `[components, f_y, f_x]`.

use std::collections::BTreeMap;
use std::path::Path;

use helioinv_core::forward::{KernelSet, NoiseModel};
use helioinv_core::linalg::CMat;
use helioinv_core::spectral::EstimatorSet;
use helioinv_core::{FourierField, HorizontalGrid, StaggeredGrid};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::hif::HifArray;

pub const KERNELS: &str = "kernels.hif";
pub const NOISECOV: &str = "noisecov.hif";
pub const TRUTH: &str = "truth.hif";
pub const TRAVELTIMES: &str = "traveltimes.hif";
pub const MANIFEST: &str = "manifest.json";
pub const RECONSTRUCTION: &str = "reconstruction.hif";
pub const ESTIMATOR: &str = "estimator.hif";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub dims: Vec<u64>,
    pub dtype: String,
}

/// Hashes of the files a command read and wrote.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub files: BTreeMap<String, FileEntry>,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig) -> Self {
        Provenance { config_hash: config.hash(), ..Default::default() }
    }

    /// Writes `array` to `dir/name` and records its hash.
    pub fn write(&mut self, dir: &Path, name: &str, array: &HifArray) -> CliResult<()> {
        let bytes = array.write(&dir.join(name))?;
        self.files.insert(
            name.to_string(),
            FileEntry { sha256: sha256_hex(&bytes), dims: array.dims.clone(), dtype: array.dtype_name().into() },
        );
        Ok(())
    }

    pub fn write_text(&mut self, dir: &Path, name: &str, text: &str) -> CliResult<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(name.to_string(), FileEntry { sha256: sha256_hex(text.as_bytes()), dims: vec![], dtype: "text".into() });
        Ok(())
    }

    /// Reads `dir/name` and records its hash as an input under `label`.
    pub fn read(&mut self, dir: &Path, name: &str, label: &str) -> CliResult<HifArray> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.inputs.insert(label.to_string(), sha256_hex(&bytes));
        HifArray::from_bytes(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }

    pub fn read_json(&mut self, dir: &Path, name: &str, label: &str) -> CliResult<String> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        self.inputs.insert(label.to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }
}

/// Record written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub provenance: Provenance,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value).expect("records serialize") + "\n";
    std::fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    Ok(text)
}

fn grid_dims(grid: &HorizontalGrid) -> [u64; 2] {
    [grid.fy() as u64, grid.fx() as u64]
}

pub fn blocks_to_hif(grid: &HorizontalGrid, blocks: &[CMat]) -> CliResult<HifArray> {
    let (rows, cols) = blocks.first().map_or((0, 0), |b| b.shape());
    let mut data = Vec::with_capacity(blocks.len() * rows * cols);
    for b in blocks {
        for i in 0..rows {
            for j in 0..cols {
                data.push(b[(i, j)]);
            }
        }
    }
    let [fy, fx] = grid_dims(grid);
    HifArray::complex(vec![fy, fx, rows as u64, cols as u64], data)
}

pub fn hif_to_blocks(grid: &HorizontalGrid, array: HifArray, what: &str) -> CliResult<Vec<CMat>> {
    let dims = array.dims.clone();
    let [fy, fx] = grid_dims(grid);
    if dims.len() != 4 || dims[0] != fy || dims[1] != fx {
        return Err(CliError::Format(format!("{what} has dims {dims:?}, grid needs [{fy}, {fx}, rows, cols]")));
    }
    let (rows, cols) = (dims[2] as usize, dims[3] as usize);
    let data = array.into_complex()?;
    Ok(data.chunks(rows * cols).map(|c| CMat::from_row_slice(rows, cols, c)).collect())
}

pub fn field_to_hif(field: &FourierField) -> CliResult<HifArray> {
    let space = field.to_space()?;
    let [fy, fx] = grid_dims(&field.grid);
    HifArray::real(vec![field.n_comp as u64, fy, fx], space.concat())
}

pub fn hif_to_field(grid: &HorizontalGrid, array: HifArray, n_comp: usize, what: &str) -> CliResult<FourierField> {
    let dims = array.dims.clone();
    let [fy, fx] = grid_dims(grid);
    if dims != [n_comp as u64, fy, fx] {
        return Err(CliError::Format(format!("{what} has dims {dims:?}, expected [{n_comp}, {fy}, {fx}]")));
    }
    let data = array.into_real()?;
    let comps: Vec<Vec<f64>> = data.chunks(grid.n_space()).map(|c| c.to_vec()).collect();
    Ok(FourierField::from_space(*grid, &comps)?)
}

/// Everything `synth` produced, read back from a directory.
pub struct SynthInputs {
    pub config: ExperimentConfig,
    pub grid: HorizontalGrid,
    pub vgrid: StaggeredGrid,
    pub kernels: KernelSet,
    pub noise: NoiseModel,
    pub traveltimes: FourierField,
    pub truth: Option<FourierField>,
}

pub fn load_synth(dir: &Path, prov: &mut Provenance) -> CliResult<SynthInputs> {
    let text = prov.read_json(dir, MANIFEST, MANIFEST)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let config = manifest.config;
    let p = &config.problem;
    let grid = HorizontalGrid::with_padding(p.nx, p.ny, p.spacing, p.pad_factor)?;
    let vgrid = StaggeredGrid::new(p.z_nodes.clone(), &p.density)?;
    let kblocks = hif_to_blocks(&grid, prov.read(dir, KERNELS, KERNELS)?, KERNELS)?;
    let kernels = KernelSet::from_blocks(grid, vgrid.clone(), kblocks)?;
    let nblocks = hif_to_blocks(&grid, prov.read(dir, NOISECOV, NOISECOV)?, NOISECOV)?;
    let noise = NoiseModel::new(grid, nblocks)?;
    let traveltimes = hif_to_field(&grid, prov.read(dir, TRAVELTIMES, TRAVELTIMES)?, kernels.n_a, TRAVELTIMES)?;
    let truth = if dir.join(TRUTH).exists() {
        Some(hif_to_field(&grid, prov.read(dir, TRUTH, TRUTH)?, vgrid.dim_x(), TRUTH)?)
    } else {
        None
    };
    Ok(SynthInputs { config, grid, vgrid, kernels, noise, traveltimes, truth })
}

pub fn estimator_to_hif(est: &EstimatorSet) -> CliResult<HifArray> {
    blocks_to_hif(&est.grid, &est.blocks)
}
