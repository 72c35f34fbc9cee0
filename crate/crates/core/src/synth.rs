//! Synthetic labeled scenes and analytic oracles.
//!
//! A scene is a set of (variety, class) groups. Each group's pixels are drawn
//! from a 9-band Gaussian, quantized to integer digital numbers, and laid
//! out in rectangular blocks packed onto one raster grid. The same draw is
//! emitted both as band rasters plus block polygons and as a direct
//! [`FeatureTable`], so extraction can be checked against the source.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTable, Label};
use crate::error::{Error, Result};
use crate::geodata::{self, Band, BandRaster, BandStack, BlockFeature, Spectrum, DEFAULT_NODATA, DEFAULT_SCALE};
use crate::indices::{self, BandRoleMap};
use crate::matrix::Matrix;
use crate::{derive_seed, seeds};

/// Pixel counts per variety from the field survey: (positive, negative).
pub const TABLE1_COUNTS: [(&str, usize, usize); 5] = [
    ("Q200", 145, 389),
    ("Q208", 869, 649),
    ("Q240", 766, 573),
    ("Q253", 886, 1769),
    ("SRA14", 88, 89),
];

/// Healthy-cane reflectance by band, in [`Band::ALL`] order.
const BASE_REFLECTANCE: [f64; 9] = [0.040, 0.075, 0.050, 0.110, 0.250, 0.300, 0.330, 0.200, 0.100];

/// Direction of the disease shift per unit of separation: lower NIR,
/// higher SWIR (less leaf water).
const DISEASE_SHIFT: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.010, 0.020, 0.020];

const BAND_SD: [f64; 9] = [0.004, 0.005, 0.005, 0.006, 0.008, 0.009, 0.010, 0.010, 0.010];

/// Background cells outside every block, as digital numbers.
const SOIL_DN: [f64; 9] = [900.0, 1200.0, 1500.0, 1700.0, 1900.0, 2000.0, 2100.0, 2600.0, 2300.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub variety: String,
    pub label: Label,
    pub count: usize,
    pub mean: [f64; 9],
    /// 9x9 covariance, row-major.
    pub cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub classes: Vec<ClassSpec>,
    /// Fraction of extra cells per group written as nodata.
    #[serde(default)]
    pub nodata_rate: f64,
    #[serde(default = "default_pixel_size")]
    pub pixel_size: f64,
    #[serde(default = "default_origin_x")]
    pub origin_x: f64,
    #[serde(default = "default_origin_y")]
    pub origin_y: f64,
    /// Blocks are at most `block_side` x `block_side` pixels.
    #[serde(default = "default_block_side")]
    pub block_side: usize,
    /// Scene width in pixels used for shelf packing.
    #[serde(default = "default_scene_width")]
    pub scene_width: usize,
}

fn default_pixel_size() -> f64 {
    20.0
}
fn default_origin_x() -> f64 {
    500_000.0
}
fn default_origin_y() -> f64 {
    7_600_000.0
}
fn default_block_side() -> usize {
    10
}
fn default_scene_width() -> usize {
    120
}

fn diag_cov(sd: &[f64; 9]) -> Vec<f64> {
    let mut c = vec![0.0; 81];
    for i in 0..9 {
        c[i * 9 + i] = sd[i] * sd[i];
    }
    c
}

impl SynthConfig {
    /// Five varieties with the survey's class counts. `separation` scales the
    /// disease shift; 0 makes the classes identical.
    pub fn table1_fixture(separation: f64, seed: u64) -> Self {
        let mut classes = Vec::new();
        for (v, (name, pos, neg)) in TABLE1_COUNTS.iter().enumerate() {
            // small per-variety offset so pooled data is not one Gaussian
            let offset = 0.004 * (v as f64 - 2.0);
            let mut healthy = BASE_REFLECTANCE;
            for b in 4..9 {
                healthy[b] += offset;
            }
            let mut diseased = healthy;
            for b in 0..9 {
                diseased[b] += separation * DISEASE_SHIFT[b];
            }
            for (label, count, mean) in [(Label::Positive, *pos, diseased), (Label::Negative, *neg, healthy)] {
                classes.push(ClassSpec {
                    variety: name.to_string(),
                    label,
                    count,
                    mean,
                    cov: diag_cov(&BAND_SD),
                });
            }
        }
        SynthConfig {
            seed,
            classes,
            nodata_rate: 0.02,
            pixel_size: default_pixel_size(),
            origin_x: default_origin_x(),
            origin_y: default_origin_y(),
            block_side: default_block_side(),
            scene_width: default_scene_width(),
        }
    }

    /// Keeps only the named varieties.
    pub fn restrict_to(mut self, varieties: &[&str]) -> Self {
        self.classes.retain(|c| varieties.contains(&c.variety.as_str()));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("synthetic config has no classes".into()));
        }
        if !(0.0..1.0).contains(&self.nodata_rate) {
            return Err(Error::Config(format!("nodata_rate {} not in [0, 1)", self.nodata_rate)));
        }
        if !(self.pixel_size > 0.0) || self.block_side == 0 || self.scene_width < self.block_side {
            return Err(Error::Config("pixel_size, block_side and scene_width must be positive".into()));
        }
        for c in &self.classes {
            cholesky9(&c.cov).map_err(|m| Error::Config(format!("{} {}: {m}", c.variety, c.label)))?;
        }
        Ok(())
    }

    /// The two class Gaussians of one variety.
    pub fn class_pair(&self, variety: &str) -> Result<TwoClassGaussian> {
        let find = |l: Label| {
            self.classes
                .iter()
                .find(|c| c.variety == variety && c.label == l)
                .ok_or_else(|| Error::Config(format!("no {l} class for variety {variety}")))
        };
        let (p, n) = (find(Label::Positive)?, find(Label::Negative)?);
        let total = (p.count + n.count) as f64;
        TwoClassGaussian::new(
            p.mean.to_vec(),
            Matrix::new(9, 9, p.cov.clone())?,
            n.mean.to_vec(),
            Matrix::new(9, 9, n.cov.clone())?,
            p.count as f64 / total,
        )
    }
}

fn cholesky9(cov: &[f64]) -> std::result::Result<DMatrix<f64>, String> {
    if cov.len() != 81 {
        return Err(format!("covariance has {} entries, expected 81", cov.len()));
    }
    let m = DMatrix::from_row_slice(9, 9, cov);
    if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err("covariance is not symmetric".into());
    }
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| "covariance is not positive definite".into())
}

/// A generated scene: rasters, block polygons, and the directly computed features.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub stack: BandStack,
    pub blocks: Vec<BlockFeature>,
    pub table: FeatureTable,
}

struct BlockCells {
    group: usize,
    block_id: String,
    col: usize,
    row: usize,
    width: usize,
    height: usize,
}

/// Splits `cells` into full square blocks, one block of full rows, and one
/// partial strip, as (width, height) pairs.
fn block_shapes(cells: usize, side: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(side, side); cells / (side * side)];
    let rest = cells % (side * side);
    if rest / side > 0 {
        out.push((side, rest / side));
    }
    if !rest.is_multiple_of(side) {
        out.push((rest % side, 1));
    }
    out
}

/// Draws one quantized spectrum whose 19 indices are all defined.
fn draw_spectrum(mean: &[f64; 9], chol: &DMatrix<f64>, roles: &BandRoleMap, rng: &mut seeds::Rng) -> Result<[f64; 9]> {
    for _ in 0..10_000 {
        let z = DVector::<f64>::from_fn(9, |_, _| StandardNormal.sample(rng));
        let x = chol * z;
        let mut refl = [0.0; 9];
        let mut ok = true;
        for b in 0..9 {
            let dn = ((mean[b] + x[b]) / DEFAULT_SCALE).round();
            if dn < 1.0 {
                ok = false;
                break;
            }
            refl[b] = dn * DEFAULT_SCALE;
        }
        if ok && indices::feature_row(&Spectrum(refl), roles).is_ok() {
            return Ok(refl);
        }
    }
    Err(Error::Config("class distribution rarely yields valid spectra".into()))
}

pub fn generate_synthetic_scene(config: &SynthConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let roles = BandRoleMap::default();

    // group sizes including nodata extras
    let plan: Vec<(usize, usize)> = config
        .classes
        .iter()
        .map(|c| {
            let extra = (c.count as f64 * config.nodata_rate).round() as usize;
            (c.count, extra)
        })
        .collect();

    // shelf packing with one-pixel gaps
    let mut blocks: Vec<BlockCells> = Vec::new();
    let (mut col, mut row, mut shelf_h) = (0usize, 0usize, 0usize);
    for (g, (c, &(valid, extra))) in config.classes.iter().zip(&plan).enumerate() {
        for (k, (w, h)) in block_shapes(valid + extra, config.block_side).into_iter().enumerate() {
            if col + w > config.scene_width {
                col = 0;
                row += shelf_h + 1;
                shelf_h = 0;
            }
            let tag = if c.label.is_positive() { "P" } else { "N" };
            blocks.push(BlockCells {
                group: g,
                block_id: format!("{}-{}-{:03}", c.variety, tag, k),
                col,
                row,
                width: w,
                height: h,
            });
            col += w + 1;
            shelf_h = shelf_h.max(h);
        }
    }
    let width = config.scene_width;
    let height = row + shelf_h;

    // per-group draws: spectra for valid cells plus the nodata cell choice
    let groups: Vec<(Vec<[f64; 9]>, Vec<(usize, usize)>)> = config
        .classes
        .par_iter()
        .zip(&plan)
        .enumerate()
        .map(|(g, (c, &(valid, extra)))| -> Result<_> {
            let chol = cholesky9(&c.cov).map_err(Error::Config)?;
            let mut rng = seeds::rng(derive_seed!(config.seed, "synth_group", g));
            let spectra = (0..valid)
                .map(|_| draw_spectrum(&c.mean, &chol, &roles, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            // (cell offset within the group, band made nodata)
            let mut holes: Vec<(usize, usize)> = index::sample(&mut rng, valid + extra, extra)
                .into_iter()
                .map(|i| (i, rng.random_range(0..9)))
                .collect();
            holes.sort_unstable();
            Ok((spectra, holes))
        })
        .collect::<Result<_>>()?;

    // paint rasters and record, per cell, which group cell it holds
    let mut values: Vec<Vec<f64>> = (0..9)
        .map(|b| vec![SOIL_DN[b] * DEFAULT_SCALE; width * height])
        .collect();
    let mut cell_owner: Vec<Option<(usize, usize)>> = vec![None; width * height];
    let mut group_cursor = vec![0usize; config.classes.len()];
    for blk in &blocks {
        for r in 0..blk.height {
            for cc in 0..blk.width {
                let cell = (blk.row + r) * width + blk.col + cc;
                cell_owner[cell] = Some((blk.group, group_cursor[blk.group]));
                group_cursor[blk.group] += 1;
            }
        }
    }
    let mut valid_of_cell: Vec<Option<(usize, usize)>> = vec![None; width * height];
    for (cell, owner) in cell_owner.iter().enumerate() {
        let Some((g, offset)) = *owner else { continue };
        let (spectra, holes) = &groups[g];
        match holes.binary_search_by_key(&offset, |h| h.0) {
            Ok(h) => {
                let band = holes[h].1;
                for (b, v) in values.iter_mut().enumerate() {
                    v[cell] = SOIL_DN[b] * DEFAULT_SCALE;
                }
                values[band][cell] = DEFAULT_NODATA;
            }
            Err(before) => {
                let idx = offset - before;
                for (b, v) in values.iter_mut().enumerate() {
                    v[cell] = spectra[idx][b];
                }
                valid_of_cell[cell] = Some((g, idx));
            }
        }
    }

    let rasters: Vec<BandRaster> = Band::ALL
        .iter()
        .zip(values)
        .map(|(&band, values)| BandRaster {
            band,
            width,
            height,
            origin_x: config.origin_x,
            origin_y: config.origin_y,
            pixel_size: config.pixel_size,
            nodata: DEFAULT_NODATA,
            values,
        })
        .collect();
    let stack = BandStack::new(rasters)?;

    let ps = config.pixel_size;
    let features: Vec<BlockFeature> = blocks
        .iter()
        .map(|b| {
            let c = &config.classes[b.group];
            let x0 = config.origin_x + b.col as f64 * ps;
            let x1 = config.origin_x + (b.col + b.width) as f64 * ps;
            let y0 = config.origin_y - b.row as f64 * ps;
            let y1 = config.origin_y - (b.row + b.height) as f64 * ps;
            let ring = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
            BlockFeature {
                block_id: b.block_id.clone(),
                variety: c.variety.clone(),
                rsd_status: c.label,
                rings: vec![ring],
            }
        })
        .collect();

    // direct table in raster scan order, without touching the polygons
    let block_of_cell = {
        let mut v: Vec<usize> = vec![usize::MAX; width * height];
        for (bi, b) in blocks.iter().enumerate() {
            for r in 0..b.height {
                for cc in 0..b.width {
                    v[(b.row + r) * width + b.col + cc] = bi;
                }
            }
        }
        v
    };
    let mut matrix = Matrix::empty(indices::N_FEATURES);
    let (mut labels, mut varieties, mut block_ids) = (Vec::new(), Vec::new(), Vec::new());
    for (cell, v) in valid_of_cell.iter().enumerate() {
        let Some((g, idx)) = *v else { continue };
        let row = indices::feature_row(&Spectrum(groups[g].0[idx]), &roles)
            .map_err(|(i, e)| Error::Numerical(format!("{}: {e:?}", i.name())))?;
        matrix.push_row(&row)?;
        labels.push(config.classes[g].label);
        varieties.push(config.classes[g].variety.clone());
        block_ids.push(blocks[block_of_cell[cell]].block_id.clone());
    }
    let table = FeatureTable::new(matrix, labels, varieties, block_ids, indices::feature_names())?;

    Ok(SyntheticScene {
        stack,
        blocks: features,
        table,
    })
}

/// Files written by [`write_scene`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneFiles {
    pub manifest: PathBuf,
    pub blocks: PathBuf,
    pub features: PathBuf,
}

/// Writes `bands/<band>.asc`, `manifest.json`, `blocks.geojson` and
/// `features.csv` under `dir`.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<SceneFiles> {
    let bands_dir = dir.join("bands");
    fs::create_dir_all(&bands_dir).map_err(|e| Error::io(&bands_dir, e))?;
    let mut files = BTreeMap::new();
    for r in scene.stack.rasters() {
        let rel = PathBuf::from("bands").join(format!("{}.asc", r.band));
        geodata::write_ascii_grid(r, &dir.join(&rel), DEFAULT_SCALE)?;
        files.insert(r.band, rel);
    }
    let manifest = dir.join("manifest.json");
    geodata::write_band_manifest(&manifest, &files)?;
    let blocks = dir.join("blocks.geojson");
    let text = serde_json::to_string_pretty(&geodata::blocks_to_geojson(&scene.blocks))?;
    fs::write(&blocks, text).map_err(|e| Error::io(&blocks, e))?;
    let features = dir.join("features.csv");
    scene.table.write_csv(&features)?;
    Ok(SceneFiles {
        manifest,
        blocks,
        features,
    })
}

/// Two Gaussian classes with a positive-class prior.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClassGaussian {
    pub mean_pos: Vec<f64>,
    pub cov_pos: Matrix,
    pub mean_neg: Vec<f64>,
    pub cov_neg: Matrix,
    pub prior_pos: f64,
    chol_pos: DMatrix<f64>,
    chol_neg: DMatrix<f64>,
}

impl TwoClassGaussian {
    pub fn new(mean_pos: Vec<f64>, cov_pos: Matrix, mean_neg: Vec<f64>, cov_neg: Matrix, prior_pos: f64) -> Result<Self> {
        let d = mean_pos.len();
        if mean_neg.len() != d || cov_pos.rows() != d || cov_pos.cols() != d || cov_neg.rows() != d || cov_neg.cols() != d {
            return Err(Error::Config("class means and covariances disagree in dimension".into()));
        }
        if !(prior_pos > 0.0 && prior_pos < 1.0) {
            return Err(Error::Config(format!("prior {prior_pos} not in (0, 1)")));
        }
        let chol = |m: &Matrix| {
            DMatrix::from_row_slice(d, d, m.as_slice())
                .cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::Config("covariance is not positive definite".into()))
        };
        Ok(TwoClassGaussian {
            chol_pos: chol(&cov_pos)?,
            chol_neg: chol(&cov_neg)?,
            mean_pos,
            cov_pos,
            mean_neg,
            cov_neg,
            prior_pos,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_pos.len()
    }

    fn draw(&self, label: Label, rng: &mut seeds::Rng) -> Vec<f64> {
        let (mean, chol) = match label {
            Label::Positive => (&self.mean_pos, &self.chol_pos),
            Label::Negative => (&self.mean_neg, &self.chol_neg),
        };
        let z = DVector::<f64>::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let x = chol * z;
        mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
    }

    /// Draws exactly `n_pos` positive and `n_neg` negative rows.
    pub fn sample(&self, n_pos: usize, n_neg: usize, seed: u64) -> (Matrix, Vec<Label>) {
        let mut rng = seeds::rng(seed);
        let mut x = Matrix::empty(self.dim());
        let mut y = Vec::with_capacity(n_pos + n_neg);
        for (label, n) in [(Label::Positive, n_pos), (Label::Negative, n_neg)] {
            for _ in 0..n {
                x.push_row(&self.draw(label, &mut rng)).expect("dimension fixed");
                y.push(label);
            }
        }
        (x, y)
    }

    fn log_density(mean: &[f64], chol: &DMatrix<f64>, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(mean.len(), x.iter().zip(mean).map(|(a, b)| a - b));
        let z = chol.solve_lower_triangular(&diff).expect("positive diagonal");
        let log_det: f64 = chol.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        -0.5 * log_det - 0.5 * z.norm_squared()
    }

    /// True log-posterior ratio, positive over negative.
    pub fn bayes_score(&self, x: &[f64]) -> f64 {
        self.prior_pos.ln() - (1.0 - self.prior_pos).ln() + Self::log_density(&self.mean_pos, &self.chol_pos, x)
            - Self::log_density(&self.mean_neg, &self.chol_neg, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub accuracy: f64,
    pub std_error: f64,
}

/// Monte-Carlo accuracy of the Bayes rule under the true parameters.
pub fn bayes_oracle_accuracy(model: &TwoClassGaussian, n_mc: usize, seed: u64) -> OracleEstimate {
    const CHUNK: usize = 10_000;
    let chunks = n_mc.div_ceil(CHUNK);
    let correct: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeds::rng(derive_seed!(seed, "bayes_mc", c));
            let n = CHUNK.min(n_mc - c * CHUNK);
            (0..n)
                .filter(|_| {
                    let label = Label::from_bool(rng.random::<f64>() < model.prior_pos);
                    let x = model.draw(label, &mut rng);
                    Label::from_bool(model.bayes_score(&x) > 0.0) == label
                })
                .count()
        })
        .sum();
    let acc = correct as f64 / n_mc as f64;
    OracleEstimate {
        accuracy: acc,
        std_error: (acc * (1.0 - acc) / n_mc as f64).sqrt(),
    }
}
