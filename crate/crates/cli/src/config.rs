//! Run configuration: one JSON file, selectively overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rsd_core::dataset::VarietySelection;
use rsd_core::learners::Algorithm;
use rsd_core::synth::SynthConfig;
use rsd_core::tuning::{HalvingConfig, ParamGrid};
use rsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Raster and block inputs on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub manifest: PathBuf,
    pub blocks: PathBuf,
}

/// A synthetic scene: either the survey-count fixture or a full config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SynthSource {
    Fixture {
        separation: f64,
        seed: u64,
        #[serde(default)]
        varieties: Option<Vec<String>>,
    },
    Custom(SynthConfig),
}

impl SynthSource {
    pub fn to_config(&self) -> SynthConfig {
        match self {
            SynthSource::Fixture {
                separation,
                seed,
                varieties,
            } => {
                let cfg = SynthConfig::table1_fixture(*separation, *seed);
                match varieties {
                    Some(v) => cfg.restrict_to(&v.iter().map(String::as_str).collect::<Vec<_>>()),
                    None => cfg,
                }
            }
            SynthSource::Custom(c) => c.clone(),
        }
    }
}

fn default_k() -> usize {
    10
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_b_bootstrap() -> usize {
    5000
}
fn default_b_permutation() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_scale() -> f64 {
    rsd_core::geodata::DEFAULT_SCALE
}
fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub inputs: Option<InputPaths>,
    #[serde(default)]
    pub synth: Option<SynthSource>,
    /// Variety settings; absent means every variety plus the pooled `ALL`.
    #[serde(default)]
    pub varieties: Option<Vec<String>>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    /// Grid overrides keyed by algorithm tag.
    #[serde(default)]
    pub grids: BTreeMap<Algorithm, ParamGrid>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub halving: HalvingConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_b_bootstrap")]
    pub b_bootstrap: usize,
    #[serde(default = "default_b_permutation")]
    pub b_permutation: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Index role overrides, e.g. `{"R550": "B03"}`.
    #[serde(default)]
    pub band_roles: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        // relative input paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(inputs) = cfg.inputs.as_mut() {
            for p in [&mut inputs.manifest, &mut inputs.blocks] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn grid(&self, algorithm: Algorithm) -> ParamGrid {
        self.grids
            .get(&algorithm)
            .cloned()
            .unwrap_or_else(|| ParamGrid::default_for(algorithm))
    }

    pub fn selections(&self, available: &[String]) -> Result<Vec<VarietySelection>> {
        match &self.varieties {
            Some(v) => v.iter().map(|s| s.parse()).collect(),
            None => {
                let mut out: Vec<VarietySelection> =
                    available.iter().map(|v| VarietySelection::Variety(v.clone())).collect();
                out.push(VarietySelection::All);
                Ok(out)
            }
        }
    }

    /// Checks everything that can be checked without reading inputs.
    pub fn validate(&self) -> Result<()> {
        match (&self.inputs, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("give either inputs or synth, not both".into())),
            (None, None) => return Err(Error::Config("config needs inputs or synth".into())),
            (Some(inputs), None) => {
                for (what, p) in [("band manifest", &inputs.manifest), ("blocks file", &inputs.blocks)] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("{what} {} does not exist", p.display())));
                    }
                }
            }
            (None, Some(s)) => s.to_config().validate()?,
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.b_bootstrap == 0 || self.b_permutation == 0 {
            return Err(Error::Config("b_bootstrap and b_permutation must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.halving.eta < 2 {
            return Err(Error::Config(format!("eta must be at least 2, got {}", self.halving.eta)));
        }
        for &alg in &self.algorithms {
            self.grid(alg).candidates(alg)?;
        }
        if let Some(v) = &self.varieties {
            for s in v {
                s.parse::<VarietySelection>()?;
            }
        }
        rsd_core::indices::BandRoleMap::with_overrides(self.band_roles.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
        Ok(())
    }
}
