//! Spectral roles, the vegetation-index catalog and per-pixel feature rows.
//!
//! Each pixel yields 28 features: the nine band reflectances followed by
//! nineteen indices. Indices are formulated over spectral *roles* (RED, NIR,
//! SWIR1600, ...) which a [`BandRoleMap`] resolves to Sentinel-2 bands.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureTable;
use crate::error::{Error, Result};
use crate::geodata::{Band, LabeledPixel, Spectrum};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Blue,
    Green,
    Red,
    RedEdge,
    R500,
    R680,
    R750,
    R800,
    Nir,
    Swir1600,
    Swir2200,
}

impl Role {
    pub const ALL: [Role; 11] = [
        Role::Blue,
        Role::Green,
        Role::Red,
        Role::RedEdge,
        Role::R500,
        Role::R680,
        Role::R750,
        Role::R800,
        Role::Nir,
        Role::Swir1600,
        Role::Swir2200,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Blue => "BLUE",
            Role::Green => "GREEN",
            Role::Red => "RED",
            Role::RedEdge => "REDEDGE",
            Role::R500 => "R500",
            Role::R680 => "R680",
            Role::R750 => "R750",
            Role::R800 => "R800",
            Role::Nir => "NIR",
            Role::Swir1600 => "SWIR1600",
            Role::Swir2200 => "SWIR2200",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown spectral role {s:?}")))
    }
}

/// Role → band assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandRoleMap(BTreeMap<Role, Band>);

impl Default for BandRoleMap {
    fn default() -> Self {
        use Band::*;
        Self(BTreeMap::from([
            (Role::Blue, B02),
            (Role::Green, B03),
            (Role::Red, B04),
            (Role::RedEdge, B05),
            (Role::R500, B02),
            (Role::R680, B04),
            (Role::R750, B06),
            (Role::R800, B8A),
            (Role::Nir, B8A),
            (Role::Swir1600, B11),
            (Role::Swir2200, B12),
        ]))
    }
}

impl BandRoleMap {
    /// Default map with some roles reassigned, given as role/band names.
    pub fn with_overrides<'a>(overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map = Self::default();
        for (role, band) in overrides {
            map.0.insert(role.parse()?, band.parse()?);
        }
        Ok(map)
    }

    pub fn band(&self, role: Role) -> Band {
        self.0[&role]
    }

    pub fn resolve(&self, role: &str) -> Result<Band> {
        Ok(self.band(role.parse()?))
    }

    /// Role values for one pixel.
    pub fn role_values(&self, spectrum: &Spectrum) -> RoleValues {
        RoleValues(Role::ALL.map(|r| Some(spectrum.get(self.band(r)))))
    }
}

/// Values keyed by role; a role may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoleValues([Option<f64>; 11]);

impl RoleValues {
    pub fn from_pairs(pairs: &[(Role, f64)]) -> Self {
        let mut v = RoleValues::default();
        for &(r, x) in pairs {
            v.0[r as usize] = Some(x);
        }
        v
    }

    pub fn get(&self, role: Role) -> Option<f64> {
        self.0[role as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VegetationIndex {
    Ndvi,
    Arvi,
    Sri,
    Psri,
    Rvi,
    Ndwi,
    Ndmi,
    Ngrdi,
    Vari,
    Sr860_550,
    Dwsi1,
    Dwsi2,
    Dwsi3,
    Dwsi4,
    Dwsi5,
    Gbndvi,
    Dwsi6,
    Dwsi7,
    Dwsi8,
}

/// Why an index could not be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("role {0} is missing or not finite")]
    MissingRole(Role),
    #[error("denominator is zero")]
    ZeroDenominator,
}

impl VegetationIndex {
    pub const ALL: [VegetationIndex; 19] = [
        VegetationIndex::Ndvi,
        VegetationIndex::Arvi,
        VegetationIndex::Sri,
        VegetationIndex::Psri,
        VegetationIndex::Rvi,
        VegetationIndex::Ndwi,
        VegetationIndex::Ndmi,
        VegetationIndex::Ngrdi,
        VegetationIndex::Vari,
        VegetationIndex::Sr860_550,
        VegetationIndex::Dwsi1,
        VegetationIndex::Dwsi2,
        VegetationIndex::Dwsi3,
        VegetationIndex::Dwsi4,
        VegetationIndex::Dwsi5,
        VegetationIndex::Gbndvi,
        VegetationIndex::Dwsi6,
        VegetationIndex::Dwsi7,
        VegetationIndex::Dwsi8,
    ];

    pub fn name(self) -> &'static str {
        use VegetationIndex::*;
        match self {
            Ndvi => "NDVI",
            Arvi => "ARVI",
            Sri => "SRI",
            Psri => "PSRI",
            Rvi => "RVI",
            Ndwi => "NDWI",
            Ndmi => "NDMI",
            Ngrdi => "NGRDI",
            Vari => "VARI",
            Sr860_550 => "SR860/550",
            Dwsi1 => "DWSI-1",
            Dwsi2 => "DWSI-2",
            Dwsi3 => "DWSI-3",
            Dwsi4 => "DWSI-4",
            Dwsi5 => "DWSI-5",
            Gbndvi => "GBNDVI",
            Dwsi6 => "DWSI-6",
            Dwsi7 => "DWSI-7",
            Dwsi8 => "DWSI-8",
        }
    }

    /// Roles read by the formula.
    pub fn roles(self) -> &'static [Role] {
        use Role::*;
        use VegetationIndex::*;
        match self {
            Ndvi | Sri | Rvi => &[Nir, Red],
            Arvi => &[Nir, Red, Blue],
            Psri => &[R680, R500, R750],
            Ndwi => &[Green, Nir],
            Ndmi => &[Nir, Swir1600],
            Ngrdi => &[Green, Red],
            Vari => &[Green, Red, Blue],
            // R550 is the green band
            Sr860_550 => &[R800, Green],
            Dwsi1 => &[R800, Swir1600],
            Dwsi2 => &[Swir1600, Green],
            Dwsi3 => &[Swir1600, R680],
            Dwsi4 => &[Green, R680],
            Dwsi5 => &[R800, Green, Swir1600, R680],
            Gbndvi => &[Nir, Blue, Green],
            Dwsi6 => &[Swir2200, Swir1600, Nir],
            Dwsi7 => &[Swir2200, Swir1600, Red],
            Dwsi8 => &[Swir2200, Swir1600, Red, RedEdge],
        }
    }

    pub fn evaluate(self, v: &RoleValues) -> Result<f64, IndexError> {
        use Role::*;
        use VegetationIndex::*;
        let g = |r: Role| match v.get(r) {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(IndexError::MissingRole(r)),
        };
        let ratio = |num: f64, den: f64| {
            if den == 0.0 {
                Err(IndexError::ZeroDenominator)
            } else {
                Ok(num / den)
            }
        };
        let nd = |a: f64, b: f64| ratio(a - b, a + b);
        match self {
            Ndvi => nd(g(Nir)?, g(Red)?),
            Arvi => {
                let rb = g(Red)? - g(Blue)?;
                let nir = g(Nir)?;
                ratio(nir - rb, nir + rb)
            }
            Sri => ratio(g(Nir)?, g(Red)?),
            Psri => ratio(g(R680)? - g(R500)?, g(R750)?),
            Rvi => ratio(g(Red)?, g(Nir)?),
            Ndwi => nd(g(Green)?, g(Nir)?),
            Ndmi => nd(g(Nir)?, g(Swir1600)?),
            Ngrdi => nd(g(Green)?, g(Red)?),
            Vari => {
                let (gr, r) = (g(Green)?, g(Red)?);
                ratio(gr - r, gr + r - g(Blue)?)
            }
            Sr860_550 => ratio(g(R800)?, g(Green)?),
            Dwsi1 => ratio(g(R800)?, g(Swir1600)?),
            Dwsi2 => ratio(g(Swir1600)?, g(Green)?),
            Dwsi3 => ratio(g(Swir1600)?, g(R680)?),
            Dwsi4 => ratio(g(Green)?, g(R680)?),
            Dwsi5 => ratio(g(R800)? + g(Green)?, g(Swir1600)? + g(R680)?),
            Gbndvi => {
                let bg = g(Blue)? + g(Green)?;
                let nir = g(Nir)?;
                ratio(nir - bg, nir + bg)
            }
            Dwsi6 => ratio(g(Swir2200)? + g(Swir1600)?, g(Nir)?),
            Dwsi7 => ratio(g(Swir2200)? + g(Swir1600)?, g(Red)?),
            Dwsi8 => ratio(g(Swir2200)? + g(Swir1600)?, g(Red)? + g(RedEdge)?),
        }
    }
}

impl FromStr for VegetationIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VegetationIndex::ALL
            .into_iter()
            .find(|i| i.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown vegetation index {s:?}")))
    }
}

/// Evaluates a named index from role values.
pub fn compute_index(name: &str, values: &RoleValues) -> Result<Result<f64, IndexError>> {
    let index: VegetationIndex = name.parse()?;
    Ok(index.evaluate(values))
}

/// Band names followed by index names; 28 entries.
pub fn feature_names() -> Vec<String> {
    Band::ALL
        .iter()
        .map(|b| b.as_str().to_string())
        .chain(VegetationIndex::ALL.iter().map(|i| i.name().to_string()))
        .collect()
}

pub const N_FEATURES: usize = 9 + 19;

/// Feature row for one pixel, or the first index that failed.
pub fn feature_row(spectrum: &Spectrum, roles: &BandRoleMap) -> Result<[f64; N_FEATURES], (VegetationIndex, IndexError)> {
    let mut row = [0.0; N_FEATURES];
    row[..9].copy_from_slice(&spectrum.0);
    let rv = roles.role_values(spectrum);
    for (k, idx) in VegetationIndex::ALL.into_iter().enumerate() {
        row[9 + k] = idx.evaluate(&rv).map_err(|e| (idx, e))?;
    }
    Ok(row)
}

#[derive(Debug, Clone)]
pub struct FeatureBuild {
    pub table: FeatureTable,
    /// Pixels dropped because some index was undefined.
    pub dropped: usize,
    /// Drop count per offending index name.
    pub drop_reasons: BTreeMap<String, usize>,
}

pub fn build_feature_matrix(pixels: &[LabeledPixel], roles: &BandRoleMap) -> Result<FeatureBuild> {
    if pixels.is_empty() {
        return Err(Error::EmptyDataset("no labeled pixels".into()));
    }
    let mut matrix = Matrix::empty(N_FEATURES);
    let (mut labels, mut varieties, mut block_ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut drop_reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut dropped = 0;
    for p in pixels {
        match feature_row(&p.reflectances, roles) {
            Ok(row) => {
                matrix.push_row(&row)?;
                labels.push(p.label);
                varieties.push(p.variety.clone());
                block_ids.push(p.block_id.clone());
            }
            Err((idx, _)) => {
                dropped += 1;
                *drop_reasons.entry(idx.name().to_string()).or_default() += 1;
            }
        }
    }
    if matrix.rows() == 0 {
        return Err(Error::EmptyDataset(format!(
            "all {} pixels had undefined index values",
            pixels.len()
        )));
    }
    let table = FeatureTable::new(matrix, labels, varieties, block_ids, feature_names())?;
    Ok(FeatureBuild {
        table,
        dropped,
        drop_reasons,
    })
}
