//! Raster and block-polygon ingestion, and extraction of labeled pixels.
//!
//! Rasters are ESRI ASCII grids holding Level-2A digital numbers; blocks are
//! GeoJSON polygons carrying a variety and a disease status. Every pixel whose
//! center falls inside exactly one block becomes one observation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Level-2A reflectance scale factor.
pub const DEFAULT_SCALE: f64 = 1.0 / 10_000.0;
pub const DEFAULT_NODATA: f64 = -9999.0;

/// The nine 20 m Sentinel-2 bands used as raw features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    B02,
    B03,
    B04,
    B05,
    B06,
    B07,
    B8A,
    B11,
    B12,
}

impl Band {
    pub const ALL: [Band; 9] = [
        Band::B02,
        Band::B03,
        Band::B04,
        Band::B05,
        Band::B06,
        Band::B07,
        Band::B8A,
        Band::B11,
        Band::B12,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::B02 => "B02",
            Band::B03 => "B03",
            Band::B04 => "B04",
            Band::B05 => "B05",
            Band::B06 => "B06",
            Band::B07 => "B07",
            Band::B8A => "B8A",
            Band::B11 => "B11",
            Band::B12 => "B12",
        }
    }

    /// Position in [`Band::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Band::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown band {s:?}")))
    }
}

/// One spectral band on a north-up grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRaster {
    pub band: Band,
    pub width: usize,
    pub height: usize,
    /// Map x of the left edge.
    pub origin_x: f64,
    /// Map y of the top edge.
    pub origin_y: f64,
    pub pixel_size: f64,
    pub nodata: f64,
    /// Row-major, top row first.
    pub values: Vec<f64>,
}

impl BandRaster {
    #[inline]
    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || v.is_nan()
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    fn same_grid(&self, other: &BandRaster) -> bool {
        let tol = 1e-6 * self.pixel_size;
        self.width == other.width
            && self.height == other.height
            && (self.origin_x - other.origin_x).abs() <= tol
            && (self.origin_y - other.origin_y).abs() <= tol
            && (self.pixel_size - other.pixel_size).abs() <= tol
    }
}

fn ingest_err(path: &Path, field: &str, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses an ESRI ASCII grid. Stored values are multiplied by `scale`;
/// nodata cells keep the nodata sentinel.
pub fn parse_ascii_grid(text: &str, band: Band, scale: f64, path: &Path) -> Result<BandRaster> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(ingest_err(path, "scale", format!("must be positive, got {scale}")));
    }
    let mut header: BTreeMap<String, f64> = BTreeMap::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.peek() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        if !key.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            break;
        }
        let key = key.to_ascii_uppercase();
        let raw = parts
            .next()
            .ok_or_else(|| ingest_err(path, &key, "missing value"))?;
        let v: f64 = raw
            .parse()
            .map_err(|_| ingest_err(path, &key, format!("not a number: {raw:?}")))?;
        header.insert(key, v);
        lines.next();
    }

    let get = |k: &str| header.get(k).copied();
    let count = |k: &str| -> Result<usize> {
        let v = get(k).ok_or_else(|| ingest_err(path, k, "missing"))?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(ingest_err(path, k, format!("must be a positive integer, got {v}")));
        }
        Ok(v as usize)
    };
    let width = count("NCOLS")?;
    let height = count("NROWS")?;
    let pixel_size = get("CELLSIZE").ok_or_else(|| ingest_err(path, "CELLSIZE", "missing"))?;
    if !(pixel_size > 0.0) {
        return Err(ingest_err(path, "CELLSIZE", format!("must be positive, got {pixel_size}")));
    }
    let x_left = match (get("XLLCORNER"), get("XLLCENTER")) {
        (Some(x), _) => x,
        (None, Some(x)) => x - pixel_size / 2.0,
        _ => return Err(ingest_err(path, "XLLCORNER", "missing")),
    };
    let y_bottom = match (get("YLLCORNER"), get("YLLCENTER")) {
        (Some(y), _) => y,
        (None, Some(y)) => y - pixel_size / 2.0,
        _ => return Err(ingest_err(path, "YLLCORNER", "missing")),
    };
    let nodata = get("NODATA_VALUE").unwrap_or(DEFAULT_NODATA);

    let mut values = Vec::with_capacity(width * height);
    let mut rows_seen = 0;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                ingest_err(path, "values", format!("row {rows_seen}: not a number: {tok:?}"))
            })?;
            values.push(if v == nodata {
                nodata
            } else if v.is_finite() {
                v * scale
            } else {
                return Err(ingest_err(path, "values", format!("row {rows_seen}: non-finite value")));
            });
        }
        let got = values.len() - before;
        if got != width {
            return Err(ingest_err(
                path,
                "NCOLS",
                format!("row {rows_seen} has {got} values, header declares {width}"),
            ));
        }
        rows_seen += 1;
    }
    if rows_seen != height {
        return Err(ingest_err(
            path,
            "NROWS",
            format!("found {rows_seen} rows, header declares {height}"),
        ));
    }

    Ok(BandRaster {
        band,
        width,
        height,
        origin_x: x_left,
        origin_y: y_bottom + height as f64 * pixel_size,
        pixel_size,
        nodata,
        values,
    })
}

pub fn load_raster(path: &Path, band: Band, scale: f64) -> Result<BandRaster> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text, band, scale, path)
}

/// Writes an ESRI ASCII grid of stored values, dividing by `scale` and
/// rounding to integers (the Level-2A digital-number convention).
pub fn write_ascii_grid(raster: &BandRaster, path: &Path, scale: f64) -> Result<()> {
    let mut out = String::with_capacity(raster.values.len() * 6 + 200);
    out.push_str(&format!("NCOLS {}\n", raster.width));
    out.push_str(&format!("NROWS {}\n", raster.height));
    out.push_str(&format!("XLLCORNER {}\n", raster.origin_x));
    out.push_str(&format!(
        "YLLCORNER {}\n",
        raster.origin_y - raster.height as f64 * raster.pixel_size
    ));
    out.push_str(&format!("CELLSIZE {}\n", raster.pixel_size));
    out.push_str(&format!("NODATA_VALUE {}\n", raster.nodata));
    for row in raster.values.chunks_exact(raster.width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                if raster.is_nodata(v) {
                    format!("{}", raster.nodata)
                } else {
                    format!("{}", (v / scale).round() as i64)
                }
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The nine bands of one scene, all on one grid.
#[derive(Debug, Clone)]
pub struct BandStack {
    rasters: Vec<BandRaster>,
}

impl BandStack {
    /// Checks that every required band is present exactly once and that all
    /// grids coincide.
    pub fn new(mut rasters: Vec<BandRaster>) -> Result<Self> {
        rasters.sort_by_key(|r| r.band);
        for band in Band::ALL {
            let n = rasters.iter().filter(|r| r.band == band).count();
            if n != 1 {
                return Err(Error::Alignment(format!("band {band} supplied {n} times")));
            }
        }
        let first = &rasters[0];
        for r in &rasters[1..] {
            if !first.same_grid(r) {
                return Err(Error::Alignment(format!(
                    "{} grid {}x{} @ ({}, {}) size {} differs from {} grid {}x{} @ ({}, {}) size {}",
                    r.band,
                    r.width,
                    r.height,
                    r.origin_x,
                    r.origin_y,
                    r.pixel_size,
                    first.band,
                    first.width,
                    first.height,
                    first.origin_x,
                    first.origin_y,
                    first.pixel_size
                )));
            }
        }
        Ok(Self { rasters })
    }

    pub fn band(&self, band: Band) -> &BandRaster {
        &self.rasters[band.index()]
    }

    pub fn width(&self) -> usize {
        self.rasters[0].width
    }

    pub fn height(&self) -> usize {
        self.rasters[0].height
    }

    pub fn rasters(&self) -> &[BandRaster] {
        &self.rasters
    }
}

/// Reads a band manifest (`{"B02": "path", ...}`) and loads every band.
/// Relative paths resolve against the manifest's directory.
pub fn load_band_manifest(path: &Path, scale: f64) -> Result<BandStack> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, PathBuf> = serde_json::from_str(&text)
        .map_err(|e| ingest_err(path, "manifest", e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rasters = Vec::with_capacity(map.len());
    for (key, file) in &map {
        let band: Band = key
            .parse()
            .map_err(|_| ingest_err(path, key, "not a supported band id"))?;
        let file = if file.is_absolute() { file.clone() } else { base.join(file) };
        rasters.push(load_raster(&file, band, scale)?);
    }
    BandStack::new(rasters)
}

pub fn write_band_manifest(path: &Path, files: &BTreeMap<Band, PathBuf>) -> Result<()> {
    let map: BTreeMap<&str, &Path> = files.iter().map(|(b, p)| (b.as_str(), p.as_path())).collect();
    let text = serde_json::to_string_pretty(&map)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub type Point = (f64, f64);

/// One polygon part of a sampled block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeature {
    pub block_id: String,
    pub variety: String,
    pub rsd_status: Label,
    /// Exterior ring first, then holes. Rings are stored open (the closing
    /// vertex is dropped).
    pub rings: Vec<Vec<Point>>,
}

impl BlockFeature {
    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.rings, p)
    }

    fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &(x, y) in self.rings.iter().flatten() {
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        b
    }
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

/// Even-odd containment over all rings (so holes are excluded). Points on
/// an edge count as inside.
pub fn point_in_polygon(rings: &[Vec<Point>], p: Point) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if on_segment(p, a, b) {
                return true;
            }
            if (a.1 > p.1) != (b.1 > p.1) {
                let x_cross = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
                if p.0 < x_cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

fn parse_ring(v: &Value, index: usize) -> Result<Vec<Point>> {
    let schema = |m: String| Error::Schema { index, message: m };
    let coords = v.as_array().ok_or_else(|| schema("ring is not an array".into()))?;
    let mut ring = Vec::with_capacity(coords.len());
    for c in coords {
        let xy = c.as_array().filter(|a| a.len() >= 2);
        let xy = xy.and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)));
        ring.push(xy.ok_or_else(|| schema(format!("bad coordinate {c}")))?);
    }
    if ring.len() >= 2 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(schema(format!("ring has {} distinct vertices, need 3", ring.len())));
    }
    Ok(ring)
}

fn parse_polygon(v: &Value, index: usize) -> Result<Vec<Vec<Point>>> {
    let rings = v.as_array().ok_or_else(|| Error::Schema {
        index,
        message: "polygon coordinates are not an array".into(),
    })?;
    if rings.is_empty() {
        return Err(Error::Schema {
            index,
            message: "polygon has no rings".into(),
        });
    }
    rings.iter().map(|r| parse_ring(r, index)).collect()
}

/// Parses a GeoJSON FeatureCollection of blocks. MultiPolygons expand to
/// one [`BlockFeature`] per part.
pub fn parse_blocks(text: &str) -> Result<Vec<BlockFeature>> {
    let root: Value = serde_json::from_str(text)?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .filter(|_| root.get("type").and_then(Value::as_str) == Some("FeatureCollection"))
        .ok_or_else(|| Error::Schema {
            index: 0,
            message: "not a GeoJSON FeatureCollection".into(),
        })?;

    let mut out = Vec::new();
    for (index, f) in features.iter().enumerate() {
        let schema = |m: String| Error::Schema { index, message: m };
        let props = f
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| schema("missing properties".into()))?;
        let text_prop = |k: &str| -> Result<String> {
            props
                .get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| schema(format!("missing string property {k:?}")))
        };
        let block_id = text_prop("block_id")?;
        let variety = text_prop("variety")?;
        let rsd_status = match text_prop("rsd_status")?.as_str() {
            "Positive" => Label::Positive,
            "Negative" => Label::Negative,
            other => return Err(schema(format!("rsd_status must be Positive or Negative, got {other:?}"))),
        };
        let geom = f.get("geometry").ok_or_else(|| schema("missing geometry".into()))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let parts = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(coords, index)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| schema("multipolygon coordinates are not an array".into()))?
                .iter()
                .map(|p| parse_polygon(p, index))
                .collect::<Result<_>>()?,
            other => return Err(schema(format!("geometry must be Polygon or MultiPolygon, got {other:?}"))),
        };
        for rings in parts {
            out.push(BlockFeature {
                block_id: block_id.clone(),
                variety: variety.clone(),
                rsd_status,
                rings,
            });
        }
    }
    Ok(out)
}

pub fn load_blocks(path: &Path) -> Result<Vec<BlockFeature>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_blocks(&text)
}

/// Serializes blocks as a FeatureCollection of Polygons.
pub fn blocks_to_geojson(blocks: &[BlockFeature]) -> Value {
    let features: Vec<Value> = blocks
        .iter()
        .map(|b| {
            let rings: Vec<Vec<[f64; 2]>> = b
                .rings
                .iter()
                .map(|r| {
                    let mut ring: Vec<[f64; 2]> = r.iter().map(|&(x, y)| [x, y]).collect();
                    ring.push(ring[0]);
                    ring
                })
                .collect();
            json!({
                "type": "Feature",
                "properties": {
                    "block_id": b.block_id,
                    "variety": b.variety,
                    "rsd_status": b.rsd_status.as_str(),
                },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// Reflectance of each of the nine bands, in [`Band::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum(pub [f64; 9]);

impl Spectrum {
    pub fn get(&self, band: Band) -> f64 {
        self.0[band.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPixel {
    pub block_id: String,
    pub variety: String,
    pub label: Label,
    pub x: f64,
    pub y: f64,
    pub reflectances: Spectrum,
}

/// Emits one [`LabeledPixel`] per pixel whose center lies in exactly one
/// block, in row-major pixel order. Pixels with nodata in any band, and
/// pixels outside every block, are skipped.
pub fn extract_labeled_pixels(stack: &BandStack, blocks: &[BlockFeature]) -> Result<Vec<LabeledPixel>> {
    let grid = stack.band(Band::B02);
    let boxes: Vec<[f64; 4]> = blocks.iter().map(BlockFeature::bbox).collect();

    let rows: Vec<Vec<LabeledPixel>> = (0..grid.height)
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::new();
            for col in 0..grid.width {
                let (x, y) = grid.pixel_center(col, row);
                let mut owner: Option<&BlockFeature> = None;
                let mut claimants: Vec<&str> = Vec::new();
                for (b, bb) in blocks.iter().zip(&boxes) {
                    if x < bb[0] || x > bb[2] || y < bb[1] || y > bb[3] || !b.contains((x, y)) {
                        continue;
                    }
                    if !claimants.contains(&b.block_id.as_str()) {
                        claimants.push(&b.block_id);
                    }
                    owner.get_or_insert(b);
                }
                if claimants.len() > 1 {
                    claimants.sort_unstable();
                    return Err(Error::Ambiguity {
                        x,
                        y,
                        block_ids: claimants.into_iter().map(str::to_string).collect(),
                    });
                }
                let Some(block) = owner else { continue };
                let mut refl = [0.0; 9];
                let mut valid = true;
                for band in Band::ALL {
                    let r = stack.band(band);
                    let v = r.value(col, row);
                    if r.is_nodata(v) {
                        valid = false;
                        break;
                    }
                    refl[band.index()] = v;
                }
                if valid {
                    out.push(LabeledPixel {
                        block_id: block.block_id.clone(),
                        variety: block.variety.clone(),
                        label: block.rsd_status,
                        x,
                        y,
                        reflectances: Spectrum(refl),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Writes pixels as CSV: block_id, variety, label, x, y, then one column per band.
pub fn write_pixels_csv(pixels: &[LabeledPixel], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::dataset::csv_err(path, e))?;
    let mut header = vec!["block_id", "variety", "label", "x", "y"];
    header.extend(Band::ALL.iter().map(|b| b.as_str()));
    w.write_record(&header).map_err(|e| crate::dataset::csv_err(path, e))?;
    for p in pixels {
        let mut rec = vec![
            p.block_id.clone(),
            p.variety.clone(),
            p.label.to_string(),
            p.x.to_string(),
            p.y.to_string(),
        ];
        rec.extend(p.reflectances.0.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| crate::dataset::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pixels_csv(path: &Path) -> Result<Vec<LabeledPixel>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::dataset::csv_err(path, e))?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| crate::dataset::csv_err(path, e))?;
        if rec.len() != 14 {
            return Err(ingest_err(path, "columns", format!("row {line}: expected 14 fields")));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| ingest_err(path, "values", format!("row {line}: bad number {:?}", &rec[i])))
        };
        let mut refl = [0.0; 9];
        for (k, slot) in refl.iter_mut().enumerate() {
            *slot = num(5 + k)?;
        }
        out.push(LabeledPixel {
            block_id: rec[0].to_string(),
            variety: rec[1].to_string(),
            label: rec[2].parse()?,
            x: num(3)?,
            y: num(4)?,
            reflectances: Spectrum(refl),
        });
    }
    Ok(out)
}
