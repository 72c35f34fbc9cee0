//! Pixel-level detection of ratoon stunting disease from Sentinel-2 Level-2A
//! band rasters.
//!
//! The crate covers the whole desk-scale workflow: raster and block-polygon
//! ingestion ([`geodata`]), band and vegetation-index features ([`indices`]),
//! dataset assembly ([`dataset`]), per-feature significance screening
//! ([`screening`]), five classifiers behind one contract ([`learners`]),
//! successive-halving hyperparameter search ([`tuning`]), resampling-based
//! evaluation ([`eval`]) and a synthetic scene generator with analytic
//! oracles ([`synth`]).

pub mod dataset;
pub mod error;
pub mod geodata;
pub mod indices;
pub mod learners;
pub mod matrix;
pub mod screening;
pub mod seeds;
pub mod special;
pub mod synth;
pub mod tuning;
pub mod eval;

pub use dataset::{FeatureTable, Label};
pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
