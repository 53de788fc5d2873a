//! Data pipeline for coronary centerline pressure regression: coordinate
//! frames, file ingestion (NIfTI-1, ASCII VTP), synthetic hemodynamic case
//! generation, patch dataset assembly, evaluation metrics, and error-colored
//! point-cloud export.

pub mod geom;
pub mod io;
pub mod metrics;
pub mod patch;
pub mod seed;
pub mod synth;
pub mod vis;
