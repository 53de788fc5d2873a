//! File formats: NIfTI-1 volumes, ASCII VTP polydata, the CORO-DS dataset
//! container, and the prediction CSV.

pub mod dataset;
pub mod nifti;
pub mod preds;
pub mod vtp;
