//! Case-study instrumentation for a single sentence: attention maps per head,
//! gate and FFN statistics per word, and pooling behaviour, with CSV and SVG
//! export.

mod capture;
mod export;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::tensor::TensorError;

pub use capture::{capture, capture_tokens, CaseStudyReport, DirectionReport};
pub use export::{export, heatmap_svg, matrix_csv, vector_csv, ExportFormat};

#[derive(Debug, Error)]
pub enum IntrospectError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}
