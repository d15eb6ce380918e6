use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("degenerate class: {0}")]
    DegenerateClass(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("line extraction failed: {0}")]
    Extraction(String),
    #[error("manhattan frame estimation failed: {0}")]
    Frame(String),
    #[error("layout solver failed: {0}")]
    Solver(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("room generation failed: {0}")]
    Generation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
