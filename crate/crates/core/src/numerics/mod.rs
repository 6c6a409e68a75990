//! Shared data structures and numerical kernels.
//!
//! Everything else in the crate builds on the types here: a dense row-major
//! [`Matrix`], the [`Dataset`] a site holds locally, the [`WeightedDesign`]
//! that learners consume, a reproducible [`RngHandle`], a QR-based weighted
//! least squares solver and CSV ingestion.

mod csv_io;
mod dataset;
mod lstsq;
pub(crate) mod matrix;
mod rng;

pub use csv_io::{load_csv, CategoricalEncoder, CsvSchema, LoadReport, TaskKind};
pub use dataset::{Dataset, Response, Task, WeightedDesign};
pub use lstsq::solve_least_squares;
pub use matrix::Matrix;
pub use rng::RngHandle;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("design is rank deficient: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },
    #[error("underdetermined system: {rows} rows for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("column `{0}` named in schema does not exist")]
    UnknownColumn(String),
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
