//! Multiple augmented reduced rank regression (maRRR) for multi-cohort data.

pub mod columns;
pub mod dataset;
pub mod error;
pub mod impute;
pub mod io;
pub mod linalg;
pub mod modules_config;
pub mod preprocess;
pub mod simulate;
pub mod solver;

pub use error::{MarrrError, Result};
