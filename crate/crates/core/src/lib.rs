//! Fair representation learning for multiple binary sensitive attributes by
//! keeping target representations orthogonal to a low-rank sensitive
//! subspace (column space) and decorrelated from sensitive features (row
//! space).

pub mod cli;
pub mod datagen;
pub mod error;
pub mod fairmetrics;
pub mod linalg;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::Matrix;
