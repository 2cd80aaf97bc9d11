//! Dense matrix primitives and a deterministic thin SVD.

mod matrix;
mod svd;

pub use matrix::{dot, Matrix};
pub use svd::{svd_thin, SvdResult};

pub(crate) use svd::orthonormalize_against;

/// `m · mᵀ`.
pub fn gram(m: &Matrix) -> Matrix {
    m.gram()
}
