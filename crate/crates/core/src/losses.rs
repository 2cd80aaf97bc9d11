//! Orthogonality and classification losses, each with its analytic gradient
//! with respect to the representation (or logit) input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::subspace::SubspaceBasis;

/// Columns with Euclidean norm below this contribute nothing to the column loss.
pub const DEFAULT_EPS_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient with respect to the first input, same shape.
    pub grad_z: Matrix,
    /// Columns skipped because their norm was below the guard.
    pub degenerate_columns: Vec<usize>,
}

impl LossResult {
    fn new(value: f64, grad_z: Matrix) -> Self {
        Self {
            value,
            grad_z,
            degenerate_columns: Vec::new(),
        }
    }
}

/// Weights of the two orthogonality terms in the target objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 80.0,
            lambda_r: 500.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_c: f64, lambda_r: f64) -> Result<Self> {
        for (name, v) in [("lambda_c", lambda_c), ("lambda_r", lambda_r)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { lambda_c, lambda_r })
    }

    pub fn erm() -> Self {
        Self {
            lambda_c: 0.0,
            lambda_r: 0.0,
        }
    }
}

/// Column orthogonality loss: `Σᵢ ‖Sᵀzᵢ‖² / ‖zᵢ‖²` over the columns of `z_t`.
pub fn corth_loss(z_t: &Matrix, basis: &SubspaceBasis) -> Result<LossResult> {
    corth_loss_with_eps(z_t, basis.basis(), DEFAULT_EPS_NORM)
}

/// [`corth_loss`] against a raw orthonormal basis matrix with an explicit norm guard.
pub fn corth_loss_with_eps(z_t: &Matrix, basis: &Matrix, eps_norm: f64) -> Result<LossResult> {
    if basis.rows() != z_t.rows() {
        return Err(Error::Shape {
            op: "corth_loss",
            left: z_t.shape(),
            right: basis.shape(),
        });
    }
    let (d, b) = z_t.shape();
    let proj = basis.t_matmul(z_t)?;
    let back = basis.matmul(&proj)?;
    let norms_sq: Vec<f64> = z_t.col_norms().iter().map(|n| n * n).collect();

    let mut value = 0.0;
    let mut grad = Matrix::zeros(d, b);
    let mut degenerate = Vec::new();
    for j in 0..b {
        let n2 = norms_sq[j];
        if n2.sqrt() < eps_norm {
            degenerate.push(j);
            continue;
        }
        let p2: f64 = (0..proj.rows()).map(|i| proj[(i, j)] * proj[(i, j)]).sum();
        value += p2 / n2;
        for r in 0..d {
            grad[(r, j)] = 2.0 * back[(r, j)] / n2 - 2.0 * p2 * z_t[(r, j)] / (n2 * n2);
        }
    }
    if !degenerate.is_empty() {
        log::warn!(
            "corth_loss: {} column(s) below norm guard {eps_norm:e} contribute zero",
            degenerate.len()
        );
    }
    Ok(LossResult {
        value,
        grad_z: grad,
        degenerate_columns: degenerate,
    })
}

/// Subtracts from every column its mean over the rows.
pub fn center_rows(z: &Matrix) -> Matrix {
    let (d, b) = z.shape();
    let mut means = vec![0.0; b];
    for r in 0..d {
        for (m, v) in means.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= d as f64);
    let mut out = z.clone();
    for r in 0..d {
        for (v, m) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

/// Row orthogonality (covariance) loss `‖Z̃_T Z̃_Aᵀ‖²_F / d²`, where `Z̃` removes
/// the mean of the d row vectors. Gradient is with respect to `z_t`.
pub fn rorth_loss(z_t: &Matrix, z_a: &Matrix) -> Result<LossResult> {
    if z_t.shape() != z_a.shape() {
        return Err(Error::Shape {
            op: "rorth_loss",
            left: z_t.shape(),
            right: z_a.shape(),
        });
    }
    if z_t.cols() == 0 || z_t.rows() == 0 {
        return Err(Error::invalid("rorth_loss needs a non-empty batch"));
    }
    let d = z_t.rows() as f64;
    let zt = center_rows(z_t);
    let za = center_rows(z_a);
    let cross = zt.matmul_t(&za)?;
    let value = cross.frobenius_norm_sq() / (d * d);
    let grad = center_rows(&cross.matmul(&za)?.scale(2.0 / (d * d)));
    Ok(LossResult::new(value, grad))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with logits. Gradient is 1×B over the logits.
pub fn cross_entropy(logits: &[f64], labels: &[u8]) -> Result<LossResult> {
    if logits.len() != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: (1, logits.len()),
            right: (1, labels.len()),
        });
    }
    if logits.is_empty() {
        return Err(Error::invalid("cross_entropy needs at least one sample"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let b = logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(labels) {
        let y = f64::from(y);
        value += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - y) / b);
    }
    Ok(LossResult::new(
        value / b,
        Matrix::new(1, grad.len(), grad)?,
    ))
}

/// Mean of per-attribute cross-entropies. `logits` is m×B (one row per head);
/// `attributes[s][i]` is attribute `i` of sample `s`. Gradient is m×B.
pub fn sens_loss(logits: &Matrix, attributes: &[Vec<u8>]) -> Result<LossResult> {
    let (m, b) = logits.shape();
    if m == 0 {
        return Err(Error::invalid(
            "sensitive loss needs at least one attribute",
        ));
    }
    if attributes.len() != b || attributes.iter().any(|a| a.len() != m) {
        return Err(Error::Shape {
            op: "sens_loss",
            left: (m, b),
            right: (attributes.len(), attributes.first().map_or(0, Vec::len)),
        });
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(m, b);
    for i in 0..m {
        let labels: Vec<u8> = attributes.iter().map(|a| a[i]).collect();
        let head = cross_entropy(logits.row(i), &labels)?;
        value += head.value;
        for (g, h) in grad.row_mut(i).iter_mut().zip(head.grad_z.as_slice()) {
            *g = h / m as f64;
        }
    }
    Ok(LossResult::new(value / m as f64, grad))
}

/// `L_T + λ_c·L_corth + λ_r·L_rorth`. All three gradients must already be
/// expressed with respect to the same target representation.
pub fn target_objective(
    l_t: &LossResult,
    l_corth: &LossResult,
    l_rorth: &LossResult,
    w: LossWeights,
) -> Result<LossResult> {
    let mut grad = l_t.grad_z.clone();
    grad.axpy(w.lambda_c, &l_corth.grad_z)?;
    grad.axpy(w.lambda_r, &l_rorth.grad_z)?;
    let value = l_t.value + w.lambda_c * l_corth.value + w.lambda_r * l_rorth.value;
    Ok(LossResult {
        value,
        grad_z: grad,
        degenerate_columns: l_corth.degenerate_columns.clone(),
    })
}

/// Scales every column to unit norm. Returns the normalized matrix and the
/// original norms (zero columns are left as-is with norm 0).
pub fn normalize_columns(z: &Matrix) -> (Matrix, Vec<f64>) {
    let norms = z.col_norms();
    let mut out = z.clone();
    for r in 0..z.rows() {
        for (v, n) in out.row_mut(r).iter_mut().zip(&norms) {
            if *n > 0.0 {
                *v /= n;
            }
        }
    }
    (out, norms)
}

/// Pulls a gradient taken at `normalize_columns(z)` back to `z`:
/// `∂/∂z = (g − ẑ(ẑᵀg)) / ‖z‖` column-wise.
pub fn normalize_columns_backward(normalized: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
    let (d, b) = normalized.shape();
    let mut out = Matrix::zeros(d, b);
    for j in 0..b {
        if norms[j] == 0.0 {
            continue;
        }
        let along: f64 = (0..d).map(|r| normalized[(r, j)] * grad[(r, j)]).sum();
        for r in 0..d {
            out[(r, j)] = (grad[(r, j)] - normalized[(r, j)] * along) / norms[j];
        }
    }
    out
}
