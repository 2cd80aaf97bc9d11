//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working matrix are rotated pairwise until mutually
//! orthogonal; their norms are the singular values and the accumulated
//! rotations form the right singular vectors. Wide inputs are handled by
//! decomposing the transpose.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Thin SVD `m = u · diag(s) · vᵀ` with `r = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// rows × r, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length r.
    pub singular_values: Vec<f64>,
    /// cols × r, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Number of singular values above a relative tolerance of the largest.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|s| **s > rel_tol * top)
            .count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (v, s) in us.row_mut(r).iter_mut().zip(&self.singular_values) {
                *v *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factor shapes agree")
    }
}

/// Thin SVD with a deterministic sign convention: the largest-magnitude
/// entry of every left singular vector is positive.
pub fn svd_thin(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "svd needs a non-empty matrix, got {rows}x{cols}"
        )));
    }
    if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / cols,
            col: pos % cols,
        });
    }

    let (mut u, s, mut v) = if rows >= cols {
        jacobi_tall(m.columns())?
    } else {
        // m = (mᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
        let (u_t, s, v_t) = jacobi_tall(m.transpose().columns())?;
        (v_t, s, u_t)
    };

    for j in 0..s.len() {
        let col = &u[j];
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            u[j].iter_mut().for_each(|x| *x = -*x);
            v[j].iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(SvdResult {
        u: Matrix::from_columns(&u)?,
        singular_values: s,
        v: Matrix::from_columns(&v)?,
    })
}

type Columns = Vec<Vec<f64>>;

/// One-sided Jacobi on a tall matrix given by its columns (len(col) >= ncols).
/// Returns (left vectors, singular values, right vectors) as column lists,
/// sorted by non-increasing singular value.
fn jacobi_tall(mut a: Vec<Vec<f64>>) -> Result<(Columns, Vec<f64>, Columns)> {
    let n = a.len();
    let rows = a[0].len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (rows as f64).max(1.0);
    // columns this small are numerically zero; rotating them only churns noise
    let total: f64 = a.iter().map(|c| dot(c, c)).sum();
    let negligible = total * (f64::EPSILON * rows as f64).powi(2);

    let mut converged = n < 2;
    let mut residual = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                let ratio = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                residual = residual.max(ratio);
                if ratio <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let null_tol = negligible.sqrt();
    let mut u: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_sorted = Vec::with_capacity(n);
    for &j in &order {
        let sigma = norms[j];
        if sigma > null_tol && sigma > 0.0 {
            u.push(Some(a[j].iter().map(|x| x / sigma).collect()));
        } else {
            u.push(None);
        }
        s.push(sigma);
        v_sorted.push(std::mem::take(&mut v[j]));
    }
    let u = complete_orthonormal(u, rows);
    Ok((u, s, v_sorted))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills missing (null-space) slots with unit vectors orthogonal to the rest.
fn complete_orthonormal(slots: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    if slots.iter().all(Option::is_some) {
        return slots.into_iter().flatten().collect();
    }
    let mut basis: Vec<Vec<f64>> = slots.iter().flatten().cloned().collect();
    let mut candidate = 0;
    let mut out = Vec::with_capacity(slots.len());
    for slot in slots {
        match slot {
            Some(u) => out.push(u),
            None => loop {
                assert!(candidate < dim, "cannot complete orthonormal set");
                let mut e = vec![0.0; dim];
                e[candidate] = 1.0;
                candidate += 1;
                if let Some(w) = orthonormalize_against(&e, &basis, 0.5) {
                    basis.push(w.clone());
                    out.push(w);
                    break;
                }
            },
        }
    }
    out
}

/// Modified Gram–Schmidt (two passes) of `x` against orthonormal `basis`.
/// Returns `None` if less than `keep_frac` of the original norm survives.
pub(crate) fn orthonormalize_against(
    x: &[f64],
    basis: &[Vec<f64>],
    keep_frac: f64,
) -> Option<Vec<f64>> {
    let norm0 = dot(x, x).sqrt();
    if norm0 == 0.0 {
        return None;
    }
    let mut w = x.to_vec();
    for _ in 0..2 {
        for b in basis {
            let proj = dot(&w, b);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= proj * bi;
            }
        }
    }
    let norm = dot(&w, &w).sqrt();
    if norm <= keep_frac * norm0 {
        return None;
    }
    w.iter_mut().for_each(|x| *x /= norm);
    Some(w)
}
