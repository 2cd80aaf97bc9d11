//! Low-rank sensitive subspace: batch construction from the top left singular
//! vectors of a representation matrix, and a streaming variant that
//! accumulates bases over mini-batches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_against, svd_thin, Matrix};

/// Orthonormality tolerance for a stored basis.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Relative singular value below which a direction is considered numerically null.
const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis (d×q) with per-direction importance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: Matrix,
    importance: Vec<f64>,
    capacity: usize,
    warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct BasisSidecar {
    importance: Vec<f64>,
    capacity: usize,
}

impl SubspaceBasis {
    pub fn new(basis: Matrix, importance: Vec<f64>, capacity: usize) -> Result<Self> {
        let (d, q) = basis.shape();
        if importance.len() != q {
            return Err(Error::invalid(format!(
                "{q} basis vectors but {} importance scores",
                importance.len()
            )));
        }
        if q > d {
            return Err(Error::invalid(format!(
                "basis has {q} vectors in dimension {d}"
            )));
        }
        if importance.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid(
                "importance scores must be finite and non-negative",
            ));
        }
        if importance.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("importance scores must be non-increasing"));
        }
        let err = basis.t_matmul(&basis)?.max_abs_diff(&Matrix::identity(q));
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "basis columns are not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(Self {
            basis,
            importance,
            capacity,
            warnings: Vec::new(),
        })
    }

    /// d×q matrix with orthonormal columns.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn len(&self) -> usize {
        self.basis.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Diagnostics recorded while building (e.g. rank shortfall).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Leading `k` directions.
    pub fn truncate(&self, k: usize) -> Result<SubspaceBasis> {
        if k > self.len() {
            return Err(Error::invalid(format!(
                "requested {k} bases but only {} are available",
                self.len()
            )));
        }
        let mut out = SubspaceBasis::new(
            self.basis.leading_columns(k),
            self.importance[..k].to_vec(),
            k,
        )?;
        out.warnings = self.warnings.clone();
        Ok(out)
    }

    /// Writes the basis as CSV at `path` and `{importance, capacity}` as JSON
    /// next to it (same stem, `.json`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.basis.write_csv(path)?;
        let sidecar = BasisSidecar {
            importance: self.importance.clone(),
            capacity: self.capacity,
        };
        let json_path = path.with_extension("json");
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SubspaceBasis> {
        let path = path.as_ref();
        let basis = Matrix::read_csv(path)?;
        let json_path = path.with_extension("json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: BasisSidecar = serde_json::from_str(&text)?;
        SubspaceBasis::new(basis, sidecar.importance, sidecar.capacity)
    }
}

/// Top-`k` left singular vectors of `z_a` (d×n, columns are samples), with
/// squared singular values as importance.
pub fn build_space(z_a: &Matrix, k: usize) -> Result<SubspaceBasis> {
    let (d, n) = z_a.shape();
    if k == 0 || k > d.min(n) {
        return Err(Error::invalid(format!(
            "rank k={k} must be in 1..={} for a {d}x{n} representation matrix",
            d.min(n)
        )));
    }
    let svd = svd_thin(z_a)?;
    let importance: Vec<f64> = svd.singular_values[..k].iter().map(|s| s * s).collect();
    let mut out = SubspaceBasis::new(svd.u.leading_columns(k), importance, k)?;
    let rank = svd.numerical_rank(RANK_TOL);
    if k > rank {
        let msg = format!("k={k} exceeds numerical rank {rank}; trailing bases span noise");
        log::warn!("{msg}");
        out.warnings.push(msg);
    }
    Ok(out)
}

/// Fraction of `‖z_a‖²_F` lying inside the span of `basis`.
pub fn captured_variance(z_a: &Matrix, basis: &SubspaceBasis) -> Result<f64> {
    if basis.dim() != z_a.rows() {
        return Err(Error::Shape {
            op: "captured_variance",
            left: basis.basis().shape(),
            right: z_a.shape(),
        });
    }
    let total = z_a.frobenius_norm_sq();
    if total == 0.0 {
        return Err(Error::Undefined(
            "captured variance of an all-zero representation matrix is undefined".into(),
        ));
    }
    let inside = basis.basis().t_matmul(z_a)?.frobenius_norm_sq();
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal bases of the same ambient dimension. Small angles come from
/// sines of the residual, large ones from cosines; `acos` alone loses
/// everything below ~1e-8.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    let (a, b) = if a.cols() >= b.cols() { (a, b) } else { (b, a) };
    let cross = a.t_matmul(b)?;
    let cosines = svd_thin(&cross)?.singular_values;
    let residual = b.sub(&a.matmul(&cross)?)?;
    let sines = svd_thin(&residual)?.singular_values;
    let q = cosines.len();
    Ok((0..q)
        .map(|i| {
            let c = cosines[i].clamp(0.0, 1.0);
            if c * c < 0.5 {
                c.acos()
            } else {
                sines[q - 1 - i].clamp(0.0, 1.0).asin()
            }
        })
        .collect())
}

/// Largest principal angle in degrees.
pub fn largest_principal_angle_deg(a: &Matrix, b: &Matrix) -> Result<f64> {
    let angles = principal_angles(a, b)?;
    Ok(angles.into_iter().fold(0.0, f64::max).to_degrees())
}

/// Streaming construction state.
#[derive(Debug, Clone)]
pub struct AccumulationState {
    current: SubspaceBasis,
    working_rank: usize,
    epoch_counter: usize,
    max_epochs: usize,
    batches_seen: usize,
    warnings: Vec<String>,
}

/// Default number of passes over the data during accumulation.
pub const DEFAULT_ACCUMULATION_EPOCHS: usize = 3;

impl AccumulationState {
    pub fn current(&self) -> &SubspaceBasis {
        &self.current
    }

    pub fn working_rank(&self) -> usize {
        self.working_rank
    }

    pub fn epoch_counter(&self) -> usize {
        self.epoch_counter
    }

    pub fn max_epochs(&self) -> usize {
        self.max_epochs
    }

    pub fn batches_seen(&self) -> usize {
        self.batches_seen
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn with_max_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs = epochs;
        self
    }

    /// Marks the end of a pass over the data.
    pub fn end_epoch(&mut self) -> Result<()> {
        if self.epoch_counter >= self.max_epochs {
            return Err(Error::invalid(format!(
                "accumulation already ran its {} epochs",
                self.max_epochs
            )));
        }
        self.epoch_counter += 1;
        Ok(())
    }
}

/// Initializes accumulation from the first batch with `k_working` bases.
pub fn accumulate_init(z_a_batch: &Matrix, k_working: usize) -> Result<AccumulationState> {
    let current = build_space(z_a_batch, k_working)?;
    let warnings = current.warnings().to_vec();
    Ok(AccumulationState {
        current,
        working_rank: k_working,
        epoch_counter: 0,
        max_epochs: DEFAULT_ACCUMULATION_EPOCHS,
        batches_seen: 1,
        warnings,
    })
}

/// One accumulation update: re-score the old bases on the new batch, take
/// new directions from the SVD of the residual, keep the top half of the
/// concatenated candidates by score and re-orthonormalize them.
pub fn accumulate_step(
    mut state: AccumulationState,
    z_a_batch: &Matrix,
) -> Result<AccumulationState> {
    let d = state.current.dim();
    if z_a_batch.cols() == 0 {
        return Err(Error::invalid("accumulation batch has no columns"));
    }
    if z_a_batch.rows() != d {
        return Err(Error::Shape {
            op: "accumulate_step",
            left: state.current.basis().shape(),
            right: z_a_batch.shape(),
        });
    }
    state.batches_seen += 1;
    let energy = z_a_batch.frobenius_norm();
    if energy == 0.0 {
        let msg = format!(
            "batch {} is all zeros; accumulation step skipped",
            state.batches_seen
        );
        log::warn!("{msg}");
        state.warnings.push(msg);
        return Ok(state);
    }

    let old = state.current.basis();
    let projection = old.t_matmul(z_a_batch)?;
    let old_scores: Vec<f64> = (0..projection.rows())
        .map(|i| projection.row(i).iter().map(|v| v * v).sum())
        .collect();
    let residual = z_a_batch.sub(&old.matmul(&projection)?)?;
    let svd = svd_thin(&residual)?;
    let q_new = state.working_rank.min(svd.rank());

    // Old bases come first so a stable sort prefers them on ties.
    let mut candidates: Vec<(Vec<f64>, f64)> = old.columns().into_iter().zip(old_scores).collect();
    for j in 0..q_new {
        let sigma = svd.singular_values[j];
        candidates.push((svd.u.column(j), sigma * sigma));
    }
    let q_old = old.cols();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    let keep = (q_old + q_new).div_ceil(2).min(d);

    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(keep);
    let mut scores = Vec::with_capacity(keep);
    for (vector, score) in candidates {
        if kept.len() == keep {
            break;
        }
        if let Some(w) = orthonormalize_against(&vector, &kept, 1e-3) {
            kept.push(w);
            scores.push(score);
        }
    }
    let basis = Matrix::from_columns(&kept)?;
    let capacity = state.current.capacity();
    state.current = SubspaceBasis::new(basis, scores, capacity)?;
    Ok(state)
}

/// Final top-`k` bases by importance.
pub fn accumulate_finalize(state: &AccumulationState, k: usize) -> Result<SubspaceBasis> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut out = state.current.truncate(k)?;
    out.warnings = state.warnings.clone();
    if state.epoch_counter < state.max_epochs {
        out.warnings.push(format!(
            "finalized after {} of {} accumulation epochs",
            state.epoch_counter, state.max_epochs
        ));
    }
    Ok(out)
}
