//! C ABI over the `fcro` library.
//!
//! Every fallible call returns an [`FcroStatus`] and writes results through
//! out-pointers. On failure a message is kept per thread and can be read with
//! [`fcro_last_error`]. Objects are opaque handles; each `*_new`/producer has a
//! matching `*_free`. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fcro::datagen::{self, GenSpec, LabeledDataset};
use fcro::fairmetrics::{self, EdMode, Grouping, MetricOptions, PredictionTable};
use fcro::subspace::{self, SubspaceBasis};
use fcro::{linalg, losses, Error, Matrix};

/// Pass as `grouping` to evaluate over joint subgroups.
pub const FCRO_JOINT: i32 = -1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Undefined = 4,
    Infeasible = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcroEdMode {
    Max = 0,
    MeanGap = 1,
}

/// Parameters of the synthetic generator. Fill with [`fcro_gen_spec_default`]
/// and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FcroGenSpec {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub target_signal_strength: f64,
    pub attribute_signal_strength: f64,
    pub noise_sigma: f64,
    pub base_positive_rate: f64,
    pub seed: u64,
    pub label_sharpness: f64,
    pub attribute_label_coupling: f64,
}

impl From<&FcroGenSpec> for GenSpec {
    fn from(s: &FcroGenSpec) -> Self {
        GenSpec {
            n: s.n,
            p: s.p,
            m: s.m,
            target_signal_strength: s.target_signal_strength,
            attribute_signal_strength: s.attribute_signal_strength,
            noise_sigma: s.noise_sigma,
            base_positive_rate: s.base_positive_rate,
            seed: s.seed,
            label_sharpness: s.label_sharpness,
            attribute_label_coupling: s.attribute_label_coupling,
        }
    }
}

pub struct FcroMatrix(Matrix);
pub struct FcroBasis(SubspaceBasis);
pub struct FcroTable(PredictionTable);
pub struct FcroDataset(LabeledDataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(FcroStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = status_of(&e);
        Failure(status, e.to_string())
    }
}

fn status_of(e: &Error) -> FcroStatus {
    match e {
        Error::Shape { .. } => FcroStatus::ShapeMismatch,
        Error::NonFinite { .. } | Error::NoConvergence { .. } | Error::NonFiniteLoss { .. } => {
            FcroStatus::Numeric
        }
        Error::Undefined(_) => FcroStatus::Undefined,
        Error::Infeasible { .. } => FcroStatus::Infeasible,
        Error::Stage { source, .. } => status_of(source),
        _ => FcroStatus::InvalidArgument,
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> FcroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FcroStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            FcroStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(FcroStatus::NullPointer, format!("{name} is null"))
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_slice<T: Copy>(
    out: *mut T,
    len: usize,
    values: &[T],
    name: &str,
) -> Result<(), Failure> {
    if len != values.len() {
        return Err(Failure(
            FcroStatus::ShapeMismatch,
            format!("{name} has length {len}, expected {}", values.len()),
        ));
    }
    if len == 0 {
        return Ok(());
    }
    if out.is_null() {
        return Err(null(name));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(values);
    Ok(())
}

unsafe fn emit<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(boxed(value));
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn grouping(g: i32) -> Result<Grouping, Failure> {
    match g {
        FCRO_JOINT => Ok(Grouping::Joint),
        i if i >= 0 => Ok(Grouping::Attribute(i as usize)),
        _ => Err(Failure(
            FcroStatus::InvalidArgument,
            format!("grouping {g} is neither FCRO_JOINT nor an attribute index"),
        )),
    }
}

/// Message of the last failed call on this thread, or "" after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fcro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fcro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- matrices ----

/// Copies `rows * cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut FcroMatrix,
) -> FcroStatus {
    run(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(FcroStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let values = slice(data, len, "data")?.to_vec();
        let m = Matrix::new(rows, cols, values)?;
        emit(out, FcroMatrix(m), "out")
    })
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_matrix_rows(m: *const FcroMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_matrix_cols(m: *const FcroMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major contents into `out`, which must hold exactly
/// `rows * cols` doubles.
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fcro_matrix_copy(
    m: *const FcroMatrix,
    out: *mut f64,
    len: usize,
) -> FcroStatus {
    run(|| write_slice(out, len, get(m, "m")?.0.as_slice(), "out"))
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcro_matrix_free(m: *mut FcroMatrix) {
    free(m)
}

/// Thin SVD. `singular_values` receives `min(rows, cols)` values in
/// non-increasing order; `u` and `v` may be null when not wanted.
///
/// # Safety
/// `m` must be a live handle, `singular_values` must hold `len` doubles, and
/// non-null `u`/`v` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_svd(
    m: *const FcroMatrix,
    singular_values: *mut f64,
    len: usize,
    u: *mut *mut FcroMatrix,
    v: *mut *mut FcroMatrix,
) -> FcroStatus {
    run(|| {
        let svd = linalg::svd_thin(&get(m, "m")?.0)?;
        write_slice(
            singular_values,
            len,
            &svd.singular_values,
            "singular_values",
        )?;
        if !u.is_null() {
            u.write(boxed(FcroMatrix(svd.u)));
        }
        if !v.is_null() {
            v.write(boxed(FcroMatrix(svd.v)));
        }
        Ok(())
    })
}

// ---- sensitive subspace ----

/// Top-`k` left singular directions of `z_a` (d×n, columns are samples).
///
/// # Safety
/// `z_a` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_build_space(
    z_a: *const FcroMatrix,
    k: usize,
    out: *mut *mut FcroBasis,
) -> FcroStatus {
    run(|| {
        let basis = subspace::build_space(&get(z_a, "z_a")?.0, k)?;
        emit(out, FcroBasis(basis), "out")
    })
}

/// Number of basis vectors, or 0 for null.
///
/// # Safety
/// `b` must be null or a live basis handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_basis_rank(b: *const FcroBasis) -> usize {
    b.as_ref().map_or(0, |b| b.0.len())
}

/// Ambient dimension, or 0 for null.
///
/// # Safety
/// `b` must be null or a live basis handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_basis_dim(b: *const FcroBasis) -> usize {
    b.as_ref().map_or(0, |b| b.0.dim())
}

/// The d×k orthonormal basis as a new matrix.
///
/// # Safety
/// `b` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_basis_matrix(
    b: *const FcroBasis,
    out: *mut *mut FcroMatrix,
) -> FcroStatus {
    run(|| {
        let m = get(b, "b")?.0.basis().clone();
        emit(out, FcroMatrix(m), "out")
    })
}

/// Per-direction importance (squared singular values), `rank` entries.
///
/// # Safety
/// `b` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fcro_basis_importance(
    b: *const FcroBasis,
    out: *mut f64,
    len: usize,
) -> FcroStatus {
    run(|| write_slice(out, len, get(b, "b")?.0.importance(), "out"))
}

/// # Safety
/// `b` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcro_basis_free(b: *mut FcroBasis) {
    free(b)
}

/// Fraction of the squared Frobenius norm of `z_a` inside the basis span.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_captured_variance(
    z_a: *const FcroMatrix,
    b: *const FcroBasis,
    out: *mut f64,
) -> FcroStatus {
    run(|| {
        let v = subspace::captured_variance(&get(z_a, "z_a")?.0, &get(b, "b")?.0)?;
        put(out, v, "out")
    })
}

// ---- orthogonality losses ----

/// Column-space loss of `z_t` (d×B) against the basis. When `grad` is
/// non-null it receives the gradient with respect to `z_t`.
///
/// # Safety
/// Handles must be live, `value` writable, `grad` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_corth_loss(
    z_t: *const FcroMatrix,
    b: *const FcroBasis,
    value: *mut f64,
    grad: *mut *mut FcroMatrix,
) -> FcroStatus {
    run(|| {
        let r = losses::corth_loss(&get(z_t, "z_t")?.0, &get(b, "b")?.0)?;
        put(value, r.value, "value")?;
        if !grad.is_null() {
            grad.write(boxed(FcroMatrix(r.grad_z)));
        }
        Ok(())
    })
}

/// Row-space loss between `z_t` and `z_a` (both d×B). When `grad` is non-null
/// it receives the gradient with respect to `z_t`.
///
/// # Safety
/// Handles must be live, `value` writable, `grad` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_rorth_loss(
    z_t: *const FcroMatrix,
    z_a: *const FcroMatrix,
    value: *mut f64,
    grad: *mut *mut FcroMatrix,
) -> FcroStatus {
    run(|| {
        let r = losses::rorth_loss(&get(z_t, "z_t")?.0, &get(z_a, "z_a")?.0)?;
        put(value, r.value, "value")?;
        if !grad.is_null() {
            grad.write(boxed(FcroMatrix(r.grad_z)));
        }
        Ok(())
    })
}

// ---- metrics ----

/// ROC AUC of `n` scores against 0/1 labels. Returns
/// `FCRO_STATUS_UNDEFINED` when only one class is present.
///
/// # Safety
/// `scores` and `labels` must hold `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> FcroStatus {
    run(|| {
        let v = fairmetrics::auc(slice(scores, n, "scores")?, slice(labels, n, "labels")?)?;
        put(out, v, "out")
    })
}

/// Prediction table of `n` samples with `m` binary attributes.
/// `attributes` is row-major n×m.
///
/// # Safety
/// `scores`/`labels` must hold `n` entries, `attributes` `n * m`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_table_new(
    n: usize,
    scores: *const f64,
    labels: *const u8,
    m: usize,
    attributes: *const u8,
    out: *mut *mut FcroTable,
) -> FcroStatus {
    run(|| {
        let scores = slice(scores, n, "scores")?.to_vec();
        let labels = slice(labels, n, "labels")?.to_vec();
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Failure(FcroStatus::InvalidArgument, "n * m overflows".into()))?;
        let flat = slice(attributes, len, "attributes")?;
        let attrs = (0..n).map(|i| flat[i * m..(i + 1) * m].to_vec()).collect();
        let t = PredictionTable::new(scores, labels, attrs)?;
        emit(out, FcroTable(t), "out")
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcro_table_free(t: *mut FcroTable) {
    free(t)
}

/// Equalized-odds disparity over `grouping` (an attribute index or
/// `FCRO_JOINT`). Groups with fewer than `min_count` samples of a label are
/// skipped.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_ed_disparity(
    t: *const FcroTable,
    grouping: i32,
    min_count: usize,
    mode: FcroEdMode,
    out: *mut f64,
) -> FcroStatus {
    run(|| {
        let opts = MetricOptions {
            min_count,
            ed_mode: match mode {
                FcroEdMode::Max => EdMode::Max,
                FcroEdMode::MeanGap => EdMode::MeanGap,
            },
        };
        let d = fairmetrics::ed_disparity(&get(t, "t")?.0, self::grouping(grouping)?, &opts)?;
        put(out, d.value, "out")
    })
}

/// Largest AUC gap between groups of `grouping`.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_auc_disparity(
    t: *const FcroTable,
    grouping: i32,
    out: *mut f64,
) -> FcroStatus {
    run(|| {
        let d = fairmetrics::auc_disparity(&get(t, "t")?.0, self::grouping(grouping)?)?;
        put(out, d.value, "out")
    })
}

// ---- synthetic data ----

#[no_mangle]
pub extern "C" fn fcro_gen_spec_default() -> FcroGenSpec {
    let d = GenSpec::default();
    FcroGenSpec {
        n: d.n,
        p: d.p,
        m: d.m,
        target_signal_strength: d.target_signal_strength,
        attribute_signal_strength: d.attribute_signal_strength,
        noise_sigma: d.noise_sigma,
        base_positive_rate: d.base_positive_rate,
        seed: d.seed,
        label_sharpness: d.label_sharpness,
        attribute_label_coupling: d.attribute_label_coupling,
    }
}

/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_generate(
    spec: *const FcroGenSpec,
    out: *mut *mut FcroDataset,
) -> FcroStatus {
    run(|| {
        let d = datagen::generate(&GenSpec::from(get(spec, "spec")?))?;
        emit(out, FcroDataset(d), "out")
    })
}

/// Subsamples `data` until every attribute's positive-rate gap is near
/// `target_gap`. Returns `FCRO_STATUS_INFEASIBLE` when the gap is out of reach.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_amplify(
    data: *const FcroDataset,
    target_gap: f64,
    seed: u64,
    out: *mut *mut FcroDataset,
) -> FcroStatus {
    run(|| {
        let a = datagen::bias_amplify(&get(data, "data")?.0, target_gap, seed)?;
        emit(out, FcroDataset(a.data), "out")
    })
}

/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_len(d: *const FcroDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_num_features(d: *const FcroDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.num_features())
}

/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_num_attributes(d: *const FcroDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.num_attributes())
}

/// Features as a new n×p matrix (rows are samples).
///
/// # Safety
/// `d` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_features(
    d: *const FcroDataset,
    out: *mut *mut FcroMatrix,
) -> FcroStatus {
    run(|| {
        let f = get(d, "d")?.0.features.clone();
        emit(out, FcroMatrix(f), "out")
    })
}

/// # Safety
/// `d` must be a live handle and `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_labels(
    d: *const FcroDataset,
    out: *mut u8,
    len: usize,
) -> FcroStatus {
    run(|| write_slice(out, len, &get(d, "d")?.0.labels, "out"))
}

/// Attributes as row-major n×m bytes.
///
/// # Safety
/// `d` must be a live handle and `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_attributes(
    d: *const FcroDataset,
    out: *mut u8,
    len: usize,
) -> FcroStatus {
    run(|| {
        let flat: Vec<u8> = get(d, "d")?.0.attributes.concat();
        write_slice(out, len, &flat, "out")
    })
}

/// Absolute positive-rate gap between the two values of attribute `i`.
///
/// # Safety
/// `d` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_positive_rate_gap(
    d: *const FcroDataset,
    i: usize,
    out: *mut f64,
) -> FcroStatus {
    run(|| {
        let d = &get(d, "d")?.0;
        let (_, _, gap) = fairmetrics::group_positive_rate(&d.labels, &d.attributes, i)?;
        put(out, gap, "out")
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcro_dataset_free(d: *mut FcroDataset) {
    free(d)
}
