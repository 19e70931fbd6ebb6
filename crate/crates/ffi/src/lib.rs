//! C interface to `rll-core`.
//!
//! Every fallible function returns an [`RllStatus`]; on failure the message
//! is available from [`rll_last_error_message`] on the same thread until the
//! next call. Snapshots are opaque handles released with
//! [`rll_snapshot_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rll_core::algebra::summarize;
use rll_core::io::{load_snapshot, save_snapshot};
use rll_core::mds::{classical_mds, dissimilarity_matrix, DissimilarityMatrix, LayerSelection, Metric};
use rll_core::nn::WeightSnapshot;
use rll_core::poly::{fit_relu_polynomial, FitMethod};
use rll_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RllStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Mismatch = 5,
    Numeric = 6,
    BudgetExceeded = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RllMetric {
    OneMinusCosine = 0,
    Euclidean = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RllFitMethod {
    UniformGridLeastMax = 0,
    LegendreProjection = 1,
}

/// Size summary of a polynomial system. Exact values are not exposed here;
/// the base-2 logarithms cover every input size.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RllSummary {
    pub per_equation_degree_log2: f64,
    pub bezout_log2: f64,
    pub shub_smale_log2: f64,
    /// K - N; negative when overdetermined.
    pub solution_dim: i64,
}

/// Opaque snapshot handle.
pub struct RllSnapshot {
    inner: WeightSnapshot,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RllStatus {
    match e {
        Error::Precondition(_) | Error::Config(_) | Error::InvalidSpec(_) | Error::LabelOutOfRange { .. } => {
            RllStatus::InvalidArgument
        }
        Error::Io { .. } => RllStatus::Io,
        Error::Parse { .. } | Error::BadMagic(_) | Error::Json(_) => RllStatus::Parse,
        Error::ShapeMismatch { .. } | Error::SnapshotMismatch { .. } => RllStatus::Mismatch,
        Error::NumericOverflow { .. } | Error::UndefinedDissimilarity(..) | Error::NotOnSystem { .. } => {
            RllStatus::Numeric
        }
        Error::BudgetExceeded { .. } => RllStatus::BudgetExceeded,
        Error::Checksum { .. } | Error::Locked(_) => RllStatus::Other,
    }
}

struct Fail(RllStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RllStatus::NullArgument, format!("`{what}` is NULL"))
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RllStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RllStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RllStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RllStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn snapshot_ref<'a>(s: *const RllSnapshot) -> Result<&'a RllSnapshot, Fail> {
    s.as_ref().ok_or_else(|| null("snapshot"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rll_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn rll_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `out` must be NULL or point to writable memory for one `RllSummary`.
#[no_mangle]
pub unsafe extern "C" fn rll_summarize(l: u64, d: u64, n: u64, k: u64, out: *mut RllSummary) -> RllStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = summarize(l, d, n, k)?;
        *out = RllSummary {
            per_equation_degree_log2: s.per_equation_degree_log2,
            bezout_log2: s.bezout_log2,
            shub_smale_log2: s.shub_smale_log2,
            solution_dim: i64::try_from(s.solution_dim)
                .map_err(|_| Fail(RllStatus::InvalidArgument, "solution dimension overflows int64".into()))?,
        };
        Ok(())
    })
}

/// Fits a degree-`degree` polynomial to ReLU on `[-bound, bound]` and writes
/// its `degree + 1` coefficients, lowest degree first.
///
/// # Safety
/// `coefficients` must hold `capacity` doubles; `sup_error` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rll_fit_relu_polynomial(
    degree: usize,
    bound: f64,
    method: RllFitMethod,
    coefficients: *mut f64,
    capacity: usize,
    sup_error: *mut f64,
) -> RllStatus {
    guard(|| {
        if coefficients.is_null() {
            return Err(null("coefficients"));
        }
        if capacity < degree.saturating_add(1) {
            return Err(Fail(
                RllStatus::BufferTooSmall,
                format!("need {} coefficients, buffer holds {capacity}", degree.saturating_add(1)),
            ));
        }
        let method = match method {
            RllFitMethod::UniformGridLeastMax => FitMethod::UniformGridLeastMax,
            RllFitMethod::LegendreProjection => FitMethod::LegendreProjection,
        };
        let fit = fit_relu_polynomial(degree, bound, method)?;
        std::slice::from_raw_parts_mut(coefficients, fit.coefficients.len()).copy_from_slice(&fit.coefficients);
        if let Some(e) = sup_error.as_mut() {
            *e = fit.sup_error;
        }
        Ok(())
    })
}

/// Classical MDS of a row-major `n x n` dissimilarity matrix into `dim`
/// coordinates per item, written row-major to `points`.
///
/// # Safety
/// `dissimilarities` must hold `n * n` doubles and `points` `n * dim`;
/// `strain` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rll_classical_mds(
    n: usize,
    dissimilarities: *const f64,
    dim: usize,
    points: *mut f64,
    strain: *mut f64,
) -> RllStatus {
    guard(|| {
        if dissimilarities.is_null() {
            return Err(null("dissimilarities"));
        }
        if points.is_null() {
            return Err(null("points"));
        }
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Fail(RllStatus::InvalidArgument, "n * n overflows".into()))?;
        let values = std::slice::from_raw_parts(dissimilarities, len);
        let d = DissimilarityMatrix::from_values(n, values, Metric::Euclidean)?;
        let emb = classical_mds(&d, dim)?;
        let out = std::slice::from_raw_parts_mut(points, n * dim);
        for (i, p) in emb.points.iter().enumerate() {
            out[i * dim..(i + 1) * dim].copy_from_slice(p);
        }
        if let Some(s) = strain.as_mut() {
            *s = emb.strain;
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_load(path: *const c_char, out: *mut *mut RllSnapshot) -> RllStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = load_snapshot(&path)?;
        let names = inner
            .arrays
            .iter()
            .map(|a| CString::new(a.name.as_str()).expect("array names carry no NULs"))
            .collect();
        *out = Box::into_raw(Box::new(RllSnapshot { inner, names }));
        Ok(())
    })
}

/// # Safety
/// `snapshot` must come from `rll_snapshot_load`; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_save(snapshot: *const RllSnapshot, path: *const c_char) -> RllStatus {
    guard(|| {
        let s = snapshot_ref(snapshot)?;
        let path = path_arg(path, "path")?;
        save_snapshot(&s.inner, &path)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `snapshot` must come from `rll_snapshot_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_free(snapshot: *mut RllSnapshot) {
    if !snapshot.is_null() {
        drop(Box::from_raw(snapshot));
    }
}

/// # Safety
/// `snapshot` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_epoch(snapshot: *const RllSnapshot, out: *mut u64) -> RllStatus {
    guard(|| {
        let s = snapshot_ref(snapshot)?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.inner.meta.epoch;
        Ok(())
    })
}

/// # Safety
/// `snapshot` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_array_count(snapshot: *const RllSnapshot, out: *mut usize) -> RllStatus {
    guard(|| {
        let s = snapshot_ref(snapshot)?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.inner.arrays.len();
        Ok(())
    })
}

fn array_at(s: &RllSnapshot, index: usize) -> Result<&rll_core::nn::ParamArray, Fail> {
    s.inner.arrays.get(index).ok_or_else(|| {
        Fail(
            RllStatus::InvalidArgument,
            format!("array index {index} out of range ({} arrays)", s.inner.arrays.len()),
        )
    })
}

/// Name of array `index`, or NULL when out of range. Owned by the handle.
///
/// # Safety
/// `snapshot` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_array_name(snapshot: *const RllSnapshot, index: usize) -> *const c_char {
    match snapshot.as_ref().and_then(|s| s.names.get(index)) {
        Some(n) => n.as_ptr(),
        None => std::ptr::null(),
    }
}

/// # Safety
/// `snapshot` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_array_len(snapshot: *const RllSnapshot, index: usize, out: *mut usize) -> RllStatus {
    guard(|| {
        let a = array_at(snapshot_ref(snapshot)?, index)?;
        *out.as_mut().ok_or_else(|| null("out"))? = a.data.len();
        Ok(())
    })
}

/// Copies array `index` into `buffer`.
///
/// # Safety
/// `snapshot` must be a live handle and `buffer` hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_array_copy(
    snapshot: *const RllSnapshot,
    index: usize,
    buffer: *mut f64,
    capacity: usize,
) -> RllStatus {
    guard(|| {
        let a = array_at(snapshot_ref(snapshot)?, index)?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if capacity < a.data.len() {
            return Err(Fail(
                RllStatus::BufferTooSmall,
                format!("array holds {} values, buffer {capacity}", a.data.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buffer, a.data.len()).copy_from_slice(&a.data);
        Ok(())
    })
}

/// Pairwise dissimilarity of `n` snapshots over all weight layers, written
/// row-major to `out` (`n * n` doubles). Undefined entries are NaN.
///
/// # Safety
/// `snapshots` must hold `n` live handles and `out` `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn rll_snapshot_dissimilarity(
    snapshots: *const *const RllSnapshot,
    n: usize,
    metric: RllMetric,
    out: *mut f64,
) -> RllStatus {
    guard(|| {
        if snapshots.is_null() {
            return Err(null("snapshots"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let handles = std::slice::from_raw_parts(snapshots, n);
        let snaps = handles
            .iter()
            .map(|&h| snapshot_ref(h).map(|s| s.inner.clone()))
            .collect::<Result<Vec<_>, Fail>>()?;
        let metric = match metric {
            RllMetric::OneMinusCosine => Metric::OneMinusCosine,
            RllMetric::Euclidean => Metric::Euclidean,
        };
        let d = dissimilarity_matrix(&snaps, &LayerSelection::All, metric)?;
        let out = std::slice::from_raw_parts_mut(out, n * n);
        for (o, e) in out.iter_mut().zip(&d.entries) {
            *o = e.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}
