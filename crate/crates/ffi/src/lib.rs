//! C ABI for the revprobe toolkit.
//!
//! Objects are exposed as opaque handles created by `rp_*_new` / `rp_*_load`
//! / `rp_kmeans_fit` / `rp_probe_train` and released with the matching
//! `rp_*_free`. Every fallible call returns an [`RpStatus`]; on failure the
//! message is kept per thread and can be fetched with
//! [`rp_last_error_message`]. Strings returned by the library are released
//! with [`rp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use revprobe::data::{load_concepts, load_features, save_features, ConceptGroup};
use revprobe::metrics::{ami, contingency, entropy, expected_mi, mi_nmi, NmiNormalizer};
use revprobe::pipeline::{run_full_eval, split_for, RunConfig};
use revprobe::probe::train_reverse_probe;
use revprobe::{
    ClusterAssignment, ConceptMatrix, Error, FeatureMatrix, KmeansConfig, Quantizer, ReverseProbe,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    /// Bad argument value or mismatched shapes.
    InvalidArgument = 1,
    /// Malformed file contents.
    Format = 2,
    /// Values violating a data invariant (non-finite, non-binary, ...).
    Data = 3,
    /// Probe training produced a non-finite loss.
    Divergence = 4,
    Io = 5,
    NullPointer = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Mean used to normalize mutual information.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpNormalizer {
    Arithmetic = 0,
    Geometric = 1,
    Max = 2,
    Min = 3,
}

impl From<RpNormalizer> for NmiNormalizer {
    fn from(n: RpNormalizer) -> Self {
        match n {
            RpNormalizer::Arithmetic => NmiNormalizer::Arithmetic,
            RpNormalizer::Geometric => NmiNormalizer::Geometric,
            RpNormalizer::Max => NmiNormalizer::Max,
            RpNormalizer::Min => NmiNormalizer::Min,
        }
    }
}

/// N × D real-valued features.
pub struct RpFeatures(FeatureMatrix);
/// N × M binary concepts with named groups.
pub struct RpConcepts(ConceptMatrix);
/// K-means centroids.
pub struct RpQuantizer(Quantizer);
/// Trained concepts → clusters probe.
pub struct RpProbe(ReverseProbe);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RpStatus {
    match e.root() {
        Error::Format(_) | Error::Json(_) => RpStatus::Format,
        Error::Data(_) => RpStatus::Data,
        Error::Construction(_) | Error::Argument(_) => RpStatus::InvalidArgument,
        Error::Divergence { .. } => RpStatus::Divergence,
        Error::Io { .. } => RpStatus::Io,
        Error::Run { .. } => RpStatus::Internal,
    }
}

struct Failure(RpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            RpStatus::Internal
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RpStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output"));
    }
    *out = value;
    Ok(())
}

unsafe fn drop_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn to_usize(v: &[u64]) -> Result<Vec<usize>, Failure> {
    v.iter()
        .map(|&x| usize::try_from(x))
        .collect::<Result<_, _>>()
        .map_err(|_| {
            Failure(
                RpStatus::InvalidArgument,
                "count does not fit in usize".into(),
            )
        })
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn rp_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Free with
/// [`rp_string_free`].
#[no_mangle]
pub extern "C" fn rp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |s| s.clone().into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `n * dim` row-major values into a new feature handle.
///
/// # Safety
/// `values` must point to `n * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_features_new(
    values: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut RpFeatures,
) -> RpStatus {
    guard(|| {
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Failure(RpStatus::InvalidArgument, "n * dim overflows".into()))?;
        let v = slice_arg(values, len, "values")?;
        let m = FeatureMatrix::new(n, dim, v.to_vec(), "ffi")?;
        put(out, RpFeatures(m))
    })
}

/// Loads an RPFM file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_features_load(
    path: *const c_char,
    out: *mut *mut RpFeatures,
) -> RpStatus {
    guard(|| {
        let p = path_arg(path)?;
        let m = load_features(&p, revprobe::data::FeatureFormat::from_path(&p))?;
        put(out, RpFeatures(m))
    })
}

/// Writes an RPFM file.
///
/// # Safety
/// `f` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_features_save(f: *const RpFeatures, path: *const c_char) -> RpStatus {
    guard(|| {
        let f = as_ref(f, "features")?;
        Ok(save_features(&f.0, &path_arg(path)?)?)
    })
}

/// # Safety
/// `f` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_features_n_samples(f: *const RpFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.0.n_samples())
}

/// # Safety
/// `f` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_features_dim(f: *const RpFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.0.dim())
}

/// # Safety
/// `f` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_features_free(f: *mut RpFeatures) {
    drop_handle(f);
}

/// Builds concepts from `n * m` row-major bytes (each 0 or 1). All columns
/// form one group named `all`, concepts are named `c0`, `c1`, ...
///
/// # Safety
/// `bits` must point to `n * m` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_concepts_new_dense(
    bits: *const u8,
    n: usize,
    m: usize,
    out: *mut *mut RpConcepts,
) -> RpStatus {
    guard(|| {
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Failure(RpStatus::InvalidArgument, "n * m overflows".into()))?;
        let b = slice_arg(bits, len, "bits")?;
        let names = (0..m).map(|j| format!("c{j}")).collect();
        let c = ConceptMatrix::from_dense(n, m, b, names, vec![ConceptGroup::new("all", 0, m)])?;
        put(out, RpConcepts(c))
    })
}

/// Loads an RPCM file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_concepts_load(
    path: *const c_char,
    out: *mut *mut RpConcepts,
) -> RpStatus {
    guard(|| put(out, RpConcepts(load_concepts(&path_arg(path)?)?)))
}

/// # Safety
/// `c` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_concepts_n_samples(c: *const RpConcepts) -> usize {
    c.as_ref().map_or(0, |c| c.0.n_samples())
}

/// # Safety
/// `c` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_concepts_n_concepts(c: *const RpConcepts) -> usize {
    c.as_ref().map_or(0, |c| c.0.n_concepts())
}

/// # Safety
/// `c` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_concepts_free(c: *mut RpConcepts) {
    drop_handle(c);
}

/// Fits K-means (k-means++ seeding, best of `n_restarts`) on the features as
/// given; standardize beforehand if needed.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_kmeans_fit(
    f: *const RpFeatures,
    k: usize,
    max_steps: usize,
    n_restarts: usize,
    seed: u64,
    out: *mut *mut RpQuantizer,
) -> RpStatus {
    guard(|| {
        let f = as_ref(f, "features")?;
        let cfg = KmeansConfig {
            k,
            max_steps,
            n_restarts,
            seed,
            ..KmeansConfig::default()
        };
        put(out, RpQuantizer(cfg.fit(&f.0)?))
    })
}

/// Writes the nearest-centroid index of every sample to `labels_out`.
///
/// # Safety
/// `q` and `f` must be live handles; `labels_out` must hold
/// `rp_features_n_samples(f)` writable elements.
#[no_mangle]
pub unsafe extern "C" fn rp_quantizer_assign(
    q: *const RpQuantizer,
    f: *const RpFeatures,
    labels_out: *mut usize,
) -> RpStatus {
    guard(|| {
        let (q, f) = (as_ref(q, "quantizer")?, as_ref(f, "features")?);
        if labels_out.is_null() {
            return Err(null("labels_out"));
        }
        let a = q.0.assign(&f.0)?;
        ptr::copy_nonoverlapping(a.labels().as_ptr(), labels_out, a.n_samples());
        Ok(())
    })
}

/// Inertia reached when fitting; NaN for a NULL handle.
///
/// # Safety
/// `q` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_quantizer_inertia(q: *const RpQuantizer) -> f64 {
    q.as_ref().map_or(f64::NAN, |q| q.0.inertia())
}

/// # Safety
/// `q` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_quantizer_k(q: *const RpQuantizer) -> usize {
    q.as_ref().map_or(0, |q| q.0.k())
}

/// # Safety
/// `q` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_quantizer_save(q: *const RpQuantizer, path: *const c_char) -> RpStatus {
    guard(|| Ok(as_ref(q, "quantizer")?.0.save(&path_arg(path)?)?))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_quantizer_load(
    path: *const c_char,
    out: *mut *mut RpQuantizer,
) -> RpStatus {
    guard(|| put(out, RpQuantizer(Quantizer::load(&path_arg(path)?)?)))
}

/// # Safety
/// `q` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_quantizer_free(q: *mut RpQuantizer) {
    drop_handle(q);
}

unsafe fn config_arg(json: *const c_char) -> Result<RunConfig, Failure> {
    if json.is_null() {
        return Ok(RunConfig::default());
    }
    let s = CStr::from_ptr(json).to_str().map_err(|_| {
        Failure(
            RpStatus::InvalidArgument,
            "config is not valid UTF-8".into(),
        )
    })?;
    let cfg: RunConfig = serde_json::from_str(s).map_err(Error::from)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Trains a reverse probe from `c` to `labels` (values in `[0, k)`, one per
/// sample) on a stratified split. `config_json` is a run configuration as JSON
/// or NULL for defaults; its split ratios, seed and probe settings apply.
///
/// # Safety
/// `c` must be a live handle, `labels` must hold `rp_concepts_n_samples(c)`
/// elements, `config_json` NULL or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_probe_train(
    c: *const RpConcepts,
    labels: *const usize,
    k: usize,
    config_json: *const c_char,
    out: *mut *mut RpProbe,
) -> RpStatus {
    guard(|| {
        let c = as_ref(c, "concepts")?;
        let labels = slice_arg(labels, c.0.n_samples(), "labels")?;
        let cfg = config_arg(config_json)?;
        let targets = ClusterAssignment::new(labels.to_vec(), k)?;
        let split = split_for(&targets, &cfg, 0)?;
        let probe = train_reverse_probe(&c.0, &targets, &split, &cfg.probe_config(0))?;
        put(out, RpProbe(probe))
    })
}

/// Arg-max cluster for every sample of `c`.
///
/// # Safety
/// `p` and `c` must be live handles; `labels_out` must hold
/// `rp_concepts_n_samples(c)` writable elements.
#[no_mangle]
pub unsafe extern "C" fn rp_probe_predict(
    p: *const RpProbe,
    c: *const RpConcepts,
    labels_out: *mut usize,
) -> RpStatus {
    guard(|| {
        let (p, c) = (as_ref(p, "probe")?, as_ref(c, "concepts")?);
        if labels_out.is_null() {
            return Err(null("labels_out"));
        }
        let idx: Vec<usize> = (0..c.0.n_samples()).collect();
        let pred = p.0.predict(&c.0, &idx)?;
        ptr::copy_nonoverlapping(pred.as_ptr(), labels_out, pred.len());
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_probe_save(p: *const RpProbe, path: *const c_char) -> RpStatus {
    guard(|| Ok(as_ref(p, "probe")?.0.save(&path_arg(path)?)?))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_probe_load(path: *const c_char, out: *mut *mut RpProbe) -> RpStatus {
    guard(|| put(out, RpProbe(ReverseProbe::load(&path_arg(path)?)?)))
}

/// # Safety
/// `p` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_probe_free(p: *mut RpProbe) {
    drop_handle(p);
}

/// Entropy in nats of the distribution given by `counts`.
///
/// # Safety
/// `counts` must point to `len` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_entropy(counts: *const u64, len: usize, out: *mut f64) -> RpStatus {
    guard(|| {
        let c = to_usize(slice_arg(counts, len, "counts")?)?;
        put_value(out, entropy(&c)?)
    })
}

/// Mutual information (nats) and normalized mutual information of two labelings.
///
/// # Safety
/// `a` and `b` must point to `n` readable elements; `mi_out` and `nmi_out`
/// must each be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn rp_mutual_info(
    a: *const usize,
    b: *const usize,
    n: usize,
    normalizer: RpNormalizer,
    mi_out: *mut f64,
    nmi_out: *mut f64,
) -> RpStatus {
    guard(|| {
        let t = contingency(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        let (mi, nmi) = mi_nmi(&t, normalizer.into());
        if !mi_out.is_null() {
            *mi_out = mi;
        }
        if !nmi_out.is_null() {
            *nmi_out = nmi;
        }
        Ok(())
    })
}

/// Adjusted mutual information of two labelings.
///
/// # Safety
/// `a` and `b` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_ami(
    a: *const usize,
    b: *const usize,
    n: usize,
    normalizer: RpNormalizer,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        let t = contingency(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        put_value(out, ami(&t, normalizer.into())?)
    })
}

/// Expected mutual information (nats) of a contingency table with the given
/// margins under random permutation.
///
/// # Safety
/// `row_sums` and `col_sums` must point to `n_rows` / `n_cols` readable
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_expected_mi(
    row_sums: *const u64,
    n_rows: usize,
    col_sums: *const u64,
    n_cols: usize,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        let r = slice_arg(row_sums, n_rows, "row_sums")?;
        let c = slice_arg(col_sums, n_cols, "col_sums")?;
        let n: u64 = r.iter().sum();
        put_value(out, expected_mi(r, c, n)?)
    })
}

/// Full evaluation (repeated K-means, reverse probes, aggregation); the
/// report is returned as a JSON string to free with [`rp_string_free`].
///
/// # Safety
/// `f` and `c` must be live handles, `config_json` NULL or NUL-terminated,
/// `report_out` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_evaluate_json(
    f: *const RpFeatures,
    c: *const RpConcepts,
    config_json: *const c_char,
    report_out: *mut *mut c_char,
) -> RpStatus {
    guard(|| {
        let (f, c) = (as_ref(f, "features")?, as_ref(c, "concepts")?);
        if report_out.is_null() {
            return Err(null("report_out"));
        }
        let cfg = config_arg(config_json)?;
        let report = run_full_eval(&f.0, &c.0, &cfg)?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        *report_out = CString::new(json)
            .map_err(|_| Failure(RpStatus::Internal, "report contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = rp_last_error_message();
        assert!(!p.is_null());
        let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
        unsafe { rp_string_free(p) };
        s
    }

    #[test]
    fn status_follows_the_root_cause() {
        let diverged = Error::Divergence {
            epoch: 3,
            lr: 3.5,
            loss: f64::NAN,
        };
        assert_eq!(status_of(&diverged), RpStatus::Divergence);
        let wrapped = Error::Run {
            run: 2,
            source: Box::new(diverged),
        };
        assert_eq!(status_of(&wrapped), RpStatus::Divergence);
        assert_eq!(
            status_of(&Error::Argument("x".into())),
            RpStatus::InvalidArgument
        );
        assert_eq!(status_of(&Error::Data("x".into())), RpStatus::Data);
    }

    #[test]
    fn guard_reports_failures_and_panics() {
        assert_eq!(guard(|| Ok(())), RpStatus::Ok);
        assert_eq!(
            guard(|| Err(Failure(RpStatus::Data, "bad rows".into()))),
            RpStatus::Data
        );
        assert_eq!(last_error(), "bad rows");
        let status = guard(|| panic!("boom"));
        assert_eq!(status, RpStatus::Internal);
        assert!(last_error().contains("boom"));
    }
}
