//! C ABI over `aft-core`.
//!
//! Handles are opaque pointers created by `aft_*_new`/`aft_fit` and released
//! with the matching `*_free`. Every fallible call returns an [`AftStatus`];
//! on failure, [`aft_last_error_message`] describes the error for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aft_core::data::{read_csv, validate_dataset, ClusteredDataset, CsvSchema, Observation, RawDataset};
use aft_core::estimator::{EstimatorConfig, Variant};
use aft_core::pipeline::{fit_variant, VariantFit};
use aft_core::weights::{GrConfig, WeightScheme};
use aft_core::AftError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AftStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    IoError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AftVariant {
    Gehan = 0,
    Weighted = 1,
    WeightedRobust = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AftScheme {
    Unit = 0,
    InverseSize = 1,
    CorrelationAdjusted = 2,
}

/// Fit settings; start from [`aft_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AftFitOptions {
    /// An [`AftVariant`] value.
    pub variant: u32,
    /// An [`AftScheme`] value.
    pub scheme: u32,
    /// Nonzero: use GR covariate weights for the robust variant.
    pub robust: u8,
    /// Nonzero: report the smoothed root; zero: the nonsmooth minimizer.
    pub smoothed: u8,
    pub alpha: f64,
    pub c_quantile: f64,
}

/// Opaque validated dataset.
pub struct AftDataset {
    inner: ClusteredDataset,
}

/// Opaque fit result.
pub struct AftFit {
    inner: VariantFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &AftError) -> AftStatus {
    match err {
        AftError::Io { .. } => AftStatus::IoError,
        AftError::InvalidArgument(_) | AftError::Config(_) => AftStatus::InvalidArgument,
        AftError::SingularJacobian(_) | AftError::Numerical(_) | AftError::DegenerateColumn { .. } => {
            AftStatus::NumericalError
        }
        _ => AftStatus::DataError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AftStatus, String)>) -> AftStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AftStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AftStatus::Panic
        }
    }
}

fn core_err(e: AftError) -> (AftStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (AftStatus, String) {
    (AftStatus::NullPointer, format!("{name} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (AftStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AftStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

/// Message for the most recent failure on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aft_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aft_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from flat arrays of `n_obs` rows.
///
/// Rows sharing a `cluster` id form one cluster, ordered by first
/// appearance. `time` holds raw (positive) times, `event` 0/1 indicators
/// and `covariates` a row-major `n_obs × p` matrix.
///
/// # Safety
/// Each pointer must reference at least as many elements as stated.
#[no_mangle]
pub unsafe extern "C" fn aft_dataset_new(
    n_obs: usize,
    p: usize,
    cluster: *const i64,
    time: *const f64,
    event: *const u8,
    covariates: *const f64,
    out: *mut *mut AftDataset,
) -> AftStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if cluster.is_null() || time.is_null() || event.is_null() || covariates.is_null() {
            return Err(null("input array"));
        }
        if n_obs == 0 || p == 0 {
            return Err((AftStatus::InvalidArgument, "n_obs and p must be positive".into()));
        }
        let cluster = std::slice::from_raw_parts(cluster, n_obs);
        let time = std::slice::from_raw_parts(time, n_obs);
        let event = std::slice::from_raw_parts(event, n_obs);
        let x = std::slice::from_raw_parts(covariates, n_obs * p);
        let mut ids: Vec<i64> = Vec::new();
        let mut clusters: Vec<Vec<Observation>> = Vec::new();
        for a in 0..n_obs {
            if !(time[a] > 0.0) {
                return Err((AftStatus::DataError, format!("time at row {} must be positive", a + 1)));
            }
            if event[a] > 1 {
                return Err((AftStatus::DataError, format!("event at row {} must be 0 or 1", a + 1)));
            }
            let slot = match ids.iter().position(|&c| c == cluster[a]) {
                Some(s) => s,
                None => {
                    ids.push(cluster[a]);
                    clusters.push(Vec::new());
                    ids.len() - 1
                }
            };
            clusters[slot].push(Observation::new(time[a].ln(), event[a] == 1, x[a * p..(a + 1) * p].to_vec()));
        }
        let mut raw = RawDataset::from_clusters(clusters);
        raw.cluster_ids = ids.iter().map(|c| c.to_string()).collect();
        let inner = validate_dataset(raw).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AftDataset { inner }));
        Ok(())
    })
}

/// Reads a CSV file; `covariates` is a comma-separated list of column names.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aft_dataset_from_csv(
    path: *const c_char,
    cluster_col: *const c_char,
    time_col: *const c_char,
    event_col: *const c_char,
    covariates: *const c_char,
    out: *mut *mut AftDataset,
) -> AftStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let covs: Vec<String> = c_str(covariates, "covariates")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let schema = CsvSchema::new(
            c_str(cluster_col, "cluster_col")?,
            c_str(time_col, "time_col")?,
            c_str(event_col, "event_col")?,
            covs,
        );
        let inner = read_csv(path, &schema).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AftDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from `aft_dataset_new`/`aft_dataset_from_csv` and not
/// have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn aft_dataset_free(dataset: *mut AftDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn aft_dataset_n_clusters(dataset: *const AftDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n_clusters())
}

/// # Safety
/// `dataset` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn aft_dataset_n_obs(dataset: *const AftDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n_obs())
}

/// # Safety
/// `dataset` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn aft_dataset_p(dataset: *const AftDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.p())
}

/// Smoothed weighted robust estimator with correlation-adjusted weights,
/// `α = 2`, `c` at the 0.95 chi-square quantile.
#[no_mangle]
pub extern "C" fn aft_fit_options_default() -> AftFitOptions {
    AftFitOptions {
        variant: AftVariant::WeightedRobust as u32,
        scheme: AftScheme::CorrelationAdjusted as u32,
        robust: 1,
        smoothed: 1,
        alpha: 2.0,
        c_quantile: 0.95,
    }
}

fn estimator_config(opts: &AftFitOptions) -> Result<EstimatorConfig, (AftStatus, String)> {
    let bad = |what: &str, v: u32| (AftStatus::InvalidArgument, format!("unknown {what} value {v}"));
    Ok(EstimatorConfig {
        variant: match opts.variant {
            0 => Variant::Gehan,
            1 => Variant::Weighted,
            2 => Variant::WeightedRobust,
            v => return Err(bad("variant", v)),
        },
        scheme: match opts.scheme {
            0 => WeightScheme::Unit,
            1 => WeightScheme::InverseSize,
            2 => WeightScheme::CorrelationAdjusted,
            v => return Err(bad("scheme", v)),
        },
        smoothed: opts.smoothed != 0,
        gr: GrConfig {
            alpha: opts.alpha,
            c_quantile: opts.c_quantile,
            c: None,
        },
        ..Default::default()
    })
}

/// Fits the model; `options` may be NULL for the defaults.
///
/// # Safety
/// `dataset` must be a live handle; `options` NULL or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aft_fit(
    dataset: *const AftDataset,
    options: *const AftFitOptions,
    out: *mut *mut AftFit,
) -> AftStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let data = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let opts = options.as_ref().copied().unwrap_or_else(|| aft_fit_options_default());
        if !(opts.alpha > 0.0) || !(opts.c_quantile > 0.0 && opts.c_quantile < 1.0) {
            return Err((AftStatus::InvalidArgument, "alpha must be positive and c_quantile in (0, 1)".into()));
        }
        let inner = fit_variant(&data.inner, &estimator_config(&opts)?, opts.robust != 0).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AftFit { inner }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from `aft_fit` and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn aft_fit_free(fit: *mut AftFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), (AftStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        return Err((
            AftStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Number of coefficients.
///
/// # Safety
/// `fit` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn aft_fit_p(fit: *const AftFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.fit.beta_hat.len())
}

/// Copies `β̂` into `out` (at least `p` doubles).
///
/// # Safety
/// `fit` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aft_fit_beta(fit: *const AftFit, out: *mut f64, len: usize) -> AftStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(f.inner.fit.beta_hat.as_slice(), out, len)
    })
}

/// Copies the standard errors `sqrt(diag(Σ̂)/N)` into `out`.
///
/// # Safety
/// As [`aft_fit_beta`].
#[no_mangle]
pub unsafe extern "C" fn aft_fit_std_errors(fit: *const AftFit, out: *mut f64, len: usize) -> AftStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let se: Vec<f64> = f.inner.sandwich.std_errors.iter().copied().collect();
        copy_out(&se, out, len)
    })
}

/// Copies `Σ̂` row-major into `out` (at least `p·p` doubles).
///
/// # Safety
/// As [`aft_fit_beta`].
#[no_mangle]
pub unsafe extern "C" fn aft_fit_sigma(fit: *const AftFit, out: *mut f64, len: usize) -> AftStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let s = &f.inner.sandwich.sigma_hat;
        let rows: Vec<f64> = (0..s.nrows()).flat_map(|i| s.row(i).iter().copied().collect::<Vec<_>>()).collect();
        copy_out(&rows, out, len)
    })
}

/// Estimated within-cluster correlation; NaN for the Gehan variant, which
/// does not estimate it.
///
/// # Safety
/// `fit` must be a live handle or NULL (returns NaN).
#[no_mangle]
pub unsafe extern "C" fn aft_fit_rho_bar(fit: *const AftFit) -> f64 {
    fit.as_ref()
        .and_then(|f| f.inner.prepared.as_ref().map(|p| p.rho_bar))
        .unwrap_or(f64::NAN)
}

/// 1 when the smoothed iteration converged, 0 otherwise or for NULL.
///
/// # Safety
/// `fit` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn aft_fit_converged(fit: *const AftFit) -> i32 {
    fit.as_ref().map_or(0, |f| i32::from(f.inner.smoothed.converged))
}

/// Outer (Γ-update) iterations of the smoothed fit.
///
/// # Safety
/// `fit` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn aft_fit_iterations(fit: *const AftFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.smoothed.outer_iterations)
}
