//! C ABI for `gssdecon`.
//!
//! Every entry point returns a [`GssStatus`]. On failure a message is kept in
//! thread-local storage and can be read with `gss_last_error`. Fits are
//! opaque heap handles released with `gss_fit_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gssdecon::bandwidth::BandwidthMethod;
use gssdecon::distributions::{ErrorFamily, ErrorModel};
use gssdecon::selection::{run_pipeline, PipelineConfig, PipelineOutcome, SelectionMethod};
use gssdecon::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GssStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Estimation = 3,
    Config = 4,
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GssErrorFamily {
    Normal = 0,
    Laplace = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GssBandwidth {
    Cv = 0,
    Mise = 1,
    Plugin = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GssSelection {
    Skewness = 0,
    Phase = 1,
    Random = 2,
}

/// Pipeline settings. Fill with `gss_options_default` before changing
/// individual fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GssOptions {
    /// Number of moment equations, 2 to 5.
    pub moments: u32,
    /// A `GssBandwidth` value.
    pub bandwidth: u32,
    /// A `GssSelection` value.
    pub selection: u32,
    pub kappa: f64,
    /// Phase window; zero or negative picks it from the data.
    pub t_star: f64,
    /// Seed for random selection.
    pub seed: u64,
}

/// Opaque fitted model.
pub struct GssFit {
    outcome: PipelineOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> GssStatus {
    match err.exit_code() {
        3 => GssStatus::Estimation,
        4 => match err {
            Error::InvalidParameter(_) | Error::UnsupportedOrder { .. } => GssStatus::InvalidArgument,
            _ => GssStatus::Config,
        },
        _ => GssStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic. Every exported function goes
/// through here so no unwind crosses the boundary.
fn guard<F: FnOnce() -> Result<(), (GssStatus, String)>>(f: F) -> GssStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GssStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            GssStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (GssStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GssStatus, String) {
    (GssStatus::NullPointer, format!("{what} is null"))
}

// Enum-valued inputs arrive as plain integers: an out-of-range value from C
// must be rejected, not transmuted.
fn bad_enum(what: &str, v: u32) -> (GssStatus, String) {
    (GssStatus::InvalidArgument, format!("unknown {what} value {v}"))
}

fn options_to_config(o: &GssOptions) -> Result<PipelineConfig, (GssStatus, String)> {
    let bandwidth = match o.bandwidth {
        x if x == GssBandwidth::Cv as u32 => BandwidthMethod::Cv,
        x if x == GssBandwidth::Mise as u32 => BandwidthMethod::Mise,
        x if x == GssBandwidth::Plugin as u32 => BandwidthMethod::Plugin,
        x => return Err(bad_enum("bandwidth", x)),
    };
    let selection = match o.selection {
        x if x == GssSelection::Skewness as u32 => SelectionMethod::Skewness,
        x if x == GssSelection::Phase as u32 => SelectionMethod::Phase,
        x if x == GssSelection::Random as u32 => SelectionMethod::Random,
        x => return Err(bad_enum("selection", x)),
    };
    Ok(PipelineConfig {
        moments: o.moments as usize,
        bandwidth,
        selection,
        kappa: o.kappa,
        t_star: (o.t_star > 0.0).then_some(o.t_star),
        seed: o.seed,
        ..PipelineConfig::default()
    })
}

/// Writes the library defaults into `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `GssOptions`.
#[no_mangle]
pub unsafe extern "C" fn gss_options_default(out: *mut GssOptions) -> GssStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = PipelineConfig::default();
        let opts = GssOptions {
            moments: d.moments as u32,
            bandwidth: GssBandwidth::Mise as u32,
            selection: GssSelection::Phase as u32,
            kappa: d.kappa,
            t_star: 0.0,
            seed: d.seed,
        };
        out.write(opts);
        Ok(())
    })
}

/// Fits the deconvolution estimator to `n` contaminated observations.
/// `family` is a `GssErrorFamily` value and `options` may be null for
/// defaults. On success `*out` owns a new fit.
///
/// # Safety
/// `w` must point to `n` readable doubles, `options` must be null or valid,
/// and `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn gss_deconvolve(
    w: *const f64,
    n: usize,
    family: u32,
    error_variance: f64,
    options: *const GssOptions,
    out: *mut *mut GssFit,
) -> GssStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        if w.is_null() {
            return Err(null("w"));
        }
        let data = std::slice::from_raw_parts(w, n);
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err((GssStatus::InvalidArgument, format!("w[{i}] is not finite")));
        }
        let fam = match family {
            x if x == GssErrorFamily::Normal as u32 => ErrorFamily::Normal,
            x if x == GssErrorFamily::Laplace as u32 => ErrorFamily::Laplace,
            x => return Err(bad_enum("error family", x)),
        };
        let model = ErrorModel::new(fam, error_variance).map_err(lib_err)?;
        let config = match options.as_ref() {
            Some(o) => options_to_config(o)?,
            None => PipelineConfig::default(),
        };
        let outcome = run_pipeline(data, &model, &config, None).map_err(lib_err)?;
        out.write(Box::into_raw(Box::new(GssFit { outcome })));
        Ok(())
    })
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must be null or a pointer from `gss_deconvolve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_free(fit: *mut GssFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Location, scale and bandwidth of the selected fit.
///
/// # Safety
/// `fit` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_params(
    fit: *const GssFit,
    xi: *mut f64,
    omega: *mut f64,
    h: *mut f64,
) -> GssStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.outcome.fit;
        if !xi.is_null() {
            xi.write(f.xi);
        }
        if !omega.is_null() {
            omega.write(f.omega);
        }
        if !h.is_null() {
            h.write(f.h);
        }
        Ok(())
    })
}

/// Number of candidate solutions considered by the selection step.
///
/// # Safety
/// `fit` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_candidate_count(fit: *const GssFit, count: *mut usize) -> GssStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        count.write(f.outcome.candidates.len());
        Ok(())
    })
}

/// Index of the selected candidate.
///
/// # Safety
/// `fit` must be a live handle and `index` writable.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_selected(fit: *const GssFit, index: *mut usize) -> GssStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if index.is_null() {
            return Err(null("index"));
        }
        let chosen = f.outcome.fit.selection.as_ref().map_or(0, |s| s.chosen);
        index.write(chosen);
        Ok(())
    })
}

/// Parameters of candidate `i`: GMM location, scale and objective, the
/// bandwidth used, and the selection score (lower is preferred).
///
/// # Safety
/// `fit` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_candidate(
    fit: *const GssFit,
    i: usize,
    xi: *mut f64,
    omega: *mut f64,
    d: *mut f64,
    h: *mut f64,
    score: *mut f64,
) -> GssStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.outcome;
        let c = f.candidates.get(i).ok_or_else(|| {
            (
                GssStatus::OutOfRange,
                format!("candidate {i} out of range ({} candidates)", f.candidates.len()),
            )
        })?;
        let sc = f
            .fit
            .selection
            .as_ref()
            .and_then(|s| s.scores.get(i).copied())
            .unwrap_or(f64::NAN);
        for (p, v) in [
            (xi, c.solution.xi),
            (omega, c.solution.omega),
            (d, c.solution.d),
            (h, c.bandwidth.h),
            (score, sc),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Evaluates the fitted density of X at `m` points.
///
/// # Safety
/// `x` must point to `m` readable doubles and `out` to `m` writable ones.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_density(
    fit: *const GssFit,
    x: *const f64,
    m: usize,
    out: *mut f64,
) -> GssStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.outcome.fit;
        if m == 0 {
            return Ok(());
        }
        if x.is_null() || out.is_null() {
            return Err(null("x or out"));
        }
        let xs = std::slice::from_raw_parts(x, m);
        let ys = std::slice::from_raw_parts_mut(out, m);
        for (y, &v) in ys.iter_mut().zip(xs) {
            *y = f.density(v);
        }
        Ok(())
    })
}

/// Evaluates the fitted skewing function, in [0, 1], at `m` standardized points.
///
/// # Safety
/// `z` must point to `m` readable doubles and `out` to `m` writable ones.
#[no_mangle]
pub unsafe extern "C" fn gss_fit_skew(
    fit: *const GssFit,
    z: *const f64,
    m: usize,
    out: *mut f64,
) -> GssStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.outcome.fit;
        if m == 0 {
            return Ok(());
        }
        if z.is_null() || out.is_null() {
            return Err(null("z or out"));
        }
        let zs = std::slice::from_raw_parts(z, m);
        let ys = std::slice::from_raw_parts_mut(out, m);
        for (y, &v) in ys.iter_mut().zip(zs) {
            *y = f.skew(v);
        }
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn gss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn gss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
