//! C ABI over `rtglmm`.
//!
//! Every fallible function returns an [`RtStatus`]; on failure the message is
//! available from [`rt_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Panics never cross
//! the boundary; they surface as `RT_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rtglmm::diffusion::{self, FhtSample};
use rtglmm::distributions::{self, DistributionSpec, Family};
use rtglmm::glmm::{self, FitOptions, FittedGlmm};
use rtglmm::ingest::{self, TrialDataset};
use rtglmm::{gof, reconstruction, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid parameter or argument.
    InvalidArgument = 2,
    /// Malformed or insufficient data.
    Data = 3,
    /// Non-convergence, refused reconstruction, or excessive truncation.
    Convergence = 4,
    Io = 5,
    /// Output buffer too small; the required size was reported.
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtFamily {
    InverseGaussian = 0,
    Gamma = 1,
}

impl From<RtFamily> for Family {
    fn from(f: RtFamily) -> Self {
        match f {
            RtFamily::InverseGaussian => Family::InverseGaussian,
            RtFamily::Gamma => Family::Gamma,
        }
    }
}

/// A distribution by value: `(mu, phi)` for the inverse Gaussian,
/// `(shape, scale)` for the Gamma.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RtDistribution {
    pub family: RtFamily,
    pub a: f64,
    pub b: f64,
}

impl RtDistribution {
    fn spec(&self) -> Result<DistributionSpec, Error> {
        match self.family {
            RtFamily::InverseGaussian => DistributionSpec::ig(self.a, self.b),
            RtFamily::Gamma => DistributionSpec::gamma(self.a, self.b),
        }
    }
}

/// Opaque trial dataset.
pub struct RtDataset(TrialDataset);

/// Opaque fitted model.
pub struct RtModel(FittedGlmm);

/// Opaque sample of first-hitting times.
pub struct RtFhtSample(FhtSample);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> RtStatus {
    match err {
        Error::ParameterDomain(_) | Error::Domain(_) | Error::Usage(_) => RtStatus::InvalidArgument,
        Error::Convergence(_) | Error::ReconstructionRefused(_) | Error::Truncation { .. } => {
            RtStatus::Convergence
        }
        Error::Io(_) => RtStatus::Io,
        Error::Csv(e) if e.is_io_error() => RtStatus::Io,
        _ => RtStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Buffer(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> RtStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is a null pointer"));
            RtStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Buffer(msg))) => {
            set_last_error(msg);
            RtStatus::BufferTooSmall
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            RtStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Usage(format!("{what} is not valid UTF-8"))))
}

fn boxed<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn rt_pdf(dist: RtDistribution, y: f64, out: *mut f64) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = distributions::pdf(&dist.spec()?, y)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_cdf(dist: RtDistribution, y: f64, out: *mut f64) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = distributions::cdf(&dist.spec()?, y)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_quantile(dist: RtDistribution, p: f64, out: *mut f64) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = distributions::quantile(&dist.spec()?, p)?;
        Ok(())
    })
}

/// Reads a trial CSV; rejected rows are counted, not fatal.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_read_csv(
    path: *const c_char,
    level_count: usize,
    out: *mut *mut RtDataset,
) -> RtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = c_str(path, "path")?;
        boxed(
            RtDataset(ingest::read_csv(Path::new(path), level_count)?),
            out,
        );
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_dataset_len(dataset: *const RtDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn rt_dataset_subject_count(dataset: *const RtDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.subject_count)
}

#[no_mangle]
pub unsafe extern "C" fn rt_dataset_rejected_total(dataset: *const RtDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.rejected_total())
}

#[no_mangle]
pub unsafe extern "C" fn rt_dataset_free(dataset: *mut RtDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits the GLMM to the trials with response `response`, or to all trials
/// when `response` is NULL. `nagq` 0 selects the default.
#[no_mangle]
pub unsafe extern "C" fn rt_fit(
    dataset: *const RtDataset,
    family: RtFamily,
    response: *const c_char,
    nagq: usize,
    out: *mut *mut RtModel,
) -> RtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let dataset = &deref(dataset, "dataset")?.0;
        let mut options = FitOptions::default();
        if nagq > 0 {
            options.nagq = nagq;
        }
        let subset;
        let data = if response.is_null() {
            dataset
        } else {
            let label = c_str(response, "response")?;
            options.response = Some(label.to_string());
            subset = dataset.with_response(label);
            &subset
        };
        boxed(RtModel(glmm::fit(data, family.into(), &options)?), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_model_from_json(
    json: *const c_char,
    out: *mut *mut RtModel,
) -> RtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        boxed(RtModel(FittedGlmm::from_json(c_str(json, "json")?)?), out);
        Ok(())
    })
}

/// Writes the model JSON (NUL-terminated) into `buf`. `needed` receives the
/// size including the terminator; with a short or NULL buffer the call
/// returns `RT_STATUS_BUFFER_TOO_SMALL` and writes nothing.
#[no_mangle]
pub unsafe extern "C" fn rt_model_to_json(
    model: *const RtModel,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> RtStatus {
    guard(|| {
        let text = deref(model, "model")?.0.to_json()?;
        let size = text.len() + 1;
        *out_ref(needed, "needed")? = size;
        if buf.is_null() || cap < size {
            return Err(Failure::Buffer(format!(
                "model JSON needs {size} bytes, buffer has {cap}"
            )));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_model_converged(model: *const RtModel) -> bool {
    model.as_ref().is_some_and(|m| m.0.converged)
}

#[no_mangle]
pub unsafe extern "C" fn rt_model_level_count(model: *const RtModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.beta.len())
}

#[no_mangle]
pub unsafe extern "C" fn rt_model_loglik(model: *const RtModel, out: *mut f64) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(model, "model")?.0.loglik;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_model_aic(model: *const RtModel, out: *mut f64) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = glmm::aic(&deref(model, "model")?.0);
        Ok(())
    })
}

/// Marginal mean at 1-based `level`.
#[no_mangle]
pub unsafe extern "C" fn rt_marginal_mean(
    model: *const RtModel,
    level: usize,
    out: *mut f64,
) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = glmm::marginal_mean(&deref(model, "model")?.0, level)?;
        Ok(())
    })
}

/// Marginal variance at 1-based `level`.
#[no_mangle]
pub unsafe extern "C" fn rt_marginal_variance(
    model: *const RtModel,
    level: usize,
    out: *mut f64,
) -> RtStatus {
    guard(|| {
        *out_ref(out, "out")? = glmm::marginal_variance(&deref(model, "model")?.0, level)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_model_free(model: *mut RtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// IG diffusion with mean `mu` and variance `sigma2`: start `a`, drift `drift`.
#[no_mangle]
pub unsafe extern "C" fn rt_reconstruct_ig(
    mu: f64,
    sigma2: f64,
    a: *mut f64,
    drift: *mut f64,
) -> RtStatus {
    guard(|| {
        let (a, drift) = (out_ref(a, "a")?, out_ref(drift, "drift")?);
        let r = reconstruction::reconstruct_ig(mu, sigma2)?;
        *a = r.a;
        *drift = r.drift;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_simulate_ig_scheme(
    mu: f64,
    phi: f64,
    delta: f64,
    reps: usize,
    seed: u64,
    out: *mut *mut RtFhtSample,
) -> RtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        boxed(
            RtFhtSample(diffusion::simulate_ig_scheme(mu, phi, delta, reps, seed)?),
            out,
        );
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rt_simulate_gamma_scheme(
    shape: f64,
    scale: f64,
    delta: f64,
    reps: usize,
    seed: u64,
    out: *mut *mut RtFhtSample,
) -> RtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        boxed(
            RtFhtSample(diffusion::simulate_gamma_scheme(
                shape, scale, delta, reps, seed,
            )?),
            out,
        );
        Ok(())
    })
}

/// Number of hitting times (truncated replicates excluded).
#[no_mangle]
pub unsafe extern "C" fn rt_fht_len(sample: *const RtFhtSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn rt_fht_truncated(sample: *const RtFhtSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.truncated_count)
}

/// Borrowed pointer to `rt_fht_len` hitting times, valid until the sample is freed.
#[no_mangle]
pub unsafe extern "C" fn rt_fht_times(sample: *const RtFhtSample) -> *const f64 {
    sample.as_ref().map_or(ptr::null(), |s| s.0.times.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn rt_fht_free(sample: *mut RtFhtSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// One-sample Kolmogorov-Smirnov test of `n` values against `dist`.
#[no_mangle]
pub unsafe extern "C" fn rt_ks_test(
    values: *const f64,
    n: usize,
    dist: RtDistribution,
    statistic: *mut f64,
    pvalue: *mut f64,
) -> RtStatus {
    guard(|| {
        let (statistic, pvalue) = (out_ref(statistic, "statistic")?, out_ref(pvalue, "pvalue")?);
        let sample: &[f64] = if n == 0 {
            &[]
        } else {
            if values.is_null() {
                return Err(Failure::Null("values"));
            }
            std::slice::from_raw_parts(values, n)
        };
        let (d, p) = gof::ks_test(sample, &dist.spec()?)?;
        *statistic = d;
        *pvalue = p;
        Ok(())
    })
}
