//! C ABI over `bayescomp`.
//!
//! Objects are opaque handles created by `bc_*_new*` functions and released
//! with the matching `bc_*_free`. Every fallible call returns a [`BcStatus`];
//! on failure a message is available from [`bc_last_error_message`] on the
//! same thread. Output buffers are caller-allocated and their lengths are
//! checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use bayescomp::flow::{read_checkpoint, write_checkpoint, ComposedFlow};
use bayescomp::harness::{run_experiment, ExperimentConfig};
use bayescomp::mcmc::{acceptance_rate, run_chain, ChainState, HmcKernel};
use bayescomp::model::{
    conjugate_posterior, BayesModel, Dataset, GaussianLocation, LinearRegression, LogisticRegression, Target,
    WeightedPotential,
};
use bayescomp::{rng, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numeric = 3,
    Unsupported = 4,
    Config = 5,
    Divergence = 6,
    Diagnostic = 7,
    Io = 8,
    Panic = 9,
    Internal = 10,
}

/// A composed planar flow.
pub struct BcFlow {
    inner: ComposedFlow,
}

/// A Bayesian data model; its posterior is the sampling target.
pub struct BcModel {
    inner: Box<dyn BayesModel>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> BcStatus {
    match e {
        Error::Input(_) | Error::Csv(_) | Error::Json(_) => BcStatus::InvalidInput,
        Error::Numeric(_) | Error::FlowNumeric { .. } | Error::Fit { .. } | Error::Adaptation { .. } => {
            BcStatus::Numeric
        }
        Error::Unsupported(_) => BcStatus::Unsupported,
        Error::Config(_) => BcStatus::Config,
        Error::Divergence(_) => BcStatus::Divergence,
        Error::Diagnostic(_) => BcStatus::Diagnostic,
        Error::Io(_) => BcStatus::Io,
        Error::PartialFit { .. } => BcStatus::Numeric,
        #[allow(unreachable_patterns)]
        _ => BcStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            BcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            BcStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("panic inside bayescomp");
            BcStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn cstr_path(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Input(format!("{what} is not UTF-8"))))?;
    Ok(PathBuf::from(s))
}

fn expect_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(Failure::Lib(Error::Input(format!("{what} has length {got}, expected {want}"))));
    }
    Ok(())
}

unsafe fn rows(data: &[f64], n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| data[i * p..(i + 1) * p].to_vec()).collect()
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next `bc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn bc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn bc_status_name(status: BcStatus) -> *const c_char {
    let s: &'static str = match status {
        BcStatus::Ok => "ok\0",
        BcStatus::NullPointer => "null_pointer\0",
        BcStatus::InvalidInput => "invalid_input\0",
        BcStatus::Numeric => "numeric\0",
        BcStatus::Unsupported => "unsupported\0",
        BcStatus::Config => "config\0",
        BcStatus::Divergence => "divergence\0",
        BcStatus::Diagnostic => "diagnostic\0",
        BcStatus::Io => "io\0",
        BcStatus::Panic => "panic\0",
        BcStatus::Internal => "internal\0",
    };
    s.as_ptr() as *const c_char
}

unsafe fn put_flow(out: *mut *mut BcFlow, flow: ComposedFlow) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(BcFlow { inner: flow }));
    Ok(())
}

unsafe fn flow_ref<'a>(flow: *const BcFlow) -> Result<&'a ComposedFlow, Failure> {
    flow.as_ref().map(|f| &f.inner).ok_or(Failure::Null("flow"))
}

/// Identity flow of `layers` planar layers on `R^dim`.
///
/// # Safety
/// `out` must be a valid pointer to a `BcFlow*`.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_new_identity(dim: usize, layers: usize, out: *mut *mut BcFlow) -> BcStatus {
    guard(|| {
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".into()).into());
        }
        put_flow(out, ComposedFlow::identity(dim, layers))
    })
}

/// Flow with parameters drawn `N(0, scale²)` from the stream seeded by `seed`.
///
/// # Safety
/// `out` must be a valid pointer to a `BcFlow*`.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_new_random(
    dim: usize,
    layers: usize,
    scale: f64,
    seed: u64,
    out: *mut *mut BcFlow,
) -> BcStatus {
    guard(|| {
        if dim == 0 || !(scale >= 0.0) {
            return Err(Error::Input("dimension must be positive and scale non-negative".into()).into());
        }
        put_flow(out, ComposedFlow::random(dim, layers, scale, &mut rng::seeded(seed)))
    })
}

/// Flow from a flat parameter vector of length `layers·(2·dim + 1)`.
///
/// # Safety
/// `params` must point to `len` readable doubles; `out` to a `BcFlow*`.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_new_from_params(
    dim: usize,
    layers: usize,
    params: *const f64,
    len: usize,
    out: *mut *mut BcFlow,
) -> BcStatus {
    guard(|| {
        let p = input(params, len, "params")?;
        put_flow(out, ComposedFlow::from_params(dim, layers, p)?)
    })
}

/// Reads a binary flow checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid `BcFlow*` pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_load(path: *const c_char, out: *mut *mut BcFlow) -> BcStatus {
    guard(|| {
        let path = cstr_path(path, "path")?;
        let file = File::open(path).map_err(Error::from)?;
        put_flow(out, read_checkpoint(std::io::BufReader::new(file))?)
    })
}

/// Writes a binary flow checkpoint.
///
/// # Safety
/// `flow` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_save(flow: *const BcFlow, path: *const c_char) -> BcStatus {
    guard(|| {
        let flow = flow_ref(flow)?;
        let path = cstr_path(path, "path")?;
        let mut bytes = Vec::new();
        write_checkpoint(flow, &mut bytes)?;
        std::fs::write(path, bytes).map_err(Error::from)?;
        Ok(())
    })
}

/// Releases a flow. Null is ignored.
///
/// # Safety
/// `flow` must come from a `bc_flow_new*`/`bc_flow_load` call and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_free(flow: *mut BcFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Dimension of the flow, or 0 for a null handle.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_dim(flow: *const BcFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.inner.dim())
}

/// Number of flow parameters, or 0 for a null handle.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_n_params(flow: *const BcFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.inner.n_params())
}

/// Copies the flat parameters into `out` (length `bc_flow_n_params`).
///
/// # Safety
/// `flow` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_get_params(flow: *const BcFlow, out: *mut f64, len: usize) -> BcStatus {
    guard(|| {
        let flow = flow_ref(flow)?;
        let params = flow.params();
        expect_len(len, params.len(), "params buffer")?;
        output(out, len, "out")?.copy_from_slice(&params);
        Ok(())
    })
}

/// `y = T(z)` and `log|det ∂T/∂z|`.
///
/// # Safety
/// `z` and `y_out` must hold `dim` doubles; `logdet_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_forward(
    flow: *const BcFlow,
    z: *const f64,
    dim: usize,
    y_out: *mut f64,
    logdet_out: *mut f64,
) -> BcStatus {
    guard(|| {
        let flow = flow_ref(flow)?;
        expect_len(dim, flow.dim(), "z")?;
        let z = input(z, dim, "z")?;
        let (y, logdet) = flow.forward(z)?;
        output(y_out, dim, "y_out")?.copy_from_slice(&y);
        if logdet_out.is_null() {
            return Err(Failure::Null("logdet_out"));
        }
        *logdet_out = logdet;
        Ok(())
    })
}

/// `z = T⁻¹(y)`.
///
/// # Safety
/// `y` and `z_out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_inverse(flow: *const BcFlow, y: *const f64, dim: usize, z_out: *mut f64) -> BcStatus {
    guard(|| {
        let flow = flow_ref(flow)?;
        expect_len(dim, flow.dim(), "y")?;
        let z = flow.inverse(input(y, dim, "y")?)?;
        output(z_out, dim, "z_out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// Log density of the pushforward at `y`.
///
/// # Safety
/// `y` must hold `dim` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_log_density(flow: *const BcFlow, y: *const f64, dim: usize, out: *mut f64) -> BcStatus {
    guard(|| {
        let flow = flow_ref(flow)?;
        expect_len(dim, flow.dim(), "y")?;
        let v = flow.log_density(input(y, dim, "y")?)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = v;
        Ok(())
    })
}

/// `n` draws from the flow, row-major into `out` (length `n·dim`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_flow_sample(flow: *const BcFlow, n: usize, seed: u64, out: *mut f64, len: usize) -> BcStatus {
    guard(|| {
        let flow = flow_ref(flow)?;
        expect_len(len, n * flow.dim(), "sample buffer")?;
        let (draws, _) = flow.sample(n, seed)?;
        let buf = output(out, len, "out")?;
        for (chunk, d) in buf.chunks_mut(flow.dim()).zip(&draws) {
            chunk.copy_from_slice(d);
        }
        Ok(())
    })
}

unsafe fn put_model(out: *mut *mut BcModel, model: Box<dyn BayesModel>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(BcModel { inner: model }));
    Ok(())
}

unsafe fn model_ref<'a>(model: *const BcModel) -> Result<&'a dyn BayesModel, Failure> {
    model.as_ref().map(|m| m.inner.as_ref()).ok_or(Failure::Null("model"))
}

/// `θ ~ N(0, I)`, `y_n ~ N(θ, I)` with `n` observations of dimension `dim`,
/// row-major in `obs`.
///
/// # Safety
/// `obs` must hold `n·dim` doubles; `out` must be a valid `BcModel*` pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_model_new_gaussian_location(
    obs: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut BcModel,
) -> BcStatus {
    guard(|| {
        let data = input(obs, n * dim, "obs")?;
        let ds = Dataset::new(rows(data, n, dim))?;
        put_model(out, Box::new(GaussianLocation::new(dim, ds)?))
    })
}

/// Linear regression with known noise: `θ ~ N(0, prior_var I)`,
/// `y_n ~ N(x_nᵀθ, noise_var)`. `x` is `n × p` row-major.
///
/// # Safety
/// `x` must hold `n·p` doubles, `y` `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_model_new_linear_regression(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    noise_var: f64,
    prior_var: f64,
    out: *mut *mut BcModel,
) -> BcStatus {
    guard(|| {
        let xs = input(x, n * p, "x")?;
        let ys = input(y, n, "y")?;
        let ds = Dataset::with_labels(rows(xs, n, p), ys.to_vec())?;
        put_model(out, Box::new(LinearRegression::new(ds, noise_var, prior_var)?))
    })
}

/// Logistic regression with labels in {0, 1} and prior `N(0, prior_scale² I)`.
///
/// # Safety
/// `x` must hold `n·p` doubles, `y` `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_model_new_logistic_regression(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    prior_scale: f64,
    out: *mut *mut BcModel,
) -> BcStatus {
    guard(|| {
        let xs = input(x, n * p, "x")?;
        let ys = input(y, n, "y")?;
        let ds = Dataset::with_labels(rows(xs, n, p), ys.to_vec())?;
        put_model(out, Box::new(LogisticRegression::new(ds, prior_scale)?))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a `bc_model_new*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bc_model_free(model: *mut BcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parameter dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bc_model_dim(model: *const BcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Number of observations, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bc_model_n_data(model: *const BcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_data())
}

/// Posterior potential `-log prior - log likelihood` at `theta`.
///
/// # Safety
/// `theta` must hold `dim` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bc_model_potential(model: *const BcModel, theta: *const f64, dim: usize, out: *mut f64) -> BcStatus {
    guard(|| {
        let m = model_ref(model)?;
        expect_len(dim, m.dim(), "theta")?;
        let t = input(theta, dim, "theta")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = WeightedPotential::posterior(m).potential(t);
        Ok(())
    })
}

/// Exact posterior mean (`dim`) and covariance (`dim·dim`, row-major) of a
/// conjugate model; `BC_STATUS_UNSUPPORTED` otherwise.
///
/// # Safety
/// `mean_out` must hold `dim` doubles and `cov_out` `dim·dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_model_posterior_moments(
    model: *const BcModel,
    mean_out: *mut f64,
    cov_out: *mut f64,
    dim: usize,
) -> BcStatus {
    guard(|| {
        let m = model_ref(model)?;
        expect_len(dim, m.dim(), "mean buffer")?;
        let post = conjugate_posterior(m)?;
        output(mean_out, dim, "mean_out")?.copy_from_slice(post.mean().as_slice());
        let cov = output(cov_out, dim * dim, "cov_out")?;
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] = post.cov()[(i, j)];
            }
        }
        Ok(())
    })
}

/// `n_steps` HMC transitions on the posterior from `init`; positions are
/// written row-major into `draws_out` (length `n_steps·dim`).
///
/// # Safety
/// `init` must hold `dim` doubles, `draws_out` `len` doubles, and
/// `accept_rate_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn bc_hmc_sample(
    model: *const BcModel,
    eps: f64,
    n_leapfrog: usize,
    init: *const f64,
    dim: usize,
    n_steps: usize,
    seed: u64,
    draws_out: *mut f64,
    len: usize,
    accept_rate_out: *mut f64,
) -> BcStatus {
    guard(|| {
        let m = model_ref(model)?;
        expect_len(dim, m.dim(), "init")?;
        expect_len(len, n_steps * dim, "draws buffer")?;
        let target = WeightedPotential::posterior(m);
        let kernel = HmcKernel::new(eps, n_leapfrog)?;
        let mut state = ChainState::new(&target, input(init, dim, "init")?.to_vec(), seed, 1)?;
        let rec = run_chain(&kernel, &target, &mut state, n_steps)?;
        let buf = output(draws_out, len, "draws_out")?;
        for (chunk, r) in buf.chunks_mut(dim.max(1)).zip(&rec) {
            chunk.copy_from_slice(&r.x);
        }
        if !accept_rate_out.is_null() {
            *accept_rate_out = acceptance_rate(&rec);
        }
        Ok(())
    })
}

/// Runs an experiment file. `out_dir` may be null to use the config's
/// `output` entry.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn bc_run_experiment(config_path: *const c_char, out_dir: *const c_char) -> BcStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(cstr_path(config_path, "config_path")?)?;
        let out = if out_dir.is_null() {
            cfg.output
                .clone()
                .ok_or_else(|| Error::Config("no output directory given".into()))?
        } else {
            cstr_path(out_dir, "out_dir")?
        };
        run_experiment(&cfg, out)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn status_names_are_nul_terminated() {
        let s = unsafe { CStr::from_ptr(bc_status_name(BcStatus::Divergence)) };
        assert_eq!(s.to_str().unwrap(), "divergence");
    }

    #[test]
    fn null_out_pointer_is_reported() {
        let st = unsafe { bc_flow_new_identity(2, 1, ptr::null_mut()) };
        assert_eq!(st, BcStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(bc_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("out"));
    }
}
