//! C ABI over `pdns-core`: target densities, checkpointed samplers and the
//! ESS of a weight vector.
//!
//! Every fallible function returns a [`PdnsStatus`]. On failure the message
//! is kept per thread and can be read with [`pdns_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pdns_core::approximator::{read_checkpoint, ParamStore};
use pdns_core::config::{Problem, RunConfig, TargetConfig};
use pdns_core::proximal::normalize_and_ess;
use pdns_core::rng::seeded;
use pdns_core::trainer::SamplerProblem;
use pdns_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdnsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Checkpoint = 6,
    Panic = 7,
}

/// A parsed energy target.
pub struct PdnsTarget {
    target: TargetConfig,
}

/// A trained sampler: its run configuration and EMA parameters.
pub struct PdnsSampler {
    problem: Problem,
    store: ParamStore,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PdnsStatus {
    match e {
        Error::Config(_) | Error::TooLarge { .. } => PdnsStatus::Config,
        Error::Domain(_) | Error::Shape(_) => PdnsStatus::InvalidArgument,
        Error::NonFinite(_) | Error::WeightCollapse(_) | Error::TooManyDropped { .. } => PdnsStatus::Numeric,
        Error::Checkpoint(_) | Error::Format(_) => PdnsStatus::Checkpoint,
        Error::Io(_) => PdnsStatus::Io,
    }
}

struct Failure(PdnsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PdnsStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PdnsStatus::InvalidArgument, msg.into())
}

/// Runs `body`, turning errors and panics into a status and a stored message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PdnsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PdnsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PdnsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// The message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pdns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a target from the text of a `[target]` table, e.g.
/// `kind = "ising"\nside = 8\ncoupling = 1.0\nbeta = 0.6`.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pdns_target_from_toml(toml_text: *const c_char, out: *mut *mut PdnsTarget) -> PdnsStatus {
    guard(|| {
        let text = str_arg(toml_text, "toml_text")?;
        let out = out_arg(out, "out")?;
        let target: TargetConfig =
            toml::from_str(text).map_err(|e| Failure(PdnsStatus::Config, format!("invalid target: {e}")))?;
        *out = Box::into_raw(Box::new(PdnsTarget { target }));
        Ok(())
    })
}

/// Releases a target; NULL is ignored.
///
/// # Safety
/// `target` must come from [`pdns_target_from_toml`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdns_target_free(target: *mut PdnsTarget) {
    if !target.is_null() {
        drop(Box::from_raw(target));
    }
}

/// State dimension (continuous) or sequence length (discrete).
///
/// # Safety
/// `target` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pdns_target_dim(target: *const PdnsTarget, out: *mut usize) -> PdnsStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        *out_arg(out, "out")? = t.target.dim();
        Ok(())
    })
}

/// Whether the target lives on a discrete state space.
///
/// # Safety
/// `target` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pdns_target_is_discrete(target: *const PdnsTarget, out: *mut bool) -> PdnsStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        *out_arg(out, "out")? = t.target.is_discrete();
        Ok(())
    })
}

/// Unnormalized log density `-beta V(x)` of a continuous target.
///
/// # Safety
/// `x` must point to `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pdns_target_log_density(
    target: *const PdnsTarget,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> PdnsStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        let x = slice_arg(x, len, "x")?;
        let out = out_arg(out, "out")?;
        let TargetConfig::Continuous(c) = &t.target else {
            return Err(invalid("target is discrete; use pdns_target_log_density_discrete"));
        };
        *out = c.log_target(x)?;
        Ok(())
    })
}

/// Unnormalized log mass `-beta V(x)` of a discrete target; `x` holds values
/// in `0..alphabet`.
///
/// # Safety
/// `x` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pdns_target_log_density_discrete(
    target: *const PdnsTarget,
    x: *const u8,
    len: usize,
    out: *mut f64,
) -> PdnsStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        let x = slice_arg(x, len, "x")?;
        let out = out_arg(out, "out")?;
        let TargetConfig::Discrete(d) = &t.target else {
            return Err(invalid("target is continuous; use pdns_target_log_density"));
        };
        *out = d.log_target(x)?;
        Ok(())
    })
}

/// Loads a sampler from a run config file and a checkpoint written under it.
/// Fails with `Checkpoint` when the config hash does not match.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pdns_sampler_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut PdnsSampler,
) -> PdnsStatus {
    guard(|| {
        let cfg = RunConfig::load(Path::new(str_arg(config_path, "config_path")?))?;
        let ckpt = read_checkpoint(Path::new(str_arg(checkpoint_path, "checkpoint_path")?))?;
        let out = out_arg(out, "out")?;
        let hash = cfg.hash()?;
        if ckpt.config_hash != hash {
            return Err(Failure(
                PdnsStatus::Checkpoint,
                format!(
                    "checkpoint was written under config {} but the config hashes to {hash}",
                    ckpt.config_hash
                ),
            ));
        }
        let problem = cfg.problem()?;
        match &problem {
            Problem::Continuous(p) => p.check_params(&ckpt.store.ema)?,
            Problem::Discrete(p) => p.check_params(&ckpt.store.ema)?,
        }
        let dim = cfg.target.dim();
        *out = Box::into_raw(Box::new(PdnsSampler {
            problem,
            store: ckpt.store,
            dim,
        }));
        Ok(())
    })
}

/// Releases a sampler; NULL is ignored.
///
/// # Safety
/// `sampler` must come from [`pdns_sampler_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdns_sampler_free(sampler: *mut PdnsSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Values per sample.
///
/// # Safety
/// `sampler` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pdns_sampler_dim(sampler: *const PdnsSampler, out: *mut usize) -> PdnsStatus {
    guard(|| {
        let s = sampler.as_ref().ok_or_else(|| null("sampler"))?;
        *out_arg(out, "out")? = s.dim;
        Ok(())
    })
}

/// Whether the sampler produces discrete sequences.
///
/// # Safety
/// `sampler` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pdns_sampler_is_discrete(sampler: *const PdnsSampler, out: *mut bool) -> PdnsStatus {
    guard(|| {
        let s = sampler.as_ref().ok_or_else(|| null("sampler"))?;
        *out_arg(out, "out")? = matches!(s.problem, Problem::Discrete(_));
        Ok(())
    })
}

unsafe fn sample_into<P: SamplerProblem, T: Copy>(
    problem: &P,
    store: &ParamStore,
    dim: usize,
    n: usize,
    seed: u64,
    flatten: impl Fn(&P::State) -> &[T],
    states: *mut T,
    log_w: *mut f64,
    written: *mut usize,
) -> Result<(), Failure> {
    if states.is_null() {
        return Err(null("states"));
    }
    if log_w.is_null() {
        return Err(null("log_w"));
    }
    let written = out_arg(written, "written")?;
    *written = 0;
    if n == 0 {
        return Ok(());
    }
    let batch = problem.rollout(&store.ema, n, &mut seeded(seed))?;
    let lw = batch.log_weights();
    let states = std::slice::from_raw_parts_mut(states, n * dim);
    let log_w = std::slice::from_raw_parts_mut(log_w, n);
    for (i, (s, w)) in batch.states.iter().zip(&lw).enumerate() {
        states[i * dim..(i + 1) * dim].copy_from_slice(flatten(s));
        log_w[i] = *w;
    }
    *written = lw.len();
    Ok(())
}

/// Draws up to `n` samples from a continuous sampler. `states` receives
/// `n * dim` doubles row by row and `log_w` the matching log importance
/// weights; `written` is set to the number of rows filled, which is below
/// `n` only when trajectories were dropped as non-finite.
///
/// # Safety
/// `states` must hold `n * dim` doubles, `log_w` `n` doubles, and `written`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdns_sampler_sample(
    sampler: *const PdnsSampler,
    n: usize,
    seed: u64,
    states: *mut f64,
    log_w: *mut f64,
    written: *mut usize,
) -> PdnsStatus {
    guard(|| {
        let s = sampler.as_ref().ok_or_else(|| null("sampler"))?;
        let Problem::Continuous(p) = &s.problem else {
            return Err(invalid("sampler is discrete; use pdns_sampler_sample_discrete"));
        };
        sample_into(
            p,
            &s.store,
            s.dim,
            n,
            seed,
            |x: &Vec<f64>| x.as_slice(),
            states,
            log_w,
            written,
        )
    })
}

/// As [`pdns_sampler_sample`] for discrete samplers, with one byte per site.
///
/// # Safety
/// `states` must hold `n * dim` bytes, `log_w` `n` doubles, and `written`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdns_sampler_sample_discrete(
    sampler: *const PdnsSampler,
    n: usize,
    seed: u64,
    states: *mut u8,
    log_w: *mut f64,
    written: *mut usize,
) -> PdnsStatus {
    guard(|| {
        let s = sampler.as_ref().ok_or_else(|| null("sampler"))?;
        let Problem::Discrete(p) = &s.problem else {
            return Err(invalid("sampler is continuous; use pdns_sampler_sample"));
        };
        sample_into(
            p,
            &s.store,
            s.dim,
            n,
            seed,
            |x: &Vec<u8>| x.as_slice(),
            states,
            log_w,
            written,
        )
    })
}

/// Normalized effective sample size `1 / (n sum w_i^2)` of `n` log weights.
///
/// # Safety
/// `log_w` must point to `n` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pdns_ess(log_w: *const f64, n: usize, out: *mut f64) -> PdnsStatus {
    guard(|| {
        let lw = slice_arg(log_w, n, "log_w")?;
        let out = out_arg(out, "out")?;
        *out = normalize_and_ess(lw)?.1;
        Ok(())
    })
}
