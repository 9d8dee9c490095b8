//! C ABI over the `evor` library.
//!
//! Every fallible call returns an [`EvorStatus`]; on failure a description is
//! kept per thread and read back with [`evor_last_error_message`]. Handles are
//! opaque and owned by the caller until passed to their `_free` function.
//! Panics never cross the boundary: they surface as [`EvorStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use evor::critic::log_mean_exp;
use evor::env::{gen_dataset, Action, Env, EnvId, RefPolicySpec};
use evor::error::Error;
use evor::extraction::ExtractionConfig;
use evor::harness::Checkpoint;
use evor::oracle::OracleTables;
use evor::rng::seeded;

/// Outcome of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvorStatus {
    Ok = 0,
    NullPointer = 1,
    InputDomain = 2,
    Config = 3,
    Shape = 4,
    Numeric = 5,
    Unsupported = 6,
    Format = 7,
    Io = 8,
    Panic = 9,
}

/// Built-in environments.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvorEnv {
    Chain2 = 0,
    Gridworld5 = 1,
    BimodalBandit = 2,
    PointmassMaze = 3,
}

/// Environment for an `EvorEnv` code.
fn env_arg(code: u32) -> Result<Env, Failure> {
    let id = match code {
        c if c == EvorEnv::Chain2 as u32 => EnvId::Chain2,
        c if c == EvorEnv::Gridworld5 as u32 => EnvId::Gridworld5,
        c if c == EvorEnv::BimodalBandit as u32 => EnvId::BimodalBandit,
        c if c == EvorEnv::PointmassMaze as u32 => EnvId::PointmassMaze,
        _ => return Err(Failure(EvorStatus::InputDomain, format!("unknown environment code {code}"))),
    };
    Ok(Env::new(id))
}

/// On-disk dataset encodings.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvorDatasetFormat {
    Binary = 0,
    Text = 1,
}

/// Exact oracle tables of a finite environment under its reference policy.
pub struct EvorOracle {
    tables: OracleTables,
}

/// A trained agent loaded from a checkpoint bundle.
pub struct EvorAgent {
    checkpoint: Checkpoint,
    env: Env,
    extraction: ExtractionConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(error: &Error) -> EvorStatus {
    match error {
        Error::InputDomain(_) => EvorStatus::InputDomain,
        Error::Config(_) => EvorStatus::Config,
        Error::Shape(_) => EvorStatus::Shape,
        Error::Numeric(_) => EvorStatus::Numeric,
        Error::Unsupported(_) => EvorStatus::Unsupported,
        Error::Format { .. } => EvorStatus::Format,
        Error::Io { .. } => EvorStatus::Io,
    }
}

/// Failure carried to the boundary: a status and its message.
struct Failure(EvorStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EvorStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, recording any failure or panic.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> EvorStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => EvorStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {what}"));
            EvorStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` is null or valid for reads of `len` values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` is null or a NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(EvorStatus::InputDomain, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `out` is null or valid for a write of `T`.
unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len` bytes). Returns the buffer size the full message needs,
/// or 0 when the last call on this thread succeeded.
///
/// # Safety
/// `buf` is null or valid for writes of `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn evor_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// `tau * ln(mean exp(samples / tau))`, computed stably.
///
/// # Safety
/// `samples` is valid for reads of `len` doubles; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn evor_log_mean_exp(samples: *const f64, len: usize, tau: f64, out: *mut f64) -> EvorStatus {
    guard(|| {
        let xs = slice(samples, len, "samples")?;
        if xs.is_empty() {
            return Err(Failure(EvorStatus::InputDomain, "no samples".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Failure(EvorStatus::InputDomain, format!("temperature {tau} must be positive")));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Failure(EvorStatus::InputDomain, "samples must be finite".into()));
        }
        write_out(out, log_mean_exp(xs, tau))
    })
}

/// Exact tables for the environment with `EvorEnv` code `env` (finite
/// environments only), the reference mixture weighting the near-optimal mode
/// by `optimal_weight`.
///
/// # Safety
/// `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn evor_oracle_new(env: u32, optimal_weight: f64, eta: f64, out: *mut *mut EvorOracle) -> EvorStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let spec = RefPolicySpec {
            optimal_weight,
            detour_weight: 1.0 - optimal_weight,
        };
        spec.validate()?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Failure(EvorStatus::InputDomain, format!("temperature {eta} must be positive")));
        }
        let tables = OracleTables::for_env(&env_arg(env)?, &spec, eta)?;
        write_out(out, Box::into_raw(Box::new(EvorOracle { tables })))
    })
}

fn table_entry(table: &evor::oracle::StepTable<Vec<f64>>, step: usize, state: usize, action: usize) -> Result<f64, Failure> {
    table
        .get(step, state)
        .and_then(|q| q.get(action).copied())
        .ok_or_else(|| Failure(EvorStatus::InputDomain, format!("no entry for step {step}, state {state}, action {action}")))
}

/// Optimal regularised action value at `(step, state, action)`; states
/// unreachable at `step` are input errors.
///
/// # Safety
/// `oracle` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn evor_oracle_q_star(oracle: *const EvorOracle, step: usize, state: usize, action: usize, out: *mut f64) -> EvorStatus {
    guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        write_out(out, table_entry(&o.tables.q_star, step, state, action)?)
    })
}

/// Reference-policy action value at `(step, state, action)`.
///
/// # Safety
/// `oracle` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn evor_oracle_q_pi(oracle: *const EvorOracle, step: usize, state: usize, action: usize, out: *mut f64) -> EvorStatus {
    guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        write_out(out, table_entry(&o.tables.q_pi, step, state, action)?)
    })
}

/// # Safety
/// `oracle` is null or a handle from [`evor_oracle_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evor_oracle_free(oracle: *mut EvorOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Load a checkpoint bundle; extraction parameters start at the values the
/// bundle was trained with.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn evor_agent_load(path: *const c_char, out: *mut *mut EvorAgent) -> EvorStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let (checkpoint, _) = Checkpoint::load(&path_arg(path)?)?;
        let env = checkpoint.meta.config.env()?;
        let extraction = checkpoint.meta.config.extraction();
        write_out(out, Box::into_raw(Box::new(EvorAgent { checkpoint, env, extraction })))
    })
}

/// Observation width the agent expects.
///
/// # Safety
/// `agent` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evor_agent_obs_dim(agent: *const EvorAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.env.obs_dim())
}

/// Width of an action embedding (one-hot width for discrete actions).
///
/// # Safety
/// `agent` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evor_agent_action_dim(agent: *const EvorAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.env.act_dim())
}

/// Override the candidate count and both temperatures used for extraction.
///
/// # Safety
/// `agent` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn evor_agent_set_extraction(agent: *mut EvorAgent, candidates: usize, tau_r: f64, tau_q: f64) -> EvorStatus {
    guard(|| {
        let a = agent.as_mut().ok_or_else(|| null("agent"))?;
        let mut next = a.extraction.clone();
        next.candidates = candidates;
        next.tau_r = tau_r;
        next.tau_q = tau_q;
        next.validate().map_err(|e| Failure(EvorStatus::InputDomain, e.to_string()))?;
        a.extraction = next;
        Ok(())
    })
}

/// Extract one action for `obs`, deterministic in `seed`. The action
/// embedding is written to `action_out`; `index_out`, when non-null, receives
/// the discrete action index or -1 for continuous actions. Chunked agents
/// return the first action of the chosen chunk.
///
/// # Safety
/// `agent` is a live handle; `obs` is valid for `obs_len` reads and
/// `action_out` for `action_len` writes; `index_out` is null or valid for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn evor_agent_extract_action(
    agent: *const EvorAgent,
    obs: *const f64,
    obs_len: usize,
    seed: u64,
    action_out: *mut f64,
    action_len: usize,
    index_out: *mut i64,
) -> EvorStatus {
    guard(|| {
        let a = agent.as_ref().ok_or_else(|| null("agent"))?;
        let obs = slice(obs, obs_len, "observation")?;
        if obs.len() != a.env.obs_dim() {
            return Err(Failure(EvorStatus::Shape, format!("observation has {} values, agent expects {}", obs.len(), a.env.obs_dim())));
        }
        let space = a.env.action_space();
        if action_len != space.dim() {
            return Err(Failure(EvorStatus::Shape, format!("action buffer holds {action_len} values, actions have {}", space.dim())));
        }
        if action_out.is_null() {
            return Err(null("action buffer"));
        }
        let plan = a.checkpoint.agent.plan(obs, &a.extraction, &mut seeded(seed))?;
        let first = plan.first().ok_or_else(|| Failure(EvorStatus::Numeric, "agent produced an empty plan".into()))?;
        let embedding = space.embed(first)?;
        std::slice::from_raw_parts_mut(action_out, action_len).copy_from_slice(&embedding);
        if !index_out.is_null() {
            let index = match first {
                Action::Discrete(i) => *i as i64,
                Action::Continuous(_) => -1,
            };
            index_out.write(index);
        }
        Ok(())
    })
}

/// # Safety
/// `agent` is null or a handle from [`evor_agent_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evor_agent_free(agent: *mut EvorAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Generate `n_traj` reference-policy trajectories (default mixture weights)
/// of the environment with `EvorEnv` code `env` and write them to `path` in
/// the `EvorDatasetFormat` encoding `format`.
///
/// # Safety
/// `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn evor_dataset_generate(env: u32, n_traj: usize, seed: u64, format: u32, path: *const c_char) -> EvorStatus {
    guard(|| {
        let path = path_arg(path)?;
        let data = gen_dataset(&env_arg(env)?, &RefPolicySpec::default(), n_traj, seed)?;
        match format {
            f if f == EvorDatasetFormat::Binary as u32 => data.save(&path)?,
            f if f == EvorDatasetFormat::Text as u32 => std::fs::write(&path, data.to_text())
                .map_err(|e| Failure(EvorStatus::Io, format!("writing {}: {e}", path.display())))?,
            _ => return Err(Failure(EvorStatus::InputDomain, format!("unknown dataset format code {format}"))),
        }
        Ok(())
    })
}
