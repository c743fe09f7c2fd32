//! C ABI over the simulator.
//!
//! Every fallible entry point returns a [`MupflStatus`]. On failure the
//! message is available from [`mupfl_last_error_message`] on the same thread
//! until the next failing call. Handles are opaque and must be released with
//! [`mupfl_simulation_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mupfl::acmu::silhouette;
use mupfl::fl::{load_checkpoint, save_checkpoint, RunConfig, Simulation};
use mupfl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MupflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Io = 5,
    Malformed = 6,
    NonFinite = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque simulation handle.
pub struct MupflSimulation {
    sim: Simulation,
}

/// Scalar summary of one round.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MupflRoundMetrics {
    pub round: u64,
    pub global_acc: f64,
    pub mean_client_acc: f64,
    pub tail_acc: f64,
    pub kappa: u64,
    pub silhouette: f64,
    pub pkcf_loss: f64,
    pub mean_train_loss: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> MupflStatus {
    match err {
        Error::Config(_) => MupflStatus::Config,
        Error::Io { .. } => MupflStatus::Io,
        Error::NonFiniteLoss { .. } => MupflStatus::NonFinite,
        Error::BadMagic { .. } | Error::Truncated { .. } | Error::Malformed(_) | Error::CountMismatch { .. } => {
            MupflStatus::Malformed
        }
        _ => MupflStatus::InvalidArgument,
    }
}

struct Fail(MupflStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MupflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MupflStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
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
            MupflStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MupflStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(MupflStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn sim_mut<'a>(p: *mut MupflSimulation) -> Result<&'a mut MupflSimulation, Fail> {
    p.as_mut().ok_or_else(|| null("simulation"))
}

unsafe fn sim_ref<'a>(p: *const MupflSimulation) -> Result<&'a MupflSimulation, Fail> {
    p.as_ref().ok_or_else(|| null("simulation"))
}

/// Message of the most recent failure on this thread (empty if none). The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn mupfl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mupfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a simulation from TOML config text.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_new(config_toml: *const c_char, out: *mut *mut MupflSimulation) -> MupflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_toml_str(str_arg(config_toml, "config")?)?;
        let sim = Simulation::new(cfg)?;
        *out = Box::into_raw(Box::new(MupflSimulation { sim }));
        Ok(())
    })
}

/// Restores a simulation from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_load_checkpoint(path: *const c_char, out: *mut *mut MupflSimulation) -> MupflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sim = load_checkpoint(&PathBuf::from(str_arg(path, "path")?), None)?;
        *out = Box::into_raw(Box::new(MupflSimulation { sim }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_free(sim: *mut MupflSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs one round; `out` may be null.
///
/// # Safety
/// `sim` must be a live handle; `out`, if non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_run_round(sim: *mut MupflSimulation, out: *mut MupflRoundMetrics) -> MupflStatus {
    guard(|| {
        let m = sim_mut(sim)?.sim.run_round()?;
        if let Some(o) = out.as_mut() {
            *o = MupflRoundMetrics {
                round: m.round as u64,
                global_acc: m.global_acc,
                mean_client_acc: m.mean_client_acc,
                tail_acc: m.tail_acc,
                kappa: m.kappa as u64,
                silhouette: m.silhouette,
                pkcf_loss: m.pkcf_loss,
                mean_train_loss: m.mean_train_loss,
            };
        }
        Ok(())
    })
}

/// Rounds completed so far (0 for a null handle).
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_rounds_done(sim: *const MupflSimulation) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.rounds_done() as u64)
}

/// Number of parameters in the global model.
///
/// # Safety
/// `sim` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_num_params(sim: *const MupflSimulation, out_len: *mut usize) -> MupflStatus {
    guard(|| {
        let n = sim_ref(sim)?.sim.global().num_params();
        *out_len.as_mut().ok_or_else(|| null("out_len"))? = n;
        Ok(())
    })
}

/// Copies the flattened global model (extractor then classifier) into `buf`.
///
/// # Safety
/// `sim` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_global_params(sim: *const MupflSimulation, buf: *mut f64, len: usize) -> MupflStatus {
    guard(|| {
        let flat = sim_ref(sim)?.sim.global().flatten();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < flat.len() {
            return Err(Fail(
                MupflStatus::BufferTooSmall,
                format!("buffer holds {len} values, model has {}", flat.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, flat.len()).copy_from_slice(&flat);
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `sim` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mupfl_simulation_save_checkpoint(sim: *const MupflSimulation, path: *const c_char) -> MupflStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        save_checkpoint(&s.sim, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Mean silhouette of `labels` under the row-major `n x n` distance matrix.
///
/// # Safety
/// `labels` must hold `n` values, `dist` `n * n` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mupfl_silhouette(labels: *const usize, dist: *const f64, n: usize, out: *mut f64) -> MupflStatus {
    guard(|| {
        if labels.is_null() || dist.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let labels = std::slice::from_raw_parts(labels, n);
        let dist = std::slice::from_raw_parts(dist, n * n);
        *out = silhouette(labels, dist)?;
        Ok(())
    })
}
