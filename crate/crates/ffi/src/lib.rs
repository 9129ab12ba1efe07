//! C ABI over the simulation core.
//!
//! Every fallible call returns a [`PerfrecStatus`]; on failure the message is
//! kept per thread and read back with [`perfrec_last_error_message`]. Objects
//! cross the boundary as opaque pointers that the caller frees with the
//! matching `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use perfrec::cli::verify::{run_suite, Level};
use perfrec::dynamics::{run_trajectory, DynamicsConfig, Method, MethodKind, RoundRecord, Target};
use perfrec::graph::{gen_uniform, RecGraph};
use perfrec::groundtruth::{sample_world, World};
use perfrec::strategic::best_response;
use perfrec::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerfrecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerfrecMethod {
    Baseline = 0,
    NonStrategic = 1,
    Strategic = 2,
    Mmr = 3,
    Random = 4,
    Hybrid = 5,
}

/// Settings of one trajectory. Start from [`perfrec_run_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfrecRunOptions {
    pub method: PerfrecMethod,
    /// Last regularized round of a hybrid run.
    pub switch_round: usize,
    /// Fixed diversity weight, used when `target_ndcg` is negative.
    pub lambda: f64,
    /// NDCG the tuner aims for; negative means "use `lambda`".
    pub target_ndcg: f64,
    pub alpha: f64,
    pub k: usize,
    pub rounds: usize,
    pub theta_mmr: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerfrecRound {
    pub round: usize,
    pub lambda: f64,
    pub ndcg_test: f64,
    pub div_pre: f64,
    pub div_post: f64,
}

/// Items, true preferences and the recommendation graph.
pub struct PerfrecWorld {
    world: World,
    graph: RecGraph,
}

/// Per-round results of one trajectory.
pub struct PerfrecRecords {
    rounds: Vec<PerfrecRound>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PerfrecStatus {
    match e {
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::TargetUnreachable { .. } => PerfrecStatus::Numerical,
        Error::Parse { .. } | Error::Config { .. } => PerfrecStatus::Config,
        Error::Io(_) => PerfrecStatus::Io,
        _ => PerfrecStatus::InvalidArgument,
    }
}

fn fail(status: PerfrecStatus, msg: impl Into<String>) -> PerfrecStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), PerfrecStatus>) -> PerfrecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PerfrecStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PerfrecStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: perfrec::Result<T>) -> Result<T, PerfrecStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), PerfrecStatus> {
    if p.is_null() {
        Err(fail(PerfrecStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn perfrec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn perfrec_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn perfrec_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version"),
    };
    VERSION.as_ptr()
}

/// Samples a synthetic world with a uniform graph of `list_size` items per user.
#[no_mangle]
pub unsafe extern "C" fn perfrec_world_new(
    m: usize,
    n: usize,
    d: usize,
    list_size: usize,
    sigma_x: f64,
    sigma_u_star: f64,
    seed: u64,
    out: *mut *mut PerfrecWorld,
) -> PerfrecStatus {
    guard(|| {
        non_null(out, "out")?;
        let world = lift(sample_world(m, n, d, sigma_x, sigma_u_star, seed))?;
        let graph = lift(gen_uniform(m, n, list_size, seed ^ 0x9e37_79b9_7f4a_7c15))?;
        // SAFETY: `out` was checked non-null; the caller owns the slot.
        unsafe { *out = Box::into_raw(Box::new(PerfrecWorld { world, graph })) };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn perfrec_world_free(world: *mut PerfrecWorld) {
    if !world.is_null() {
        // SAFETY: produced by `perfrec_world_new` and not freed before.
        drop(unsafe { Box::from_raw(world) });
    }
}

/// Writes users, items and dimension. Any out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn perfrec_world_shape(world: *const PerfrecWorld, m: *mut usize, n: *mut usize, d: *mut usize) -> PerfrecStatus {
    guard(|| {
        non_null(world, "world")?;
        // SAFETY: non-null handle from `perfrec_world_new`.
        let w = unsafe { &(*world).world };
        for (p, v) in [(m, w.m()), (n, w.n()), (d, w.d())] {
            if !p.is_null() {
                // SAFETY: caller-provided writable slot.
                unsafe { *p = v };
            }
        }
        Ok(())
    })
}

/// Copies the initial items, row-major `n x d`, into `out`.
#[no_mangle]
pub unsafe extern "C" fn perfrec_world_items(world: *const PerfrecWorld, out: *mut f64, len: usize) -> PerfrecStatus {
    guard(|| {
        non_null(world, "world")?;
        non_null(out, "out")?;
        // SAFETY: non-null handle from `perfrec_world_new`.
        let data = unsafe { (*world).world.x0.data() };
        if len < data.len() {
            return Err(fail(
                PerfrecStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", data.len()),
            ));
        }
        // SAFETY: `out` has room for `len >= data.len()` values.
        unsafe { ptr::copy_nonoverlapping(data.as_ptr(), out, data.len()) };
        Ok(())
    })
}

/// Closed-form best response of one item; all vectors have length `d`.
#[no_mangle]
pub unsafe extern "C" fn perfrec_best_response(x: *const f64, v_tilde: *const f64, d: usize, alpha: f64, out: *mut f64) -> PerfrecStatus {
    guard(|| {
        non_null(x, "x")?;
        non_null(v_tilde, "v_tilde")?;
        non_null(out, "out")?;
        if d == 0 || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(fail(
                PerfrecStatus::InvalidArgument,
                format!("need d > 0 and finite alpha >= 0, got d={d} alpha={alpha}"),
            ));
        }
        // SAFETY: the caller passes `d` readable values behind each input.
        let (x, v) = unsafe { (std::slice::from_raw_parts(x, d), std::slice::from_raw_parts(v_tilde, d)) };
        let br = best_response(x, v, alpha);
        // SAFETY: `out` has room for `d` values.
        unsafe { ptr::copy_nonoverlapping(br.as_ptr(), out, d) };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn perfrec_run_options_default() -> PerfrecRunOptions {
    let cfg = DynamicsConfig::default();
    PerfrecRunOptions {
        method: PerfrecMethod::Baseline,
        switch_round: 1,
        lambda: 0.0,
        target_ndcg: -1.0,
        alpha: 0.1,
        k: cfg.train.k,
        rounds: cfg.rounds,
        theta_mmr: 0.5,
        seed: 0,
    }
}

fn method_of(o: &PerfrecRunOptions) -> Method {
    let kind = match o.method {
        PerfrecMethod::Baseline => MethodKind::Baseline,
        PerfrecMethod::NonStrategic => MethodKind::NonStrategic,
        PerfrecMethod::Strategic => MethodKind::Strategic,
        PerfrecMethod::Mmr => MethodKind::Mmr,
        PerfrecMethod::Random => MethodKind::Random,
        PerfrecMethod::Hybrid => MethodKind::Hybrid {
            switch_round: o.switch_round,
        },
    };
    let target = if o.target_ndcg < 0.0 {
        Target::Lambda(o.lambda)
    } else {
        Target::Ndcg(o.target_ndcg)
    };
    Method {
        theta_mmr: o.theta_mmr,
        ..Method::new(kind, target)
    }
}

fn round_of(r: &RoundRecord) -> PerfrecRound {
    PerfrecRound {
        round: r.round,
        lambda: r.lambda,
        ndcg_test: r.ndcg_test,
        div_pre: r.div_pre,
        div_post: r.div_post,
    }
}

/// Runs one retraining trajectory on `world`.
#[no_mangle]
pub unsafe extern "C" fn perfrec_run(
    world: *const PerfrecWorld,
    options: *const PerfrecRunOptions,
    out: *mut *mut PerfrecRecords,
) -> PerfrecStatus {
    guard(|| {
        non_null(world, "world")?;
        non_null(options, "options")?;
        non_null(out, "out")?;
        // SAFETY: non-null pointers from the caller.
        let (w, o) = unsafe { (&*world, *options) };
        let mut cfg = DynamicsConfig {
            rounds: o.rounds,
            seed: o.seed,
            ..DynamicsConfig::default()
        };
        cfg.train.k = o.k;
        cfg.train.alpha = o.alpha;
        let recs = lift(run_trajectory(&w.world.x0, &w.world.u_star, &w.graph, &method_of(&o), &cfg))?;
        let rounds = recs.iter().map(round_of).collect();
        // SAFETY: `out` was checked non-null.
        unsafe { *out = Box::into_raw(Box::new(PerfrecRecords { rounds })) };
        Ok(())
    })
}

/// Number of rounds held, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn perfrec_records_len(records: *const PerfrecRecords) -> usize {
    if records.is_null() {
        0
    } else {
        // SAFETY: non-null handle from `perfrec_run`.
        unsafe { (*records).rounds.len() }
    }
}

#[no_mangle]
pub unsafe extern "C" fn perfrec_records_get(records: *const PerfrecRecords, index: usize, out: *mut PerfrecRound) -> PerfrecStatus {
    guard(|| {
        non_null(records, "records")?;
        non_null(out, "out")?;
        // SAFETY: non-null handle from `perfrec_run`.
        let rounds = unsafe { &(*records).rounds };
        let r = rounds.get(index).ok_or_else(|| {
            fail(
                PerfrecStatus::InvalidArgument,
                format!("index {index} out of range for {} rounds", rounds.len()),
            )
        })?;
        // SAFETY: `out` was checked non-null.
        unsafe { *out = *r };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn perfrec_records_free(records: *mut PerfrecRecords) {
    if !records.is_null() {
        // SAFETY: produced by `perfrec_run` and not freed before.
        drop(unsafe { Box::from_raw(records) });
    }
}

/// Runs the verification suite; `failures` (optional) receives the number
/// of failed checks. Returns `Ok` even when checks fail.
#[no_mangle]
pub unsafe extern "C" fn perfrec_verify(full: bool, seed: u64, failures: *mut usize) -> PerfrecStatus {
    guard(|| {
        let level = if full { Level::Full } else { Level::Fast };
        let checks = lift(run_suite(level, seed))?;
        let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
        if !failed.is_empty() {
            set_error(format!("failed checks: {}", failed.join(", ")));
        }
        if !failures.is_null() {
            // SAFETY: caller-provided writable slot.
            unsafe { *failures = failed.len() };
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_status_families() {
        assert_eq!(status_of(&Error::Diverged { epoch: 3 }), PerfrecStatus::Numerical);
        assert_eq!(status_of(&Error::Io("x".into())), PerfrecStatus::Io);
        assert_eq!(status_of(&Error::IsolatedItem(2)), PerfrecStatus::InvalidArgument);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), PerfrecStatus::Panic);
        let msg = unsafe { CStr::from_ptr(perfrec_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }
}
