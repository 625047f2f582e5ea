//! C interface to the commrestore library.
//!
//! Objects cross the boundary as opaque handles created by `cr_*_load`,
//! `cr_*_generate` or `cr_solve_*` and released with the matching
//! `cr_*_free`. Every fallible call returns a [`CrStatus`]; on failure the
//! message is available from [`cr_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use commrestore::error::Error;
use commrestore::heuristic::solve_heuristic;
use commrestore::lp::relaxation_upper_bound;
use commrestore::report::write_plan;
use commrestore::scenario::{generate_scenario, GeneratorConfig, Marginals, Params, Scenario, TauSource};
use commrestore::utility::{total_true_objective, AllocationPlan};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Solver = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrTauSource {
    Income = 0,
    Race = 1,
    Education = 2,
}

/// Scenario parameters; obtain defaults from [`cr_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrParams {
    pub horizon: usize,
    pub smax_mbps: f64,
    pub delta: usize,
    pub theta: f64,
    pub tau_source: CrTauSource,
}

/// A validated set of households grouped into areas.
pub struct CrScenario(Scenario);

/// An allocation plan for the scenario that produced it.
pub struct CrPlan(AllocationPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CrStatus {
    match e {
        Error::Io { .. } => CrStatus::Io,
        Error::Parse { .. } => CrStatus::Parse,
        Error::Validation(_) => CrStatus::Validation,
        Error::Argument(_) | Error::UndefinedCorrelation(_) => CrStatus::InvalidArgument,
        Error::BenchmarkInfeasible { .. } | Error::Solver(_) => CrStatus::Solver,
    }
}

struct Failure(CrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CrStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            CrStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CrStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn params_arg(p: *const CrParams) -> Params {
    match p.as_ref() {
        None => Params::default(),
        Some(c) => Params {
            horizon: c.horizon,
            smax_mbps: c.smax_mbps,
            delta: c.delta,
            theta: c.theta,
            tau_source: match c.tau_source {
                CrTauSource::Income => TauSource::Income,
                CrTauSource::Race => TauSource::Race,
                CrTauSource::Education => TauSource::Education,
            },
        },
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn cr_params_default() -> CrParams {
    let p = Params::default();
    CrParams {
        horizon: p.horizon,
        smax_mbps: p.smax_mbps,
        delta: p.delta,
        theta: p.theta,
        tau_source: CrTauSource::Race,
    }
}

/// Loads a household CSV. `params` may be null for defaults.
///
/// # Safety
/// `path` must be a NUL-terminated string; `params` null or valid; `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cr_scenario_load(
    path: *const c_char,
    params: *const CrParams,
    out: *mut *mut CrScenario,
) -> CrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let s = Scenario::load(&path, params_arg(params))?;
        *out = Box::into_raw(Box::new(CrScenario(s)));
        Ok(())
    })
}

/// Synthetic scenario with survey-like marginals and `min_users..=max_users`
/// households per area.
///
/// # Safety
/// `params` null or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cr_scenario_generate(
    seed: u64,
    n_areas: usize,
    min_users: usize,
    max_users: usize,
    params: *const CrParams,
    out: *mut *mut CrScenario,
) -> CrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let params = params_arg(params);
        let config = GeneratorConfig::new(seed, n_areas, (min_users, max_users), Marginals::survey_like(params.horizon));
        let s = generate_scenario(&config, params)?;
        *out = Box::into_raw(Box::new(CrScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `scenario` null or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cr_scenario_num_users(scenario: *const CrScenario, out: *mut usize) -> CrStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        *out_arg(out, "out")? = s.0.num_users();
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_scenario_free(scenario: *mut CrScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the rounding heuristic.
///
/// # Safety
/// `scenario` null or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cr_solve_heuristic(scenario: *const CrScenario, out: *mut *mut CrPlan) -> CrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let trace = solve_heuristic(&s.0)?;
        *out = Box::into_raw(Box::new(CrPlan(trace.final_plan)));
        Ok(())
    })
}

/// Total utility of `plan` under `scenario`.
///
/// # Safety
/// Handles null or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cr_plan_true_objective(
    scenario: *const CrScenario,
    plan: *const CrPlan,
    out: *mut f64,
) -> CrStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let p = plan.as_ref().ok_or_else(|| null("plan"))?;
        if p.0.z.len() != s.0.num_areas() || p.0.x.len() != s.0.num_users() {
            return Err(Failure(CrStatus::InvalidArgument, "plan does not match scenario".into()));
        }
        *out_arg(out, "out")? = total_true_objective(&s.0, &p.0);
        Ok(())
    })
}

/// # Safety
/// `scenario` null or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cr_relaxation_upper_bound(scenario: *const CrScenario, out: *mut f64) -> CrStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        *out_arg(out, "out")? = relaxation_upper_bound(&s.0)?;
        Ok(())
    })
}

/// Writes `plan` in the plan CSV format.
///
/// # Safety
/// Handles null or valid; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cr_plan_write_csv(
    scenario: *const CrScenario,
    plan: *const CrPlan,
    path: *const c_char,
) -> CrStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let p = plan.as_ref().ok_or_else(|| null("plan"))?;
        let path = path_arg(path, "path")?;
        let file = File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let mut w = BufWriter::new(file);
        write_plan(&s.0, &p.0, &mut w)?;
        w.flush().map_err(|e| Error::Io { path, source: e })?;
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_plan_free(plan: *mut CrPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}
