//! C ABI over the collision checker and the beacon-world planner.
//!
//! Every function returns a [`BsStatus`]. On failure the message is kept per
//! thread and can be copied out with [`bs_last_error`]. Scenario and plan
//! objects are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use beliefspace::cli::{beacon_setup, BeaconSetup};
use beliefspace::collision::{collision_probability, is_eps_safe, Body};
use beliefspace::config::{self, BeaconConfig};
use beliefspace::gaussian::{Gaussian, Matrix, Vector};
use beliefspace::roadmap::{self, PlanResult};
use beliefspace::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Config = 4,
    Planning = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Loaded beacon-world scenario with its roadmap.
pub struct BsScenario {
    setup: BeaconSetup,
}

/// Result of [`bs_plan`].
pub struct BsPlan {
    result: PlanResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> BsStatus {
    match e {
        Error::Config(_) => BsStatus::Config,
        Error::Planning(_) => BsStatus::Planning,
        Error::InvalidArgument(_) | Error::Dimension { .. } | Error::NotSymmetric(_) | Error::NotPsd(_) => {
            BsStatus::InvalidArgument
        }
        _ => BsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), BsStatus>) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            BsStatus::Panic
        }
    }
}

fn fail(e: Error) -> BsStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(name: &str) -> BsStatus {
    set_error(format!("{name} is null"));
    BsStatus::NullPointer
}

/// # Safety
/// `mean` must point to 2 and `cov` to 4 readable doubles (row-major).
unsafe fn body(mean: *const f64, cov: *const f64, radius: f64) -> Result<Body, BsStatus> {
    if mean.is_null() {
        return Err(null("mean"));
    }
    if cov.is_null() {
        return Err(null("cov"));
    }
    let m = Vector::from_column_slice(std::slice::from_raw_parts(mean, 2));
    let c = Matrix::from_row_slice(2, 2, std::slice::from_raw_parts(cov, 4));
    Gaussian::new(m, c).and_then(|g| Body::new(g, radius)).map_err(fail)
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`). Returns the length needed including the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Probability that two discs with Gaussian centres overlap.
///
/// # Safety
/// Means point to 2 doubles, covariances to 4 (row-major); outputs are
/// writable or null.
#[no_mangle]
pub unsafe extern "C" fn bs_collision_probability(
    robot_mean: *const f64,
    robot_cov: *const f64,
    robot_radius: f64,
    obstacle_mean: *const f64,
    obstacle_cov: *const f64,
    obstacle_radius: f64,
    tol: f64,
    out_value: *mut f64,
    out_bound: *mut f64,
) -> BsStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let r = body(robot_mean, robot_cov, robot_radius)?;
        let o = body(obstacle_mean, obstacle_cov, obstacle_radius)?;
        let res = collision_probability(&r, &o, tol).map_err(fail)?;
        *out_value = res.value;
        if !out_bound.is_null() {
            *out_bound = if res.converged { res.bound_at_stop } else { f64::INFINITY };
        }
        Ok(())
    })
}

/// ε-safety of a robot against `count` obstacles. Obstacle means are packed
/// as `2 * count` doubles, covariances as `4 * count`.
///
/// # Safety
/// All arrays must have the stated lengths; outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn bs_is_eps_safe(
    robot_mean: *const f64,
    robot_cov: *const f64,
    robot_radius: f64,
    obstacle_means: *const f64,
    obstacle_covs: *const f64,
    obstacle_radii: *const f64,
    count: usize,
    eps: f64,
    tol: f64,
    out_safe: *mut i32,
    out_worst: *mut f64,
) -> BsStatus {
    guard(|| {
        if out_safe.is_null() {
            return Err(null("out_safe"));
        }
        let r = body(robot_mean, robot_cov, robot_radius)?;
        let mut obstacles = Vec::with_capacity(count);
        if count > 0 {
            if obstacle_means.is_null() || obstacle_covs.is_null() || obstacle_radii.is_null() {
                return Err(null("obstacle arrays"));
            }
            for i in 0..count {
                obstacles.push(body(obstacle_means.add(2 * i), obstacle_covs.add(4 * i), *obstacle_radii.add(i))?);
            }
        }
        let s = is_eps_safe(&r, &obstacles, eps, tol).map_err(fail)?;
        *out_safe = s.safe as i32;
        if !out_worst.is_null() {
            *out_worst = s.worst_prob;
        }
        Ok(())
    })
}

/// Loads a beacon-world scenario file and builds its roadmap.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_load(
    path: *const c_char,
    object_uncertainty: i32,
    out: *mut *mut BsScenario,
) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            set_error("path is not UTF-8");
            BsStatus::InvalidArgument
        })?;
        let c: BeaconConfig = config::load(Path::new(path)).map_err(fail)?;
        let setup = beacon_setup(&c, object_uncertainty != 0, None, None, None, None).map_err(fail)?;
        *out = Box::into_raw(Box::new(BsScenario { setup }));
        Ok(())
    })
}

/// # Safety
/// `s` is null or came from [`bs_scenario_load`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_free(s: *mut BsScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Plans from the scenario's start to its goal.
///
/// # Safety
/// `s` is a live scenario; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bs_plan(s: *const BsScenario, out: *mut *mut BsPlan) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        let st = &s.setup;
        let start = st.domain.world.start.clone();
        let result = roadmap::plan(&st.roadmap, &st.env, &st.domain, &start, 1, &st.options).map_err(fail)?;
        *out = Box::into_raw(Box::new(BsPlan { result }));
        Ok(())
    })
}

/// # Safety
/// `p` is null or came from [`bs_plan`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_plan_free(p: *mut BsPlan) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of waypoints, or 0 for a null plan.
///
/// # Safety
/// `p` is null or a live plan.
#[no_mangle]
pub unsafe extern "C" fn bs_plan_len(p: *const BsPlan) -> usize {
    p.as_ref().map_or(0, |p| p.result.waypoints.len())
}

/// Dimension of the belief state, or 0 for a null plan.
///
/// # Safety
/// `p` is null or a live plan.
#[no_mangle]
pub unsafe extern "C" fn bs_plan_state_dim(p: *const BsPlan) -> usize {
    p.as_ref().and_then(|p| p.result.waypoints.first()).map_or(0, |w| w.belief.dim())
}

/// Total cost, or NaN for a null plan.
///
/// # Safety
/// `p` is null or a live plan.
#[no_mangle]
pub unsafe extern "C" fn bs_plan_total_cost(p: *const BsPlan) -> f64 {
    p.as_ref().map_or(f64::NAN, |p| p.result.total_cost)
}

/// 1 when every waypoint passed the ε-safety check.
///
/// # Safety
/// `p` is null or a live plan.
#[no_mangle]
pub unsafe extern "C" fn bs_plan_certified(p: *const BsPlan) -> i32 {
    p.as_ref().map_or(0, |p| p.result.certified as i32)
}

/// Copies waypoint `index`: the mean (`dim` doubles), the covariance
/// (`dim * dim`, row-major) and the collision probability. Null outputs are
/// skipped.
///
/// # Safety
/// `p` is a live plan; non-null outputs have room for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn bs_plan_waypoint(
    p: *const BsPlan,
    index: usize,
    out_mean: *mut f64,
    out_cov: *mut f64,
    out_p_collision: *mut f64,
) -> BsStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("plan"))?;
        let w = p.result.waypoints.get(index).ok_or_else(|| {
            set_error(format!("waypoint {index} out of range"));
            BsStatus::OutOfRange
        })?;
        let n = w.belief.dim();
        if !out_mean.is_null() {
            ptr::copy_nonoverlapping(w.belief.mean.as_ptr(), out_mean, n);
        }
        if !out_cov.is_null() {
            for r in 0..n {
                for c in 0..n {
                    *out_cov.add(r * n + c) = w.belief.cov[(r, c)];
                }
            }
        }
        if !out_p_collision.is_null() {
            *out_p_collision = w.p_collision;
        }
        Ok(())
    })
}
