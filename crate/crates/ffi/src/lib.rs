//! C interface to the `voltvar` toolkit.
//!
//! Every function returns a [`VvStatus`]; on failure the message is kept in a
//! thread-local slot readable through [`vv_last_error_message`]. Handles are
//! opaque and must be released with the matching `_free` function. Vectors are
//! passed as pointer plus length and are indexed by non-root bus (`i` is bus
//! `i + 1`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use voltvar::branchflow::{power_loss, sweep_solve, DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL};
use voltvar::conic::InteriorPoint;
use voltvar::controller::{threshold_update, ControllerState, ScheduleKind, StepFlag, StepSizeSchedule};
use voltvar::network::{PriceSchedule, RadialNetwork};
use voltvar::relaxation::{build_maps, solve_primal, AffineMaps};
use voltvar::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidNetwork = 3,
    Infeasible = 4,
    SolverFailure = 5,
    PowerFlowFailure = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VvScheduleKind {
    /// `param` is the horizon.
    ConstantHorizon = 0,
    Decaying = 1,
    /// `param` is the scale factor.
    ScaledDecaying = 2,
    /// `param` is the step size.
    Fixed = 3,
}

/// A validated feeder with its precomputed affine maps.
pub struct VvNetwork {
    network: RadialNetwork,
    maps: AffineMaps,
}

/// Controller state plus the prices it optimizes against.
pub struct VvController {
    state: ControllerState,
    prices: PriceSchedule,
    solver: InteriorPoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> VvStatus {
    match err {
        Error::Network(_) | Error::Json(_) => VvStatus::InvalidNetwork,
        Error::Infeasible => VvStatus::Infeasible,
        Error::Solver(_) => VvStatus::SolverFailure,
        Error::PowerFlowDiverged { .. } | Error::VoltageCollapse { .. } => VvStatus::PowerFlowFailure,
        _ => VvStatus::InvalidArgument,
    }
}

struct Fail(VvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VvStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VvStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VvStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn network_ref<'a>(net: *const VvNetwork) -> Result<&'a VvNetwork, Fail> {
    net.as_ref().ok_or_else(|| null("network"))
}

fn check_len(net: &VvNetwork, len: usize) -> Result<(), Fail> {
    if len != net.network.n() {
        return Err(Fail(
            VvStatus::InvalidArgument,
            format!("expected {} entries, got {len}", net.network.n()),
        ));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn vv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a feeder from a NUL-terminated JSON document.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_network_from_json(json: *const c_char, out: *mut *mut VvNetwork) -> VvStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Fail(VvStatus::InvalidArgument, "json is not UTF-8".into()))?;
        let network = RadialNetwork::from_json_str(text)?;
        let maps = build_maps(&network);
        *out = Box::into_raw(Box::new(VvNetwork { network, maps }));
        Ok(())
    })
}

/// # Safety
/// `net` must come from [`vv_network_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vv_network_free(net: *mut VvNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of non-root buses, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vv_network_num_buses(net: *const VvNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.network.n())
}

/// Power loss (pu) of the power flow solution at injections `(p, q)`.
///
/// # Safety
/// `p` and `q` must hold `len` values; `out_loss` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vv_sweep_loss(
    net: *const VvNetwork,
    p: *const f64,
    q: *const f64,
    len: usize,
    out_loss: *mut f64,
) -> VvStatus {
    guard(|| {
        let net = network_ref(net)?;
        check_len(net, len)?;
        let (p, q) = (slice(p, len, "p")?, slice(q, len, "q")?);
        let out = out_loss.as_mut().ok_or_else(|| null("out_loss"))?;
        let point = sweep_solve(&net.network, p, q, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER)?;
        *out = power_loss(&net.network, &point);
        Ok(())
    })
}

/// Minimum relaxed loss at injections `(p, q)`. When `out_lambda` is not
/// null it receives the `len` multipliers of the reactive balance; their
/// negation is a subgradient of the loss in `q`.
///
/// # Safety
/// `p` and `q` must hold `len` values, `out_loss` must be valid, and
/// `out_lambda` must be null or hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn vv_solve_primal(
    net: *const VvNetwork,
    p: *const f64,
    q: *const f64,
    len: usize,
    out_loss: *mut f64,
    out_lambda: *mut f64,
) -> VvStatus {
    guard(|| {
        let net = network_ref(net)?;
        check_len(net, len)?;
        let (p, q) = (slice(p, len, "p")?, slice(q, len, "q")?);
        let out = out_loss.as_mut().ok_or_else(|| null("out_loss"))?;
        let sol = solve_primal(&net.maps, &net.network, p, q, &InteriorPoint::default())?;
        *out = sol.value;
        if !out_lambda.is_null() {
            slice_mut(out_lambda, len, "out_lambda")?.copy_from_slice(&sol.dual.lambda);
        }
        Ok(())
    })
}

/// Elementwise minimizer of `(q - y)^2 / 2 + eta_c |q|` over `[lo, hi]`.
///
/// # Safety
/// All five arrays must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn vv_threshold_update(
    y: *const f64,
    eta_c: *const f64,
    lo: *const f64,
    hi: *const f64,
    len: usize,
    out: *mut f64,
) -> VvStatus {
    guard(|| {
        let q = threshold_update(
            slice(y, len, "y")?,
            slice(eta_c, len, "eta_c")?,
            slice(lo, len, "lo")?,
            slice(hi, len, "hi")?,
        )?;
        slice_mut(out, len, "out")?.copy_from_slice(&q);
        Ok(())
    })
}

/// Creates a stochastic controller starting from a zero setpoint.
///
/// `d <= 0` selects the diameter of the feasible box and `l <= 0` a bound
/// learned from the observed multipliers. Prices are the loss price and one
/// reactive price shared by every controllable bus.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_controller_new(
    net: *const VvNetwork,
    kind: VvScheduleKind,
    param: f64,
    d: f64,
    l: f64,
    c0_tilde: f64,
    c_tilde: f64,
    out: *mut *mut VvController,
) -> VvStatus {
    guard(|| {
        let net = network_ref(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match kind {
            VvScheduleKind::ConstantHorizon => {
                if !(param >= 1.0 && param.fract() == 0.0 && param.is_finite()) {
                    return Err(Fail(VvStatus::InvalidArgument, format!("horizon must be a positive integer, got {param}")));
                }
                ScheduleKind::ConstantHorizon { horizon: param as usize }
            }
            VvScheduleKind::Decaying => ScheduleKind::Decaying,
            VvScheduleKind::ScaledDecaying => ScheduleKind::ScaledDecaying { beta: param },
            VvScheduleKind::Fixed => ScheduleKind::Fixed { eta: param },
        };
        let d = (d > 0.0).then_some(d);
        let state = if l > 0.0 {
            let d = d.unwrap_or_else(|| voltvar::controller::default_diameter(&net.network));
            ControllerState::new(&net.network, StepSizeSchedule::new(kind, d, l)?)?
        } else {
            ControllerState::with_adaptive_bound(&net.network, kind, d)?
        };
        let prices = PriceSchedule::uniform(&net.network, c0_tilde, c_tilde)?;
        *out = Box::into_raw(Box::new(VvController {
            state,
            prices,
            solver: InteriorPoint::default(),
        }));
        Ok(())
    })
}

/// One control interval from observed injections. Writes the new setpoint to
/// `out_setpoint`. When the relaxation cannot be solved the previous setpoint
/// is kept, `*out_flagged` is set to 1 and the call still returns `Ok`.
///
/// # Safety
/// Handles must be live; `obs_p`, `obs_qc` and `out_setpoint` must hold `len`
/// values; `out_flagged` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn vv_controller_step(
    ctrl: *mut VvController,
    net: *const VvNetwork,
    obs_p: *const f64,
    obs_qc: *const f64,
    len: usize,
    out_setpoint: *mut f64,
    out_flagged: *mut i32,
) -> VvStatus {
    guard(|| {
        let ctrl = ctrl.as_mut().ok_or_else(|| null("controller"))?;
        let net = network_ref(net)?;
        check_len(net, len)?;
        let (p, qc) = (slice(obs_p, len, "obs_p")?, slice(obs_qc, len, "obs_qc")?);
        let out = slice_mut(out_setpoint, len, "out_setpoint")?;
        let diag = ctrl
            .state
            .step(&net.network, &net.maps, &ctrl.prices, p, qc, &ctrl.solver)?;
        out.copy_from_slice(&ctrl.state.q_hat);
        if let Some(flag) = out_flagged.as_mut() {
            *flag = i32::from(matches!(diag.flag, Some(StepFlag::Infeasible | StepFlag::SolverFailure)));
        }
        Ok(())
    })
}

/// # Safety
/// `ctrl` must come from [`vv_controller_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vv_controller_free(ctrl: *mut VvController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}
