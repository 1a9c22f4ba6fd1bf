use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use voltvar::branchflow::{power_loss, sweep_solve};
use voltvar::conic::InteriorPoint;
use voltvar::controller::{ControllerState, ScheduleKind, StepSizeSchedule};
use voltvar::fixtures::{feeder6, FEEDER6_JSON};
use voltvar::network::PriceSchedule;
use voltvar::relaxation::{build_maps, solve_primal};
use voltvar_ffi::*;

fn network() -> *mut VvNetwork {
    let json = CString::new(FEEDER6_JSON).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { vv_network_from_json(json.as_ptr(), &mut net) }, VvStatus::Ok);
    assert!(!net.is_null());
    net
}

fn last_error() -> String {
    let p = vv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn network_round_trip() {
    let net = network();
    assert_eq!(unsafe { vv_network_num_buses(net) }, feeder6().n());
    unsafe { vv_network_free(net) };
    assert_eq!(unsafe { vv_network_num_buses(ptr::null()) }, 0);
    unsafe { vv_network_free(ptr::null_mut()) };
}

#[test]
fn bad_json_reports_message() {
    let json = CString::new("{\"buses\": 3}").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { vv_network_from_json(json.as_ptr(), &mut net) }, VvStatus::InvalidNetwork);
    assert!(net.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { vv_network_from_json(ptr::null(), &mut net) }, VvStatus::NullPointer);
    assert!(last_error().contains("json"));
}

#[test]
fn losses_match_library() {
    let rust = feeder6();
    let (p, qc) = rust.nominal_injections();
    let q: Vec<f64> = qc.iter().map(|v| -v).collect();
    let net = network();
    let n = p.len();
    let (mut sweep, mut relaxed) = (0.0, 0.0);
    let mut lambda = vec![0.0; n];
    unsafe {
        assert_eq!(vv_sweep_loss(net, p.as_ptr(), q.as_ptr(), n, &mut sweep), VvStatus::Ok);
        assert_eq!(
            vv_solve_primal(net, p.as_ptr(), q.as_ptr(), n, &mut relaxed, lambda.as_mut_ptr()),
            VvStatus::Ok
        );
        assert_eq!(vv_solve_primal(net, p.as_ptr(), q.as_ptr(), n, &mut relaxed, ptr::null_mut()), VvStatus::Ok);
    }
    let point = sweep_solve(&rust, &p, &q, 1e-10, 500).unwrap();
    assert_eq!(sweep, power_loss(&rust, &point));
    let sol = solve_primal(&build_maps(&rust), &rust, &p, &q, &InteriorPoint::default()).unwrap();
    assert_eq!(relaxed, sol.value);
    assert_eq!(lambda, sol.dual.lambda);
    assert_eq!(
        unsafe { vv_solve_primal(net, p.as_ptr(), q.as_ptr(), n - 1, &mut relaxed, ptr::null_mut()) },
        VvStatus::InvalidArgument
    );
    unsafe { vv_network_free(net) };
}

#[test]
fn threshold_through_c_abi() {
    let y = [0.05, 0.5, -0.5, 2.0];
    let ec = [0.1; 4];
    let lo = [-1.0; 4];
    let hi = [1.0; 4];
    let mut out = [f64::NAN; 4];
    let s = unsafe { vv_threshold_update(y.as_ptr(), ec.as_ptr(), lo.as_ptr(), hi.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(s, VvStatus::Ok);
    assert_eq!(out, [0.0, 0.4, -0.4, 1.0]);
    let bad_hi = [-2.0; 4];
    let s = unsafe { vv_threshold_update(y.as_ptr(), ec.as_ptr(), lo.as_ptr(), bad_hi.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(s, VvStatus::InvalidArgument);
}

#[test]
fn controller_matches_library() {
    let rust = feeder6();
    let maps = build_maps(&rust);
    let prices = PriceSchedule::uniform(&rust, 0.066, 0.066 / 80.0).unwrap();
    let sched = StepSizeSchedule::new(ScheduleKind::Fixed { eta: 1.0 }, 1.0, 1.0).unwrap();
    let mut reference = ControllerState::new(&rust, sched).unwrap();
    let net = network();
    let mut ctrl = ptr::null_mut();
    let s = unsafe { vv_controller_new(net, VvScheduleKind::Fixed, 1.0, 1.0, 1.0, 0.066, 0.066 / 80.0, &mut ctrl) };
    assert_eq!(s, VvStatus::Ok);
    let (p, qc) = rust.nominal_injections();
    let n = p.len();
    let mut setpoint = vec![0.0; n];
    let mut flagged = -1;
    for _ in 0..5 {
        let s = unsafe { vv_controller_step(ctrl, net, p.as_ptr(), qc.as_ptr(), n, setpoint.as_mut_ptr(), &mut flagged) };
        assert_eq!(s, VvStatus::Ok);
        assert_eq!(flagged, 0);
        reference.step(&rust, &maps, &prices, &p, &qc, &InteriorPoint::default()).unwrap();
        assert_eq!(setpoint, reference.q_hat);
    }
    unsafe {
        vv_controller_free(ctrl);
        vv_network_free(net);
    }
}

#[test]
fn controller_rejects_bad_schedule() {
    let net = network();
    let mut ctrl = ptr::null_mut();
    let s = unsafe { vv_controller_new(net, VvScheduleKind::ConstantHorizon, 2.5, 0.0, 0.0, 1.0, 0.0, &mut ctrl) };
    assert_eq!(s, VvStatus::InvalidArgument);
    assert!(ctrl.is_null());
    let s = unsafe { vv_controller_new(net, VvScheduleKind::Fixed, -1.0, 0.0, 0.0, 1.0, 0.0, &mut ctrl) };
    assert_eq!(s, VvStatus::InvalidArgument);
    let s = unsafe { vv_controller_new(net, VvScheduleKind::Decaying, 0.0, 0.0, 0.0, 1.0, 0.0, &mut ctrl) };
    assert_eq!(s, VvStatus::Ok);
    unsafe {
        vv_controller_free(ctrl);
        vv_network_free(net);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/voltvar.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["vv_network_from_json", "vv_controller_step", "vv_last_error_message", "VV_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile_dir();
    let src = dir.join("probe.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ return VV_STATUS_OK; }}\n")).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(status) => assert!(status.success(), "{cc} rejected the header"),
        Err(e) => eprintln!("skipping C compile check, {cc} unavailable: {e}"),
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("voltvar-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
