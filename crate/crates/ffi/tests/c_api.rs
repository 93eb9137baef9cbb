use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use beliefspace_ffi::*;

const ISO: [f64; 4] = [0.02, 0.0, 0.0, 0.02];

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { bs_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n >= 1);
    let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn collision_probability_matches_closed_form() {
    let (mut v, mut b) = (f64::NAN, f64::NAN);
    let s = unsafe {
        bs_collision_probability([0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.3, [0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.5, 1e-10, &mut v, &mut b)
    };
    assert_eq!(s, BsStatus::Ok);
    assert!((v - (1.0 - (-0.64f64 / 0.08).exp())).abs() < 1e-10);
    assert!(b <= 1e-10);
}

#[test]
fn null_and_invalid_inputs_report_codes() {
    let mut v = 0.0;
    let s = unsafe { bs_collision_probability(ptr::null(), ISO.as_ptr(), 0.3, [0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.5, 1e-6, &mut v, ptr::null_mut()) };
    assert_eq!(s, BsStatus::NullPointer);
    assert!(last_error().contains("null"));
    let s = unsafe {
        bs_collision_probability([0.0, 0.0].as_ptr(), ISO.as_ptr(), -1.0, [0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.5, 1e-6, &mut v, ptr::null_mut())
    };
    assert_eq!(s, BsStatus::InvalidArgument);
    assert!(last_error().contains("radius"));
}

#[test]
fn last_error_truncates_and_reports_length() {
    let mut v = 0.0;
    unsafe { bs_collision_probability(ptr::null(), ISO.as_ptr(), 0.3, ptr::null(), ISO.as_ptr(), 0.5, 1e-6, &mut v, ptr::null_mut()) };
    let full = unsafe { bs_last_error(ptr::null_mut(), 0) };
    let mut small = [1 as c_char; 4];
    let n = unsafe { bs_last_error(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, full);
    assert_eq!(small[3], 0);
}

#[test]
fn eps_safety_over_obstacle_arrays() {
    let means = [5.0, 0.0, 0.8, 0.0];
    let covs = [ISO, ISO].concat();
    let radii = [0.5, 0.5];
    let (mut safe, mut worst) = (-1, 0.0);
    let s = unsafe {
        bs_is_eps_safe([0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.3, means.as_ptr(), covs.as_ptr(), radii.as_ptr(), 2, 0.99, 1e-4, &mut safe, &mut worst)
    };
    assert_eq!(s, BsStatus::Ok);
    assert_eq!(safe, 0);
    assert!((worst - 0.4497).abs() < 1e-3);
    let s = unsafe {
        bs_is_eps_safe([0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.3, means.as_ptr(), covs.as_ptr(), radii.as_ptr(), 1, 0.99, 1e-4, &mut safe, &mut worst)
    };
    assert_eq!(s, BsStatus::Ok);
    assert_eq!(safe, 1);
    let s = unsafe { bs_is_eps_safe([0.0, 0.0].as_ptr(), ISO.as_ptr(), 0.3, ptr::null(), ptr::null(), ptr::null(), 0, 0.99, 1e-4, &mut safe, ptr::null_mut()) };
    assert_eq!(s, BsStatus::Ok);
    assert_eq!(safe, 1);
}

#[test]
fn scenario_plan_roundtrip() {
    let path = fixture("beacon_certain.toml");
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { bs_scenario_load(path.as_ptr(), 0, &mut sc) }, BsStatus::Ok);
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { bs_plan(sc, &mut plan) }, BsStatus::Ok);
    unsafe {
        let n = bs_plan_len(plan);
        let dim = bs_plan_state_dim(plan);
        assert!(n > 2);
        assert_eq!(dim, 3);
        assert_eq!(bs_plan_certified(plan), 1);
        assert!(bs_plan_total_cost(plan) > 0.0);
        let (mut mean, mut cov, mut p) = ([0.0; 3], [0.0; 9], -1.0);
        assert_eq!(bs_plan_waypoint(plan, 0, mean.as_mut_ptr(), cov.as_mut_ptr(), &mut p), BsStatus::Ok);
        assert_eq!(mean, [3.0, 10.0, 0.0]);
        assert_eq!(cov[1], cov[3]);
        assert!((0.0..=0.01).contains(&p));
        assert_eq!(bs_plan_waypoint(plan, n - 1, mean.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()), BsStatus::Ok);
        assert!((mean[0] - 27.0).abs() < 1e-9 && (mean[1] - 10.0).abs() < 1e-9);
        assert_eq!(bs_plan_waypoint(plan, n, mean.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()), BsStatus::OutOfRange);
        bs_plan_free(plan);
        bs_scenario_free(sc);
    }
}

#[test]
fn scenario_load_errors() {
    let mut sc = ptr::null_mut();
    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    assert_eq!(unsafe { bs_scenario_load(missing.as_ptr(), 0, &mut sc) }, BsStatus::Config);
    assert!(sc.is_null());
    let wrong = fixture("prob_placement_a.toml");
    assert_eq!(unsafe { bs_scenario_load(wrong.as_ptr(), 0, &mut sc) }, BsStatus::Config);
    assert_eq!(unsafe { bs_scenario_load(ptr::null(), 0, &mut sc) }, BsStatus::NullPointer);
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { bs_plan(ptr::null(), &mut plan) }, BsStatus::NullPointer);
    unsafe {
        assert_eq!(bs_plan_len(ptr::null()), 0);
        assert!(bs_plan_total_cost(ptr::null()).is_nan());
        bs_plan_free(ptr::null_mut());
        bs_scenario_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_api_and_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(dir.join("beliefspace.h")).unwrap();
    for f in [
        "bs_last_error", "bs_collision_probability", "bs_is_eps_safe", "bs_scenario_load", "bs_scenario_free", "bs_plan(",
        "bs_plan_free", "bs_plan_len", "bs_plan_state_dim", "bs_plan_total_cost", "bs_plan_certified", "bs_plan_waypoint",
        "typedef struct BsPlan BsPlan", "BS_STATUS_PLANNING = 5",
    ] {
        assert!(header.contains(f), "missing {f}");
    }
    // syntax check with the system C compiler when one is installed
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99"]).arg(dir.join("beliefspace.h")).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
