use std::ffi::{CStr, CString};
use std::ptr;

use vclos_ffi::*;

fn last_error() -> String {
    let p = vclos_last_error();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { vclos_string_free(p) };
    s
}

fn cluster(l: usize, s: usize, t: usize, k: usize) -> *mut VclosCluster {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { vclos_cluster_new(l, s, t, k, &mut c) }, VclosStatus::Ok);
    c
}

#[test]
fn place_and_release_round_trip() {
    let c = cluster(4, 8, 4, 0);
    let strategy = CString::new("vclos").unwrap();
    let mut json = ptr::null_mut();
    let st = unsafe { vclos_place(c, strategy.as_ptr(), 7, 16, &mut json) };
    assert_eq!(st, VclosStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { vclos_string_free(json) };
    assert!(text.contains("\"kind\""), "{text}");
    let mut idle = 0;
    assert_eq!(unsafe { vclos_cluster_idle_gpus(c, &mut idle) }, VclosStatus::Ok);
    assert_eq!(idle, 16);
    assert_eq!(unsafe { vclos_release(c, 7) }, VclosStatus::Ok);
    assert_eq!(unsafe { vclos_cluster_idle_gpus(c, &mut idle) }, VclosStatus::Ok);
    assert_eq!(idle, 32);
    assert_eq!(unsafe { vclos_release(c, 7) }, VclosStatus::InvalidArgument);
    assert!(last_error().contains("7"));
    unsafe { vclos_cluster_free(c) };
}

#[test]
fn oversized_request_is_infeasible() {
    let c = cluster(4, 8, 4, 0);
    let strategy = CString::new("ecmp").unwrap();
    let st = unsafe { vclos_place(c, strategy.as_ptr(), 1, 33, ptr::null_mut()) };
    assert_eq!(st, VclosStatus::Infeasible);
    unsafe { vclos_cluster_free(c) };
}

#[test]
fn bad_arguments_report_errors() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { vclos_cluster_new(4, 6, 4, 0, &mut c) }, VclosStatus::InvalidArgument);
    assert!(last_error().contains("gpus_per_server"));
    assert!(c.is_null());
    let c = cluster(4, 8, 4, 0);
    let bogus = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { vclos_place(c, bogus.as_ptr(), 1, 4, ptr::null_mut()) },
        VclosStatus::InvalidArgument
    );
    assert_eq!(unsafe { vclos_place(c, ptr::null(), 1, 4, ptr::null_mut()) }, VclosStatus::NullPointer);
    let ocs = CString::new("ocs-vclos").unwrap();
    assert_eq!(
        unsafe { vclos_place(c, ocs.as_ptr(), 1, 4, ptr::null_mut()) },
        VclosStatus::InvalidArgument
    );
    unsafe { vclos_cluster_free(c) };
    unsafe { vclos_cluster_free(ptr::null_mut()) };
    unsafe { vclos_string_free(ptr::null_mut()) };
}

#[test]
fn verify_reports_max_count() {
    let ring = CString::new("ring").unwrap();
    let mut max = 0;
    assert_eq!(unsafe { vclos_verify(ring.as_ptr(), 64, 8, &mut max) }, VclosStatus::Ok);
    assert_eq!(max, 1);
    let dbt = CString::new("double_binary_tree").unwrap();
    assert_eq!(unsafe { vclos_verify(dbt.as_ptr(), 256, 8, &mut max) }, VclosStatus::Ok);
    assert!((1..=3).contains(&max));
}

#[test]
fn simulate_returns_summary_json() {
    let c = cluster(4, 8, 4, 0);
    let trace = CString::new(concat!(
        r#"{"job_id":0,"arrival_time":0.0,"N":8,"model_tag":"a","collective":"ring","iterations":10,"compute_time_per_iter":1.0,"comm_bytes_per_iter":1e9,"alpha":0.2,"batch_size":"8"}"#,
        "\n",
        r#"{"job_id":1,"arrival_time":1.0,"N":16,"model_tag":"b","collective":"hd","iterations":10,"compute_time_per_iter":1.0,"comm_bytes_per_iter":1e9,"alpha":0.2,"batch_size":"8"}"#,
        "\n"
    ))
    .unwrap();
    let strategy = CString::new("best").unwrap();
    let sched = CString::new("fifo").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { vclos_simulate(c, trace.as_ptr(), strategy.as_ptr(), sched.as_ptr(), 3, &mut out) };
    assert_eq!(st, VclosStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { vclos_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["completed"], 2);
    let bad = CString::new("{not json}\n").unwrap();
    let st = unsafe { vclos_simulate(c, bad.as_ptr(), strategy.as_ptr(), sched.as_ptr(), 3, &mut out) };
    assert_eq!(st, VclosStatus::InvalidArgument);
    assert!(last_error().contains("line 1"));
    unsafe { vclos_cluster_free(c) };
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(vclos_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h = include_str!("../include/vclos.h");
    for name in [
        "vclos_cluster_new",
        "vclos_cluster_free",
        "vclos_place",
        "vclos_release",
        "vclos_simulate",
        "vclos_last_error",
        "vclos_string_free",
        "typedef struct VclosCluster VclosCluster",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}
