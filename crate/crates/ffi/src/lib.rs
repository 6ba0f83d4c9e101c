//! C interface. Every call returns a [`VclosStatus`]; on failure the message
//! is available from [`vclos_last_error`]. Strings handed out by the library
//! must be released with [`vclos_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vclos::cli::verify_collective;
use vclos::placement::{commit, place, JobRequest, PlaceOptions, PlaceStats, Strategy};
use vclos::sim::{self, SchedulerPolicy, SimConfig};
use vclos::{ClusterConfig, JobId, PhysicalCluster};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VclosStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// No placement exists for the request right now.
    Infeasible = 3,
    /// The library panicked; the handle should be discarded.
    Internal = 4,
}

/// Opaque cluster state.
pub struct VclosCluster {
    inner: PhysicalCluster,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: VclosStatus, msg: impl Into<String>) -> VclosStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> VclosStatus) -> VclosStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(VclosStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, VclosStatus> {
    if p.is_null() {
        return Err(fail(VclosStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(VclosStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn hand_out(s: String, out: *mut *mut c_char) -> VclosStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers check `out` for null first.
            unsafe { *out = c.into_raw() };
            VclosStatus::Ok
        }
        Err(_) => fail(VclosStatus::Internal, "output contains a NUL byte"),
    }
}

/// Copy of the last error message on this thread, or NULL if none. Free it
/// with [`vclos_string_free`].
#[no_mangle]
pub extern "C" fn vclos_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vclos_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn vclos_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build an idle cluster. `ocs_count` 0 means plain static wiring.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn vclos_cluster_new(
    leaves: usize,
    spines: usize,
    gpus_per_server: usize,
    ocs_count: usize,
    out: *mut *mut VclosCluster,
) -> VclosStatus {
    guard(|| {
        if out.is_null() {
            return fail(VclosStatus::NullPointer, "out is null");
        }
        let cfg = ClusterConfig::new(leaves, spines, gpus_per_server).with_ocs(ocs_count);
        match PhysicalCluster::build(cfg) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(VclosCluster { inner: c }));
                VclosStatus::Ok
            }
            Err(e) => fail(VclosStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `cluster` must be NULL or a handle from [`vclos_cluster_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vclos_cluster_free(cluster: *mut VclosCluster) {
    if !cluster.is_null() {
        drop(Box::from_raw(cluster));
    }
}

/// # Safety
/// `cluster` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vclos_cluster_idle_gpus(cluster: *const VclosCluster, out: *mut usize) -> VclosStatus {
    guard(|| {
        if cluster.is_null() || out.is_null() {
            return fail(VclosStatus::NullPointer, "cluster or out is null");
        }
        *out = (*cluster).inner.idle_gpus();
        VclosStatus::Ok
    })
}

/// Cluster state as JSON. Free the string with [`vclos_string_free`].
///
/// # Safety
/// `cluster` must be a live handle and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn vclos_cluster_snapshot(
    cluster: *const VclosCluster,
    out_json: *mut *mut c_char,
) -> VclosStatus {
    guard(|| {
        if cluster.is_null() || out_json.is_null() {
            return fail(VclosStatus::NullPointer, "cluster or out_json is null");
        }
        match serde_json::to_string(&(*cluster).inner.snapshot()) {
            Ok(s) => hand_out(s, out_json),
            Err(e) => fail(VclosStatus::Internal, e.to_string()),
        }
    })
}

/// Place `gpus` GPUs for `job_id` with `strategy` (e.g. "vclos",
/// "ocs-vclos", "ecmp") and reserve them. On success `out_json`, if not
/// NULL, receives the allocation as JSON.
///
/// # Safety
/// `cluster` must be a live handle, `strategy` a NUL-terminated string and
/// `out_json` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn vclos_place(
    cluster: *mut VclosCluster,
    strategy: *const c_char,
    job_id: u64,
    gpus: usize,
    out_json: *mut *mut c_char,
) -> VclosStatus {
    guard(|| {
        if cluster.is_null() {
            return fail(VclosStatus::NullPointer, "cluster is null");
        }
        let name = match read_str(strategy, "strategy") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let strategy: Strategy = match name.parse() {
            Ok(s) => s,
            Err(e) => return fail(VclosStatus::InvalidArgument, e),
        };
        let c = &mut (*cluster).inner;
        if strategy.uses_ocs() != c.config().has_ocs() {
            return fail(
                VclosStatus::InvalidArgument,
                format!("{strategy} needs a cluster {} an OCS layer", if strategy.uses_ocs() { "with" } else { "without" }),
            );
        }
        if c.reservation(JobId(job_id)).is_some() {
            return fail(VclosStatus::InvalidArgument, format!("job {job_id} already placed"));
        }
        let req = JobRequest {
            job: JobId(job_id),
            gpus,
        };
        let mut stats = PlaceStats::default();
        let Some(alloc) = place(strategy, c, req, &PlaceOptions::default(), &mut stats) else {
            return fail(VclosStatus::Infeasible, format!("no placement for {gpus} GPUs"));
        };
        if let Err(e) = commit(c, &alloc) {
            return fail(VclosStatus::Internal, e.to_string());
        }
        if out_json.is_null() {
            return VclosStatus::Ok;
        }
        match serde_json::to_string(&alloc) {
            Ok(s) => hand_out(s, out_json),
            Err(e) => fail(VclosStatus::Internal, e.to_string()),
        }
    })
}

/// Free everything `job_id` holds.
///
/// # Safety
/// `cluster` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vclos_release(cluster: *mut VclosCluster, job_id: u64) -> VclosStatus {
    guard(|| {
        if cluster.is_null() {
            return fail(VclosStatus::NullPointer, "cluster is null");
        }
        match (*cluster).inner.release(JobId(job_id)) {
            Ok(_) => VclosStatus::Ok,
            Err(e) => fail(VclosStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Route `collective` ("ring", "hd", ...) on `ranks` GPUs over `leaves`
/// leaves and write the largest flow count on any fabric link.
///
/// # Safety
/// `collective` must be a NUL-terminated string and `out_max` writable.
#[no_mangle]
pub unsafe extern "C" fn vclos_verify(
    collective: *const c_char,
    ranks: usize,
    leaves: usize,
    out_max: *mut usize,
) -> VclosStatus {
    guard(|| {
        if out_max.is_null() {
            return fail(VclosStatus::NullPointer, "out_max is null");
        }
        let name = match read_str(collective, "collective") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let algo = match name.parse() {
            Ok(a) => a,
            Err(e) => return fail(VclosStatus::InvalidArgument, format!("{e}")),
        };
        match verify_collective(algo, ranks, leaves, None) {
            Ok(r) => {
                *out_max = r.max;
                VclosStatus::Ok
            }
            Err(e) => fail(VclosStatus::InvalidArgument, e),
        }
    })
}

/// Simulate a JSON-lines trace on the shape of `cluster` (its current
/// occupancy is ignored) and return the summary as JSON.
///
/// # Safety
/// `cluster` must be a live handle, the strings NUL-terminated and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn vclos_simulate(
    cluster: *const VclosCluster,
    trace_jsonl: *const c_char,
    strategy: *const c_char,
    scheduler: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> VclosStatus {
    guard(|| {
        if cluster.is_null() || out_json.is_null() {
            return fail(VclosStatus::NullPointer, "cluster or out_json is null");
        }
        let (trace, strategy, scheduler) = match (
            read_str(trace_jsonl, "trace"),
            read_str(strategy, "strategy"),
            read_str(scheduler, "scheduler"),
        ) {
            (Ok(t), Ok(s), Ok(p)) => (t, s, p),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return e,
        };
        let strategy: Strategy = match strategy.parse() {
            Ok(s) => s,
            Err(e) => return fail(VclosStatus::InvalidArgument, e),
        };
        let scheduler: SchedulerPolicy = match scheduler.parse() {
            Ok(s) => s,
            Err(e) => return fail(VclosStatus::InvalidArgument, e),
        };
        let jobs = match sim::read_trace(trace.as_bytes()) {
            Ok(j) => j,
            Err(e) => return fail(VclosStatus::InvalidArgument, e.to_string()),
        };
        let cfg = SimConfig::new((*cluster).inner.config().clone(), strategy)
            .with_scheduler(scheduler)
            .with_seed(seed);
        match sim::run(&jobs, &cfg) {
            Ok(r) => hand_out(r.summary_json(), out_json),
            Err(e) => fail(VclosStatus::InvalidArgument, e.to_string()),
        }
    })
}
