//! C ABI over the civicbin core.
//!
//! Conventions:
//! * every fallible function returns a [`CbStatus`]; on anything but
//!   `CB_STATUS_OK` the thread's last error is set (see
//!   [`cb_last_error_message`] and [`cb_last_error_code`]);
//! * strings passed in are NUL-terminated UTF-8 and are borrowed;
//! * strings handed out are owned by the caller and must be released with
//!   [`cb_string_free`];
//! * a [`CbCentral`] is an opaque handle; it is not thread-safe, so callers
//!   that share one across threads must lock around it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use civicbin::canonical;
use civicbin::central::{Central, CentralConfig, CentralError, ComplaintSubmission, Selector, Topology};
use civicbin::domain::{self, BinGeometry, ComplaintEvent, ComplaintId, ComplaintState, CrewId, Millis, Thresholds};
use civicbin::gateway::BatchReport;
use civicbin::sensing::{self, LedColor, StationObservation};
use civicbin::simulator::{run_scenario, ScenarioConfig};
use serde_json::Value;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidArgument = 4,
    /// The core refused the request; `cb_last_error_code` names the reason.
    Rejected = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbLed {
    Green = 0,
    Yellow = 1,
    Red = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbComplaintState {
    Submitted = 0,
    Dispatched = 1,
    Resolved = 2,
    Acknowledged = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbComplaintEvent {
    Dispatch = 0,
    Resolve = 1,
    Acknowledge = 2,
}

/// Opaque central-service handle.
pub struct CbCentral {
    inner: Central,
}

struct LastError {
    code: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

struct Failure {
    status: CbStatus,
    code: String,
    message: String,
}

impl Failure {
    fn new(status: CbStatus, code: &str, message: impl Into<String>) -> Self {
        Failure {
            status,
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

impl From<CentralError> for Failure {
    fn from(e: CentralError) -> Self {
        Failure::new(CbStatus::Rejected, e.code(), e.to_string())
    }
}

fn c_string_lossy(s: String) -> CString {
    CString::new(s.replace('\0', " ")).expect("interior NULs replaced")
}

fn set_error(f: &Failure) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(LastError {
            code: c_string_lossy(f.code.clone()),
            message: c_string_lossy(f.message.clone()),
        })
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Runs `f`, turning failures and panics into a status plus last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CbStatus {
    clear_error();
    let failure = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return CbStatus::Ok,
        Ok(Err(f)) => f,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_owned());
            Failure::new(CbStatus::Panic, "panic", msg)
        }
    };
    set_error(&failure);
    failure.status
}

unsafe fn borrow_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(CbStatus::NullArgument, "null_argument", format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(CbStatus::InvalidUtf8, "invalid_utf8", format!("{what}: {e}")))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::new(CbStatus::InvalidJson, "invalid_json", format!("{what}: {e}")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(CbStatus::NullArgument, "null_argument", format!("{what} is NULL")))
}

fn hand_out(text: String) -> *mut c_char {
    c_string_lossy(text).into_raw()
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    canonical::to_canonical_string(v).expect("core types serialize")
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next `cb_` call on the same thread.
#[no_mangle]
pub extern "C" fn cb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Stable machine-readable code for the last failure on this thread (for
/// example `duplicate_nid`), or NULL.
#[no_mangle]
pub extern "C" fn cb_last_error_code() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |e| e.code.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fill fraction in [0, 1] from an ultrasonic distance.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn cb_fill_fraction(distance_cm: f64, depth_cm: f64, sensor_offset_cm: f64, out: *mut f64) -> CbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let geometry = BinGeometry::new(depth_cm, sensor_offset_cm)
            .map_err(|e| Failure::new(CbStatus::InvalidArgument, "invalid_geometry", e.to_string()))?;
        *out = sensing::fill_from_distance(distance_cm, &geometry)
            .map_err(|e| Failure::new(CbStatus::InvalidArgument, "invalid_reading", e.to_string()))?;
        Ok(())
    })
}

/// LED colour for a fill fraction under the default thresholds.
///
/// # Safety
/// `out` must be a valid pointer to a `CbLed`.
#[no_mangle]
pub unsafe extern "C" fn cb_led_state(fill: f64, out: *mut CbLed) -> CbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if !(0.0..=1.0).contains(&fill) {
            return Err(Failure::new(CbStatus::InvalidArgument, "invalid_fill", format!("fill {fill} outside [0, 1]")));
        }
        *out = match sensing::led_state(fill, &Thresholds::default()) {
            LedColor::Green => CbLed::Green,
            LedColor::Yellow => CbLed::Yellow,
            LedColor::Red => CbLed::Red,
        };
        Ok(())
    })
}

/// `CB_STATUS_OK` if `nid` is 10, 13 or 17 ASCII digits, else `CB_STATUS_REJECTED`
/// with code `format_error`.
///
/// # Safety
/// `nid` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cb_validate_nid(nid: *const c_char) -> CbStatus {
    guard(|| {
        let nid = borrow_str(nid, "nid")?;
        domain::validate_nid(nid).map_err(|e| Failure::new(CbStatus::Rejected, "format_error", e.to_string()))
    })
}

/// Next complaint state, or `CB_STATUS_REJECTED` with code
/// `invalid_transition`.
///
/// # Safety
/// `out` must be a valid pointer to a `CbComplaintState`.
#[no_mangle]
pub unsafe extern "C" fn cb_complaint_transition(
    state: CbComplaintState,
    event: CbComplaintEvent,
    out: *mut CbComplaintState,
) -> CbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = match state {
            CbComplaintState::Submitted => ComplaintState::Submitted,
            CbComplaintState::Dispatched => ComplaintState::Dispatched,
            CbComplaintState::Resolved => ComplaintState::Resolved,
            CbComplaintState::Acknowledged => ComplaintState::Acknowledged,
        };
        let e = match event {
            CbComplaintEvent::Dispatch => ComplaintEvent::Dispatch,
            CbComplaintEvent::Resolve => ComplaintEvent::Resolve,
            CbComplaintEvent::Acknowledge => ComplaintEvent::Acknowledge,
        };
        let next = domain::complaint_transition(s, e)
            .map_err(|err| Failure::new(CbStatus::Rejected, "invalid_transition", err.to_string()))?;
        *out = match next {
            ComplaintState::Submitted => CbComplaintState::Submitted,
            ComplaintState::Dispatched => CbComplaintState::Dispatched,
            ComplaintState::Resolved => CbComplaintState::Resolved,
            ComplaintState::Acknowledged => CbComplaintState::Acknowledged,
        };
        Ok(())
    })
}

/// New in-memory central service with default configuration. Free with
/// [`cb_central_free`].
#[no_mangle]
pub extern "C" fn cb_central_new() -> *mut CbCentral {
    Box::into_raw(Box::new(CbCentral {
        inner: Central::new(CentralConfig::default()),
    }))
}

/// # Safety
/// `handle` must come from [`cb_central_new`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cb_central_free(handle: *mut CbCentral) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

fn field<'a>(args: &'a Value, name: &str) -> Result<&'a Value, Failure> {
    args.get(name)
        .ok_or_else(|| Failure::new(CbStatus::InvalidJson, "invalid_json", format!("missing field {name}")))
}

fn field_as<T: serde::de::DeserializeOwned>(args: &Value, name: &str) -> Result<T, Failure> {
    serde_json::from_value(field(args, name)?.clone())
        .map_err(|e| Failure::new(CbStatus::InvalidJson, "invalid_json", format!("{name}: {e}")))
}

fn dispatch_op(c: &mut Central, op: &str, args: &Value, now: Millis) -> Result<String, Failure> {
    Ok(match op {
        "provision" => {
            let topology: Topology = field_as(args, "topology")?;
            c.provision(topology, now)?;
            to_json(&serde_json::json!({ "seq": c.last_seq() }))
        }
        "ingest_batch" => {
            let batch = BatchReport::from_wire(&field(args, "batch")?.to_string()).map_err(CentralError::from)?;
            to_json(&c.ingest_batch(&batch, now)?)
        }
        "ingest_station_observation" => {
            let obs: StationObservation = field_as(args, "observation")?;
            to_json(&c.ingest_station_observation(&obs, now)?)
        }
        "register_citizen" => {
            let s = |k| field_as::<String>(args, k);
            to_json(&c.register_citizen(&s("nid")?, &s("name")?, &s("phone")?, now)?)
        }
        "submit_complaint" => {
            let sub: ComplaintSubmission = field_as(args, "submission")?;
            to_json(&c.submit_complaint(&sub, now)?)
        }
        "dispatch_complaint" | "resolve_complaint" => {
            let id: ComplaintId = field_as(args, "complaint_id")?;
            let crew: CrewId = field_as(args, "crew_id")?;
            let done = if op == "dispatch_complaint" {
                c.dispatch_complaint(&id, &crew, now)?
            } else {
                c.resolve_complaint(&id, &crew, now)?
            };
            to_json(&done)
        }
        "sla_sweep" => to_json(&c.sla_sweep(now)),
        other => {
            return Err(Failure::new(CbStatus::InvalidArgument, "unknown_op", format!("unknown operation {other}")));
        }
    })
}

/// Runs one command at time `now_ms`. `op` is one of `provision`,
/// `ingest_batch`, `ingest_station_observation`, `register_citizen`,
/// `submit_complaint`, `dispatch_complaint`, `resolve_complaint`,
/// `sla_sweep`; `args_json` is an object with the same fields the simulator
/// logs for that call. On success `*out_json` receives the result as JSON.
///
/// # Safety
/// `handle` must be live, `op` and `args_json` NUL-terminated, `out_json`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cb_central_call(
    handle: *mut CbCentral,
    op: *const c_char,
    args_json: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> CbStatus {
    guard(|| {
        let out = out_ptr(out_json, "out_json")?;
        *out = ptr::null_mut();
        let handle = out_ptr(handle, "handle")?;
        let op = borrow_str(op, "op")?;
        let args: Value = parse_json(borrow_str(args_json, "args_json")?, "args_json")?;
        *out = hand_out(dispatch_op(&mut handle.inner, op, &args, now_ms)?);
        Ok(())
    })
}

/// Read-only snapshot as JSON. `selector` is `bins`, `stations`, `alerts`,
/// `complaints`, `notifications`, `events` or `events:<seq>`.
///
/// # Safety
/// `handle` must be live, `selector` NUL-terminated, `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn cb_central_query(
    handle: *const CbCentral,
    selector: *const c_char,
    out_json: *mut *mut c_char,
) -> CbStatus {
    guard(|| {
        let out = out_ptr(out_json, "out_json")?;
        *out = ptr::null_mut();
        let handle = handle
            .as_ref()
            .ok_or_else(|| Failure::new(CbStatus::NullArgument, "null_argument", "handle is NULL"))?;
        let selector: Selector = borrow_str(selector, "selector")?.parse()?;
        *out = hand_out(to_json(&handle.inner.query_state(&selector)));
        Ok(())
    })
}

/// Runs a TOML scenario to completion. `*out_log` receives the event log
/// text and `*out_metrics_json` the metrics; either may be NULL if unwanted.
///
/// # Safety
/// `scenario_toml` must be NUL-terminated; non-NULL out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cb_run_scenario(
    scenario_toml: *const c_char,
    out_log: *mut *mut c_char,
    out_metrics_json: *mut *mut c_char,
) -> CbStatus {
    guard(|| {
        let text = borrow_str(scenario_toml, "scenario_toml")?;
        let config = ScenarioConfig::from_toml(text, "scenario")
            .map_err(|e| Failure::new(CbStatus::InvalidArgument, "invalid_config", e.to_string()))?;
        let run = run_scenario(config).map_err(|e| Failure::new(CbStatus::InvalidArgument, "invalid_config", e.to_string()))?;
        if let Some(p) = out_log.as_mut() {
            *p = hand_out(run.log_text);
        }
        if let Some(p) = out_metrics_json.as_mut() {
            *p = hand_out(to_json(&run.metrics));
        }
        Ok(())
    })
}
