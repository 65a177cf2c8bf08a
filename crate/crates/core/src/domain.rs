//! Entity types, identifiers, configuration and the complaint lifecycle.
//!
//! Every instant in the system is an integer count of milliseconds since the
//! Unix epoch ([`Millis`]). Simulation and live mode share this representation;
//! only the [`Clock`] implementation differs.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensing::{LedColor, StationStatus};

/// Milliseconds since the Unix epoch.
pub type Millis = i64;

pub const MS_PER_SECOND: Millis = 1_000;
pub const MS_PER_HOUR: Millis = 3_600_000;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(BinId);
id_type!(ZoneId);
id_type!(StationId);
id_type!(CrewId);
id_type!(CitizenId);
id_type!(ComplaintId);
id_type!(AlertId);
id_type!(NotificationId);
id_type!(GatewayId);

/// Source of the current time.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WallClock;

impl Clock for WallClock {
    fn now_ms(&self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as Millis)
            .unwrap_or(0)
    }
}

/// Externally driven clock. Time only moves forward.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicI64,
}

impl VirtualClock {
    pub fn new(start: Millis) -> Self {
        Self {
            now: AtomicI64::new(start),
        }
    }

    /// Moves the clock to `at` unless it is already later. Returns the
    /// resulting time.
    pub fn advance_to(&self, at: Millis) -> Millis {
        self.now.fetch_max(at, Ordering::SeqCst).max(at)
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> Millis {
        self.now.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("latitude {0} outside [-90, 90] or not finite")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180] or not finite")]
    Longitude(f64),
    #[error("bin depth must be positive, got {0} cm")]
    Depth(f64),
    #[error("sensor offset must be non-negative, got {0} cm")]
    SensorOffset(f64),
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint")]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = DomainError;

    fn try_from(raw: RawGeoPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, DomainError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(DomainError::Latitude(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(DomainError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }
}

/// Usable waste column of a bin as seen by a top-mounted ultrasonic sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct BinGeometry {
    pub depth_cm: f64,
    /// Distance from the sensor face down to the max-fill line.
    pub sensor_offset_cm: f64,
}

#[derive(Deserialize)]
struct RawGeometry {
    depth_cm: f64,
    sensor_offset_cm: f64,
}

impl TryFrom<RawGeometry> for BinGeometry {
    type Error = DomainError;

    fn try_from(raw: RawGeometry) -> Result<Self, Self::Error> {
        BinGeometry::new(raw.depth_cm, raw.sensor_offset_cm)
    }
}

impl BinGeometry {
    pub fn new(depth_cm: f64, sensor_offset_cm: f64) -> Result<Self, DomainError> {
        if !depth_cm.is_finite() || depth_cm <= 0.0 {
            return Err(DomainError::Depth(depth_cm));
        }
        if !sensor_offset_cm.is_finite() || sensor_offset_cm < 0.0 {
            return Err(DomainError::SensorOffset(sensor_offset_cm));
        }
        Ok(Self {
            depth_cm,
            sensor_offset_cm,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmartBin {
    pub bin_id: BinId,
    pub zone_id: ZoneId,
    pub location: GeoPoint,
    pub geometry: BinGeometry,
    pub fill_fraction: f64,
    pub inner_temp_c: f64,
    pub led: LedColor,
    pub battery_pct: f64,
    pub last_report_seq: u64,
    pub online: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WasteStation {
    pub station_id: StationId,
    pub location: GeoPoint,
    pub solar_light_on: bool,
    pub status: StationStatus,
    pub last_observation_at: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: ZoneId,
    pub wifi_available: bool,
    #[serde(default)]
    pub wifi_outage: bool,
    pub bin_ids: BTreeSet<BinId>,
    pub poll_interval_s: u64,
}

impl Zone {
    pub fn poll_interval_ms(&self) -> Millis {
        self.poll_interval_s as Millis * MS_PER_SECOND
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Citizen {
    pub citizen_id: CitizenId,
    pub nid: String,
    pub name: String,
    pub phone: String,
    pub registered_at: Millis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplaintState {
    Submitted,
    Dispatched,
    Resolved,
    Acknowledged,
}

impl ComplaintState {
    pub const ALL: [ComplaintState; 4] = [
        ComplaintState::Submitted,
        ComplaintState::Dispatched,
        ComplaintState::Resolved,
        ComplaintState::Acknowledged,
    ];

    pub fn is_open(self) -> bool {
        self < ComplaintState::Resolved
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplaintEvent {
    Dispatch,
    Resolve,
    Acknowledge,
}

impl ComplaintEvent {
    pub const ALL: [ComplaintEvent; 3] = [
        ComplaintEvent::Dispatch,
        ComplaintEvent::Resolve,
        ComplaintEvent::Acknowledge,
    ];
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("invalid transition: {event:?} from {state:?}")]
pub struct InvalidTransition {
    pub state: ComplaintState,
    pub event: ComplaintEvent,
}

/// The complaint lifecycle is a chain: Submitted → Dispatched → Resolved →
/// Acknowledged. Every other pair is rejected.
pub fn complaint_transition(
    state: ComplaintState,
    event: ComplaintEvent,
) -> Result<ComplaintState, InvalidTransition> {
    use ComplaintEvent as E;
    use ComplaintState as S;
    match (state, event) {
        (S::Submitted, E::Dispatch) => Ok(S::Dispatched),
        (S::Dispatched, E::Resolve) => Ok(S::Resolved),
        (S::Resolved, E::Acknowledge) => Ok(S::Acknowledged),
        _ => Err(InvalidTransition { state, event }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Complaint {
    pub complaint_id: ComplaintId,
    pub citizen_id: CitizenId,
    pub photo_ref: String,
    pub location: GeoPoint,
    pub address_text: String,
    pub description: String,
    pub state: ComplaintState,
    pub submitted_at: Option<Millis>,
    pub dispatched_at: Option<Millis>,
    pub resolved_at: Option<Millis>,
    pub acknowledged_at: Option<Millis>,
    pub assigned_crew: Option<CrewId>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertSource {
    Bin(BinId),
    Station(StationId),
    Complaint(ComplaintId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    Full,
    Overflow,
    HeatAnomaly,
    SlaBreach,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: AlertId,
    pub source: AlertSource,
    pub kind: AlertKind,
    pub raised_at: Millis,
    pub cleared_at: Option<Millis>,
    /// Crew the alert was routed to, if any crew is registered.
    pub assignee: Option<CrewId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Push,
    Sms,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    Crew(CrewId),
    Citizen(CitizenId),
    /// Fallback when no crew is registered.
    Operations,
}

/// What a notification is about.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Alert(AlertId),
    ComplaintFiled(ComplaintId),
    ComplaintAssigned(ComplaintId),
    ComplaintSolved(ComplaintId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub notification_id: NotificationId,
    pub channel: Channel,
    pub recipient: Recipient,
    pub topic: Topic,
    pub body: String,
    pub geo: Option<GeoPoint>,
    pub address_text: Option<String>,
    pub queued_at: Millis,
    pub delivered_at: Option<Millis>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", deny_unknown_fields)]
pub struct Thresholds {
    pub yellow_at: f64,
    pub red_at: f64,
    pub overflow_at: f64,
    pub heat_organic_delta_c: f64,
    pub heat_anomaly_delta_c: f64,
    pub poll_interval_s: u64,
    pub sla_hours: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    #[serde(default = "defaults::yellow_at")]
    yellow_at: f64,
    #[serde(default = "defaults::red_at")]
    red_at: f64,
    #[serde(default = "defaults::overflow_at")]
    overflow_at: f64,
    #[serde(default = "defaults::heat_organic_delta_c")]
    heat_organic_delta_c: f64,
    #[serde(default = "defaults::heat_anomaly_delta_c")]
    heat_anomaly_delta_c: f64,
    #[serde(default = "defaults::poll_interval_s")]
    poll_interval_s: u64,
    #[serde(default = "defaults::sla_hours")]
    sla_hours: f64,
}

mod defaults {
    pub fn yellow_at() -> f64 {
        0.5
    }
    pub fn red_at() -> f64 {
        0.9
    }
    pub fn overflow_at() -> f64 {
        1.0
    }
    pub fn heat_organic_delta_c() -> f64 {
        5.0
    }
    pub fn heat_anomaly_delta_c() -> f64 {
        30.0
    }
    pub fn poll_interval_s() -> u64 {
        600
    }
    pub fn sla_hours() -> f64 {
        3.0
    }
}

impl TryFrom<RawThresholds> for Thresholds {
    type Error = DomainError;

    fn try_from(r: RawThresholds) -> Result<Self, Self::Error> {
        Thresholds {
            yellow_at: r.yellow_at,
            red_at: r.red_at,
            overflow_at: r.overflow_at,
            heat_organic_delta_c: r.heat_organic_delta_c,
            heat_anomaly_delta_c: r.heat_anomaly_delta_c,
            poll_interval_s: r.poll_interval_s,
            sla_hours: r.sla_hours,
        }
        .validated()
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            yellow_at: defaults::yellow_at(),
            red_at: defaults::red_at(),
            overflow_at: defaults::overflow_at(),
            heat_organic_delta_c: defaults::heat_organic_delta_c(),
            heat_anomaly_delta_c: defaults::heat_anomaly_delta_c(),
            poll_interval_s: defaults::poll_interval_s(),
            sla_hours: defaults::sla_hours(),
        }
    }
}

impl Thresholds {
    /// Checks `0 < yellow_at < red_at <= overflow_at` plus the scalar ranges.
    pub fn validated(self) -> Result<Self, DomainError> {
        let bad = |msg: &str| Err(DomainError::Thresholds(msg.to_owned()));
        let fracs = [self.yellow_at, self.red_at, self.overflow_at];
        if fracs.iter().any(|f| !f.is_finite()) {
            return bad("fill thresholds must be finite");
        }
        if !(0.0 < self.yellow_at && self.yellow_at < self.red_at && self.red_at <= self.overflow_at) {
            return bad("require 0 < yellow_at < red_at <= overflow_at");
        }
        if !(self.heat_organic_delta_c.is_finite() && self.heat_anomaly_delta_c.is_finite())
            || self.heat_organic_delta_c > self.heat_anomaly_delta_c
        {
            return bad("require finite heat deltas with organic <= anomaly");
        }
        if self.poll_interval_s == 0 {
            return bad("poll_interval_s must be positive");
        }
        if !self.sla_hours.is_finite() || self.sla_hours <= 0.0 {
            return bad("sla_hours must be positive");
        }
        Ok(self)
    }

    pub fn sla_ms(&self) -> Millis {
        (self.sla_hours * MS_PER_HOUR as f64).round() as Millis
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NidError {
    #[error("format_error: non-digit character at position {position}")]
    NonDigit { position: usize },
    #[error("format_error: bad length {0} (expected 10, 13 or 17 digits)")]
    BadLength(usize),
}

pub const NID_LENGTHS: [usize; 3] = [10, 13, 17];

/// Accepts exactly `[0-9]{10}|[0-9]{13}|[0-9]{17}`.
pub fn validate_nid(nid: &str) -> Result<(), NidError> {
    if let Some((position, _)) = nid.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        return Err(NidError::NonDigit { position });
    }
    if !NID_LENGTHS.contains(&nid.len()) {
        return Err(NidError::BadLength(nid.len()));
    }
    Ok(())
}
