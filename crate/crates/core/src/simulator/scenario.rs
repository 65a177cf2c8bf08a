//! Scenario files: TOML with a leading `schema = 1`.
//!
//! ```toml
//! schema = 1
//! seed = 42
//! duration_s = 604800
//!
//! [[zones]]
//! zone_id = "Z1"
//! wifi_available = true
//!
//! [[bins]]
//! bin_id = "B001"
//! zone_id = "Z1"
//! location = { lat = 23.7806, lon = 90.2794 }
//! arrival_rate_per_hour = 1.5
//! mean_parcel_liters = 6.0
//!
//! [[crews]]
//! crew_id = "C1"
//! travel_time_s = 900
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::central::{BinRegistration, CrewInfo, StationRegistration, Topology};
use crate::domain::{BinGeometry, BinId, CrewId, GeoPoint, Millis, StationId, Thresholds, Zone, ZoneId, MS_PER_SECOND};
use crate::gateway::ChannelModel;

pub const SCENARIO_SCHEMA: u32 = 1;
pub const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid_config: {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub zone_id: ZoneId,
    pub wifi_available: bool,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_s: u64,
    /// `[start_s, end_s)` windows during which Wi-Fi is down.
    #[serde(default)]
    pub wifi_outages: Vec<[u64; 2]>,
}

fn default_poll_interval() -> u64 {
    600
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub bin_id: BinId,
    pub zone_id: ZoneId,
    pub location: GeoPoint,
    #[serde(default = "default_geometry")]
    pub geometry: BinGeometry,
    #[serde(default = "default_bin_capacity")]
    pub capacity_liters: f64,
    pub arrival_rate_per_hour: f64,
    pub mean_parcel_liters: f64,
    #[serde(default)]
    pub initial_fill: f64,
    #[serde(default = "default_battery")]
    pub initial_battery_pct: f64,
}

fn default_geometry() -> BinGeometry {
    BinGeometry {
        depth_cm: 100.0,
        sensor_offset_cm: 5.0,
    }
}

fn default_bin_capacity() -> f64 {
    240.0
}

fn default_battery() -> f64 {
    80.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub station_id: StationId,
    pub location: GeoPoint,
    #[serde(default = "default_station_capacity")]
    pub capacity_liters: f64,
    pub arrival_rate_per_hour: f64,
    pub mean_parcel_liters: f64,
    #[serde(default = "default_capture_interval")]
    pub capture_interval_s: u64,
    /// Chance that the solar light fails to come on for a night capture.
    #[serde(default = "default_light_failure")]
    pub light_failure_prob: f64,
}

fn default_station_capacity() -> f64 {
    1_100.0
}

fn default_capture_interval() -> u64 {
    900
}

fn default_light_failure() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrewSpec {
    pub crew_id: CrewId,
    pub travel_time_s: u64,
    #[serde(default = "yes")]
    pub responsive: bool,
    #[serde(default = "yes")]
    pub smartphone: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub seed: u64,
    pub duration_s: u64,
    #[serde(default = "default_tick")]
    pub tick_s: u64,
    #[serde(default = "default_day_start")]
    pub day_start_s: u64,
    #[serde(default = "default_day_end")]
    pub day_end_s: u64,
    #[serde(default)]
    pub complaint_rate_per_day: f64,
    #[serde(default = "yes")]
    pub alerting_enabled: bool,
    /// Time of day of the scheduled collection round; none if absent.
    #[serde(default)]
    pub daily_pickup_s: Option<u64>,
    #[serde(default = "default_ambient")]
    pub ambient_temp_c: f64,
    /// Heat from decomposition at full load, added to ambient.
    #[serde(default = "default_organic_heat")]
    pub organic_heat_c: f64,
    #[serde(default = "default_citizens")]
    pub citizens: u32,
    #[serde(default = "default_sweep")]
    pub sla_sweep_interval_s: u64,
    #[serde(default = "default_drain")]
    pub battery_drain_pct_per_hour: f64,
    #[serde(default = "default_charge")]
    pub solar_charge_pct_per_hour: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub zones: Vec<ZoneSpec>,
    #[serde(default)]
    pub bins: Vec<BinSpec>,
    #[serde(default)]
    pub stations: Vec<StationSpec>,
    #[serde(default)]
    pub crews: Vec<CrewSpec>,
}

fn default_tick() -> u64 {
    60
}
fn default_day_start() -> u64 {
    6 * 3_600
}
fn default_day_end() -> u64 {
    18 * 3_600
}
fn default_ambient() -> f64 {
    25.0
}
fn default_organic_heat() -> f64 {
    4.0
}
fn default_citizens() -> u32 {
    25
}
fn default_sweep() -> u64 {
    300
}
fn default_drain() -> f64 {
    0.4
}
fn default_charge() -> f64 {
    2.0
}

impl ScenarioConfig {
    /// A scenario with no entities; mostly useful in tests.
    pub fn empty(seed: u64, duration_s: u64) -> Self {
        toml::from_str(&format!("schema = 1\nseed = {seed}\nduration_s = {duration_s}\n"))
            .expect("minimal scenario parses")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_owned(),
            message: e.to_string().trim_end().replace('\n', " "),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::from_toml(&text, &shown)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(invalid("schema", format!("unsupported schema {}, expected 1", self.schema)));
        }
        if self.duration_s == 0 {
            return Err(invalid("duration_s", "must be positive"));
        }
        if self.tick_s == 0 {
            return Err(invalid("tick_s", "must be positive"));
        }
        if self.day_start_s >= self.day_end_s || self.day_end_s > SECONDS_PER_DAY {
            return Err(invalid("day_start_s", "need day_start_s < day_end_s <= 86400"));
        }
        if self.daily_pickup_s.is_some_and(|t| t >= SECONDS_PER_DAY) {
            return Err(invalid("daily_pickup_s", "must be a time of day below 86400"));
        }
        let rate_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rate_ok(self.complaint_rate_per_day) {
            return Err(invalid("complaint_rate_per_day", "must be a finite rate >= 0"));
        }
        if !rate_ok(self.battery_drain_pct_per_hour) || !rate_ok(self.solar_charge_pct_per_hour) {
            return Err(invalid("battery_drain_pct_per_hour", "battery rates must be finite and >= 0"));
        }
        if !self.ambient_temp_c.is_finite() || !self.organic_heat_c.is_finite() {
            return Err(invalid("ambient_temp_c", "temperatures must be finite"));
        }
        if self.sla_sweep_interval_s == 0 {
            return Err(invalid("sla_sweep_interval_s", "must be positive"));
        }
        if self.complaint_rate_per_day > 0.0 && self.citizens == 0 {
            return Err(invalid("citizens", "complaints need at least one citizen"));
        }
        self.thresholds
            .validated()
            .map_err(|e| invalid("thresholds", e.to_string()))?;
        self.channel.validate().map_err(|e| invalid("channel", e))?;

        let mut zones = BTreeSet::new();
        for (i, z) in self.zones.iter().enumerate() {
            if !zones.insert(&z.zone_id) {
                return Err(invalid(format!("zones[{i}].zone_id"), format!("duplicate zone {}", z.zone_id)));
            }
            if z.poll_interval_s == 0 {
                return Err(invalid(format!("zones[{i}].poll_interval_s"), "must be positive"));
            }
            if z.wifi_outages.iter().any(|[s, e]| s >= e) {
                return Err(invalid(format!("zones[{i}].wifi_outages"), "each window needs start < end"));
            }
        }
        let mut bins = BTreeSet::new();
        for (i, b) in self.bins.iter().enumerate() {
            let field = |f: &str| format!("bins[{i}].{f}");
            if !bins.insert(&b.bin_id) {
                return Err(invalid(field("bin_id"), format!("duplicate bin {}", b.bin_id)));
            }
            if !zones.contains(&b.zone_id) {
                return Err(invalid(field("zone_id"), format!("unknown zone {}", b.zone_id)));
            }
            if !(b.capacity_liters.is_finite() && b.capacity_liters > 0.0) {
                return Err(invalid(field("capacity_liters"), "must be positive"));
            }
            if !rate_ok(b.arrival_rate_per_hour) {
                return Err(invalid(field("arrival_rate_per_hour"), "must be a finite rate >= 0"));
            }
            if !rate_ok(b.mean_parcel_liters) {
                return Err(invalid(field("mean_parcel_liters"), "must be finite and >= 0"));
            }
            if !(0.0..=1.0).contains(&b.initial_fill) {
                return Err(invalid(field("initial_fill"), "must lie in [0, 1]"));
            }
            if !(0.0..=100.0).contains(&b.initial_battery_pct) {
                return Err(invalid(field("initial_battery_pct"), "must lie in [0, 100]"));
            }
        }
        let mut stations = BTreeSet::new();
        for (i, s) in self.stations.iter().enumerate() {
            let field = |f: &str| format!("stations[{i}].{f}");
            if !stations.insert(&s.station_id) {
                return Err(invalid(field("station_id"), format!("duplicate station {}", s.station_id)));
            }
            if !(s.capacity_liters.is_finite() && s.capacity_liters > 0.0) {
                return Err(invalid(field("capacity_liters"), "must be positive"));
            }
            if !rate_ok(s.arrival_rate_per_hour) || !rate_ok(s.mean_parcel_liters) {
                return Err(invalid(field("arrival_rate_per_hour"), "rates must be finite and >= 0"));
            }
            if s.capture_interval_s == 0 {
                return Err(invalid(field("capture_interval_s"), "must be positive"));
            }
            if !(0.0..=1.0).contains(&s.light_failure_prob) {
                return Err(invalid(field("light_failure_prob"), "must lie in [0, 1]"));
            }
        }
        let mut crews = BTreeSet::new();
        for (i, c) in self.crews.iter().enumerate() {
            if !crews.insert(&c.crew_id) {
                return Err(invalid(format!("crews[{i}].crew_id"), format!("duplicate crew {}", c.crew_id)));
            }
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> Millis {
        self.duration_s as Millis * MS_PER_SECOND
    }

    pub fn is_daylight(&self, at: Millis) -> bool {
        let tod = (at / MS_PER_SECOND) as u64 % SECONDS_PER_DAY;
        (self.day_start_s..self.day_end_s).contains(&tod)
    }

    pub fn zones(&self) -> Vec<Zone> {
        self.zones
            .iter()
            .map(|z| Zone {
                zone_id: z.zone_id.clone(),
                wifi_available: z.wifi_available,
                wifi_outage: false,
                bin_ids: self
                    .bins
                    .iter()
                    .filter(|b| b.zone_id == z.zone_id)
                    .map(|b| b.bin_id.clone())
                    .collect(),
                poll_interval_s: z.poll_interval_s,
            })
            .collect()
    }

    pub fn topology(&self) -> Topology {
        Topology {
            zones: self.zones(),
            bins: self
                .bins
                .iter()
                .map(|b| BinRegistration {
                    bin_id: b.bin_id.clone(),
                    zone_id: b.zone_id.clone(),
                    location: b.location,
                    geometry: b.geometry,
                })
                .collect(),
            stations: self
                .stations
                .iter()
                .map(|s| StationRegistration {
                    station_id: s.station_id.clone(),
                    location: s.location,
                })
                .collect(),
            crews: self
                .crews
                .iter()
                .map(|c| CrewInfo {
                    crew_id: c.crew_id.clone(),
                    smartphone: c.smartphone,
                })
                .collect(),
        }
    }
}
