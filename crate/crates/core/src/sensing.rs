//! Sensor math: ultrasonic distance to fill level, the LED law, temperature
//! heuristics and waste-station observation classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BinGeometry, Millis, StationId, Thresholds};

/// Readings this far outside the physical window are still clamped rather
/// than treated as a sensor fault.
pub const SENSOR_TOLERANCE_CM: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UltrasonicReading {
    pub distance_cm: f64,
    pub measured_at: Millis,
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedColor {
    Green,
    Yellow,
    Red,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatFlag {
    Normal,
    OrganicSuspected,
    Anomaly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationStatus {
    Empty,
    Full,
    Overflow,
    Indeterminate,
}

/// A synthetic camera frame: the image pipeline is modelled by its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationObservation {
    pub station_id: StationId,
    pub captured_at: Millis,
    pub is_night: bool,
    pub light_on: bool,
    /// Fill proxy in [0, 1.2]; values above 1 mean waste piled past the rim.
    pub fill_estimate: f64,
    pub spillage_seen: bool,
}

impl StationObservation {
    pub fn validate(&self) -> Result<(), SensingError> {
        if !self.fill_estimate.is_finite() || !(0.0..=1.2).contains(&self.fill_estimate) {
            return Err(SensingError::BadObservation(format!(
                "fill_estimate {} outside [0, 1.2]",
                self.fill_estimate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("out_of_range: distance {distance_cm} cm outside [{min_cm}, {max_cm}] (sensor fault)")]
    OutOfRange {
        distance_cm: f64,
        min_cm: f64,
        max_cm: f64,
    },
    #[error("invalid_geometry: depth {0} cm")]
    InvalidGeometry(f64),
    #[error("malformed observation: {0}")]
    BadObservation(String),
}

/// Converts an echo distance into a fill fraction in [0, 1].
pub fn fill_fraction(reading: &UltrasonicReading, geometry: &BinGeometry) -> Result<f64, SensingError> {
    fill_from_distance(reading.distance_cm, geometry)
}

pub fn fill_from_distance(distance_cm: f64, geometry: &BinGeometry) -> Result<f64, SensingError> {
    let depth = geometry.depth_cm;
    if !depth.is_finite() || depth <= 0.0 {
        return Err(SensingError::InvalidGeometry(depth));
    }
    let offset = geometry.sensor_offset_cm;
    let min_cm = offset - SENSOR_TOLERANCE_CM;
    let max_cm = offset + depth + SENSOR_TOLERANCE_CM;
    if !distance_cm.is_finite() || distance_cm < 0.0 || distance_cm < min_cm || distance_cm > max_cm {
        return Err(SensingError::OutOfRange {
            distance_cm,
            min_cm,
            max_cm,
        });
    }
    Ok(((offset + depth - distance_cm) / depth).clamp(0.0, 1.0))
}

/// Echo distance a sensor reports for a given fill level.
pub fn distance_for(fill: f64, geometry: &BinGeometry) -> f64 {
    geometry.sensor_offset_cm + geometry.depth_cm * (1.0 - fill)
}

/// Green up to and including `yellow_at`, Red from `red_at`, Yellow between.
pub fn led_state(fill: f64, t: &Thresholds) -> LedColor {
    if fill >= t.red_at {
        LedColor::Red
    } else if fill > t.yellow_at {
        LedColor::Yellow
    } else {
        LedColor::Green
    }
}

pub fn heat_flag(inner_temp_c: f64, ambient_temp_c: f64, t: &Thresholds) -> HeatFlag {
    if inner_temp_c >= ambient_temp_c + t.heat_anomaly_delta_c {
        HeatFlag::Anomaly
    } else if inner_temp_c >= ambient_temp_c + t.heat_organic_delta_c {
        HeatFlag::OrganicSuspected
    } else {
        HeatFlag::Normal
    }
}

pub fn classify_station_observation(obs: &StationObservation, t: &Thresholds) -> StationStatus {
    // A night frame without the solar light is too dark to judge.
    if obs.is_night && !obs.light_on {
        StationStatus::Indeterminate
    } else if obs.spillage_seen || obs.fill_estimate >= t.overflow_at {
        StationStatus::Overflow
    } else if obs.fill_estimate >= t.red_at {
        StationStatus::Full
    } else {
        StationStatus::Empty
    }
}
