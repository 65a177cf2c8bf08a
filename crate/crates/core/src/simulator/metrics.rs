//! Standalone log reader. Everything here works from parsed log entries
//! alone, so it doubles as a check on the simulator and on central.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::log::EventLogEntry;
use super::scenario::ScenarioConfig;
use super::Target;
use crate::domain::{AlertKind, AlertSource, BinId, Millis, ZoneId};
use crate::gateway::BatchReport;
use crate::sensing::{self, LedColor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overflow_bin_minutes: f64,
    pub alerts_raised: u64,
    pub notifications_sent: u64,
    pub collections: u64,
    pub complaints_submitted: u64,
    pub complaints_resolved: u64,
    pub sla_breaches: u64,
    /// Mean time from a bin turning red to its Full alert; `None` if no
    /// Full alert followed a red transition.
    pub mean_alert_latency_s: Option<f64>,
}

impl Metrics {
    /// `(name, value)` rows in a fixed order, values formatted with a dot
    /// decimal separator regardless of locale.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("overflow_bin_minutes", format!("{:.3}", self.overflow_bin_minutes)),
            ("alerts_raised", self.alerts_raised.to_string()),
            ("notifications_sent", self.notifications_sent.to_string()),
            ("collections", self.collections.to_string()),
            ("complaints_submitted", self.complaints_submitted.to_string()),
            ("complaints_resolved", self.complaints_resolved.to_string()),
            ("sla_breaches", self.sla_breaches.to_string()),
            (
                "mean_alert_latency_s",
                self.mean_alert_latency_s.map(|v| format!("{v:.3}")).unwrap_or_default(),
            ),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.rows() {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let v = if v.is_empty() { "n/a".to_owned() } else { v };
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

fn field<'a>(e: &'a EventLogEntry, key: &str) -> Option<&'a Value> {
    e.payload.get(key)
}

fn str_field<'a>(e: &'a EventLogEntry, key: &str) -> Option<&'a str> {
    field(e, key).and_then(Value::as_str)
}

fn target(e: &EventLogEntry) -> Option<Target> {
    field(e, "target").and_then(|v| serde_json::from_value(v.clone()).ok())
}

#[derive(Clone, Debug)]
struct AlertRow {
    at: Millis,
    id: String,
    source: AlertSource,
    kind: AlertKind,
}

fn alerts(entries: &[EventLogEntry]) -> Vec<AlertRow> {
    entries
        .iter()
        .filter(|e| e.kind == "alert")
        .filter_map(|e| {
            Some(AlertRow {
                at: e.at,
                id: str_field(e, "alert_id")?.to_owned(),
                source: serde_json::from_value(field(e, "source")?.clone()).ok()?,
                kind: serde_json::from_value(field(e, "kind")?.clone()).ok()?,
            })
        })
        .collect()
}

/// The scenario recorded in the header line.
pub fn header_scenario(entries: &[EventLogEntry]) -> Option<ScenarioConfig> {
    let h = entries.first().filter(|e| e.kind == "header")?;
    serde_json::from_value(h.payload.get("scenario")?.clone()).ok()
}

/// Times a bin went red: `led` entries whose `to` is red.
fn red_crossings(entries: &[EventLogEntry]) -> BTreeMap<BinId, Vec<Millis>> {
    let mut out: BTreeMap<BinId, Vec<Millis>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.kind == "led") {
        let to: Option<LedColor> = field(e, "to").and_then(|v| serde_json::from_value(v.clone()).ok());
        if let (Some(LedColor::Red), Some(bin)) = (to, str_field(e, "bin_id")) {
            out.entry(BinId::from(bin)).or_default().push(e.at);
        }
    }
    out
}

pub fn compute(entries: &[EventLogEntry]) -> Metrics {
    let horizon = entries
        .iter()
        .find(|e| e.kind == "horizon")
        .or(entries.last())
        .map(|e| e.at)
        .unwrap_or(0);

    let mut open: BTreeMap<BinId, Millis> = BTreeMap::new();
    let mut overflow_ms: i64 = 0;
    let mut m = Metrics {
        overflow_bin_minutes: 0.0,
        alerts_raised: 0,
        notifications_sent: 0,
        collections: 0,
        complaints_submitted: 0,
        complaints_resolved: 0,
        sla_breaches: 0,
        mean_alert_latency_s: None,
    };
    for e in entries {
        match e.kind.as_str() {
            "overflow_start" | "overflow_end" => {
                let Some(Target::Bin(bin)) = target(e) else { continue };
                if e.kind == "overflow_start" {
                    open.entry(bin).or_insert(e.at);
                } else if let Some(start) = open.remove(&bin) {
                    overflow_ms += e.at - start;
                }
            }
            "notification_delivered" => m.notifications_sent += 1,
            "collection" => {
                if matches!(target(e), Some(Target::Bin(_) | Target::Station(_))) {
                    m.collections += 1;
                }
            }
            "complaint" => match str_field(e, "state") {
                Some("submitted") => m.complaints_submitted += 1,
                Some("resolved") => m.complaints_resolved += 1,
                _ => {}
            },
            _ => {}
        }
    }
    overflow_ms += open.values().map(|start| horizon - start).sum::<i64>();
    m.overflow_bin_minutes = overflow_ms as f64 / 60_000.0;

    let alerts = alerts(entries);
    m.alerts_raised = alerts.len() as u64;
    m.sla_breaches = alerts.iter().filter(|a| a.kind == AlertKind::SlaBreach).count() as u64;

    let reds = red_crossings(entries);
    let mut latency_ms: i64 = 0;
    let mut n = 0u64;
    for a in alerts.iter().filter(|a| a.kind == AlertKind::Full) {
        let AlertSource::Bin(bin) = &a.source else { continue };
        let last_red = reds
            .get(bin)
            .and_then(|ts| ts.iter().rev().find(|&&t| t <= a.at))
            .copied();
        if let Some(t) = last_red {
            latency_ms += a.at - t;
            n += 1;
        }
    }
    if n > 0 {
        m.mean_alert_latency_s = Some(latency_ms as f64 / n as f64 / 1_000.0);
    }
    m
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BinHysteresis {
    pub full_alerts: u64,
    /// Readings at or above red that followed a reading at or below yellow
    /// (or the first red reading).
    pub armed_crossings: u64,
}

/// Recomputes, from the batches central accepted, how many Full alerts each
/// bin should have had, next to how many it got.
pub fn hysteresis(entries: &[EventLogEntry]) -> Option<BTreeMap<BinId, BinHysteresis>> {
    let scenario = header_scenario(entries)?;
    let t = scenario.thresholds;
    let geometry: BTreeMap<&BinId, _> = scenario.bins.iter().map(|b| (&b.bin_id, b.geometry)).collect();
    let mut out: BTreeMap<BinId, BinHysteresis> = scenario.bins.iter().map(|b| (b.bin_id.clone(), BinHysteresis::default())).collect();
    let mut seen: BTreeSet<(BinId, u64)> = BTreeSet::new();
    let mut latest: BTreeMap<BinId, u64> = BTreeMap::new();
    let mut armed: BTreeMap<BinId, bool> = BTreeMap::new();

    for e in entries {
        match e.kind.as_str() {
            "central.ingest_batch" => {
                let batch: BatchReport = serde_json::from_value(field(e, "batch")?.clone()).ok()?;
                for r in &batch.readings {
                    if !seen.insert((r.bin_id.clone(), r.seq)) {
                        continue;
                    }
                    let last = latest.entry(r.bin_id.clone()).or_insert(0);
                    if r.seq <= *last {
                        continue;
                    }
                    *last = r.seq;
                    let fill = sensing::fill_from_distance(r.distance_cm, geometry.get(&r.bin_id)?).ok()?;
                    let arm = armed.entry(r.bin_id.clone()).or_insert(true);
                    if *arm && fill >= t.red_at {
                        *arm = false;
                        out.get_mut(&r.bin_id)?.armed_crossings += 1;
                    } else if !*arm && fill <= t.yellow_at {
                        *arm = true;
                    }
                }
            }
            "alert" => {
                let kind: AlertKind = serde_json::from_value(field(e, "kind")?.clone()).ok()?;
                let source: AlertSource = serde_json::from_value(field(e, "source")?.clone()).ok()?;
                if let (AlertKind::Full, AlertSource::Bin(b)) = (kind, source) {
                    out.entry(b).or_default().full_alerts += 1;
                }
            }
            _ => {}
        }
    }
    Some(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LatencyReport {
    pub checked: u64,
    /// Crossings central could not have seen: the bin was emptied or
    /// unreachable before its zone's next poll, or the run ended first.
    pub unobservable: u64,
    pub violations: Vec<(BinId, Millis)>,
}

/// For every red crossing at `t`, requires a Full alert for that bin raised
/// no later than `t + bound_ms` and not cleared before `t`.
pub fn alert_latency(entries: &[EventLogEntry], bound_ms: Millis) -> Option<LatencyReport> {
    let scenario = header_scenario(entries)?;
    let zone_of: BTreeMap<BinId, ZoneId> = scenario.bins.iter().map(|b| (b.bin_id.clone(), b.zone_id.clone())).collect();

    let mut polls: BTreeMap<ZoneId, Vec<(Millis, BTreeSet<BinId>)>> = BTreeMap::new();
    let mut collections: BTreeMap<BinId, Vec<Millis>> = BTreeMap::new();
    let mut cleared: BTreeMap<String, Millis> = BTreeMap::new();
    for e in entries {
        match e.kind.as_str() {
            "poll" => {
                let zone = ZoneId::from(str_field(e, "zone_id")?);
                let read: BTreeSet<BinId> = field(e, "readings")?
                    .as_array()?
                    .iter()
                    .filter_map(|pair| pair.get(0)?.as_str().map(BinId::from))
                    .collect();
                polls.entry(zone).or_default().push((e.at, read));
            }
            "collection" => {
                if let Some(Target::Bin(b)) = target(e) {
                    collections.entry(b).or_default().push(e.at);
                }
            }
            "alert_cleared" => {
                cleared.insert(str_field(e, "alert_id")?.to_owned(), e.at);
            }
            _ => {}
        }
    }
    let full: Vec<AlertRow> = alerts(entries).into_iter().filter(|a| a.kind == AlertKind::Full).collect();

    let mut report = LatencyReport::default();
    for (bin, times) in red_crossings(entries) {
        let zone_polls = zone_of.get(&bin).and_then(|z| polls.get(z));
        for t in times {
            let next_poll = zone_polls.and_then(|ps| ps.iter().find(|(at, _)| *at >= t));
            let observable = match next_poll {
                Some((at, read)) => {
                    read.contains(&bin)
                        && !collections
                            .get(&bin)
                            .is_some_and(|cs| cs.iter().any(|c| *c >= t && *c <= *at))
                }
                None => false,
            };
            if !observable {
                report.unobservable += 1;
                continue;
            }
            report.checked += 1;
            let ok = full.iter().any(|a| {
                a.source == AlertSource::Bin(bin.clone())
                    && a.at <= t + bound_ms
                    && cleared.get(&a.id).is_none_or(|c| *c >= t)
            });
            if !ok {
                report.violations.push((bin.clone(), t));
            }
        }
    }
    Some(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conservation {
    pub liters_in: f64,
    pub liters_collected: f64,
    pub overflow_liters: f64,
    pub liters_held: f64,
}

impl Conservation {
    pub fn imbalance(&self) -> f64 {
        self.liters_in - (self.liters_collected + self.overflow_liters + self.liters_held)
    }
}

/// Liters balance as the log tells it: arrivals and collections summed from
/// their entries, holdings taken from the horizon record.
pub fn conservation(entries: &[EventLogEntry]) -> Option<Conservation> {
    let scenario = header_scenario(entries)?;
    let initial: f64 = scenario.bins.iter().map(|b| b.initial_fill * b.capacity_liters).sum();
    let horizon = entries.iter().find(|e| e.kind == "horizon")?;
    let mut c = Conservation {
        liters_in: initial,
        liters_collected: 0.0,
        overflow_liters: 0.0,
        liters_held: field(horizon, "liters_held")?.as_f64()?,
    };
    for e in entries {
        match e.kind.as_str() {
            "arrival" => {
                c.liters_in += field(e, "liters")?.as_f64()?;
                c.overflow_liters += field(e, "overflow_liters")?.as_f64()?;
            }
            "collection" => c.liters_collected += field(e, "liters")?.as_f64()?,
            _ => {}
        }
    }
    Some(c)
}

/// Every `solar_charge` entry falls inside the scenario's daylight window.
pub fn solar_only_in_daylight(entries: &[EventLogEntry]) -> Option<bool> {
    let scenario = header_scenario(entries)?;
    Some(entries.iter().filter(|e| e.kind == "solar_charge").all(|e| scenario.is_daylight(e.at)))
}
