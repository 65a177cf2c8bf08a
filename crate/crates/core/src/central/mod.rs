//! The city-corporation service: ingestion, alerting with hysteresis, crew
//! routing, citizen complaints, SLA sweeps and the notification outbox.
//!
//! [`Central`] is a synchronous, single-writer core. Every command validates
//! first and then emits [`StateEvent`]s, each applied to [`CentralState`] as
//! it is appended, so a command either fails without effect or commits in
//! full. The async HTTP service in [`service`] serializes callers onto one
//! `Central`.

pub mod gazetteer;
pub mod http;
pub mod service;
pub mod state;
pub mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_nid, Alert, AlertId, AlertKind, AlertSource, BinId, Channel, Citizen, CitizenId,
    Complaint, ComplaintEvent, ComplaintId, ComplaintState, CrewId, GeoPoint, InvalidTransition,
    Millis, NidError, Notification, NotificationId, Recipient, SmartBin, StationId, Thresholds,
    Topic, WasteStation, ZoneId,
};
use crate::gateway::{BatchReport, WireError};
use crate::sensing::{self, HeatFlag, LedColor, StationObservation, StationStatus};

pub use state::{
    BinRegistration, CentralState, CrewInfo, DeliveryStatus, EventBody, OutboxEntry, StateEvent,
    StationRegistration, Topology, Transport,
};

/// Body of the notification a citizen receives once their complaint is
/// solved.
pub const RESOLUTION_MESSAGE: &str = "Your complaint has been solved. Thanks for your activity";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralConfig {
    pub thresholds: Thresholds,
    pub ambient_temp_c: f64,
    pub push_latency_ms: Millis,
    pub sms_latency_ms: Millis,
    /// Deliver queued notifications through the mock transports as soon as
    /// the command that queued them commits.
    pub auto_deliver: bool,
}

impl Default for CentralConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            ambient_temp_c: 25.0,
            push_latency_ms: 100,
            sms_latency_ms: 2_000,
            auto_deliver: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CentralError {
    #[error("malformed_batch: {0}")]
    MalformedBatch(String),
    #[error("malformed_observation: {0}")]
    MalformedObservation(String),
    #[error("unknown_zone: {0}")]
    UnknownZone(ZoneId),
    #[error("unknown_station: {0}")]
    UnknownStation(StationId),
    #[error("{0}")]
    Format(#[from] NidError),
    #[error("duplicate_nid: {0}")]
    DuplicateNid(String),
    #[error("unknown_citizen: {0}")]
    UnknownCitizen(CitizenId),
    #[error("missing_photo")]
    MissingPhoto,
    #[error("unknown_complaint: {0}")]
    UnknownComplaint(ComplaintId),
    #[error("unknown_crew: {0}")]
    UnknownCrew(CrewId),
    #[error("invalid_transition: {0}")]
    InvalidTransition(#[from] InvalidTransition),
    #[error("wrong_crew: complaint assigned to {assigned:?}, not {actual}")]
    WrongCrew {
        assigned: Option<CrewId>,
        actual: CrewId,
    },
    #[error("unknown_notification: {0}")]
    UnknownNotification(NotificationId),
    #[error("unknown_selector: {0}")]
    UnknownSelector(String),
    #[error("invalid_topology: {0}")]
    InvalidTopology(String),
    #[error("corrupt event log: {0}")]
    Replay(String),
}

impl From<WireError> for CentralError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Malformed(m) => CentralError::MalformedBatch(m),
        }
    }
}

impl CentralError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            CentralError::MalformedBatch(_) => "malformed_batch",
            CentralError::MalformedObservation(_) => "malformed_observation",
            CentralError::UnknownZone(_) => "unknown_zone",
            CentralError::UnknownStation(_) => "unknown_station",
            CentralError::Format(_) => "format_error",
            CentralError::DuplicateNid(_) => "duplicate_nid",
            CentralError::UnknownCitizen(_) => "unknown_citizen",
            CentralError::MissingPhoto => "missing_photo",
            CentralError::UnknownComplaint(_) => "unknown_complaint",
            CentralError::UnknownCrew(_) => "unknown_crew",
            CentralError::InvalidTransition(_) => "invalid_transition",
            CentralError::WrongCrew { .. } => "wrong_crew",
            CentralError::UnknownNotification(_) => "unknown_notification",
            CentralError::UnknownSelector(_) => "unknown_selector",
            CentralError::InvalidTopology(_) => "invalid_topology",
            CentralError::Replay(_) => "corrupt_log",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResult {
    pub accepted: u32,
    pub duplicates: u32,
    pub alerts_raised: Vec<AlertId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitizenRegistration {
    pub nid: String,
    pub name: String,
    pub phone: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplaintSubmission {
    pub citizen_id: CitizenId,
    pub photo_ref: String,
    pub device_location: GeoPoint,
    #[serde(default)]
    pub location_override: Option<GeoPoint>,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selector {
    Bins,
    Stations,
    Alerts,
    Complaints,
    Notifications,
    EventsSince(u64),
}

impl FromStr for Selector {
    type Err = CentralError;

    /// Accepts `bins`, `stations`, `alerts`, `complaints`, `notifications`,
    /// `events` and `events:<seq>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || CentralError::UnknownSelector(s.to_owned());
        Ok(match s {
            "bins" => Selector::Bins,
            "stations" => Selector::Stations,
            "alerts" => Selector::Alerts,
            "complaints" => Selector::Complaints,
            "notifications" => Selector::Notifications,
            "events" => Selector::EventsSince(0),
            other => {
                let since = other.strip_prefix("events:").ok_or_else(unknown)?;
                Selector::EventsSince(since.parse().map_err(|_| unknown())?)
            }
        })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Bins => f.write_str("bins"),
            Selector::Stations => f.write_str("stations"),
            Selector::Alerts => f.write_str("alerts"),
            Selector::Complaints => f.write_str("complaints"),
            Selector::Notifications => f.write_str("notifications"),
            Selector::EventsSince(k) => write!(f, "events:{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Bins(Vec<SmartBin>),
    Stations(Vec<WasteStation>),
    Alerts(Vec<Alert>),
    Complaints(Vec<Complaint>),
    Notifications(Vec<OutboxEntry>),
    Events(Vec<StateEvent>),
}

/// Read-only view as of event `seq`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    #[serde(flatten)]
    pub view: View,
}

/// Builds a snapshot from a state and the event log it was produced from.
pub fn snapshot_of(state: &CentralState, events: &[StateEvent], selector: &Selector) -> Snapshot {
    let view = match selector {
        Selector::Bins => View::Bins(state.bins.values().map(|r| r.bin.clone()).collect()),
        Selector::Stations => View::Stations(state.stations.values().map(|r| r.station.clone()).collect()),
        Selector::Alerts => View::Alerts(state.alerts.values().cloned().collect()),
        Selector::Complaints => View::Complaints(state.complaints.values().map(|r| r.complaint.clone()).collect()),
        Selector::Notifications => View::Notifications(state.outbox.values().cloned().collect()),
        Selector::EventsSince(k) => {
            // seq n lives at index n - 1
            let start = (*k as usize).min(events.len());
            View::Events(events[start..].to_vec())
        }
    };
    Snapshot {
        seq: state.last_seq,
        view,
    }
}

fn location_line(p: &GeoPoint, address: &str) -> String {
    format!("Location: {address} ({:.5}, {:.5})", p.lat, p.lon)
}

#[derive(Clone, Debug)]
pub struct Central {
    config: CentralConfig,
    state: CentralState,
    events: Vec<StateEvent>,
}

impl Central {
    pub fn new(config: CentralConfig) -> Self {
        Self {
            config,
            state: CentralState::default(),
            events: Vec::new(),
        }
    }

    /// Rebuilds a service by replaying `events` from empty.
    pub fn from_events(config: CentralConfig, events: Vec<StateEvent>) -> Result<Self, CentralError> {
        let state = CentralState::replay(&events).map_err(|e| CentralError::Replay(e.to_string()))?;
        Ok(Self { config, state, events })
    }

    /// Restores from a state snapshot taken at `state.last_seq` plus the full
    /// event log; events past the snapshot are applied on top.
    pub fn restore(config: CentralConfig, mut state: CentralState, events: Vec<StateEvent>) -> Result<Self, CentralError> {
        let from = state.last_seq as usize;
        if from > events.len() {
            return Err(CentralError::Replay(format!(
                "snapshot at seq {from} is ahead of the event log ({} events)",
                events.len()
            )));
        }
        for e in &events[from..] {
            state.apply(e).map_err(|e| CentralError::Replay(e.to_string()))?;
        }
        Ok(Self { config, state, events })
    }

    pub fn config(&self) -> &CentralConfig {
        &self.config
    }

    pub fn state(&self) -> &CentralState {
        &self.state
    }

    pub fn events(&self) -> &[StateEvent] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.state.last_seq
    }

    fn emit(&mut self, at: Millis, body: EventBody) {
        let event = StateEvent {
            seq: self.state.last_seq + 1,
            at,
            body,
        };
        self.state
            .apply(&event)
            .expect("commands only emit events that apply cleanly");
        self.events.push(event);
    }

    fn finish(&mut self, now: Millis) {
        if self.config.auto_deliver {
            self.deliver_pending(now);
        }
    }

    pub fn provision(&mut self, topology: Topology, now: Millis) -> Result<(), CentralError> {
        let bad = |m: String| Err(CentralError::InvalidTopology(m));
        let mut zone_of = std::collections::BTreeMap::new();
        for z in &topology.zones {
            if z.poll_interval_s == 0 {
                return bad(format!("zone {} has zero poll interval", z.zone_id));
            }
            for b in &z.bin_ids {
                if zone_of.insert(b.clone(), z.zone_id.clone()).is_some() {
                    return bad(format!("bin {b} listed in more than one zone"));
                }
            }
        }
        for z in self.state.zones.values() {
            if topology.zones.iter().any(|n| n.zone_id == z.zone_id) {
                continue;
            }
            for b in &z.bin_ids {
                if zone_of.insert(b.clone(), z.zone_id.clone()).is_some() {
                    return bad(format!("bin {b} already belongs to zone {}", z.zone_id));
                }
            }
        }
        for b in &topology.bins {
            match zone_of.get(&b.bin_id) {
                Some(z) if *z == b.zone_id => {}
                _ => return bad(format!("bin {} is not listed in zone {}", b.bin_id, b.zone_id)),
            }
        }
        for (bin, zone) in &zone_of {
            let declared = topology.bins.iter().any(|b| &b.bin_id == bin) || self.state.bins.contains_key(bin);
            if !declared {
                return bad(format!("zone {zone} lists undeclared bin {bin}"));
            }
        }
        self.emit(now, EventBody::Provisioned { topology });
        Ok(())
    }

    pub fn ingest_batch(&mut self, batch: &BatchReport, now: Millis) -> Result<IngestResult, CentralError> {
        batch.validate()?;
        let zone = self
            .state
            .zones
            .get(&batch.zone_id)
            .ok_or_else(|| CentralError::UnknownZone(batch.zone_id.clone()))?;
        if !batch.covers(&zone.bin_ids) {
            return Err(CentralError::MalformedBatch(format!(
                "readings and missing do not cover zone {}",
                batch.zone_id
            )));
        }
        let t = self.config.thresholds;
        let mut fresh = Vec::new();
        let mut duplicates = 0u32;
        for r in &batch.readings {
            let rec = &self.state.bins[&r.bin_id];
            let fill = sensing::fill_from_distance(r.distance_cm, &rec.bin.geometry)
                .map_err(|e| CentralError::MalformedBatch(format!("bin {}: {e}", r.bin_id)))?;
            if rec.seen.contains(r.seq) {
                duplicates += 1;
            } else {
                fresh.push((r, fill));
            }
        }

        self.emit(
            now,
            EventBody::BatchReceived {
                gateway_id: batch.gateway_id.clone(),
                zone_id: batch.zone_id.clone(),
                sent_at: batch.sent_at,
                accepted: fresh.len() as u32,
                duplicates,
                missing: batch.missing.clone(),
            },
        );

        let mut alerts_raised = Vec::new();
        for (r, fill) in &fresh {
            let led = sensing::led_state(*fill, &t);
            let heat = sensing::heat_flag(r.inner_temp_c, self.config.ambient_temp_c, &t);
            let latest = r.seq > self.state.bins[&r.bin_id].bin.last_report_seq;
            self.emit(
                now,
                EventBody::ReadingAccepted {
                    bin_id: r.bin_id.clone(),
                    seq: r.seq,
                    distance_cm: r.distance_cm,
                    inner_temp_c: r.inner_temp_c,
                    battery_pct: r.battery_pct,
                    fill_fraction: *fill,
                    led,
                    heat,
                },
            );
            if !latest {
                continue;
            }
            let rec = &self.state.bins[&r.bin_id];
            let open_full = rec.open_full_alert.clone();
            let open_heat = rec.open_heat_alert.clone();
            match open_full {
                None if led == LedColor::Red => {
                    alerts_raised.push(self.raise_alert(now, AlertSource::Bin(r.bin_id.clone()), AlertKind::Full));
                }
                Some(id) if *fill <= t.yellow_at => self.emit(now, EventBody::AlertCleared { alert_id: id, cleared_at: now }),
                _ => {}
            }
            match open_heat {
                None if heat == HeatFlag::Anomaly => {
                    alerts_raised.push(self.raise_alert(
                        now,
                        AlertSource::Bin(r.bin_id.clone()),
                        AlertKind::HeatAnomaly,
                    ));
                }
                Some(id) if heat != HeatFlag::Anomaly => {
                    self.emit(now, EventBody::AlertCleared { alert_id: id, cleared_at: now })
                }
                _ => {}
            }
        }
        self.finish(now);
        Ok(IngestResult {
            accepted: fresh.len() as u32,
            duplicates,
            alerts_raised,
        })
    }

    pub fn ingest_station_observation(
        &mut self,
        obs: &StationObservation,
        now: Millis,
    ) -> Result<Vec<AlertId>, CentralError> {
        obs.validate()
            .map_err(|e| CentralError::MalformedObservation(e.to_string()))?;
        let rec = self
            .state
            .stations
            .get(&obs.station_id)
            .ok_or_else(|| CentralError::UnknownStation(obs.station_id.clone()))?;
        let alerted = rec.alerted_status;
        let open = rec.open_alert.clone();
        let status = sensing::classify_station_observation(obs, &self.config.thresholds);
        self.emit(
            now,
            EventBody::StationObserved {
                station_id: obs.station_id.clone(),
                captured_at: obs.captured_at,
                status,
                solar_light_on: obs.light_on,
            },
        );
        let mut raised = Vec::new();
        match status {
            StationStatus::Full | StationStatus::Overflow if alerted != Some(status) => {
                if let Some(id) = open {
                    self.emit(now, EventBody::AlertCleared { alert_id: id, cleared_at: now });
                }
                let kind = if status == StationStatus::Full {
                    AlertKind::Full
                } else {
                    AlertKind::Overflow
                };
                raised.push(self.raise_alert(now, AlertSource::Station(obs.station_id.clone()), kind));
            }
            StationStatus::Empty => {
                if let Some(id) = open {
                    self.emit(now, EventBody::AlertCleared { alert_id: id, cleared_at: now });
                }
            }
            _ => {}
        }
        self.finish(now);
        Ok(raised)
    }

    pub fn register_citizen(&mut self, nid: &str, name: &str, phone: &str, now: Millis) -> Result<Citizen, CentralError> {
        validate_nid(nid)?;
        if self.state.nid_index.contains_key(nid) {
            return Err(CentralError::DuplicateNid(nid.to_owned()));
        }
        let citizen = Citizen {
            citizen_id: CitizenId::new(format!("CIT-{:06}", self.state.citizens.len() + 1)),
            nid: nid.to_owned(),
            name: name.to_owned(),
            phone: phone.to_owned(),
            registered_at: now,
        };
        self.emit(now, EventBody::CitizenRegistered { citizen: citizen.clone() });
        Ok(citizen)
    }

    pub fn submit_complaint(&mut self, req: &ComplaintSubmission, now: Millis) -> Result<Complaint, CentralError> {
        if !self.state.citizens.contains_key(&req.citizen_id) {
            return Err(CentralError::UnknownCitizen(req.citizen_id.clone()));
        }
        if req.photo_ref.trim().is_empty() {
            return Err(CentralError::MissingPhoto);
        }
        let location = req.location_override.unwrap_or(req.device_location);
        let address_text = gazetteer::address_for(&location);
        let complaint = Complaint {
            complaint_id: ComplaintId::new(format!("CMP-{:06}", self.state.complaints.len() + 1)),
            citizen_id: req.citizen_id.clone(),
            photo_ref: req.photo_ref.clone(),
            location,
            address_text: address_text.clone(),
            description: req.description.clone(),
            state: ComplaintState::Submitted,
            submitted_at: Some(now),
            dispatched_at: None,
            resolved_at: None,
            acknowledged_at: None,
            assigned_crew: None,
        };
        self.emit(now, EventBody::ComplaintSubmitted { complaint: complaint.clone() });
        let recipient = self.crew_recipient();
        let summary = if req.description.is_empty() {
            String::from("no description")
        } else {
            req.description.clone()
        };
        self.queue_notification(
            now,
            recipient,
            Topic::ComplaintFiled(complaint.complaint_id.clone()),
            format!(
                "New complaint {}: {summary}. {}",
                complaint.complaint_id,
                location_line(&location, &address_text)
            ),
            location,
            address_text,
        );
        self.finish(now);
        Ok(self.state.complaints[&complaint.complaint_id].complaint.clone())
    }

    pub fn dispatch_complaint(&mut self, id: &ComplaintId, crew: &CrewId, now: Millis) -> Result<Complaint, CentralError> {
        let rec = self
            .state
            .complaints
            .get(id)
            .ok_or_else(|| CentralError::UnknownComplaint(id.clone()))?;
        if !self.state.crews.contains_key(crew) {
            return Err(CentralError::UnknownCrew(crew.clone()));
        }
        crate::domain::complaint_transition(rec.complaint.state, ComplaintEvent::Dispatch)?;
        let (loc, addr) = (rec.complaint.location, rec.complaint.address_text.clone());
        self.emit(
            now,
            EventBody::ComplaintDispatched {
                complaint_id: id.clone(),
                crew_id: crew.clone(),
            },
        );
        self.queue_notification(
            now,
            Recipient::Crew(crew.clone()),
            Topic::ComplaintAssigned(id.clone()),
            format!("Complaint {id} assigned to you. {}", location_line(&loc, &addr)),
            loc,
            addr,
        );
        self.finish(now);
        Ok(self.state.complaints[id].complaint.clone())
    }

    pub fn resolve_complaint(&mut self, id: &ComplaintId, crew: &CrewId, now: Millis) -> Result<Complaint, CentralError> {
        let rec = self
            .state
            .complaints
            .get(id)
            .ok_or_else(|| CentralError::UnknownComplaint(id.clone()))?;
        crate::domain::complaint_transition(rec.complaint.state, ComplaintEvent::Resolve)?;
        if rec.complaint.assigned_crew.as_ref() != Some(crew) {
            return Err(CentralError::WrongCrew {
                assigned: rec.complaint.assigned_crew.clone(),
                actual: crew.clone(),
            });
        }
        let citizen = rec.complaint.citizen_id.clone();
        let (loc, addr) = (rec.complaint.location, rec.complaint.address_text.clone());
        let sla_alert = rec
            .sla_alert
            .clone()
            .filter(|a| self.state.alerts[a].cleared_at.is_none());
        self.emit(
            now,
            EventBody::ComplaintResolved {
                complaint_id: id.clone(),
                crew_id: crew.clone(),
            },
        );
        if let Some(alert_id) = sla_alert {
            self.emit(now, EventBody::AlertCleared { alert_id, cleared_at: now });
        }
        self.queue_notification(
            now,
            Recipient::Citizen(citizen),
            Topic::ComplaintSolved(id.clone()),
            RESOLUTION_MESSAGE.to_owned(),
            loc,
            addr,
        );
        self.finish(now);
        Ok(self.state.complaints[id].complaint.clone())
    }

    /// Raises one SlaBreach alert per open complaint older than the SLA
    /// window (strictly), at most once per complaint.
    pub fn sla_sweep(&mut self, now: Millis) -> Vec<Alert> {
        let sla = self.config.thresholds.sla_ms();
        let due: Vec<ComplaintId> = self
            .state
            .complaints
            .values()
            .filter(|r| {
                r.complaint.state.is_open()
                    && r.sla_alert.is_none()
                    && r.complaint.submitted_at.is_some_and(|t| now - t > sla)
            })
            .map(|r| r.complaint.complaint_id.clone())
            .collect();
        let mut out = Vec::with_capacity(due.len());
        for id in due {
            let alert_id = self.raise_alert(now, AlertSource::Complaint(id), AlertKind::SlaBreach);
            out.push(self.state.alerts[&alert_id].clone());
        }
        self.finish(now);
        out
    }

    /// Whether any open complaint has yet to be flagged.
    pub fn has_unflagged_open_complaints(&self) -> bool {
        self.state
            .complaints
            .values()
            .any(|r| r.complaint.state.is_open() && r.sla_alert.is_none())
    }

    /// Hands a queued notification to its mock transport. Delivering an
    /// already delivered entry is a no-op.
    pub fn send_notification(&mut self, id: &NotificationId, now: Millis) -> Result<OutboxEntry, CentralError> {
        let entry = self
            .state
            .outbox
            .get(id)
            .ok_or_else(|| CentralError::UnknownNotification(id.clone()))?;
        if entry.status == DeliveryStatus::Delivered {
            return Ok(entry.clone());
        }
        let latency = match entry.transport {
            Transport::MockPush => self.config.push_latency_ms,
            Transport::MockSms => self.config.sms_latency_ms,
        };
        let delivered_at = now + latency;
        let topic = entry.notification.topic.clone();
        self.emit(
            now,
            EventBody::NotificationDelivered {
                notification_id: id.clone(),
                delivered_at,
            },
        );
        if let Topic::ComplaintSolved(c) = topic {
            if self.state.complaints.get(&c).map(|r| r.complaint.state) == Some(ComplaintState::Resolved) {
                self.emit(
                    now,
                    EventBody::ComplaintAcknowledged {
                        complaint_id: c,
                        acknowledged_at: delivered_at,
                    },
                );
            }
        }
        Ok(self.state.outbox[id].clone())
    }

    pub fn deliver_pending(&mut self, now: Millis) -> Vec<NotificationId> {
        let queued: Vec<NotificationId> = self
            .state
            .outbox
            .values()
            .filter(|e| e.status == DeliveryStatus::Queued)
            .map(|e| e.notification.notification_id.clone())
            .collect();
        for id in &queued {
            self.send_notification(id, now).expect("queued entry exists");
        }
        queued
    }

    pub fn query_state(&self, selector: &Selector) -> Snapshot {
        snapshot_of(&self.state, &self.events, selector)
    }

    fn crew_recipient(&self) -> Recipient {
        self.state
            .pick_crew()
            .map(|c| Recipient::Crew(c.crew_id.clone()))
            .unwrap_or(Recipient::Operations)
    }

    fn raise_alert(&mut self, now: Millis, source: AlertSource, kind: AlertKind) -> AlertId {
        let alert_id = AlertId::new(format!("ALR-{:06}", self.state.alerts.len() + 1));
        let recipient = match &source {
            AlertSource::Complaint(c) => self.state.complaints[c]
                .complaint
                .assigned_crew
                .clone()
                .map(Recipient::Crew)
                .unwrap_or_else(|| self.crew_recipient()),
            _ => self.crew_recipient(),
        };
        let assignee = match &recipient {
            Recipient::Crew(c) => Some(c.clone()),
            _ => None,
        };
        let (location, what) = match &source {
            AlertSource::Bin(b) => {
                let rec = &self.state.bins[b];
                let what = match kind {
                    AlertKind::HeatAnomaly => {
                        format!("Bin {b} reports abnormal heat ({:.1} C).", rec.bin.inner_temp_c)
                    }
                    _ => format!("Bin {b} is full ({:.0}%).", rec.bin.fill_fraction * 100.0),
                };
                (rec.bin.location, what)
            }
            AlertSource::Station(s) => {
                let rec = &self.state.stations[s];
                let what = match kind {
                    AlertKind::Overflow => format!("Waste station {s} is overflowing."),
                    _ => format!("Waste station {s} is full."),
                };
                (rec.station.location, what)
            }
            AlertSource::Complaint(c) => {
                let rec = &self.state.complaints[c];
                (
                    rec.complaint.location,
                    format!(
                        "Complaint {c} is past its {} h resolution window.",
                        self.config.thresholds.sla_hours
                    ),
                )
            }
        };
        let address = gazetteer::address_for(&location);
        self.emit(
            now,
            EventBody::AlertRaised {
                alert: Alert {
                    alert_id: alert_id.clone(),
                    source,
                    kind,
                    raised_at: now,
                    cleared_at: None,
                    assignee,
                },
            },
        );
        self.queue_notification(
            now,
            recipient,
            Topic::Alert(alert_id.clone()),
            format!("{what} {}", location_line(&location, &address)),
            location,
            address,
        );
        alert_id
    }

    fn queue_notification(
        &mut self,
        now: Millis,
        recipient: Recipient,
        topic: Topic,
        body: String,
        geo: GeoPoint,
        address_text: String,
    ) -> NotificationId {
        let channel = match &recipient {
            Recipient::Crew(c) => self.state.channel_for_crew(c),
            Recipient::Citizen(_) | Recipient::Operations => Channel::Push,
        };
        let transport = match channel {
            Channel::Push => Transport::MockPush,
            Channel::Sms => Transport::MockSms,
        };
        let notification_id = NotificationId::new(format!("NTF-{:06}", self.state.outbox.len() + 1));
        self.emit(
            now,
            EventBody::NotificationQueued {
                entry: OutboxEntry {
                    notification: Notification {
                        notification_id: notification_id.clone(),
                        channel,
                        recipient,
                        topic,
                        body,
                        geo: Some(geo),
                        address_text: Some(address_text),
                        queued_at: now,
                        delivered_at: None,
                    },
                    transport,
                    status: DeliveryStatus::Queued,
                },
            },
        );
        notification_id
    }

    /// Convenience for tests and the simulator: the bin record's current view.
    pub fn bin(&self, id: &BinId) -> Option<&SmartBin> {
        self.state.bins.get(id).map(|r| &r.bin)
    }
}

#[cfg(test)]
mod tests;
