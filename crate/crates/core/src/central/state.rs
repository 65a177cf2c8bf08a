//! Event-sourced service state. [`CentralState::apply`] is the only way the
//! state changes; replaying the event stream from [`CentralState::default`]
//! rebuilds it exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{
    complaint_transition, Alert, AlertId, AlertKind, AlertSource, BinGeometry, BinId, Channel,
    Citizen, CitizenId, Complaint, ComplaintEvent, ComplaintId, ComplaintState, CrewId, GatewayId,
    GeoPoint, Millis, Notification, NotificationId, SmartBin, StationId, WasteStation, Zone, ZoneId,
};
use crate::sensing::{HeatFlag, LedColor, StationStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRegistration {
    pub bin_id: BinId,
    pub zone_id: ZoneId,
    pub location: GeoPoint,
    pub geometry: BinGeometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationRegistration {
    pub station_id: StationId,
    pub location: GeoPoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrewInfo {
    pub crew_id: CrewId,
    /// Crews with a smartphone get push notifications, others SMS.
    pub smartphone: bool,
}

/// Static fleet description loaded into the service.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub zones: Vec<Zone>,
    pub bins: Vec<BinRegistration>,
    #[serde(default)]
    pub stations: Vec<StationRegistration>,
    #[serde(default)]
    pub crews: Vec<CrewInfo>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    MockPush,
    MockSms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Queued,
    Delivered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutboxEntry {
    pub notification: Notification,
    pub transport: Transport,
    pub status: DeliveryStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Provisioned {
        topology: Topology,
    },
    CitizenRegistered {
        citizen: Citizen,
    },
    BatchReceived {
        gateway_id: GatewayId,
        zone_id: ZoneId,
        sent_at: Millis,
        accepted: u32,
        duplicates: u32,
        missing: Vec<BinId>,
    },
    ReadingAccepted {
        bin_id: BinId,
        seq: u64,
        distance_cm: f64,
        inner_temp_c: f64,
        battery_pct: f64,
        fill_fraction: f64,
        led: LedColor,
        heat: HeatFlag,
    },
    StationObserved {
        station_id: StationId,
        captured_at: Millis,
        status: StationStatus,
        solar_light_on: bool,
    },
    AlertRaised {
        alert: Alert,
    },
    AlertCleared {
        alert_id: AlertId,
        cleared_at: Millis,
    },
    NotificationQueued {
        entry: OutboxEntry,
    },
    NotificationDelivered {
        notification_id: NotificationId,
        delivered_at: Millis,
    },
    ComplaintSubmitted {
        complaint: Complaint,
    },
    ComplaintDispatched {
        complaint_id: ComplaintId,
        crew_id: CrewId,
    },
    ComplaintResolved {
        complaint_id: ComplaintId,
        crew_id: CrewId,
    },
    ComplaintAcknowledged {
        complaint_id: ComplaintId,
        acknowledged_at: Millis,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Provisioned { .. } => "provisioned",
            EventBody::CitizenRegistered { .. } => "citizen_registered",
            EventBody::BatchReceived { .. } => "batch_received",
            EventBody::ReadingAccepted { .. } => "reading_accepted",
            EventBody::StationObserved { .. } => "station_observed",
            EventBody::AlertRaised { .. } => "alert_raised",
            EventBody::AlertCleared { .. } => "alert_cleared",
            EventBody::NotificationQueued { .. } => "notification_queued",
            EventBody::NotificationDelivered { .. } => "notification_delivered",
            EventBody::ComplaintSubmitted { .. } => "complaint_submitted",
            EventBody::ComplaintDispatched { .. } => "complaint_dispatched",
            EventBody::ComplaintResolved { .. } => "complaint_resolved",
            EventBody::ComplaintAcknowledged { .. } => "complaint_acknowledged",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub seq: u64,
    pub at: Millis,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Seen sequence numbers for one bin: everything `<= floor` plus a sparse
/// tail. Bins number readings densely, so the tail stays short.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqWindow {
    pub floor: u64,
    pub above: BTreeSet<u64>,
}

impl SeqWindow {
    pub fn contains(&self, seq: u64) -> bool {
        seq <= self.floor || self.above.contains(&seq)
    }

    pub fn insert(&mut self, seq: u64) -> bool {
        if self.contains(seq) {
            return false;
        }
        self.above.insert(seq);
        while self.above.remove(&(self.floor + 1)) {
            self.floor += 1;
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub bin: SmartBin,
    pub heat: HeatFlag,
    pub seen: SeqWindow,
    /// Open Full alert. While set, the bin is disarmed for new Full alerts.
    pub open_full_alert: Option<AlertId>,
    pub open_heat_alert: Option<AlertId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station: WasteStation,
    pub alerted_status: Option<StationStatus>,
    pub open_alert: Option<AlertId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplaintRecord {
    pub complaint: Complaint,
    pub sla_alert: Option<AlertId>,
    pub solved_notification: Option<NotificationId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CentralState {
    pub last_seq: u64,
    pub zones: BTreeMap<ZoneId, Zone>,
    pub bins: BTreeMap<BinId, BinRecord>,
    pub stations: BTreeMap<StationId, StationRecord>,
    pub crews: BTreeMap<CrewId, CrewInfo>,
    pub citizens: BTreeMap<CitizenId, Citizen>,
    pub nid_index: BTreeMap<String, CitizenId>,
    pub complaints: BTreeMap<ComplaintId, ComplaintRecord>,
    pub alerts: BTreeMap<AlertId, Alert>,
    pub outbox: BTreeMap<NotificationId, OutboxEntry>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("event {seq} ({kind}) cannot be applied: {reason}")]
pub struct ApplyError {
    pub seq: u64,
    pub kind: &'static str,
    pub reason: String,
}

impl CentralState {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a StateEvent>) -> Result<Self, ApplyError> {
        let mut s = CentralState::default();
        for e in events {
            s.apply(e)?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, event: &StateEvent) -> Result<(), ApplyError> {
        let fail = |reason: String| ApplyError {
            seq: event.seq,
            kind: event.body.kind(),
            reason,
        };
        if event.seq != self.last_seq + 1 {
            return Err(fail(format!("expected seq {}", self.last_seq + 1)));
        }
        match &event.body {
            EventBody::Provisioned { topology } => {
                for z in &topology.zones {
                    self.zones.insert(z.zone_id.clone(), z.clone());
                }
                for b in &topology.bins {
                    let rec = self.bins.entry(b.bin_id.clone()).or_insert_with(|| BinRecord {
                        bin: SmartBin {
                            bin_id: b.bin_id.clone(),
                            zone_id: b.zone_id.clone(),
                            location: b.location,
                            geometry: b.geometry,
                            fill_fraction: 0.0,
                            inner_temp_c: 0.0,
                            led: LedColor::Green,
                            battery_pct: 100.0,
                            last_report_seq: 0,
                            online: true,
                        },
                        heat: HeatFlag::Normal,
                        seen: SeqWindow::default(),
                        open_full_alert: None,
                        open_heat_alert: None,
                    });
                    rec.bin.zone_id = b.zone_id.clone();
                    rec.bin.location = b.location;
                    rec.bin.geometry = b.geometry;
                }
                for s in &topology.stations {
                    let rec = self
                        .stations
                        .entry(s.station_id.clone())
                        .or_insert_with(|| StationRecord {
                            station: WasteStation {
                                station_id: s.station_id.clone(),
                                location: s.location,
                                solar_light_on: false,
                                status: StationStatus::Empty,
                                last_observation_at: None,
                            },
                            alerted_status: None,
                            open_alert: None,
                        });
                    rec.station.location = s.location;
                }
                for c in &topology.crews {
                    self.crews.insert(c.crew_id.clone(), c.clone());
                }
            }
            EventBody::CitizenRegistered { citizen } => {
                if self.nid_index.contains_key(&citizen.nid) {
                    return Err(fail("nid already registered".into()));
                }
                self.nid_index.insert(citizen.nid.clone(), citizen.citizen_id.clone());
                self.citizens.insert(citizen.citizen_id.clone(), citizen.clone());
            }
            EventBody::BatchReceived { missing, .. } => {
                for m in missing {
                    if let Some(rec) = self.bins.get_mut(m) {
                        rec.bin.online = false;
                    }
                }
            }
            EventBody::ReadingAccepted {
                bin_id,
                seq,
                inner_temp_c,
                battery_pct,
                fill_fraction,
                led,
                heat,
                ..
            } => {
                let rec = self
                    .bins
                    .get_mut(bin_id)
                    .ok_or_else(|| fail(format!("unknown bin {bin_id}")))?;
                if !rec.seen.insert(*seq) {
                    return Err(fail(format!("duplicate reading {bin_id}#{seq}")));
                }
                if *seq > rec.bin.last_report_seq {
                    rec.bin.last_report_seq = *seq;
                    rec.bin.fill_fraction = *fill_fraction;
                    rec.bin.inner_temp_c = *inner_temp_c;
                    rec.bin.battery_pct = *battery_pct;
                    rec.bin.led = *led;
                    rec.bin.online = true;
                    rec.heat = *heat;
                }
            }
            EventBody::StationObserved {
                station_id,
                captured_at,
                status,
                solar_light_on,
            } => {
                let rec = self
                    .stations
                    .get_mut(station_id)
                    .ok_or_else(|| fail(format!("unknown station {station_id}")))?;
                rec.station.last_observation_at = Some(*captured_at);
                if *status != StationStatus::Indeterminate {
                    rec.station.solar_light_on = *solar_light_on;
                    rec.station.status = *status;
                }
            }
            EventBody::AlertRaised { alert } => {
                match (&alert.source, alert.kind) {
                    (AlertSource::Bin(b), AlertKind::Full) => {
                        self.bins
                            .get_mut(b)
                            .ok_or_else(|| fail(format!("unknown bin {b}")))?
                            .open_full_alert = Some(alert.alert_id.clone());
                    }
                    (AlertSource::Bin(b), AlertKind::HeatAnomaly) => {
                        self.bins
                            .get_mut(b)
                            .ok_or_else(|| fail(format!("unknown bin {b}")))?
                            .open_heat_alert = Some(alert.alert_id.clone());
                    }
                    (AlertSource::Station(s), kind @ (AlertKind::Full | AlertKind::Overflow)) => {
                        let rec = self
                            .stations
                            .get_mut(s)
                            .ok_or_else(|| fail(format!("unknown station {s}")))?;
                        rec.open_alert = Some(alert.alert_id.clone());
                        rec.alerted_status = Some(if kind == AlertKind::Full {
                            StationStatus::Full
                        } else {
                            StationStatus::Overflow
                        });
                    }
                    (AlertSource::Complaint(c), AlertKind::SlaBreach) => {
                        self.complaints
                            .get_mut(c)
                            .ok_or_else(|| fail(format!("unknown complaint {c}")))?
                            .sla_alert = Some(alert.alert_id.clone());
                    }
                    (src, kind) => return Err(fail(format!("{kind:?} alert not valid for {src:?}"))),
                }
                self.alerts.insert(alert.alert_id.clone(), alert.clone());
            }
            EventBody::AlertCleared { alert_id, cleared_at } => {
                let alert = self
                    .alerts
                    .get_mut(alert_id)
                    .ok_or_else(|| fail(format!("unknown alert {alert_id}")))?;
                alert.cleared_at = Some(*cleared_at);
                match &alert.source {
                    AlertSource::Bin(b) => {
                        if let Some(rec) = self.bins.get_mut(b) {
                            if rec.open_full_alert.as_ref() == Some(alert_id) {
                                rec.open_full_alert = None;
                            }
                            if rec.open_heat_alert.as_ref() == Some(alert_id) {
                                rec.open_heat_alert = None;
                            }
                        }
                    }
                    AlertSource::Station(s) => {
                        if let Some(rec) = self.stations.get_mut(s) {
                            if rec.open_alert.as_ref() == Some(alert_id) {
                                rec.open_alert = None;
                                rec.alerted_status = None;
                            }
                        }
                    }
                    AlertSource::Complaint(_) => {}
                }
            }
            EventBody::NotificationQueued { entry } => {
                if let crate::domain::Topic::ComplaintSolved(c) = &entry.notification.topic {
                    if let Some(rec) = self.complaints.get_mut(c) {
                        rec.solved_notification = Some(entry.notification.notification_id.clone());
                    }
                }
                self.outbox
                    .insert(entry.notification.notification_id.clone(), entry.clone());
            }
            EventBody::NotificationDelivered {
                notification_id,
                delivered_at,
            } => {
                let entry = self
                    .outbox
                    .get_mut(notification_id)
                    .ok_or_else(|| fail(format!("unknown notification {notification_id}")))?;
                entry.status = DeliveryStatus::Delivered;
                entry.notification.delivered_at = Some(*delivered_at);
            }
            EventBody::ComplaintSubmitted { complaint } => {
                self.complaints.insert(
                    complaint.complaint_id.clone(),
                    ComplaintRecord {
                        complaint: complaint.clone(),
                        sla_alert: None,
                        solved_notification: None,
                    },
                );
            }
            EventBody::ComplaintDispatched { complaint_id, crew_id } => {
                let c = self.complaint_mut(complaint_id, ComplaintEvent::Dispatch).map_err(fail)?;
                c.dispatched_at = Some(event.at);
                c.assigned_crew = Some(crew_id.clone());
            }
            EventBody::ComplaintResolved { complaint_id, .. } => {
                let c = self.complaint_mut(complaint_id, ComplaintEvent::Resolve).map_err(fail)?;
                c.resolved_at = Some(event.at);
            }
            EventBody::ComplaintAcknowledged {
                complaint_id,
                acknowledged_at,
            } => {
                let c = self
                    .complaint_mut(complaint_id, ComplaintEvent::Acknowledge)
                    .map_err(fail)?;
                c.acknowledged_at = Some(*acknowledged_at);
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }

    fn complaint_mut(&mut self, id: &ComplaintId, event: ComplaintEvent) -> Result<&mut Complaint, String> {
        let rec = self
            .complaints
            .get_mut(id)
            .ok_or_else(|| format!("unknown complaint {id}"))?;
        let next = complaint_transition(rec.complaint.state, event).map_err(|e| e.to_string())?;
        rec.complaint.state = next;
        Ok(&mut rec.complaint)
    }

    /// Open work items routed to `crew`: uncleared field alerts plus
    /// dispatched complaints.
    pub fn crew_load(&self, crew: &CrewId) -> usize {
        let alerts = self
            .alerts
            .values()
            .filter(|a| {
                a.cleared_at.is_none()
                    && a.kind != AlertKind::SlaBreach
                    && a.assignee.as_ref() == Some(crew)
            })
            .count();
        let complaints = self
            .complaints
            .values()
            .filter(|r| {
                r.complaint.state == ComplaintState::Dispatched
                    && r.complaint.assigned_crew.as_ref() == Some(crew)
            })
            .count();
        alerts + complaints
    }

    /// Least-loaded crew, lowest id on ties.
    pub fn pick_crew(&self) -> Option<&CrewInfo> {
        self.crews
            .values()
            .min_by_key(|c| (self.crew_load(&c.crew_id), c.crew_id.clone()))
    }

    pub fn channel_for_crew(&self, crew: &CrewId) -> Channel {
        match self.crews.get(crew) {
            Some(c) if c.smartphone => Channel::Push,
            _ => Channel::Sms,
        }
    }
}
