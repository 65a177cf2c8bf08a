use std::collections::BTreeSet;

use super::*;
use crate::domain::{BinGeometry, Zone, MS_PER_HOUR};
use crate::gateway::{Reading, Uplink};
use crate::sensing::distance_for;

const GEOM: BinGeometry = BinGeometry {
    depth_cm: 100.0,
    sensor_offset_cm: 5.0,
};

fn topology(bins: &[&str], crews: &[(&str, bool)]) -> Topology {
    let loc = GeoPoint::new(22.80, 89.55).unwrap();
    Topology {
        zones: vec![Zone {
            zone_id: ZoneId::from("Z1"),
            wifi_available: true,
            wifi_outage: false,
            bin_ids: bins.iter().map(|b| BinId::from(*b)).collect::<BTreeSet<_>>(),
            poll_interval_s: 600,
        }],
        bins: bins
            .iter()
            .map(|b| BinRegistration {
                bin_id: BinId::from(*b),
                zone_id: ZoneId::from("Z1"),
                location: loc,
                geometry: GEOM,
            })
            .collect(),
        stations: vec![StationRegistration {
            station_id: StationId::from("S1"),
            location: loc,
        }],
        crews: crews
            .iter()
            .map(|(c, phone)| CrewInfo {
                crew_id: CrewId::from(*c),
                smartphone: *phone,
            })
            .collect(),
    }
}

fn central() -> Central {
    let mut c = Central::new(CentralConfig::default());
    c.provision(topology(&["B1", "B2", "B3"], &[("C1", true), ("C2", false)]), 0)
        .unwrap();
    c
}

fn reading(bin: &str, seq: u64, fill: f64) -> Reading {
    Reading {
        bin_id: BinId::from(bin),
        seq,
        distance_cm: distance_for(fill, &GEOM),
        inner_temp_c: 25.0,
        battery_pct: 90.0,
    }
}

/// A batch for zone Z1 with readings for the given bins and the rest missing.
fn batch(readings: Vec<Reading>, at: Millis) -> BatchReport {
    let listed: BTreeSet<BinId> = readings.iter().map(|r| r.bin_id.clone()).collect();
    let missing = ["B1", "B2", "B3"]
        .iter()
        .map(|b| BinId::from(*b))
        .filter(|b| !listed.contains(b))
        .collect();
    BatchReport {
        v: 1,
        gateway_id: crate::domain::GatewayId::from("GW-Z1"),
        zone_id: ZoneId::from("Z1"),
        uplink: Uplink::WiFi,
        sent_at: at,
        readings,
        missing,
    }
}

fn citizen(c: &mut Central) -> CitizenId {
    c.register_citizen("1234567890", "Rahim", "+8801700000000", 0)
        .unwrap()
        .citizen_id
}

fn submission(citizen_id: &CitizenId) -> ComplaintSubmission {
    ComplaintSubmission {
        citizen_id: citizen_id.clone(),
        photo_ref: "photo://1".into(),
        device_location: GeoPoint::new(22.81, 89.56).unwrap(),
        location_override: None,
        description: "garbage on the road".into(),
    }
}

fn assert_replays(c: &Central) {
    let rebuilt = CentralState::replay(c.events()).unwrap();
    assert_eq!(&rebuilt, c.state());
}

#[test]
fn red_crossing_raises_one_full_alert_and_notification() {
    let mut c = central();
    c.ingest_batch(&batch(vec![reading("B1", 1, 0.6)], 1_000), 1_000).unwrap();
    let queued_before = c.state().outbox.len();
    let res = c.ingest_batch(&batch(vec![reading("B1", 2, 0.95)], 2_000), 2_000).unwrap();
    assert_eq!(res.accepted, 1);
    assert_eq!(res.alerts_raised.len(), 1);
    let alert = &c.state().alerts[&res.alerts_raised[0]];
    assert_eq!(alert.kind, AlertKind::Full);
    assert_eq!(alert.source, AlertSource::Bin(BinId::from("B1")));
    assert_eq!(c.state().outbox.len(), queued_before + 1);
    let note = c.state().outbox.values().last().unwrap();
    assert_eq!(note.notification.recipient, Recipient::Crew(CrewId::from("C1")));
    assert!(note.notification.geo.is_some());
    assert!(note.notification.address_text.is_some());
    assert_eq!(c.bin(&BinId::from("B1")).unwrap().led, LedColor::Red);
    assert_replays(&c);
}

#[test]
fn empty_batch_is_a_no_op_for_alerts() {
    let mut c = central();
    let res = c.ingest_batch(&batch(vec![], 0), 0).unwrap();
    assert_eq!(
        res,
        IngestResult {
            accepted: 0,
            duplicates: 0,
            alerts_raised: vec![]
        }
    );
}

#[test]
fn replayed_batch_is_absorbed_as_duplicates() {
    let mut c = central();
    let b = batch(vec![reading("B1", 1, 0.95), reading("B2", 1, 0.2)], 0);
    let first = c.ingest_batch(&b, 0).unwrap();
    assert_eq!(first.accepted, 2);
    let state_before = c.state().clone();
    let second = c.ingest_batch(&b, 10).unwrap();
    assert_eq!(second.accepted, 0);
    assert_eq!(second.duplicates, 2);
    assert!(second.alerts_raised.is_empty());
    // Only the batch receipt itself is recorded.
    let mut s = c.state().clone();
    s.last_seq = state_before.last_seq;
    assert_eq!(s, state_before);
}

#[test]
fn hysteresis_rearms_only_at_or_below_yellow() {
    let mut c = central();
    let fills = [0.95, 0.97, 0.7, 0.92, 0.5, 0.91, 0.3, 0.99];
    let mut total = 0;
    for (i, f) in fills.iter().enumerate() {
        let res = c
            .ingest_batch(&batch(vec![reading("B1", i as u64 + 1, *f)], i as Millis), i as Millis)
            .unwrap();
        total += res.alerts_raised.len();
    }
    // Alerts at 0.95, at 0.91 (after 0.5), at 0.99 (after 0.3).
    assert_eq!(total, 3);
    let cleared = c.state().alerts.values().filter(|a| a.cleared_at.is_some()).count();
    assert_eq!(cleared, 2);
    assert_replays(&c);
}

#[test]
fn stale_reading_does_not_move_state() {
    let mut c = central();
    c.ingest_batch(&batch(vec![reading("B1", 5, 0.3)], 0), 0).unwrap();
    let res = c.ingest_batch(&batch(vec![reading("B1", 4, 0.95)], 1), 1).unwrap();
    assert_eq!(res.accepted, 1);
    assert!(res.alerts_raised.is_empty());
    let bin = c.bin(&BinId::from("B1")).unwrap();
    assert_eq!(bin.last_report_seq, 5);
    assert_eq!(bin.fill_fraction, 0.3);
}

#[test]
fn missing_bins_go_offline_and_back() {
    let mut c = central();
    c.ingest_batch(&batch(vec![reading("B1", 1, 0.1)], 0), 0).unwrap();
    assert!(!c.bin(&BinId::from("B2")).unwrap().online);
    c.ingest_batch(&batch(vec![reading("B2", 1, 0.1)], 1), 1).unwrap();
    assert!(c.bin(&BinId::from("B2")).unwrap().online);
}

#[test]
fn heat_anomaly_is_edge_triggered() {
    let mut c = central();
    let mut hot = reading("B1", 1, 0.2);
    hot.inner_temp_c = 60.0;
    let r1 = c.ingest_batch(&batch(vec![hot.clone()], 0), 0).unwrap();
    hot.seq = 2;
    let r2 = c.ingest_batch(&batch(vec![hot], 1), 1).unwrap();
    assert_eq!(r1.alerts_raised.len(), 1);
    assert!(r2.alerts_raised.is_empty());
    assert_eq!(c.state().alerts[&r1.alerts_raised[0]].kind, AlertKind::HeatAnomaly);
}

#[test]
fn batch_errors() {
    let mut c = central();
    let mut b = batch(vec![], 0);
    b.zone_id = ZoneId::from("nowhere");
    assert!(matches!(c.ingest_batch(&b, 0), Err(CentralError::UnknownZone(_))));
    let mut b = batch(vec![], 0);
    b.missing.pop();
    assert!(matches!(c.ingest_batch(&b, 0), Err(CentralError::MalformedBatch(_))));
    let mut r = reading("B1", 1, 0.5);
    r.distance_cm = 500.0;
    let err = c.ingest_batch(&batch(vec![r], 0), 0).unwrap_err();
    assert_eq!(err.code(), "malformed_batch");
    // Failed commands leave no trace.
    assert_eq!(c.events().len(), 1);
}

fn observation(night: bool, light: bool, fill: f64, spill: bool) -> StationObservation {
    StationObservation {
        station_id: StationId::from("S1"),
        captured_at: 7,
        is_night: night,
        light_on: light,
        fill_estimate: fill,
        spillage_seen: spill,
    }
}

#[test]
fn station_spillage_raises_overflow() {
    let mut c = central();
    let raised = c.ingest_station_observation(&observation(false, false, 0.5, true), 7).unwrap();
    assert_eq!(raised.len(), 1);
    assert_eq!(c.state().alerts[&raised[0]].kind, AlertKind::Overflow);
    assert_eq!(c.state().stations[&StationId::from("S1")].station.status, StationStatus::Overflow);
    let n = c.state().outbox.values().last().unwrap();
    assert_eq!(n.notification.topic, Topic::Alert(raised[0].clone()));
}

#[test]
fn dark_night_frame_only_records_time() {
    let mut c = central();
    let before = c.state().stations[&StationId::from("S1")].station.clone();
    let raised = c.ingest_station_observation(&observation(true, false, 1.1, false), 7).unwrap();
    assert!(raised.is_empty());
    let after = &c.state().stations[&StationId::from("S1")].station;
    assert_eq!(after.last_observation_at, Some(7));
    assert_eq!(after.status, before.status);
}

#[test]
fn consecutive_full_frames_alert_once() {
    let mut c = central();
    let a = c.ingest_station_observation(&observation(false, false, 0.95, false), 1).unwrap();
    let b = c.ingest_station_observation(&observation(false, false, 0.96, false), 2).unwrap();
    assert_eq!((a.len(), b.len()), (1, 0));
    // Emptied, then full again: re-armed.
    c.ingest_station_observation(&observation(false, false, 0.1, false), 3).unwrap();
    let d = c.ingest_station_observation(&observation(false, false, 0.95, false), 4).unwrap();
    assert_eq!(d.len(), 1);
    assert_replays(&c);
}

#[test]
fn unknown_station() {
    let mut c = central();
    let mut o = observation(false, false, 0.1, false);
    o.station_id = StationId::from("S9");
    assert_eq!(c.ingest_station_observation(&o, 0).unwrap_err().code(), "unknown_station");
}

#[test]
fn citizen_registration() {
    let mut c = central();
    let first = c.register_citizen("1234567890", "A", "1", 0).unwrap();
    assert_eq!(first.citizen_id.as_str(), "CIT-000001");
    assert_eq!(c.register_citizen("1234567890", "B", "2", 0).unwrap_err().code(), "duplicate_nid");
    assert_eq!(c.register_citizen("123456789", "B", "2", 0).unwrap_err().code(), "format_error");
}

#[test]
fn complaint_location_defaults_to_device() {
    let mut c = central();
    let cid = citizen(&mut c);
    let req = submission(&cid);
    let complaint = c.submit_complaint(&req, 100).unwrap();
    assert_eq!(complaint.location, req.device_location);
    assert_eq!(complaint.state, ComplaintState::Submitted);
    assert_eq!(complaint.address_text, gazetteer::address_for(&req.device_location));
    let filed = c
        .state()
        .outbox
        .values()
        .filter(|e| e.notification.topic == Topic::ComplaintFiled(complaint.complaint_id.clone()))
        .count();
    assert_eq!(filed, 1);
}

#[test]
fn complaint_location_override_wins() {
    let mut c = central();
    let cid = citizen(&mut c);
    let mut req = submission(&cid);
    let pin = GeoPoint::new(22.9, 89.6).unwrap();
    req.location_override = Some(pin);
    assert_eq!(c.submit_complaint(&req, 0).unwrap().location, pin);
}

#[test]
fn complaint_submission_errors() {
    let mut c = central();
    let cid = citizen(&mut c);
    let mut req = submission(&CitizenId::from("CIT-999"));
    assert_eq!(c.submit_complaint(&req, 0).unwrap_err().code(), "unknown_citizen");
    req = submission(&cid);
    req.photo_ref = " ".into();
    assert_eq!(c.submit_complaint(&req, 0).unwrap_err(), CentralError::MissingPhoto);
}

#[test]
fn dispatch_rules() {
    let mut c = central();
    let cid = citizen(&mut c);
    let id = c.submit_complaint(&submission(&cid), 0).unwrap().complaint_id;
    let crew = CrewId::from("C2");
    assert_eq!(
        c.dispatch_complaint(&id, &CrewId::from("C9"), 1).unwrap_err().code(),
        "unknown_crew"
    );
    let d = c.dispatch_complaint(&id, &crew, 1).unwrap();
    assert_eq!(d.state, ComplaintState::Dispatched);
    assert_eq!(d.dispatched_at, Some(1));
    assert_eq!(d.assigned_crew, Some(crew.clone()));
    assert_eq!(c.dispatch_complaint(&id, &crew, 2).unwrap_err().code(), "invalid_transition");
    // C2 has no smartphone: SMS carrying the textual address.
    let sms = c
        .state()
        .outbox
        .values()
        .find(|e| e.notification.topic == Topic::ComplaintAssigned(id.clone()))
        .unwrap();
    assert_eq!(sms.notification.channel, Channel::Sms);
    assert!(sms.notification.body.contains(sms.notification.address_text.as_deref().unwrap()));
}

#[test]
fn resolve_rules_and_feedback_message() {
    let mut c = central();
    let cid = citizen(&mut c);
    let id = c.submit_complaint(&submission(&cid), 0).unwrap().complaint_id;
    assert_eq!(
        c.resolve_complaint(&id, &CrewId::from("C1"), 1).unwrap_err().code(),
        "invalid_transition"
    );
    c.dispatch_complaint(&id, &CrewId::from("C1"), 1).unwrap();
    assert_eq!(
        c.resolve_complaint(&id, &CrewId::from("C2"), 2).unwrap_err().code(),
        "wrong_crew"
    );
    let resolved = c.resolve_complaint(&id, &CrewId::from("C1"), 2).unwrap();
    // Auto delivery acknowledges it right away.
    assert_eq!(resolved.state, ComplaintState::Acknowledged);
    assert_eq!(resolved.resolved_at, Some(2));
    assert_eq!(resolved.acknowledged_at, Some(2 + 100));
    let solved: Vec<_> = c
        .state()
        .outbox
        .values()
        .filter(|e| e.notification.recipient == Recipient::Citizen(cid.clone()))
        .collect();
    assert_eq!(solved.len(), 1);
    assert_eq!(solved[0].notification.body, RESOLUTION_MESSAGE);
    assert_replays(&c);
}

#[test]
fn resolution_waits_for_delivery_without_auto_deliver() {
    let mut c = Central::new(CentralConfig {
        auto_deliver: false,
        ..CentralConfig::default()
    });
    c.provision(topology(&["B1"], &[("C1", true)]), 0).unwrap();
    let cid = citizen(&mut c);
    let id = c.submit_complaint(&submission(&cid), 0).unwrap().complaint_id;
    c.dispatch_complaint(&id, &CrewId::from("C1"), 1).unwrap();
    let r = c.resolve_complaint(&id, &CrewId::from("C1"), 2).unwrap();
    assert_eq!(r.state, ComplaintState::Resolved);
    let nid = c.state().complaints[&id].solved_notification.clone().unwrap();
    let delivered = c.send_notification(&nid, 10).unwrap();
    assert_eq!(delivered.status, DeliveryStatus::Delivered);
    assert_eq!(delivered.notification.delivered_at, Some(110));
    assert_eq!(c.state().complaints[&id].complaint.state, ComplaintState::Acknowledged);
    let again = c.send_notification(&nid, 50).unwrap();
    assert_eq!(again, delivered);
}

#[test]
fn sms_latency_and_body() {
    let mut c = Central::new(CentralConfig {
        auto_deliver: false,
        ..CentralConfig::default()
    });
    c.provision(topology(&["B1"], &[("C9", false)]), 0).unwrap();
    c.ingest_batch(
        &BatchReport {
            v: 1,
            gateway_id: crate::domain::GatewayId::from("GW-Z1"),
            zone_id: ZoneId::from("Z1"),
            uplink: Uplink::Gsm,
            sent_at: 0,
            readings: vec![reading("B1", 1, 0.95)],
            missing: vec![],
        },
        0,
    )
    .unwrap();
    let entry = c.state().outbox.values().next().unwrap().clone();
    assert_eq!(entry.transport, Transport::MockSms);
    let sent = c.send_notification(&entry.notification.notification_id, 1_000).unwrap();
    assert_eq!(sent.notification.delivered_at, Some(3_000));
    let addr = sent.notification.address_text.clone().unwrap();
    assert!(sent.notification.body.contains(&addr));
}

#[test]
fn push_delivered_after_100ms() {
    let mut c = Central::new(CentralConfig {
        auto_deliver: false,
        ..CentralConfig::default()
    });
    c.provision(topology(&["B1"], &[("C1", true)]), 0).unwrap();
    let cid = citizen(&mut c);
    c.submit_complaint(&submission(&cid), 0).unwrap();
    let id = c.state().outbox.keys().next().unwrap().clone();
    let e = c.send_notification(&id, 500).unwrap();
    assert_eq!(e.notification.delivered_at, Some(600));
    assert_eq!(c.send_notification(&NotificationId::from("nope"), 0).unwrap_err().code(), "unknown_notification");
}

#[test]
fn sla_boundary_is_strict_and_sweep_idempotent() {
    let mut c = central();
    let cid = citizen(&mut c);
    let t = 1_000;
    c.submit_complaint(&submission(&cid), t).unwrap();
    assert!(c.sla_sweep(t + 3 * MS_PER_HOUR).is_empty());
    let breached = c.sla_sweep(t + 3 * MS_PER_HOUR + 1);
    assert_eq!(breached.len(), 1);
    assert_eq!(breached[0].kind, AlertKind::SlaBreach);
    assert!(c.sla_sweep(t + 3 * MS_PER_HOUR + 2).is_empty());
    assert!(!c.has_unflagged_open_complaints());
}

#[test]
fn resolved_complaints_never_breach() {
    let mut c = central();
    let cid = citizen(&mut c);
    let id = c.submit_complaint(&submission(&cid), 0).unwrap().complaint_id;
    c.dispatch_complaint(&id, &CrewId::from("C1"), 1).unwrap();
    c.resolve_complaint(&id, &CrewId::from("C1"), 2).unwrap();
    assert!(c.sla_sweep(10 * MS_PER_HOUR).is_empty());
}

#[test]
fn selectors() {
    let mut c = central();
    c.ingest_batch(&batch(vec![reading("B1", 1, 0.95)], 0), 0).unwrap();
    let snap = c.query_state(&"bins".parse().unwrap());
    assert_eq!(snap.seq, c.last_seq());
    let View::Bins(bins) = snap.view else { panic!() };
    assert_eq!(bins.len(), 3);
    assert_eq!(bins[0].led, LedColor::Red);
    assert_eq!(bins[0].last_report_seq, 1);

    let k = 2;
    let View::Events(ev) = c.query_state(&Selector::EventsSince(k)).view else { panic!() };
    assert_eq!(ev.first().unwrap().seq, k + 1);
    assert_eq!(ev.last().unwrap().seq, c.last_seq());
    assert!(ev.windows(2).all(|w| w[0].seq + 1 == w[1].seq));

    assert_eq!("events:7".parse::<Selector>().unwrap(), Selector::EventsSince(7));
    assert_eq!("trucks".parse::<Selector>().unwrap_err().code(), "unknown_selector");
    assert!("events:x".parse::<Selector>().is_err());
    let json = serde_json::to_value(c.query_state(&Selector::Alerts)).unwrap();
    assert!(json.get("seq").is_some() && json.get("alerts").is_some());
}

#[test]
fn crew_routing_prefers_least_loaded() {
    let mut c = central();
    let r1 = c.ingest_batch(&batch(vec![reading("B1", 1, 0.95)], 0), 0).unwrap();
    let r2 = c.ingest_batch(&batch(vec![reading("B2", 1, 0.95)], 1), 1).unwrap();
    let a1 = &c.state().alerts[&r1.alerts_raised[0]];
    let a2 = &c.state().alerts[&r2.alerts_raised[0]];
    assert_eq!(a1.assignee, Some(CrewId::from("C1")));
    assert_eq!(a2.assignee, Some(CrewId::from("C2")));
}

#[test]
fn provisioning_rejects_inconsistent_topology() {
    let mut c = Central::new(CentralConfig::default());
    let mut t = topology(&["B1"], &[]);
    t.bins[0].zone_id = ZoneId::from("Z2");
    assert_eq!(c.provision(t, 0).unwrap_err().code(), "invalid_topology");
    let mut t = topology(&["B1"], &[]);
    t.bins.clear();
    assert!(c.provision(t, 0).is_err());
}

#[test]
fn restore_from_snapshot_and_tail() {
    let mut c = central();
    let cid = citizen(&mut c);
    c.submit_complaint(&submission(&cid), 0).unwrap();
    let snap = c.state().clone();
    c.ingest_batch(&batch(vec![reading("B1", 1, 0.95)], 0), 5).unwrap();
    let restored = Central::restore(CentralConfig::default(), snap, c.events().to_vec()).unwrap();
    assert_eq!(restored.state(), c.state());
}
