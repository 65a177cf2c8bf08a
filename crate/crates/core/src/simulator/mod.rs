//! Discrete-event city simulation driving an in-process [`Central`].
//!
//! Time advances in fixed ticks. Within a tick, queued events due strictly
//! before the tick boundary run first, then waste arrivals and power are
//! applied at the boundary, then events due exactly at the boundary run. Ties
//! in the queue break by insertion order.
//!
//! Every call into `central` is logged as `central.<op>` with its arguments,
//! so a log can be replayed against a live service.

pub mod log;
pub mod metrics;
pub mod rng;
pub mod scenario;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::central::{Central, CentralConfig, CentralError, ComplaintSubmission, EventBody};
use crate::domain::{
    AlertSource, BinId, CitizenId, ComplaintId, ComplaintState, CrewId, GeoPoint, Millis, NotificationId, Recipient,
    StationId, Topic, Zone, ZoneId, MS_PER_SECOND,
};
use crate::gateway::{BatchReport, BinSource, Gateway, PollOutcome, Reading, TransmitResult};
use crate::sensing::{self, LedColor, StationObservation};

pub use log::{parse_log, EventLog, EventLogEntry, LogError};
pub use metrics::Metrics;
pub use scenario::{BinSpec, CrewSpec, ScenarioConfig, ScenarioError, StationSpec, ZoneSpec};

use rng::SimRng;

/// How long after the horizon gateways keep flushing their backlogs.
const DRAIN_LIMIT_MS: Millis = 7 * 86_400_000;
/// A bin that died comes back once solar charge brings it to this level.
const RESTART_BATTERY_PCT: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Bin(BinId),
    Station(StationId),
    Complaint(ComplaintId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrewError {
    #[error("crew_busy: {0}")]
    CrewBusy(CrewId),
    #[error("unknown_target: {0:?}")]
    UnknownTarget(Target),
    #[error("unknown_crew: {0}")]
    UnknownCrew(CrewId),
}

/// Pours `liters` into a receptacle holding `level` of `capacity`; returns the
/// new level and what spilled.
pub fn pour(level: f64, capacity: f64, liters: f64) -> (f64, f64) {
    let room = (capacity - level).max(0.0);
    if liters >= room {
        (capacity, liters - room)
    } else {
        (level + liters, 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct SimBin {
    pub spec: BinSpec,
    pub liters: f64,
    pub battery_pct: f64,
    pub online: bool,
    pub seq: u64,
    pub led: LedColor,
    pub overflowing: bool,
}

impl SimBin {
    pub fn fill(&self) -> f64 {
        (self.liters / self.spec.capacity_liters).clamp(0.0, 1.0)
    }

    /// Fill as the ultrasonic sensor reports it.
    pub fn measured_fill(&self) -> f64 {
        let d = sensing::distance_for(self.fill(), &self.spec.geometry);
        sensing::fill_from_distance(d, &self.spec.geometry).expect("distance_for stays in range")
    }
}

#[derive(Clone, Debug)]
pub struct SimStation {
    pub spec: StationSpec,
    pub liters: f64,
    pub overflowing: bool,
}

impl SimStation {
    /// Stations can be piled past the rim up to this multiple of capacity.
    pub const PILE_LIMIT: f64 = 1.2;

    pub fn fill_estimate(&self) -> f64 {
        (self.liters / self.spec.capacity_liters).clamp(0.0, Self::PILE_LIMIT)
    }
}

#[derive(Clone, Debug)]
pub struct SimCrew {
    pub spec: CrewSpec,
    pub busy: Option<Target>,
    pub queue: VecDeque<Target>,
}

#[derive(Clone, Debug)]
enum Pending {
    Poll(ZoneId),
    Deliver(BatchReport),
    Capture(StationId),
    CrewArrive(CrewId),
    Notify { crew: CrewId, notification: NotificationId },
    ComplaintDue,
    SlaSweep,
    DailyPickup { day: u64 },
    WifiOutage { zone: ZoneId, down: bool },
}

struct Scheduled {
    at: Millis,
    order: u64,
    event: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap; invert to pop the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.order).cmp(&(self.at, self.order))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub liters_in: f64,
    pub liters_collected: f64,
    pub overflow_liters: f64,
}

/// FNV-1a, used to spread zone polls and camera captures over their period.
fn phase_of(id: &str, period_ms: Millis) -> Millis {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let period_s = (period_ms / MS_PER_SECOND).max(1) as u64;
    (h % period_s) as Millis * MS_PER_SECOND
}

const DESCRIPTIONS: [&str; 5] = [
    "Garbage dumped beside the road",
    "Bin lid broken, waste spilling out",
    "Waste not collected for days",
    "Bad smell near the market",
    "",
];

pub struct World {
    config: ScenarioConfig,
    now: Millis,
    bins: BTreeMap<BinId, SimBin>,
    stations: BTreeMap<StationId, SimStation>,
    zones: BTreeMap<ZoneId, Zone>,
    gateways: BTreeMap<ZoneId, Gateway>,
    crews: BTreeMap<CrewId, SimCrew>,
    citizens: Vec<CitizenId>,
    central: Central,
    queue: BinaryHeap<Scheduled>,
    next_order: u64,
    rng: SimRng,
    log: EventLog,
    synced: usize,
    totals: Totals,
    photos: u64,
    past_horizon: bool,
}

struct Sensors<'a> {
    bins: &'a mut BTreeMap<BinId, SimBin>,
    rng: &'a mut SimRng,
    ambient_c: f64,
    organic_c: f64,
}

impl BinSource for Sensors<'_> {
    fn read(&mut self, bin_id: &BinId, _now: Millis) -> Option<Reading> {
        let bin = self.bins.get_mut(bin_id)?;
        if !bin.online {
            return None;
        }
        bin.seq += 1;
        let temp = self.ambient_c + self.organic_c * bin.fill() + rng::gaussian(0.0, 0.2, self.rng);
        Some(Reading {
            bin_id: bin_id.clone(),
            seq: bin.seq,
            distance_cm: sensing::distance_for(bin.fill(), &bin.spec.geometry),
            inner_temp_c: temp,
            battery_pct: bin.battery_pct,
        })
    }
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let central = Central::new(CentralConfig {
            thresholds: config.thresholds,
            ambient_temp_c: config.ambient_temp_c,
            ..CentralConfig::default()
        });
        let t = config.thresholds;
        let bins = config
            .bins
            .iter()
            .map(|spec| {
                let mut bin = SimBin {
                    spec: spec.clone(),
                    liters: spec.initial_fill * spec.capacity_liters,
                    battery_pct: spec.initial_battery_pct,
                    online: spec.initial_battery_pct > 0.0,
                    seq: 0,
                    led: LedColor::Green,
                    overflowing: false,
                };
                bin.led = sensing::led_state(bin.measured_fill(), &t);
                (spec.bin_id.clone(), bin)
            })
            .collect();
        let stations = config
            .stations
            .iter()
            .map(|spec| {
                (
                    spec.station_id.clone(),
                    SimStation {
                        spec: spec.clone(),
                        liters: 0.0,
                        overflowing: false,
                    },
                )
            })
            .collect();
        let zones: BTreeMap<ZoneId, Zone> = config.zones().into_iter().map(|z| (z.zone_id.clone(), z)).collect();
        let gateways = zones.keys().map(|z| (z.clone(), Gateway::for_zone(z))).collect();
        let crews = config
            .crews
            .iter()
            .map(|spec| {
                (
                    spec.crew_id.clone(),
                    SimCrew {
                        spec: spec.clone(),
                        busy: None,
                        queue: VecDeque::new(),
                    },
                )
            })
            .collect();

        let mut world = World {
            rng: rng::seeded(config.seed),
            config,
            now: 0,
            bins,
            stations,
            zones,
            gateways,
            crews,
            citizens: Vec::new(),
            central,
            queue: BinaryHeap::new(),
            next_order: 0,
            log: EventLog::new(),
            synced: 0,
            totals: Totals::default(),
            photos: 0,
            past_horizon: false,
        };
        world.log.push(
            0,
            "header",
            json!({
                "schema": scenario::SCENARIO_SCHEMA,
                "rng": rng::RNG_ALGORITHM,
                "rng_source": rng::RNG_SOURCE,
                "seed": world.config.seed,
                "scenario": world.config,
            }),
        );
        let initial: f64 = world.bins.values().map(|b| b.liters).sum();
        world.totals.liters_in = initial;

        let topology = world.config.topology();
        world.central_call("provision", json!({ "topology": topology }), |c, now| c.provision(topology, now));
        for i in 0..world.config.citizens {
            let nid = format!("{:013}", 1_990_000_000_000u64 + u64::from(i) * 7_919);
            let name = format!("Citizen {}", i + 1);
            let phone = format!("+8801{:09}", 700_000_000 + i);
            let args = json!({ "nid": nid, "name": name, "phone": phone });
            if let Some(c) = world.central_call("register_citizen", args, |c, now| {
                c.register_citizen(&nid, &name, &phone, now)
            }) {
                world.citizens.push(c.citizen_id);
            }
        }
        world.schedule_initial();
        Ok(world)
    }

    fn schedule_initial(&mut self) {
        let zones: Vec<(ZoneId, Millis)> = self.zones.values().map(|z| (z.zone_id.clone(), z.poll_interval_ms())).collect();
        for (id, period) in zones {
            self.schedule(phase_of(id.as_str(), period), Pending::Poll(id));
        }
        let stations: Vec<(StationId, Millis)> = self
            .stations
            .values()
            .map(|s| (s.spec.station_id.clone(), s.spec.capture_interval_s as Millis * MS_PER_SECOND))
            .collect();
        for (id, period) in stations {
            self.schedule(phase_of(id.as_str(), period), Pending::Capture(id));
        }
        for z in self.config.zones.clone() {
            for [start, end] in z.wifi_outages {
                let (zone, s, e) = (z.zone_id.clone(), start as Millis, end as Millis);
                self.schedule(s * MS_PER_SECOND, Pending::WifiOutage { zone: zone.clone(), down: true });
                self.schedule(e * MS_PER_SECOND, Pending::WifiOutage { zone, down: false });
            }
        }
        if let Some(gap) = rng::exponential_ms(self.config.complaint_rate_per_day, &mut self.rng) {
            self.schedule(gap, Pending::ComplaintDue);
        }
        self.schedule(self.config.sla_sweep_interval_s as Millis * MS_PER_SECOND, Pending::SlaSweep);
        if let Some(t) = self.config.daily_pickup_s {
            self.schedule(t as Millis * MS_PER_SECOND, Pending::DailyPickup { day: 0 });
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn central(&self) -> &Central {
        &self.central
    }

    pub fn bin(&self, id: &BinId) -> Option<&SimBin> {
        self.bins.get(id)
    }

    pub fn station(&self, id: &StationId) -> Option<&SimStation> {
        self.stations.get(id)
    }

    pub fn crew(&self, id: &CrewId) -> Option<&SimCrew> {
        self.crews.get(id)
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn liters_held(&self) -> f64 {
        self.bins.values().map(|b| b.liters).sum::<f64>() + self.stations.values().map(|s| s.liters).sum::<f64>()
    }

    fn schedule(&mut self, at: Millis, event: Pending) {
        self.queue.push(Scheduled {
            at,
            order: self.next_order,
            event,
        });
        self.next_order += 1;
    }

    /// Advances the clock by `dt_ms`.
    pub fn step(&mut self, dt_ms: Millis) {
        assert!(dt_ms > 0, "step needs a positive dt");
        let target = self.now + dt_ms;
        self.run_events_while(|at| at < target);
        self.now = target;
        self.apply_physics(dt_ms);
        self.log.push(target, "clock", json!({ "now": target }));
        self.run_events_while(|at| at <= target);
    }

    fn run_events_while(&mut self, due: impl Fn(Millis) -> bool) {
        while self.queue.peek().is_some_and(|s| due(s.at)) {
            let s = self.queue.pop().expect("peeked");
            self.now = self.now.max(s.at);
            self.handle(s.event);
        }
    }

    fn apply_physics(&mut self, dt_ms: Millis) {
        let at = self.now;
        let dt_s = dt_ms as f64 / 1_000.0;
        let dt_h = dt_s / 3_600.0;
        let daylight = self.config.is_daylight(at);
        let t = self.config.thresholds;
        let (drain, charge) = (self.config.battery_drain_pct_per_hour, self.config.solar_charge_pct_per_hour);

        for (id, bin) in self.bins.iter_mut() {
            let liters = rng::waste_arrival_volume(bin.spec.arrival_rate_per_hour, bin.spec.mean_parcel_liters, dt_s, &mut self.rng);
            if liters > 0.0 {
                let (level, spilled) = pour(bin.liters, bin.spec.capacity_liters, liters);
                bin.liters = level;
                self.totals.liters_in += liters;
                self.totals.overflow_liters += spilled;
                self.log.push(
                    at,
                    "arrival",
                    json!({ "target": Target::Bin(id.clone()), "liters": liters, "overflow_liters": spilled, "fill": bin.fill() }),
                );
                if level >= bin.spec.capacity_liters && !bin.overflowing {
                    bin.overflowing = true;
                    self.log.push(at, "overflow_start", json!({ "target": Target::Bin(id.clone()) }));
                }
                let led = sensing::led_state(bin.measured_fill(), &t);
                if led != bin.led {
                    self.log.push(
                        at,
                        "led",
                        json!({ "bin_id": id, "from": bin.led, "to": led, "fill": bin.measured_fill() }),
                    );
                    bin.led = led;
                }
            }

            let mut pct = bin.battery_pct - drain * dt_h;
            if daylight {
                pct += charge * dt_h;
            }
            bin.battery_pct = pct.clamp(0.0, 100.0);
            if bin.online && bin.battery_pct <= 0.0 {
                bin.online = false;
                self.log.push(at, "battery", json!({ "bin_id": id, "online": false, "battery_pct": bin.battery_pct }));
            } else if !bin.online && bin.battery_pct >= RESTART_BATTERY_PCT {
                bin.online = true;
                self.log.push(at, "battery", json!({ "bin_id": id, "online": true, "battery_pct": bin.battery_pct }));
            }
        }

        for (id, st) in self.stations.iter_mut() {
            let liters = rng::waste_arrival_volume(st.spec.arrival_rate_per_hour, st.spec.mean_parcel_liters, dt_s, &mut self.rng);
            if liters <= 0.0 {
                continue;
            }
            let (level, spilled) = pour(st.liters, st.spec.capacity_liters * SimStation::PILE_LIMIT, liters);
            st.liters = level;
            self.totals.liters_in += liters;
            self.totals.overflow_liters += spilled;
            self.log.push(
                at,
                "arrival",
                json!({ "target": Target::Station(id.clone()), "liters": liters, "overflow_liters": spilled, "fill": st.fill_estimate() }),
            );
            if st.liters > st.spec.capacity_liters && !st.overflowing {
                st.overflowing = true;
                self.log.push(at, "overflow_start", json!({ "target": Target::Station(id.clone()) }));
            }
        }

        if daylight && !self.bins.is_empty() && charge > 0.0 {
            self.log.push(at, "solar_charge", json!({ "bins": self.bins.len(), "pct": charge * dt_h }));
        }
    }

    fn handle(&mut self, event: Pending) {
        if self.past_horizon {
            match event {
                Pending::Poll(zone) => self.flush(zone),
                Pending::Deliver(batch) => self.deliver(batch),
                _ => {}
            }
            return;
        }
        match event {
            Pending::Poll(zone) => self.poll(zone),
            Pending::Deliver(batch) => self.deliver(batch),
            Pending::Capture(station) => self.capture(station),
            Pending::CrewArrive(crew) => self.crew_arrive(crew),
            Pending::Notify { crew, notification } => self.crew_notified(crew, notification),
            Pending::ComplaintDue => self.citizen_complaint(),
            Pending::SlaSweep => {
                if self.central.has_unflagged_open_complaints() {
                    self.central_call("sla_sweep", json!({}), |c, now| Ok::<_, CentralError>(c.sla_sweep(now)));
                }
                self.schedule(self.now + self.config.sla_sweep_interval_s as Millis * MS_PER_SECOND, Pending::SlaSweep);
            }
            Pending::DailyPickup { day } => self.pickup_round(day),
            Pending::WifiOutage { zone, down } => {
                if let Some(z) = self.zones.get_mut(&zone) {
                    z.wifi_outage = down;
                }
                self.log.push(self.now, "wifi_outage", json!({ "zone_id": zone, "down": down }));
            }
        }
    }

    fn poll(&mut self, zone_id: ZoneId) {
        let zone = self.zones[&zone_id].clone();
        self.schedule(self.now + zone.poll_interval_ms(), Pending::Poll(zone_id.clone()));
        let gateway = self.gateways.get_mut(&zone_id).expect("gateway per zone");
        let mut sensors = Sensors {
            bins: &mut self.bins,
            rng: &mut self.rng,
            ambient_c: self.config.ambient_temp_c,
            organic_c: self.config.organic_heat_c,
        };
        let batch = match gateway.poll_zone(&zone, &mut sensors, self.now) {
            PollOutcome::Batch(b) => b,
            PollOutcome::NotDue => return,
        };
        let seqs: Vec<_> = batch.readings.iter().map(|r| json!([r.bin_id, r.seq])).collect();
        self.log.push(
            self.now,
            "poll",
            json!({ "zone_id": zone_id, "gateway_id": batch.gateway_id, "readings": seqs, "missing": batch.missing }),
        );
        self.forward(&zone, Some(batch));
    }

    fn flush(&mut self, zone_id: ZoneId) {
        let zone = self.zones[&zone_id].clone();
        if self.gateways[&zone_id].backlog.is_empty() {
            return;
        }
        self.forward(&zone, None);
        if !self.gateways[&zone_id].backlog.is_empty() && self.now < self.config.duration_ms() + DRAIN_LIMIT_MS {
            self.schedule(self.now + zone.poll_interval_ms(), Pending::Poll(zone_id));
        }
    }

    fn forward(&mut self, zone: &Zone, fresh: Option<BatchReport>) {
        let uplink = crate::gateway::select_uplink(zone);
        let gateway = self.gateways.get_mut(&zone.zone_id).expect("gateway per zone");
        let steps = gateway.forward(fresh, uplink, &self.config.channel, &mut self.rng);
        for step in steps {
            let (result, attempts) = match step.result {
                TransmitResult::Ack { attempts, .. } => ("ack", attempts),
                TransmitResult::Failed { attempts } => ("failed", attempts),
                TransmitResult::Buffered { attempts } => ("buffered", attempts),
            };
            self.log.push(
                self.now,
                "transmit",
                json!({
                    "zone_id": zone.zone_id,
                    "sent_at": step.batch.sent_at,
                    "uplink": uplink,
                    "result": result,
                    "attempts": attempts,
                    "arrivals_ms": step.arrivals_ms,
                }),
            );
            for offset in &step.arrivals_ms {
                self.schedule(self.now + offset, Pending::Deliver(step.batch.clone()));
            }
        }
    }

    fn deliver(&mut self, batch: BatchReport) {
        self.central_call("ingest_batch", json!({ "batch": batch }), |c, now| c.ingest_batch(&batch, now));
    }

    fn capture(&mut self, station_id: StationId) {
        let st = &self.stations[&station_id];
        let period = st.spec.capture_interval_s as Millis * MS_PER_SECOND;
        let is_night = !self.config.is_daylight(self.now);
        let light_failed = self.rng.random::<f64>() < st.spec.light_failure_prob;
        let observation = StationObservation {
            station_id: station_id.clone(),
            captured_at: self.now,
            is_night,
            light_on: is_night && !light_failed,
            fill_estimate: st.fill_estimate(),
            spillage_seen: st.liters > st.spec.capacity_liters,
        };
        self.schedule(self.now + period, Pending::Capture(station_id));
        self.central_call("ingest_station_observation", json!({ "observation": observation }), |c, now| {
            c.ingest_station_observation(&observation, now)
        });
    }

    fn citizen_complaint(&mut self) {
        if let Some(gap) = rng::exponential_ms(self.config.complaint_rate_per_day, &mut self.rng) {
            self.schedule(self.now + gap, Pending::ComplaintDue);
        }
        if self.citizens.is_empty() {
            return;
        }
        let citizen = self.citizens[self.rng.random_range(0..self.citizens.len())].clone();
        let spots: Vec<GeoPoint> = self
            .bins
            .values()
            .map(|b| b.spec.location)
            .chain(self.stations.values().map(|s| s.spec.location))
            .collect();
        let base = if spots.is_empty() {
            GeoPoint { lat: 23.7806, lon: 90.2794 }
        } else {
            spots[self.rng.random_range(0..spots.len())]
        };
        let mut jitter = |p: GeoPoint| GeoPoint {
            lat: (p.lat + self.rng.random_range(-0.002..0.002)).clamp(-90.0, 90.0),
            lon: (p.lon + self.rng.random_range(-0.002..0.002)).clamp(-180.0, 180.0),
        };
        let device_location = jitter(base);
        let manual = jitter(base);
        let location_override = (self.rng.random::<f64>() < 0.2).then_some(manual);
        let description = DESCRIPTIONS[self.rng.random_range(0..DESCRIPTIONS.len())].to_owned();
        self.photos += 1;
        let submission = ComplaintSubmission {
            citizen_id: citizen,
            photo_ref: format!("photo-{:06}.jpg", self.photos),
            device_location,
            location_override,
            description,
        };
        self.central_call("submit_complaint", json!({ "submission": submission }), |c, now| {
            c.submit_complaint(&submission, now)
        });
    }

    fn pickup_round(&mut self, day: u64) {
        self.log.push(self.now, "pickup_round", json!({ "day": day }));
        let next = (day + 1) as Millis * scenario::SECONDS_PER_DAY as Millis * MS_PER_SECOND;
        if let Some(t) = self.config.daily_pickup_s {
            self.schedule(next + t as Millis * MS_PER_SECOND, Pending::DailyPickup { day: day + 1 });
        }
        let crews: Vec<CrewId> = self.crews.keys().cloned().collect();
        if crews.is_empty() {
            return;
        }
        let targets: Vec<Target> = self
            .bins
            .keys()
            .cloned()
            .map(Target::Bin)
            .chain(self.stations.keys().cloned().map(Target::Station))
            .collect();
        for (i, target) in targets.into_iter().enumerate() {
            self.assign(&crews[i % crews.len()], target);
        }
    }

    fn target_exists(&self, target: &Target) -> bool {
        match target {
            Target::Bin(b) => self.bins.contains_key(b),
            Target::Station(s) => self.stations.contains_key(s),
            Target::Complaint(c) => self.central.state().complaints.contains_key(c),
        }
    }

    /// Sends an idle crew to `target`; it arrives after its travel time.
    pub fn crew_service(&mut self, crew_id: &CrewId, target: Target) -> Result<Millis, CrewError> {
        let crew = self.crews.get(crew_id).ok_or_else(|| CrewError::UnknownCrew(crew_id.clone()))?;
        if crew.busy.is_some() {
            return Err(CrewError::CrewBusy(crew_id.clone()));
        }
        if !self.target_exists(&target) {
            return Err(CrewError::UnknownTarget(target));
        }
        let eta = self.now + crew.spec.travel_time_s as Millis * MS_PER_SECOND;
        self.log.push(self.now, "crew_dispatch", json!({ "crew_id": crew_id, "target": target, "eta": eta }));
        self.crews.get_mut(crew_id).expect("checked").busy = Some(target);
        self.schedule(eta, Pending::CrewArrive(crew_id.clone()));
        Ok(eta)
    }

    /// Hands `target` to a crew now if it is idle, otherwise queues it.
    fn assign(&mut self, crew_id: &CrewId, target: Target) {
        let crew = &self.crews[crew_id];
        if crew.busy.as_ref() == Some(&target) || crew.queue.contains(&target) {
            return;
        }
        if crew.busy.is_none() {
            self.crew_service(crew_id, target).expect("idle crew, known target");
        } else {
            self.log.push(self.now, "crew_queue", json!({ "crew_id": crew_id, "target": target }));
            self.crews.get_mut(crew_id).expect("exists").queue.push_back(target);
        }
    }

    fn crew_arrive(&mut self, crew_id: CrewId) {
        let Some(target) = self.crews.get_mut(&crew_id).and_then(|c| c.busy.take()) else {
            return;
        };
        let t = self.config.thresholds;
        match &target {
            Target::Bin(id) => {
                let bin = self.bins.get_mut(id).expect("target checked at dispatch");
                let liters = std::mem::take(&mut bin.liters);
                self.totals.liters_collected += liters;
                self.log.push(self.now, "collection", json!({ "crew_id": crew_id, "target": target, "liters": liters }));
                if std::mem::take(&mut bin.overflowing) {
                    self.log.push(self.now, "overflow_end", json!({ "target": target }));
                }
                let led = sensing::led_state(bin.measured_fill(), &t);
                if led != bin.led {
                    self.log.push(self.now, "led", json!({ "bin_id": id, "from": bin.led, "to": led, "fill": bin.measured_fill() }));
                    bin.led = led;
                }
            }
            Target::Station(id) => {
                let st = self.stations.get_mut(id).expect("target checked at dispatch");
                let liters = std::mem::take(&mut st.liters);
                self.totals.liters_collected += liters;
                self.log.push(self.now, "collection", json!({ "crew_id": crew_id, "target": target, "liters": liters }));
                if std::mem::take(&mut st.overflowing) {
                    self.log.push(self.now, "overflow_end", json!({ "target": target }));
                }
            }
            Target::Complaint(id) => {
                self.log.push(self.now, "complaint_service", json!({ "crew_id": crew_id, "complaint_id": id }));
                let ready = self.central.state().complaints.get(id).is_some_and(|r| {
                    r.complaint.state == ComplaintState::Dispatched && r.complaint.assigned_crew.as_ref() == Some(&crew_id)
                });
                if ready {
                    let (cid, crew) = (id.clone(), crew_id.clone());
                    self.central_call("resolve_complaint", json!({ "complaint_id": cid, "crew_id": crew }), |c, now| {
                        c.resolve_complaint(&cid, &crew, now)
                    });
                }
            }
        }
        if let Some(next) = self.crews.get_mut(&crew_id).and_then(|c| c.queue.pop_front()) {
            self.crew_service(&crew_id, next).expect("crew just became idle");
        }
    }

    /// A crew's phone buzzes. Responsive crews act on what it says.
    fn crew_notified(&mut self, crew_id: CrewId, notification: NotificationId) {
        if !self.crews.get(&crew_id).is_some_and(|c| c.spec.responsive) {
            return;
        }
        let state = self.central.state();
        let Some(entry) = state.outbox.get(&notification) else {
            return;
        };
        let complaint_state = |id: &ComplaintId| state.complaints.get(id).map(|r| r.complaint.state);
        let mut dispatch: Option<ComplaintId> = None;
        let mut job: Option<Target> = None;
        match &entry.notification.topic {
            Topic::Alert(alert_id) => {
                let alert = &state.alerts[alert_id];
                if alert.cleared_at.is_some() {
                    return;
                }
                match &alert.source {
                    AlertSource::Bin(b) if self.config.alerting_enabled => job = Some(Target::Bin(b.clone())),
                    AlertSource::Station(s) if self.config.alerting_enabled => job = Some(Target::Station(s.clone())),
                    AlertSource::Complaint(c) if complaint_state(c) == Some(ComplaintState::Submitted) => {
                        dispatch = Some(c.clone())
                    }
                    _ => {}
                }
            }
            Topic::ComplaintFiled(c) if complaint_state(c) == Some(ComplaintState::Submitted) => dispatch = Some(c.clone()),
            Topic::ComplaintAssigned(c) => {
                let mine = state.complaints.get(c).is_some_and(|r| {
                    r.complaint.state == ComplaintState::Dispatched && r.complaint.assigned_crew.as_ref() == Some(&crew_id)
                });
                if mine {
                    job = Some(Target::Complaint(c.clone()));
                }
            }
            _ => {}
        }
        if let Some(c) = dispatch {
            let crew = crew_id.clone();
            self.central_call("dispatch_complaint", json!({ "complaint_id": c, "crew_id": crew }), |central, now| {
                central.dispatch_complaint(&c, &crew, now)
            });
        }
        if let Some(target) = job {
            self.assign(&crew_id, target);
        }
    }

    /// Runs one command against central, logging the call and mirroring the
    /// events it produced.
    fn central_call<T>(
        &mut self,
        op: &str,
        args: serde_json::Value,
        f: impl FnOnce(&mut Central, Millis) -> Result<T, CentralError>,
    ) -> Option<T> {
        self.log.push(self.now, &format!("central.{op}"), args);
        let out = match f(&mut self.central, self.now) {
            Ok(v) => Some(v),
            Err(e) => {
                self.log.push(self.now, "central.error", json!({ "op": op, "error": e.code(), "message": e.to_string() }));
                None
            }
        };
        self.mirror_central();
        out
    }

    fn mirror_central(&mut self) {
        let fresh: Vec<_> = self.central.events()[self.synced..].to_vec();
        self.synced = self.central.events().len();
        for ev in fresh {
            match ev.body {
                EventBody::AlertRaised { alert } => self.log.push(
                    ev.at,
                    "alert",
                    json!({ "alert_id": alert.alert_id, "source": alert.source, "kind": alert.kind, "assignee": alert.assignee }),
                ),
                EventBody::AlertCleared { alert_id, .. } => {
                    self.log.push(ev.at, "alert_cleared", json!({ "alert_id": alert_id }))
                }
                EventBody::NotificationDelivered {
                    notification_id,
                    delivered_at,
                } => {
                    let n = &self.central.state().outbox[&notification_id].notification;
                    let recipient = n.recipient.clone();
                    self.log.push(
                        ev.at,
                        "notification_delivered",
                        json!({
                            "notification_id": notification_id,
                            "recipient": recipient,
                            "topic": n.topic,
                            "channel": n.channel,
                            "delivered_at": delivered_at,
                        }),
                    );
                    if let Recipient::Crew(crew) = recipient {
                        if !self.past_horizon {
                            self.schedule(
                                delivered_at,
                                Pending::Notify {
                                    crew,
                                    notification: notification_id,
                                },
                            );
                        }
                    }
                }
                EventBody::ComplaintSubmitted { complaint } => self.log.push(
                    ev.at,
                    "complaint",
                    json!({ "complaint_id": complaint.complaint_id, "state": ComplaintState::Submitted }),
                ),
                EventBody::ComplaintDispatched { complaint_id, crew_id } => self.log.push(
                    ev.at,
                    "complaint",
                    json!({ "complaint_id": complaint_id, "state": ComplaintState::Dispatched, "crew_id": crew_id }),
                ),
                EventBody::ComplaintResolved { complaint_id, crew_id } => self.log.push(
                    ev.at,
                    "complaint",
                    json!({ "complaint_id": complaint_id, "state": ComplaintState::Resolved, "crew_id": crew_id }),
                ),
                EventBody::ComplaintAcknowledged { complaint_id, .. } => self.log.push(
                    ev.at,
                    "complaint",
                    json!({ "complaint_id": complaint_id, "state": ComplaintState::Acknowledged }),
                ),
                _ => {}
            }
        }
    }

    /// Runs to the configured duration, then lets gateways flush what they
    /// still hold.
    pub fn run(&mut self) {
        let end = self.config.duration_ms();
        let tick = self.config.tick_s as Millis * MS_PER_SECOND;
        while self.now < end {
            self.step(tick.min(end - self.now));
        }
        self.past_horizon = true;
        let held = self.liters_held();
        self.log.push(
            self.now,
            "horizon",
            json!({
                "liters_in": self.totals.liters_in,
                "liters_collected": self.totals.liters_collected,
                "overflow_liters": self.totals.overflow_liters,
                "liters_held": held,
            }),
        );
        let zones: Vec<ZoneId> = self.zones.keys().cloned().collect();
        for z in zones {
            self.schedule(self.now, Pending::Poll(z));
        }
        self.run_events_while(|_| true);
        let backlog: usize = self.gateways.values().map(|g| g.backlog.len()).sum();
        self.log.push(self.now, "run_end", json!({ "backlog": backlog }));
    }
}

/// What a finished run leaves behind.
pub struct RunOutput {
    pub log_text: String,
    pub metrics: Metrics,
    pub world: World,
}

/// Runs a scenario to completion. Metrics come from re-reading the log text,
/// exactly as `report` would.
pub fn run_scenario(config: ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    let mut world = World::new(config)?;
    world.run();
    let log_text = world.log().to_text();
    let entries = parse_log(&log_text).expect("the simulator writes well-formed logs");
    let metrics = metrics::compute(&entries);
    Ok(RunOutput { log_text, metrics, world })
}
