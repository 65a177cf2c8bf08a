mod common;

use std::io::{BufRead, BufReader};
use std::time::Duration;

use serde_json::{json, Value};

use civicbin::central::Selector;
use civicbin::simulator::{run_scenario, ScenarioConfig};
use common::{run, write_town, Server, TOWN};

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(20)).build().unwrap()
}

fn get(server: &Server, path: &str) -> Value {
    let resp = client().get(server.url(path)).send().unwrap();
    assert!(resp.status().is_success(), "{path}: {}", resp.status());
    serde_json::from_str(&resp.text().unwrap()).unwrap()
}

fn post(server: &Server, path: &str, at: i64, body: Value) -> (u16, Value) {
    let resp = client()
        .post(server.url(path))
        .header("x-civicbin-now-ms", at.to_string())
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .unwrap();
    let status = resp.status().as_u16();
    (status, serde_json::from_str(&resp.text().unwrap()).unwrap_or(Value::Null))
}

/// Reads `n` SSE messages, returning (id, event, data) triples.
fn read_sse(server: &Server, last_event_id: Option<u64>, n: usize) -> Vec<(u64, String, Value)> {
    let mut req = client().get(server.url("/api/v1/events"));
    if let Some(id) = last_event_id {
        req = req.header("last-event-id", id.to_string());
    }
    let resp = req.send().unwrap();
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut lines = BufReader::new(resp).lines();
    let mut out = Vec::new();
    let (mut id, mut event, mut data) = (None, String::new(), String::new());
    while out.len() < n {
        let line = lines.next().expect("stream open").unwrap();
        if line.is_empty() {
            if let Some(i) = id.take() {
                out.push((i, std::mem::take(&mut event), serde_json::from_str(&data).unwrap()));
            }
            data.clear();
        } else if let Some(v) = line.strip_prefix("id:") {
            id = Some(v.trim().parse().unwrap());
        } else if let Some(v) = line.strip_prefix("event:") {
            event = v.trim().to_owned();
        } else if let Some(v) = line.strip_prefix("data:") {
            data.push_str(v.trim_start());
        }
    }
    out
}

#[test]
fn seeded_service_matches_the_local_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_town(dir.path());
    let server = Server::start(&["--virtual-clock"], None);
    let out = run(&["seed", &server.base, scenario.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("sent "));

    let local = run_scenario(ScenarioConfig::from_toml(TOWN, "town").unwrap()).unwrap();
    let central = local.world.central();
    for (path, sel) in [
        ("/api/v1/bins", Selector::Bins),
        ("/api/v1/stations", Selector::Stations),
        ("/api/v1/alerts", Selector::Alerts),
        ("/api/v1/complaints", Selector::Complaints),
        ("/api/v1/notifications", Selector::Notifications),
    ] {
        let remote = get(&server, path);
        let expected = serde_json::to_value(central.query_state(&sel)).unwrap();
        assert_eq!(remote, expected, "{path}");
    }
    let complaints = get(&server, "/api/v1/complaints");
    assert!(complaints["seq"].as_u64().unwrap() > 0);
}

#[test]
fn api_errors_and_sse_resume() {
    let server = Server::start(&["--virtual-clock"], None);
    let topology = json!({
        "zones": [{"zone_id": "Z1", "wifi_available": true, "bin_ids": [], "poll_interval_s": 600}],
        "bins": [],
        "stations": [],
        "crews": [{"crew_id": "C1", "smartphone": true}],
    });
    let (status, body) = post(&server, "/api/v1/topology", 0, topology);
    assert_eq!(status, 200, "{body}");

    let (status, body) = post(&server, "/api/v1/citizens", 10, json!({"nid": "12ab", "name": "x", "phone": "1"}));
    assert_eq!(status, 422);
    assert_eq!(body["error"], "format_error");
    let (status, citizen) = post(&server, "/api/v1/citizens", 10, json!({"nid": "1234567890", "name": "x", "phone": "1"}));
    assert_eq!(status, 201);
    let (status, body) = post(&server, "/api/v1/citizens", 11, json!({"nid": "1234567890", "name": "y", "phone": "2"}));
    assert_eq!((status, body["error"].as_str()), (409, Some("duplicate_nid")));

    let complaint = json!({
        "citizen_id": citizen["citizen_id"],
        "photo_ref": "p.jpg",
        "device_location": {"lat": 23.78, "lon": 90.4},
        "location_override": null,
        "description": "",
    });
    let (status, c) = post(&server, "/api/v1/complaints", 20, complaint);
    assert_eq!(status, 201, "{c}");
    let id = c["complaint_id"].as_str().unwrap().to_owned();
    let crew = json!({"crew_id": "C1"});
    let (status, body) = post(&server, &format!("/api/v1/complaints/{id}/resolve"), 30, crew.clone());
    assert_eq!((status, body["error"].as_str()), (409, Some("invalid_transition")));
    assert_eq!(post(&server, "/api/v1/complaints/CMP-999999/dispatch", 30, crew.clone()).0, 404);
    assert_eq!(post(&server, &format!("/api/v1/complaints/{id}/dispatch"), 40, crew.clone()).0, 200);
    assert_eq!(post(&server, &format!("/api/v1/complaints/{id}/resolve"), 50, crew).0, 200);

    let notes = get(&server, "/api/v1/notifications");
    let bodies: Vec<&str> = notes["notifications"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|n| n["notification"]["body"].as_str())
        .collect();
    assert!(bodies.contains(&"Your complaint has been solved. Thanks for your activity"), "{notes}");

    let all = read_sse(&server, None, 4);
    let seqs: Vec<u64> = all.iter().map(|e| e.0).collect();
    assert_eq!(seqs, [1, 2, 3, 4]);
    assert_eq!(all[0].1, "provisioned");
    for (id, kind, data) in &all {
        assert_eq!(data["kind"].as_str(), Some(kind.as_str()));
        assert_eq!(data["seq"].as_u64(), Some(*id));
    }
    let resumed = read_sse(&server, Some(2), 2);
    assert_eq!(resumed[0].0, 3);
    assert_eq!(resumed[0].2, all[2].2);
    assert_eq!(resumed[1].2, all[3].2);
}

#[test]
fn state_directory_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");
    let scenario = write_town(dir.path());
    let before = {
        let server = Server::start(&["--virtual-clock"], Some(&state));
        assert!(run(&["seed", &server.base, scenario.to_str().unwrap()]).status.success());
        get(&server, "/api/v1/complaints")
    };
    let server = Server::start(&["--virtual-clock"], Some(&state));
    assert_eq!(get(&server, "/api/v1/complaints"), before);
}
