#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

pub const TOWN: &str = r#"
schema = 1
seed = 3
duration_s = 86400
complaint_rate_per_day = 10.0
citizens = 6
daily_pickup_s = 25200

[[zones]]
zone_id = "Z1"
wifi_available = true

[[zones]]
zone_id = "Z2"
wifi_available = false

[[bins]]
bin_id = "B1"
zone_id = "Z1"
location = { lat = 23.7806, lon = 90.2794 }
capacity_liters = 120.0
arrival_rate_per_hour = 4.0
mean_parcel_liters = 5.0

[[bins]]
bin_id = "B2"
zone_id = "Z2"
location = { lat = 23.7900, lon = 90.2850 }
capacity_liters = 120.0
arrival_rate_per_hour = 5.0
mean_parcel_liters = 6.0
initial_fill = 0.5

[[stations]]
station_id = "S1"
location = { lat = 23.7850, lon = 90.2810 }
arrival_rate_per_hour = 6.0
mean_parcel_liters = 12.0

[[crews]]
crew_id = "C1"
travel_time_s = 600

[[crews]]
crew_id = "C2"
travel_time_s = 900
smartphone = false
"#;

pub fn civicbin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_civicbin"))
}

pub fn run(args: &[&str]) -> Output {
    civicbin().args(args).output().expect("binary runs")
}

pub fn write_town(dir: &Path) -> PathBuf {
    let path = dir.join("town.scenario");
    std::fs::write(&path, TOWN).unwrap();
    path
}

/// A `civicbin serve` child on an ephemeral port, killed on drop.
pub struct Server {
    child: Child,
    pub base: String,
}

impl Server {
    pub fn start(extra: &[&str], state: Option<&Path>) -> Server {
        let mut cmd = civicbin();
        cmd.args(["serve", "--port", "0"]).args(extra);
        cmd.env_remove("CIVICBIN_STATE");
        if let Some(dir) = state {
            cmd.env("CIVICBIN_STATE", dir);
        }
        let mut child = cmd
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .expect("serve starts");
        let stderr = child.stderr.take().unwrap();
        let mut lines = BufReader::new(stderr).lines();
        let pattern = regex::Regex::new(r"listening on (http://\S+) \((virtual|wall) clock\)").unwrap();
        let base = loop {
            let line = lines.next().expect("server printed its address").unwrap();
            if let Some(c) = pattern.captures(&line) {
                break c[1].to_owned();
            }
        };
        std::thread::spawn(move || for _ in lines {});
        Server { child, base }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
