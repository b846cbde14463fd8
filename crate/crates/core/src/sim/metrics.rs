//! Append-only run log and report rendering.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud_connector::transfer_time_ns;
use crate::error::SimError;
use crate::types::NodeId;

use super::config::ScenarioConfig;
use super::workload::{compute_volume_projection, payload_rate, project, tx_rate, VolumeProjection};

pub const WEEK_S: f64 = 604_800.0;
pub const DAY_S: u64 = 86_400;
/// Reference medium-size deployment: 500 KB of block data per second.
pub const REFERENCE_RATE: f64 = 500_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: u64,
    pub node: NodeId,
    pub local_bytes: u64,
    pub cloud_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ViewChange,
    SyncRequest,
    SyncApproved,
    SyncRejected,
    SyncRegular,
    SyncDenied,
    SyncException,
    ReplicaRepair,
    MaliciousMark,
    AdminAlert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub t_ns: u64,
    pub node: Option<NodeId>,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Blocks finalized, counted once per height.
    pub finalized_blocks: u64,
    pub view_changes: u64,
    pub sync_requests: u64,
    pub sync_sessions: u64,
    pub sync_rejected: u64,
    pub sync_regular: u64,
    pub sync_denied: u64,
    pub sync_exceptions: u64,
    pub replica_repairs: u64,
    pub malicious_marks: u64,
    pub admin_alerts: u64,
    pub consensus_rejections: u64,
    pub pruned_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyStat {
    pub day: u64,
    /// Highest local chain size over all nodes during the day.
    pub max_local_bytes: u64,
    /// Lowest local chain size over all nodes during the day.
    pub min_local_bytes: u64,
    /// Every finalized block's bytes, archived or not, at day end.
    pub chain_bytes: u64,
    pub cloud_bytes: u64,
    /// Peak local storage so far over total chain size.
    pub local_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadEstimate {
    pub bytes: f64,
    pub raw_s: f64,
    pub with_overhead_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub payload_rate_bytes_per_s: f64,
    pub tx_rate_per_s: f64,
    pub week: Projection,
    pub run: Projection,
    /// One week at the reference rate.
    pub reference_week_bytes: f64,
    /// Upload of one day of payload over the configured link.
    pub day_upload: UploadEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub duration_s: f64,
    pub payload_bytes: f64,
    pub block_bytes: f64,
}

impl From<VolumeProjection> for Projection {
    fn from(p: VolumeProjection) -> Self {
        Projection { duration_s: p.duration_s, payload_bytes: p.payload_bytes, block_bytes: p.block_bytes }
    }
}

impl Headline {
    pub fn for_config(cfg: &ScenarioConfig) -> Self {
        let rate = payload_rate(cfg);
        let day = rate * DAY_S as f64;
        let secs = |o: f64| transfer_time_ns(day as u64, cfg.cloud_bandwidth_bps, o) as f64 / 1e9;
        Headline {
            payload_rate_bytes_per_s: rate,
            tx_rate_per_s: tx_rate(cfg),
            week: project(cfg, WEEK_S).into(),
            run: project(cfg, cfg.duration_s as f64).into(),
            reference_week_bytes: compute_volume_projection(REFERENCE_RATE, WEEK_S),
            day_upload: UploadEstimate { bytes: day, raw_s: secs(1.0), with_overhead_s: secs(cfg.transfer_overhead) },
        }
    }
}

/// Final state of the run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub height: u64,
    pub chain_bytes: u64,
    pub cloud_bytes: u64,
    pub cloud_head: u64,
    pub max_local_bytes: u64,
    pub marked_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: u64,
    pub metrics_interval_s: u64,
    pub samples: Vec<Sample>,
    pub events: Vec<LogEvent>,
    pub counters: Counters,
    pub daily: Vec<DailyStat>,
    pub totals: Totals,
    pub headline: Headline,
}

impl MetricsLog {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        MetricsLog {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            duration_s: cfg.duration_s,
            metrics_interval_s: cfg.metrics_interval_s,
            samples: Vec::new(),
            events: Vec::new(),
            counters: Counters::default(),
            daily: Vec::new(),
            totals: Totals::default(),
            headline: Headline::for_config(cfg),
        }
    }

    pub fn event(&mut self, t_ns: u64, node: Option<NodeId>, kind: EventKind, detail: impl Into<String>) {
        self.events.push(LogEvent { t_ns, node, kind, detail: detail.into() });
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &LogEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Samples of one node in time order.
    pub fn series(&self, node: NodeId) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.node == node)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, SimError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        fs::write(&path, self.to_json())?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(dir.join(LOG_FILE))?;
        serde_json::from_str(&text).map_err(|e| SimError::Config(format!("bad metrics log: {e}")))
    }
}

pub const LOG_FILE: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Time-series and daily CSVs plus a gnuplot data file.
    Csv,
    /// Summary JSON.
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(SimError::Config(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    seed: u64,
    duration_s: u64,
    counters: &'a Counters,
    totals: &'a Totals,
    headline: &'a Headline,
    daily: &'a [DailyStat],
    alerts: Vec<&'a LogEvent>,
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}

/// Writes the report files for `format` into `dir` and returns their paths.
pub fn emit_report(log: &MetricsLog, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let path = dir.join("timeseries.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(["t", "node", "local_bytes", "cloud_bytes"]).map_err(csv_err)?;
            for s in &log.samples {
                w.serialize((s.t_s, s.node, s.local_bytes, s.cloud_bytes)).map_err(csv_err)?;
            }
            w.flush()?;
            written.push(path);

            let path = dir.join("daily.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(["day", "max_local_bytes", "min_local_bytes", "chain_bytes", "cloud_bytes", "local_ratio"])
                .map_err(csv_err)?;
            for d in &log.daily {
                w.serialize((d.day, d.max_local_bytes, d.min_local_bytes, d.chain_bytes, d.cloud_bytes, d.local_ratio))
                    .map_err(csv_err)?;
            }
            w.flush()?;
            written.push(path);

            let path = dir.join("plot.dat");
            let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
            writeln!(f, "# hours max_local_gb min_local_gb cloud_gb")?;
            let mut i = 0;
            while i < log.samples.len() {
                let t = log.samples[i].t_s;
                let (mut hi, mut lo, mut cloud) = (0u64, u64::MAX, 0u64);
                while i < log.samples.len() && log.samples[i].t_s == t {
                    let s = &log.samples[i];
                    hi = hi.max(s.local_bytes);
                    lo = lo.min(s.local_bytes);
                    cloud = s.cloud_bytes;
                    i += 1;
                }
                writeln!(
                    f,
                    "{:.4} {:.6} {:.6} {:.6}",
                    t as f64 / 3600.0,
                    hi as f64 / 1e9,
                    lo as f64 / 1e9,
                    cloud as f64 / 1e9
                )?;
            }
            f.flush()?;
            written.push(path);
        }
        ReportFormat::Json => {
            let path = dir.join("summary.json");
            let summary = Summary {
                scenario: &log.scenario,
                seed: log.seed,
                duration_s: log.duration_s,
                counters: &log.counters,
                totals: &log.totals,
                headline: &log.headline,
                daily: &log.daily,
                alerts: log.events_of(EventKind::AdminAlert).collect(),
            };
            fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::presets::preset;

    #[test]
    fn headline_numbers() {
        let h = Headline::for_config(&preset("paper-week").unwrap());
        assert_eq!(h.payload_rate_bytes_per_s, 750_000.0);
        assert_eq!(h.week.payload_bytes, 453.6e9);
        assert_eq!(h.reference_week_bytes, 302.4e9);
        assert_eq!(h.day_upload.bytes, 64.8e9);
        assert_eq!(h.day_upload.raw_s, 2592.0);
        assert!((h.day_upload.with_overhead_s / 60.0 - 56.16).abs() < 1e-9);
    }

    #[test]
    fn empty_log_renders_headers_only() {
        let mut cfg = preset("tiny-e2e").unwrap();
        cfg.duration_s = 0;
        let log = MetricsLog::new(&cfg);
        let dir = tempfile::tempdir().unwrap();
        emit_report(&log, dir.path(), ReportFormat::Csv).unwrap();
        emit_report(&log, dir.path(), ReportFormat::Json).unwrap();
        let csv = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
        assert_eq!(csv, "t,node,local_bytes,cloud_bytes\n");
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["counters"]["finalized_blocks"], 0);
        assert_eq!(summary["totals"]["chain_bytes"], 0);
    }

    #[test]
    fn log_round_trips_through_disk() {
        let mut log = MetricsLog::new(&preset("tiny-e2e").unwrap());
        log.samples.push(Sample { t_s: 1, node: 0, local_bytes: 10, cloud_bytes: 0 });
        log.event(5, Some(1), EventKind::AdminAlert, "x");
        let dir = tempfile::tempdir().unwrap();
        log.save(dir.path()).unwrap();
        assert_eq!(MetricsLog::load(dir.path()).unwrap(), log);
    }
}
