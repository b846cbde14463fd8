use crate::cloud_connector::{DEFAULT_OVERHEAD, GB};

use super::config::{Fidelity, LatencyRange, Mode, ScenarioConfig};

pub const PRESET_NAMES: [&str; 5] = ["paper-week", "paper-month", "bitcoin-compare", "byzantine-sweep", "tiny-e2e"];

const DAY_S: u64 = 86_400;

fn base() -> ScenarioConfig {
    ScenarioConfig {
        name: String::new(),
        num_wsans: 50,
        nodes_per_wsan: 100,
        sample_period_ms: 1000,
        avg_tx_bytes: 150,
        tx_min_bytes: 120,
        tx_max_bytes: 180,
        overlay_size: 50,
        faults: Vec::new(),
        overlay_latency: LatencyRange { min_us: 1_000, max_us: 10_000 },
        cloud_latency: LatencyRange { min_us: 20_000, max_us: 50_000 },
        cloud_bandwidth_bps: 200_000_000,
        transfer_overhead: DEFAULT_OVERHEAD,
        capacity_bytes: 128 * GB,
        trigger_threshold_bytes: Some(100 * GB),
        schedule_period_s: Some(DAY_S),
        min_interval_s: 600,
        duration_s: 7 * DAY_S,
        seed: 1,
        mode: Mode::Accounting,
        fidelity: Fidelity::Batched,
        epoch_timeout_ms: 2_000,
        max_txs_per_block: 5000,
        metrics_interval_s: 60,
        replication: 3,
        vote_deadline_ms: 5_000,
        request_stagger_ms: 50,
    }
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let mut c = base();
    c.name = name.to_string();
    match name {
        "paper-week" => {}
        "paper-month" => {
            c.duration_s = 30 * DAY_S;
            c.schedule_period_s = None;
            c.metrics_interval_s = 300;
        }
        "bitcoin-compare" => {
            // 2000 transactions every 600 s at 500 B each.
            c.num_wsans = 1;
            c.nodes_per_wsan = 2000;
            c.sample_period_ms = 600_000;
            c.avg_tx_bytes = 500;
            c.tx_min_bytes = 500;
            c.tx_max_bytes = 500;
            c.overlay_size = 4;
            c.duration_s = 3600;
        }
        "byzantine-sweep" => {
            c.num_wsans = 1;
            c.nodes_per_wsan = 4;
            c.overlay_size = 4;
            c.fidelity = Fidelity::Full;
            c.duration_s = 60;
            c.trigger_threshold_bytes = None;
            c.schedule_period_s = Some(30);
            c.min_interval_s = 5;
            c.capacity_bytes = GB;
            c.metrics_interval_s = 1;
        }
        "tiny-e2e" => {
            c.num_wsans = 2;
            c.nodes_per_wsan = 5;
            c.overlay_size = 4;
            c.mode = Mode::Materialized;
            c.fidelity = Fidelity::Full;
            c.duration_s = 60;
            c.trigger_threshold_bytes = None;
            c.schedule_period_s = Some(25);
            c.min_interval_s = 5;
            c.capacity_bytes = GB;
            c.metrics_interval_s = 1;
        }
        _ => return None,
    }
    Some(c)
}

/// One-line description per preset, for the CLI listing.
pub fn describe(name: &str) -> &'static str {
    match name {
        "paper-week" => "7 days, 50x100 devices at 150 B/s each, 50 gateways, daily sync",
        "paper-month" => "30 days of the same workload, 100 GB threshold sync only",
        "bitcoin-compare" => "1-hour run at Bitcoin-like 3.33 tx/s x 500 B, plus rate projections",
        "byzantine-sweep" => "4 gateways with one Byzantine node, message-level consensus",
        "tiny-e2e" => "materialized 60 s run, 4 gateways, 10 devices, 2 syncs",
        _ => "",
    }
}
