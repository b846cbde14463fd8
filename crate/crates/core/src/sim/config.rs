use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud_connector::{SyncPolicy, SECOND_NS};
use crate::consensus::f_max;
use crate::crypto::HashScheme;
use crate::error::SimError;
use crate::types::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Size-only blocks; nothing is materialized.
    Accounting,
    /// Real transactions, blocks and an on-disk archive.
    Materialized,
}

impl FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "accounting" => Ok(Mode::Accounting),
            "materialized" => Ok(Mode::Materialized),
            _ => Err(SimError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Every consensus message is simulated.
    Full,
    /// One block per slot is finalized on all nodes without message exchange.
    /// Only valid without consensus faults.
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Silent,
    Equivocate,
    BadSync,
    TamperCloudReplica,
}

impl Behavior {
    /// Behaviors that make a node Byzantine for consensus purposes.
    pub fn is_consensus_fault(self) -> bool {
        matches!(self, Behavior::Silent | Behavior::Equivocate)
    }
}

impl FromStr for Behavior {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "silent" => Ok(Behavior::Silent),
            "equivocate" => Ok(Behavior::Equivocate),
            "bad_sync" | "badsync" => Ok(Behavior::BadSync),
            "tamper_cloud_replica" | "tampercloudreplica" => Ok(Behavior::TamperCloudReplica),
            _ => Err(SimError::UnknownBehavior(s.to_string())),
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Behavior::Silent => "silent",
            Behavior::Equivocate => "equivocate",
            Behavior::BadSync => "bad_sync",
            Behavior::TamperCloudReplica => "tamper_cloud_replica",
        };
        f.write_str(s)
    }
}

/// An adversarial script. For `TamperCloudReplica`, `node` names the cloud
/// replica instead of an overlay node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub node: NodeId,
    pub behavior: Behavior,
    #[serde(default)]
    pub start_s: u64,
    /// Exclusive; `None` means until the end of the run.
    #[serde(default)]
    pub end_s: Option<u64>,
}

impl FaultSpec {
    pub fn active_at(&self, now_ns: u64) -> bool {
        now_ns >= self.start_s * SECOND_NS && self.end_s.is_none_or(|e| now_ns < e * SECOND_NS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRange {
    pub min_us: u64,
    pub max_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub num_wsans: u32,
    pub nodes_per_wsan: u32,
    pub sample_period_ms: u64,
    pub avg_tx_bytes: u32,
    pub tx_min_bytes: u32,
    pub tx_max_bytes: u32,
    pub overlay_size: u32,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    pub overlay_latency: LatencyRange,
    pub cloud_latency: LatencyRange,
    pub cloud_bandwidth_bps: u64,
    pub transfer_overhead: f64,
    pub capacity_bytes: u64,
    pub trigger_threshold_bytes: Option<u64>,
    pub schedule_period_s: Option<u64>,
    pub min_interval_s: u64,
    pub duration_s: u64,
    pub seed: u64,
    pub mode: Mode,
    pub fidelity: Fidelity,
    pub epoch_timeout_ms: u64,
    pub max_txs_per_block: u32,
    pub metrics_interval_s: u64,
    pub replication: u32,
    /// Deadline for the sync leader to gather agreement.
    pub vote_deadline_ms: u64,
    /// Delay between nodes' sync requests, times the node index.
    pub request_stagger_ms: u64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn devices(&self) -> u64 {
        self.num_wsans as u64 * self.nodes_per_wsan as u64
    }

    pub fn hash_scheme(&self) -> HashScheme {
        match self.mode {
            Mode::Materialized => HashScheme::Sha256,
            Mode::Accounting => HashScheme::TestDouble,
        }
    }

    pub fn policy(&self) -> SyncPolicy {
        SyncPolicy {
            capacity_bytes: self.capacity_bytes,
            trigger_threshold_bytes: self.trigger_threshold_bytes,
            min_interval_ns: self.min_interval_s * SECOND_NS,
            schedule_period_ns: self.schedule_period_s.map(|s| s * SECOND_NS),
        }
    }

    pub fn byzantine_nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> =
            self.faults.iter().filter(|f| f.behavior.is_consensus_fault()).map(|f| f.node).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.num_wsans == 0 || self.nodes_per_wsan == 0 {
            return bad("workload needs at least one device".into());
        }
        if self.sample_period_ms == 0 || self.avg_tx_bytes == 0 || self.cloud_bandwidth_bps == 0 {
            return bad("rates must be strictly positive".into());
        }
        if self.tx_min_bytes > self.avg_tx_bytes || self.avg_tx_bytes > self.tx_max_bytes {
            return bad(format!(
                "mean {} outside size band [{}, {}]",
                self.avg_tx_bytes, self.tx_min_bytes, self.tx_max_bytes
            ));
        }
        if self.avg_tx_bytes < crate::types::TX_FIXED_LEN as u32 {
            return bad(format!(
                "mean {} below the {}-byte fixed layout",
                self.avg_tx_bytes,
                crate::types::TX_FIXED_LEN
            ));
        }
        if self.overlay_size == 0 {
            return bad("overlay needs at least one node".into());
        }
        if self.max_txs_per_block == 0 || self.metrics_interval_s == 0 || self.replication == 0 {
            return bad("block size, metrics interval and replication must be positive".into());
        }
        if self.transfer_overhead < 1.0 || !self.transfer_overhead.is_finite() {
            return bad("transfer overhead must be at least 1".into());
        }
        for r in [self.overlay_latency, self.cloud_latency] {
            if r.min_us == 0 || r.min_us > r.max_us {
                return bad("latency ranges must be positive and ordered".into());
            }
        }
        if self.epoch_timeout_ms == 0 || self.vote_deadline_ms == 0 {
            return bad("timeouts must be positive".into());
        }
        self.policy().validate().map_err(SimError::Config)?;
        for f in &self.faults {
            let limit = if f.behavior == Behavior::TamperCloudReplica { self.replication } else { self.overlay_size };
            if f.node >= limit {
                return bad(format!("fault target {} out of range for {}", f.node, f.behavior));
            }
            if f.end_s.is_some_and(|e| e <= f.start_s) {
                return bad(format!("empty fault window for node {}", f.node));
            }
        }
        let byz = self.byzantine_nodes();
        if byz.len() as u32 > f_max(self.overlay_size) {
            return bad(format!("{} Byzantine nodes exceed f_max {}", byz.len(), f_max(self.overlay_size)));
        }
        if self.fidelity == Fidelity::Batched && !byz.is_empty() {
            return bad("batched consensus cannot script consensus faults; use full fidelity".into());
        }
        Ok(())
    }
}

/// Adds an adversarial script to `cfg`. The behavior name is parsed here so
/// unknown behaviors are reported as such.
pub fn inject_fault(
    mut cfg: ScenarioConfig,
    node: NodeId,
    behavior: &str,
    window: (u64, Option<u64>),
) -> Result<ScenarioConfig, SimError> {
    let behavior: Behavior = behavior.parse()?;
    cfg.faults.push(FaultSpec { node, behavior, start_s: window.0, end_s: window.1 });
    cfg.validate()?;
    Ok(cfg)
}
