use serde::{Deserialize, Serialize};

pub const GB: u64 = 1_000_000_000;
pub const SECOND_NS: u64 = 1_000_000_000;
pub const HOUR_NS: u64 = 3600 * SECOND_NS;

/// When a node asks the overlay to push its old blocks to the cloud.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncPolicy {
    pub capacity_bytes: u64,
    /// `None` disables the size trigger.
    pub trigger_threshold_bytes: Option<u64>,
    pub min_interval_ns: u64,
    /// `None` disables the time trigger.
    pub schedule_period_ns: Option<u64>,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        SyncPolicy {
            capacity_bytes: 128 * GB,
            trigger_threshold_bytes: Some(100 * GB),
            min_interval_ns: 600 * SECOND_NS,
            schedule_period_ns: Some(24 * HOUR_NS),
        }
    }
}

impl SyncPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(t) = self.trigger_threshold_bytes {
            if t > self.capacity_bytes {
                return Err(format!("trigger threshold {t} exceeds capacity {}", self.capacity_bytes));
            }
        }
        if self.trigger_threshold_bytes.is_none() && self.schedule_period_ns.is_none() {
            return Err("policy has neither a threshold nor a schedule".into());
        }
        if self.schedule_period_ns == Some(0) {
            return Err("schedule period must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerDecision {
    ThresholdReached,
    Scheduled,
    None,
}

/// Hybrid trigger: size threshold or schedule, whichever comes first. A node
/// that already asked less than `min_interval` ago stays quiet.
pub fn check_trigger(
    policy: &SyncPolicy,
    local_bytes: u64,
    now_ns: u64,
    last_sync_ns: u64,
    last_request_ns: Option<u64>,
) -> TriggerDecision {
    if last_request_ns.is_some_and(|t| now_ns < t.saturating_add(policy.min_interval_ns)) {
        return TriggerDecision::None;
    }
    if policy.trigger_threshold_bytes.is_some_and(|t| local_bytes >= t) {
        return TriggerDecision::ThresholdReached;
    }
    if policy.schedule_period_ns.is_some_and(|p| now_ns.saturating_sub(last_sync_ns) >= p) {
        return TriggerDecision::Scheduled;
    }
    TriggerDecision::None
}
