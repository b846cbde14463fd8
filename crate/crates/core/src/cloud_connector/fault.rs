use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::types::NodeId;

/// Errors from one node after which it is marked potentially malicious.
pub const MALICIOUS_THRESHOLD: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdminAlert {
    pub node: NodeId,
    pub errors: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExceptionAction {
    /// Retry the upload with `next`, if any node is left to ask.
    Retry { next: Option<NodeId>, errors: u32 },
    /// `node` reached the threshold; administrators are notified.
    MarkMalicious { alert: AdminAlert, next: Option<NodeId> },
}

/// Per-node count of detected sync errors, kept by the cloud side.
#[derive(Debug, Clone, Default)]
pub struct FaultLedger {
    errors: BTreeMap<NodeId, u32>,
    marked: BTreeSet<NodeId>,
}

impl FaultLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn errors(&self, node: NodeId) -> u32 {
        self.errors.get(&node).copied().unwrap_or(0)
    }

    pub fn is_marked(&self, node: NodeId) -> bool {
        self.marked.contains(&node)
    }

    pub fn marked(&self) -> &BTreeSet<NodeId> {
        &self.marked
    }

    /// Next node after `after` in ring order that is not marked.
    pub fn next_uploader(&self, after: NodeId, n: u32) -> Option<NodeId> {
        (1..n).map(|k| (after + k) % n).find(|c| !self.marked.contains(c))
    }
}

/// Books an error against `node` and picks who retries the upload.
pub fn handle_sync_exception(ledger: &mut FaultLedger, node: NodeId, detail: &str, n: u32) -> ExceptionAction {
    let count = ledger.errors.entry(node).or_insert(0);
    *count += 1;
    let errors = *count;
    if errors >= MALICIOUS_THRESHOLD && ledger.marked.insert(node) {
        log::warn!("node {node} marked potentially malicious after {errors} sync errors");
        let next = ledger.next_uploader(node, n);
        return ExceptionAction::MarkMalicious { alert: AdminAlert { node, errors, detail: detail.to_string() }, next };
    }
    ExceptionAction::Retry { next: ledger.next_uploader(node, n), errors }
}
