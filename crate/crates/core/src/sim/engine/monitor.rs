//! Sampling, daily statistics and the invariants checked along the run.

use std::sync::Arc;

use crate::cloud_store::CloudArchive;
use crate::error::SimError;
use crate::types::{verify_blocks, ChainBlock, LocalChain, NodeId};

use super::super::config::Behavior;
use super::super::metrics::{DailyStat, Sample, Totals, DAY_S};
use super::Engine;
use crate::cloud_connector::SECOND_NS;

/// Events quoted in an invariant violation.
const TRACE_LEN: usize = 8;

/// Rebuilds the full chain from the archive plus `local`'s blocks above the
/// archived head and checks it from genesis. `time_ns` only labels errors.
pub fn reconstruct_chain(
    archive: &CloudArchive,
    genesis: &Arc<ChainBlock>,
    local: &LocalChain,
    time_ns: u64,
) -> Result<Vec<Arc<ChainBlock>>, SimError> {
    let fail = |detail: String| SimError::InvariantViolation { time_ns, detail };
    let archived = archive.archived_blocks().map_err(|e| fail(format!("archive unreadable: {e}")))?;
    let head = archived.last().map_or(0, |b| b.height());
    if local.first_height() > head {
        return Err(fail(format!("local chain starts at {} above archived head {head}", local.first_height())));
    }
    if head > 0 && !local.contains_hash(head, &archived[archived.len() - 1].hash()) && local.tip_height() >= head {
        return Err(fail(format!("local chain disagrees with the archive at {head}")));
    }
    let mut blocks = Vec::with_capacity(archived.len() + local.len());
    blocks.push(genesis.clone());
    blocks.extend(archived);
    blocks.extend(local.iter().filter(|b| b.height() > head).cloned());
    for (i, b) in blocks.iter().enumerate() {
        if b.height() != i as u64 {
            return Err(fail(format!("gap in reconstructed chain at position {i}")));
        }
    }
    let report = verify_blocks(&blocks[1..], Some(genesis.header()), archive.scheme());
    if !report.passed() {
        return Err(fail(format!("reconstructed chain fails verification: {}", report.summary())));
    }
    Ok(blocks)
}

impl Engine {
    pub(super) fn violation(&self, now: u64, detail: String) -> SimError {
        let start = self.log.events.len().saturating_sub(TRACE_LEN);
        let trace: Vec<String> = self.log.events[start..]
            .iter()
            .map(|e| format!("[{}ns {:?} {:?}: {}]", e.t_ns, e.node, e.kind, e.detail))
            .collect();
        SimError::InvariantViolation {
            time_ns: now,
            detail: if trace.is_empty() { detail } else { format!("{detail}; recent events: {}", trace.join(" ")) },
        }
    }

    /// Nodes expected to follow the protocol for the whole run.
    fn honest(&self, id: NodeId) -> bool {
        !self.byzantine.contains(&id) && !self.cfg.faults.iter().any(|f| f.node == id && f.behavior == Behavior::Silent)
    }

    fn cloud_head(&self) -> u64 {
        self.cloud.get_head().map_or(0, |h| h.height)
    }

    pub(super) fn sample(&mut self, now: u64) -> Result<(), SimError> {
        let cloud_bytes = self.cloud.bytes();
        let head = self.cloud_head();
        let t_s = now / SECOND_NS;
        for id in 0..self.cfg.overlay_size {
            let chain = &self.nodes[id as usize].chain;
            let local_bytes = chain.bytes();
            if local_bytes > self.cfg.capacity_bytes {
                return Err(self.violation(now, format!("node {id} holds {local_bytes} bytes over capacity")));
            }
            if chain.first_height() > head {
                return Err(self.violation(
                    now,
                    format!("node {id} pruned to {} beyond archived head {head}", chain.first_height()),
                ));
            }
            self.log.samples.push(Sample { t_s, node: id, local_bytes, cloud_bytes });
        }
        Ok(())
    }

    /// Archived plus local-only bytes must equal every byte a node appended.
    fn check_conservation(&self, now: u64) -> Result<(), SimError> {
        let head = self.cloud_head();
        let genesis = self.genesis.encoded_len();
        for n in self.nodes.iter().filter(|n| self.honest(n.id)) {
            if n.chain.tip_height() < head {
                continue;
            }
            let tail: u64 = n.chain.iter().filter(|b| b.height() > head).map(|b| b.encoded_len()).sum();
            let total = self.cloud.bytes() + genesis + tail;
            if total != n.appended_bytes {
                return Err(self.violation(
                    now,
                    format!(
                        "node {}: archive {} + local tail {tail} != appended {}",
                        n.id,
                        self.cloud.bytes(),
                        n.appended_bytes
                    ),
                ));
            }
        }
        Ok(())
    }

    pub(super) fn check_archive(&self, now: u64) -> Result<(), SimError> {
        let reference = self
            .nodes
            .iter()
            .filter(|n| self.honest(n.id))
            .max_by_key(|n| (n.chain.tip_height(), std::cmp::Reverse(n.id)))
            .expect("an honest node exists");
        reconstruct_chain(&self.cloud, &self.genesis, &reference.chain, now)
            .map(|_| ())
            .map_err(|e| self.violation(now, e.to_string()))
    }

    pub(super) fn day_end(&mut self, day: u64) -> Result<(), SimError> {
        let now = day * DAY_S * SECOND_NS;
        self.record_day(day - 1);
        self.check_conservation(now)
    }

    fn record_day(&mut self, day: u64) {
        let chain_bytes = self.nodes.iter().map(|n| n.appended_bytes).max().unwrap_or(0);
        self.log.daily.push(DailyStat {
            day,
            max_local_bytes: self.nodes.iter().map(|n| n.day_max).max().unwrap_or(0),
            min_local_bytes: self.nodes.iter().map(|n| n.day_min).min().unwrap_or(0),
            chain_bytes,
            cloud_bytes: self.cloud.bytes(),
            local_ratio: self.peak_local as f64 / chain_bytes.max(1) as f64,
        });
        for n in &mut self.nodes {
            n.reset_day();
        }
        self.days_recorded = day + 1;
    }

    pub(super) fn finish(&mut self) -> Result<(), SimError> {
        let end = self.end_ns;
        if self.end_ns > self.days_recorded * DAY_S * SECOND_NS {
            self.record_day(self.days_recorded);
        }
        self.check_conservation(end)?;
        if self.cloud.is_materialized() && self.cfg.duration_s > 0 {
            self.check_archive(end)?;
        }
        let head = self.cloud_head();
        self.log.totals = if self.cfg.duration_s == 0 {
            Totals::default()
        } else {
            Totals {
                height: self.finalized_height,
                chain_bytes: self.nodes.iter().map(|n| n.appended_bytes).max().unwrap_or(0),
                cloud_bytes: self.cloud.bytes(),
                cloud_head: head,
                max_local_bytes: self.peak_local,
                marked_nodes: self.ledger.marked().iter().copied().collect(),
            }
        };
        Ok(())
    }
}
