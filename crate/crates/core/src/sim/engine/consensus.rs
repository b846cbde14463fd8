//! Routing of consensus outputs, scripted equivocation and finalization.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::consensus::{
    check_quorum_certificate, equivocal_twin, ConsensusMsg, Output, Proposal, SignedVote, VoteStage,
};
use crate::error::SimError;
use crate::types::{ChainBlock, NodeId};

use super::super::config::Behavior;
use super::super::metrics::EventKind;
use super::super::node::PoolSource;
use super::{Engine, NetMsg};

impl Engine {
    pub(super) fn deliver_consensus(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg: ConsensusMsg,
        now: u64,
    ) -> Result<(), SimError> {
        let scheme = self.scheme;
        let max_txs = self.cfg.max_txs_per_block as usize;
        let node = &mut self.nodes[to as usize];
        let Some(replica) = node.replica.as_mut() else {
            return Ok(());
        };
        let mut src = PoolSource { pool: node.pool.as_ref().expect("full fidelity"), scheme, max_txs };
        let outs = replica.on_message(from, msg, now, &mut src);
        self.route(to, outs, now)
    }

    pub(super) fn route(&mut self, from: NodeId, outs: Vec<Output>, now: u64) -> Result<(), SimError> {
        for o in outs {
            match o {
                Output::Broadcast(ConsensusMsg::Propose(p))
                    if p.leader == from && self.active(from, Behavior::Equivocate, now) =>
                {
                    self.equivocate(from, p, now);
                }
                Output::Broadcast(m) => self.multicast(from, NetMsg::Consensus(m), false, now),
                Output::Send(to, m) => self.send(from, to, Arc::new(NetMsg::Consensus(m)), now),
                Output::Finalized { block, commits, view } => {
                    let epoch = block.height() - 1;
                    if !self.byzantine.contains(&from) {
                        let hash = block.hash();
                        if let Some(prior) = self.decided.get(&block.height()) {
                            if *prior != hash {
                                return Err(self.violation(
                                    now,
                                    format!("conflicting blocks finalized at height {} (node {from})", block.height()),
                                ));
                            }
                        } else {
                            self.decided.insert(block.height(), hash);
                        }
                        if let Err(e) = check_quorum_certificate(
                            &self.dir,
                            &commits,
                            self.ccfg.quorum,
                            epoch,
                            VoteStage::Commit,
                            &hash,
                            Some(view),
                        ) {
                            return Err(
                                self.violation(now, format!("node {from} finalized without a commit quorum: {e}"))
                            );
                        }
                    }
                    self.on_finalized(from, block, now)?;
                }
                Output::Timer { epoch, view } => {
                    let at = now + self.ccfg.epoch_timeout_ns;
                    self.queue.schedule(at, super::Ev::Timeout { node: from, epoch, view });
                }
                Output::ViewChanged { epoch, view } => {
                    if self.views_seen.insert((epoch, view)) {
                        self.log.counters.view_changes += 1;
                        self.log.event(
                            now,
                            Some(from),
                            EventKind::ViewChange,
                            format!("epoch {epoch} moved to view {view}"),
                        );
                    }
                }
                Output::Rejected(e) => {
                    self.log.counters.consensus_rejections += 1;
                    log::debug!("node {from} rejected a message: {e}");
                }
            }
        }
        Ok(())
    }

    /// Sends the proposal to a random part of the peers and a conflicting
    /// twin to the rest, then votes for both at every stage.
    fn equivocate(&mut self, from: NodeId, p: Proposal, now: u64) {
        let key = self.nodes[from as usize].key.clone();
        let twin = Arc::new(equivocal_twin(&p.block, &key, self.scheme));
        let p2 = Proposal::new(&key, from, p.epoch, p.view, twin.clone());
        let mut peers: Vec<NodeId> = (0..self.cfg.overlay_size).filter(|&x| x != from).collect();
        peers.shuffle(&mut self.rng);
        let split = if peers.len() > 1 { self.rng.gen_range(1..peers.len()) } else { peers.len() };
        let first = Arc::new(NetMsg::Consensus(ConsensusMsg::Propose(p.clone())));
        let second = Arc::new(NetMsg::Consensus(ConsensusMsg::Propose(p2)));
        for (i, to) in peers.into_iter().enumerate() {
            let m = if i < split { first.clone() } else { second.clone() };
            self.send(from, to, m, now);
        }
        for hash in [p.block.hash(), twin.hash()] {
            for stage in [VoteStage::Prepare, VoteStage::Commit] {
                let v = SignedVote::new(&key, from, p.epoch, p.view, stage, hash);
                self.multicast(from, NetMsg::Consensus(ConsensusMsg::Vote(v)), false, now);
            }
        }
    }

    fn on_finalized(&mut self, id: NodeId, block: Arc<ChainBlock>, now: u64) -> Result<(), SimError> {
        if block.height() > self.finalized_height {
            self.finalized_height = block.height();
            self.log.counters.finalized_blocks += 1;
        }
        if let Some(pool) = self.nodes[id as usize].pool.as_mut() {
            pool.remove_through(&block);
        }
        self.append(id, block, now)
    }
}
