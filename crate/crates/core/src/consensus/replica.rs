//! Per-node consensus state machine.
//!
//! Each epoch decides one block on top of the current tip. Inside an epoch the
//! leader of the current view proposes; replicas answer with a prepare vote,
//! then with a commit vote once a prepare quorum is seen. A commit quorum
//! finalizes the block. A view that fails to finalize before its timer fires
//! is abandoned through signed view-change messages; the next leader's
//! NEW_VIEW carries a quorum of them and binds it to the highest prepared
//! block, so a block that may have finalized anywhere is never replaced.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::crypto::{Digest, HashScheme, KeyPair};
use crate::error::ConsensusError;
use crate::types::{ChainBlock, NodeId};

use super::config::{ConsensusConfig, Directory};
use super::messages::{
    check_quorum_certificate, required_block, ConsensusMsg, Decided, NewView, PreparedCert, Proposal, SignedVote,
    ViewChange, VoteStage,
};

const BUFFER_LIMIT: usize = 16_384;
const HISTORY_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Proposed,
    Voted,
    Finalized,
    ViewChanging,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochState {
    pub epoch: u64,
    pub view: u32,
    pub leader: NodeId,
    pub phase: Phase,
    pub proposal: Option<Arc<ChainBlock>>,
    /// View being moved to while `phase` is `ViewChanging`.
    pub target_view: u32,
}

/// Supplies candidate blocks to a leader.
pub trait ProposalSource {
    fn has_pending(&self) -> bool;
    /// Forms a signed block on top of `parent`, or `None` when nothing can be
    /// proposed at `now_ns`.
    fn build(&mut self, parent: &ChainBlock, leader_key: &KeyPair, now_ns: u64) -> Option<ChainBlock>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Broadcast(ConsensusMsg),
    Send(NodeId, ConsensusMsg),
    Finalized {
        block: Arc<ChainBlock>,
        commits: Vec<SignedVote>,
        view: u32,
    },
    /// Ask the driver to call `on_timeout(epoch, view)` after the epoch timeout.
    Timer {
        epoch: u64,
        view: u32,
    },
    ViewChanged {
        epoch: u64,
        view: u32,
    },
    Rejected(ConsensusError),
}

type VoteKey = (u32, Digest);

#[derive(Debug)]
pub struct Replica {
    id: NodeId,
    key: KeyPair,
    cfg: Arc<ConsensusConfig>,
    dir: Arc<Directory>,
    scheme: HashScheme,
    tip: Arc<ChainBlock>,
    state: EpochState,
    known: BTreeMap<Digest, Arc<ChainBlock>>,
    prepares: BTreeMap<VoteKey, BTreeMap<NodeId, SignedVote>>,
    commits: BTreeMap<VoteKey, BTreeMap<NodeId, SignedVote>>,
    prepared: Option<PreparedCert>,
    commit_sent: BTreeSet<u32>,
    view_changes: BTreeMap<u32, BTreeMap<NodeId, ViewChange>>,
    new_view_sent: BTreeSet<u32>,
    new_view: Option<NewView>,
    proposed: bool,
    future_proposals: BTreeMap<u32, Proposal>,
    fetching: BTreeSet<Digest>,
    buffer: Vec<(NodeId, ConsensusMsg)>,
    history: VecDeque<Decided>,
    decided_sent: BTreeSet<(NodeId, u64)>,
    timer: Option<(u64, u32)>,
}

impl Replica {
    pub fn new(
        id: NodeId,
        key: KeyPair,
        cfg: Arc<ConsensusConfig>,
        dir: Arc<Directory>,
        scheme: HashScheme,
        tip: Arc<ChainBlock>,
    ) -> Self {
        let epoch = tip.height();
        let leader = cfg.elect_leader(epoch, 0);
        Replica {
            id,
            key,
            cfg,
            dir,
            scheme,
            tip,
            state: EpochState { epoch, view: 0, leader, phase: Phase::Idle, proposal: None, target_view: 0 },
            known: BTreeMap::new(),
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            prepared: None,
            commit_sent: BTreeSet::new(),
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            new_view: None,
            proposed: false,
            future_proposals: BTreeMap::new(),
            fetching: BTreeSet::new(),
            buffer: Vec::new(),
            history: VecDeque::new(),
            decided_sent: BTreeSet::new(),
            timer: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn state(&self) -> &EpochState {
        &self.state
    }

    pub fn tip(&self) -> &Arc<ChainBlock> {
        &self.tip
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.cfg
    }

    /// Distinct voters seen for `hash` at `stage` in `view`.
    pub fn vote_count(&self, stage: VoteStage, view: u32, hash: &Digest) -> usize {
        let map = match stage {
            VoteStage::Prepare => &self.prepares,
            VoteStage::Commit => &self.commits,
        };
        map.get(&(view, *hash)).map_or(0, BTreeMap::len)
    }

    fn level(&self) -> u32 {
        if self.state.phase == Phase::ViewChanging {
            self.state.target_view
        } else {
            self.state.view
        }
    }

    fn arm_timer(&mut self, out: &mut Vec<Output>) {
        let t = (self.state.epoch, self.level());
        if self.timer != Some(t) {
            self.timer = Some(t);
            out.push(Output::Timer { epoch: t.0, view: t.1 });
        }
    }

    /// Slot tick: arms the epoch timer once work is pending and lets the
    /// view-0 leader propose.
    pub fn on_slot(&mut self, now_ns: u64, src: &mut dyn ProposalSource) -> Vec<Output> {
        let mut out = Vec::new();
        if !src.has_pending() && self.state.proposal.is_none() {
            return out;
        }
        self.arm_timer(&mut out);
        self.try_propose(now_ns, src, &mut out);
        out
    }

    fn try_propose(&mut self, now_ns: u64, src: &mut dyn ProposalSource, out: &mut Vec<Output>) {
        if self.proposed
            || self.state.leader != self.id
            || matches!(self.state.phase, Phase::ViewChanging | Phase::Finalized)
            || (self.state.view > 0 && self.new_view.is_none())
        {
            return;
        }
        let block = match self.new_view.as_ref().and_then(NewView::required_block) {
            Some(b) => b,
            None => match src.build(&self.tip, &self.key, now_ns) {
                Some(b) => Arc::new(b),
                None => return,
            },
        };
        self.proposed = true;
        let p = Proposal::new(&self.key, self.id, self.state.epoch, self.state.view, block);
        out.push(Output::Broadcast(ConsensusMsg::Propose(p.clone())));
        self.handle_proposal(p, out);
    }

    pub fn on_timeout(&mut self, epoch: u64, view: u32) -> Vec<Output> {
        let mut out = Vec::new();
        if epoch != self.state.epoch || view != self.level() || self.state.phase == Phase::Finalized {
            return out;
        }
        self.start_view_change(view + 1, &mut out);
        out
    }

    /// Abandons the current view in favor of `target`.
    pub fn trigger_view_change(&mut self, target: u32) -> Vec<Output> {
        let mut out = Vec::new();
        if target > self.level() {
            self.start_view_change(target, &mut out);
        }
        out
    }

    fn start_view_change(&mut self, target: u32, out: &mut Vec<Output>) {
        self.state.phase = Phase::ViewChanging;
        self.state.target_view = target;
        let vc = ViewChange::new(&self.key, self.id, self.state.epoch, target, self.prepared.clone());
        out.push(Output::Broadcast(ConsensusMsg::ViewChange(vc.clone())));
        self.view_changes.entry(target).or_default().insert(self.id, vc);
        self.arm_timer(out);
    }

    pub fn on_message(
        &mut self,
        from: NodeId,
        msg: ConsensusMsg,
        now_ns: u64,
        src: &mut dyn ProposalSource,
    ) -> Vec<Output> {
        let mut out = Vec::new();
        self.dispatch(from, msg, now_ns, src, &mut out);
        out
    }

    fn dispatch(
        &mut self,
        from: NodeId,
        msg: ConsensusMsg,
        now_ns: u64,
        src: &mut dyn ProposalSource,
        out: &mut Vec<Output>,
    ) {
        let epoch = msg.epoch();
        match &msg {
            ConsensusMsg::BlockRequest { hash, .. } => {
                if let Some(b) = self.lookup(hash) {
                    out.push(Output::Send(from, ConsensusMsg::BlockResponse { epoch, block: b }));
                }
                return;
            }
            ConsensusMsg::Decided(_) | ConsensusMsg::BlockResponse { .. } if epoch < self.state.epoch => return,
            ConsensusMsg::Vote(v) if epoch < self.state.epoch && self.decided_hash(epoch) == Some(v.block_hash) => {
                // Late vote for what was decided; the sender gets the same quorum.
                return;
            }
            _ if epoch < self.state.epoch => {
                self.reply_decided(from, epoch, out);
                if let ConsensusMsg::Vote(v) = &msg {
                    out.push(Output::Rejected(ConsensusError::StaleVote { epoch: v.epoch, view: v.view }));
                }
                return;
            }
            _ if epoch > self.state.epoch => {
                if self.buffer.len() < BUFFER_LIMIT {
                    self.buffer.push((from, msg));
                }
                return;
            }
            _ => {}
        }
        match msg {
            ConsensusMsg::Propose(p) => {
                if !p.verify(&self.dir) {
                    out.push(Output::Rejected(ConsensusError::BadSignature(p.leader)));
                    return;
                }
                self.on_proposal(p, out);
            }
            ConsensusMsg::Vote(v) => self.on_vote(v, out),
            ConsensusMsg::ViewChange(vc) => self.on_view_change(vc, now_ns, src, out),
            ConsensusMsg::NewView(nv) => self.on_new_view(nv, now_ns, src, out),
            ConsensusMsg::BlockResponse { block, .. } => {
                let h = block.hash();
                if self.fetching.remove(&h) && block.header().compute_hash(self.scheme) == h {
                    self.known.insert(h, block);
                    self.progress(out);
                }
            }
            ConsensusMsg::Decided(d) => self.on_decided(d, out),
            ConsensusMsg::BlockRequest { .. } => unreachable!(),
        }
        if self.state.epoch > epoch {
            self.replay(now_ns, src, out);
        }
    }

    fn lookup(&self, hash: &Digest) -> Option<Arc<ChainBlock>> {
        self.known
            .get(hash)
            .cloned()
            .or_else(|| self.history.iter().find(|d| &d.block.hash() == hash).map(|d| d.block.clone()))
    }

    fn decided_hash(&self, epoch: u64) -> Option<Digest> {
        self.history.iter().rev().find(|d| d.epoch == epoch).map(|d| d.block.hash())
    }

    fn reply_decided(&mut self, to: NodeId, epoch: u64, out: &mut Vec<Output>) {
        if to == self.id || self.decided_sent.contains(&(to, epoch)) {
            return;
        }
        if let Some(d) = self.history.iter().find(|d| d.epoch == epoch) {
            self.decided_sent.insert((to, epoch));
            out.push(Output::Send(to, ConsensusMsg::Decided(d.clone())));
        }
    }

    /// Checks a proposal against the current view; valid proposals in a later
    /// view are parked until that view starts.
    pub fn on_proposal(&mut self, p: Proposal, out: &mut Vec<Output>) {
        let leader = self.cfg.elect_leader(p.epoch, p.view);
        if p.leader != leader {
            out.push(Output::Rejected(ConsensusError::NotLeader { sender: p.leader, epoch: p.epoch, view: p.view }));
            return;
        }
        if p.view < self.state.view {
            out.push(Output::Rejected(ConsensusError::StaleVote { epoch: p.epoch, view: p.view }));
            return;
        }
        if p.view > self.state.view || self.state.phase == Phase::ViewChanging {
            self.future_proposals.entry(p.view).or_insert(p);
            return;
        }
        self.handle_proposal(p, out);
    }

    fn handle_proposal(&mut self, p: Proposal, out: &mut Vec<Output>) {
        if self.state.proposal.is_some() || self.state.phase == Phase::Finalized {
            // At most one proposal per (epoch, view).
            return;
        }
        if let Err(e) = self.check_block(&p) {
            out.push(Output::Rejected(ConsensusError::InvalidBlock(e)));
            return;
        }
        let hash = p.block.hash();
        self.known.insert(hash, p.block.clone());
        self.state.proposal = Some(p.block);
        self.state.phase = Phase::Proposed;
        self.emit_vote(VoteStage::Prepare, hash, out);
        self.state.phase = Phase::Voted;
        self.progress(out);
    }

    fn check_block(&self, p: &Proposal) -> Result<(), String> {
        let b = &p.block;
        let h = b.header();
        let tip = self.tip.header();
        if b.height() != self.tip.height() + 1 {
            return Err(format!("height {} does not follow tip {}", b.height(), self.tip.height()));
        }
        if h.hash_pre_data_blk != tip.block_hash {
            return Err("does not link to local tip".into());
        }
        if h.timestamp <= tip.timestamp {
            return Err("timestamp not after parent".into());
        }
        if h.compute_hash(self.scheme) != h.block_hash {
            return Err("block hash mismatch".into());
        }
        if h.num_txs == 0 {
            return Err("empty block".into());
        }
        b.check_contents(self.scheme)?;
        let signer = self.dir.header_signer(h).ok_or("header not signed by a member")?;
        if p.view > 0 {
            let nv = self.new_view.as_ref().ok_or("no NEW_VIEW for this view")?;
            match nv.required_block() {
                Some(req) if req.hash() != b.hash() => return Err("not the block carried by NEW_VIEW".into()),
                Some(_) => return Ok(()),
                None => {}
            }
        }
        if signer != p.leader {
            return Err(format!("header signed by {signer}, leader is {}", p.leader));
        }
        Ok(())
    }

    fn emit_vote(&mut self, stage: VoteStage, hash: Digest, out: &mut Vec<Output>) {
        let v = SignedVote::new(&self.key, self.id, self.state.epoch, self.state.view, stage, hash);
        out.push(Output::Broadcast(ConsensusMsg::Vote(v.clone())));
        self.record_vote(v);
    }

    fn record_vote(&mut self, v: SignedVote) -> bool {
        let map = match v.stage {
            VoteStage::Prepare => &mut self.prepares,
            VoteStage::Commit => &mut self.commits,
        };
        let slot = map.entry((v.view, v.block_hash)).or_default();
        if slot.contains_key(&v.voter) {
            return false;
        }
        slot.insert(v.voter, v);
        true
    }

    pub fn on_vote(&mut self, v: SignedVote, out: &mut Vec<Output>) {
        if v.epoch != self.state.epoch {
            out.push(Output::Rejected(ConsensusError::StaleVote { epoch: v.epoch, view: v.view }));
            return;
        }
        if !v.verify(&self.dir) {
            out.push(Output::Rejected(ConsensusError::BadSignature(v.voter)));
            return;
        }
        let voter = v.voter;
        if !self.record_vote(v) {
            out.push(Output::Rejected(ConsensusError::DuplicateVote(voter)));
            return;
        }
        self.progress(out);
    }

    fn progress(&mut self, out: &mut Vec<Output>) {
        if self.state.phase == Phase::Finalized {
            return;
        }
        let q = self.cfg.quorum as usize;
        // Prepare quorum on our own proposal in the live view: lock and commit.
        if self.state.phase != Phase::ViewChanging && !self.commit_sent.contains(&self.state.view) {
            if let Some(block) = self.state.proposal.clone() {
                let key = (self.state.view, block.hash());
                if let Some(votes) = self.prepares.get(&key).filter(|m| m.len() >= q) {
                    let cert = PreparedCert {
                        view: self.state.view,
                        block: block.clone(),
                        votes: votes.values().cloned().collect(),
                    };
                    if self.prepared.as_ref().is_none_or(|c| c.view <= cert.view) {
                        self.prepared = Some(cert);
                    }
                    self.commit_sent.insert(self.state.view);
                    self.emit_vote(VoteStage::Commit, key.1, out);
                }
            }
        }
        let ready =
            self.commits.iter().find(|(_, m)| m.len() >= q).map(|(k, m)| (*k, m.values().cloned().collect::<Vec<_>>()));
        if let Some(((view, hash), commits)) = ready {
            match self.known.get(&hash).cloned() {
                Some(block) => self.finalize(block, commits, view, out),
                None => {
                    if self.fetching.insert(hash) {
                        let peer = commits.iter().map(|c| c.voter).find(|&v| v != self.id).unwrap_or(self.id);
                        out.push(Output::Send(peer, ConsensusMsg::BlockRequest { epoch: self.state.epoch, hash }));
                    }
                }
            }
        }
    }

    fn finalize(&mut self, block: Arc<ChainBlock>, commits: Vec<SignedVote>, view: u32, out: &mut Vec<Output>) {
        if block.height() != self.tip.height() + 1 || block.header().hash_pre_data_blk != self.tip.hash() {
            out.push(Output::Rejected(ConsensusError::InvalidBlock("certified block does not extend tip".into())));
            return;
        }
        let decided = Decided { epoch: self.state.epoch, block: block.clone(), commits: commits.clone() };
        self.history.push_back(decided);
        if self.history.len() > HISTORY_LIMIT {
            let old = self.history.pop_front().expect("non-empty").epoch;
            self.decided_sent.retain(|(_, e)| *e > old);
        }
        self.state.phase = Phase::Finalized;
        self.state.proposal = Some(block.clone());
        out.push(Output::Finalized { block: block.clone(), commits, view });
        self.advance(block);
    }

    fn advance(&mut self, tip: Arc<ChainBlock>) {
        self.tip = tip;
        let epoch = self.tip.height();
        self.state = EpochState {
            epoch,
            view: 0,
            leader: self.cfg.elect_leader(epoch, 0),
            phase: Phase::Idle,
            proposal: None,
            target_view: 0,
        };
        self.known.clear();
        self.prepares.clear();
        self.commits.clear();
        self.prepared = None;
        self.commit_sent.clear();
        self.view_changes.clear();
        self.new_view_sent.clear();
        self.new_view = None;
        self.proposed = false;
        self.future_proposals.clear();
        self.fetching.clear();
        self.timer = None;
    }

    fn replay(&mut self, now_ns: u64, src: &mut dyn ProposalSource, out: &mut Vec<Output>) {
        let epoch = self.state.epoch;
        if !self.buffer.iter().any(|(_, m)| m.epoch() <= epoch) {
            return;
        }
        let pending = std::mem::take(&mut self.buffer);
        let (now, later): (Vec<_>, Vec<_>) = pending.into_iter().partition(|(_, m)| m.epoch() <= epoch);
        self.buffer = later;
        for (from, msg) in now {
            self.dispatch(from, msg, now_ns, src, out);
        }
    }

    fn on_decided(&mut self, d: Decided, out: &mut Vec<Output>) {
        let Some(first) = d.commits.first() else {
            out.push(Output::Rejected(ConsensusError::InvalidCertificate("empty commit set".into())));
            return;
        };
        let view = first.view;
        let hash = d.block.hash();
        if d.block.header().compute_hash(self.scheme) != hash {
            out.push(Output::Rejected(ConsensusError::InvalidBlock("decided block hash mismatch".into())));
            return;
        }
        if let Err(e) = check_quorum_certificate(
            &self.dir,
            &d.commits,
            self.cfg.quorum,
            d.epoch,
            VoteStage::Commit,
            &hash,
            Some(view),
        ) {
            out.push(Output::Rejected(ConsensusError::InvalidCertificate(e)));
            return;
        }
        if let Err(e) = d.block.check_contents(self.scheme) {
            out.push(Output::Rejected(ConsensusError::InvalidBlock(e)));
            return;
        }
        self.finalize(d.block, d.commits, view, out);
    }

    fn on_view_change(&mut self, vc: ViewChange, now_ns: u64, src: &mut dyn ProposalSource, out: &mut Vec<Output>) {
        if vc.new_view <= self.state.view {
            return;
        }
        if let Err(e) = vc.verify(&self.dir, self.cfg.quorum) {
            out.push(Output::Rejected(ConsensusError::InvalidCertificate(e)));
            return;
        }
        let target = vc.new_view;
        self.view_changes.entry(target).or_default().entry(vc.sender).or_insert(vc);

        // f+1 nodes ahead of us means at least one honest node gave up: join.
        let level = self.level();
        let mut ahead: BTreeMap<NodeId, u32> = BTreeMap::new();
        for (&v, senders) in self.view_changes.range(level + 1..) {
            for &s in senders.keys() {
                ahead.entry(s).or_insert(v);
            }
        }
        if ahead.len() > self.cfg.f_max as usize {
            let join = *ahead.values().min().expect("non-empty");
            if self.state.phase != Phase::ViewChanging || join > self.state.target_view {
                self.start_view_change(join, out);
            }
        }

        let count = self.view_changes.get(&target).map_or(0, BTreeMap::len);
        if self.cfg.elect_leader(self.state.epoch, target) == self.id
            && count >= self.cfg.quorum as usize
            && !self.new_view_sent.contains(&target)
        {
            self.new_view_sent.insert(target);
            let proofs: Vec<ViewChange> =
                self.view_changes[&target].values().take(self.cfg.quorum as usize).cloned().collect();
            let nv = NewView::new(&self.key, self.id, self.state.epoch, target, proofs);
            out.push(Output::Broadcast(ConsensusMsg::NewView(nv.clone())));
            self.on_new_view(nv, now_ns, src, out);
        }
    }

    fn on_new_view(&mut self, nv: NewView, now_ns: u64, src: &mut dyn ProposalSource, out: &mut Vec<Output>) {
        if nv.view <= self.state.view {
            return;
        }
        if nv.leader != self.cfg.elect_leader(nv.epoch, nv.view) {
            out.push(Output::Rejected(ConsensusError::NotLeader { sender: nv.leader, epoch: nv.epoch, view: nv.view }));
            return;
        }
        if let Err(e) = self.check_new_view(&nv) {
            out.push(Output::Rejected(ConsensusError::InvalidCertificate(e)));
            return;
        }
        let view = nv.view;
        if let Some(b) = required_block(&nv.proofs) {
            self.known.insert(b.hash(), b);
        }
        self.state.view = view;
        self.state.target_view = view;
        self.state.leader = nv.leader;
        self.state.phase = Phase::Idle;
        self.state.proposal = None;
        self.new_view = Some(nv);
        self.proposed = false;
        out.push(Output::ViewChanged { epoch: self.state.epoch, view });
        self.arm_timer(out);
        self.future_proposals = self.future_proposals.split_off(&view);
        if let Some(p) = self.future_proposals.remove(&view) {
            self.handle_proposal(p, out);
        }
        self.try_propose(now_ns, src, out);
    }

    fn check_new_view(&self, nv: &NewView) -> Result<(), String> {
        if !self.dir.verify(nv.leader, &nv.signing_bytes(), &nv.signature) {
            return Err(format!("bad NEW_VIEW signature from {}", nv.leader));
        }
        let mut senders = BTreeSet::new();
        for p in &nv.proofs {
            if p.epoch != nv.epoch || p.new_view != nv.view {
                return Err(format!("view-change proof from {} is for another view", p.sender));
            }
            p.verify(&self.dir, self.cfg.quorum)?;
            senders.insert(p.sender);
        }
        if (senders.len() as u32) < self.cfg.quorum {
            return Err(format!("{} view-change proofs, quorum is {}", senders.len(), self.cfg.quorum));
        }
        Ok(())
    }
}

/// Conflicting copy of `block`: same body, timestamp bumped by one, re-signed
/// and re-hashed. Used to script equivocating leaders.
pub fn equivocal_twin(block: &ChainBlock, key: &KeyPair, scheme: HashScheme) -> ChainBlock {
    let mut twin = block.clone();
    let h = twin.header_mut();
    h.timestamp += 1;
    h.signature = crate::crypto::sign(crate::crypto::SignatureScheme::Mac33, key, &h.signing_bytes());
    h.block_hash = h.compute_hash(scheme);
    twin
}
