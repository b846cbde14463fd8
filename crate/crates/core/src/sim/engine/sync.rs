//! Overlay-to-cloud synchronization as message exchanges.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::cloud_connector::{
    aggregate_sync_votes, check_trigger, complete_sync, handle_sync_exception, plan_sync, prune_local,
    transfer_time_ns, verify_decision, vote_on_sync, ExceptionAction, ResponseKind, ResponseMessage, SessionDecision,
    SyncDecision, SyncPlan, SyncReason, SyncRequest, SyncSession, SyncVote, SECOND_NS,
};
use crate::error::{SimError, SyncError};
use crate::types::{ChainSegment, NodeId};

use super::super::config::Behavior;
use super::super::metrics::EventKind;
use super::super::node::{LeaderSession, SessionKey};
use super::{Engine, Ev, NetMsg, Upload, CLOUD};

impl Engine {
    fn vote_deadline_ns(&self) -> u64 {
        self.cfg.vote_deadline_ms * 1_000_000
    }

    fn sync_leader(&self, req: &SyncRequest) -> NodeId {
        self.ccfg.elect_leader(req.latest_height, 0)
    }

    /// Runs the hybrid trigger after an append and schedules a request.
    pub(super) fn check_trigger(&mut self, id: NodeId, now: u64) {
        if self.silent(id, now) {
            return;
        }
        let policy = self.cfg.policy();
        let stagger = self.cfg.request_stagger_ms * 1_000_000;
        let node = &mut self.nodes[id as usize];
        if node.in_progress.is_some() || node.request_scheduled || now < node.gate_until {
            return;
        }
        let decision = check_trigger(&policy, node.chain.bytes(), now, node.last_sync_ns, node.last_request_ns);
        if let Some(reason) = SyncReason::from_trigger(decision) {
            node.request_scheduled = true;
            self.queue.schedule(now + 1 + id as u64 * stagger, Ev::RequestFire { node: id, reason, armed_ns: now });
        }
    }

    pub(super) fn fire_request(&mut self, id: NodeId, reason: SyncReason, armed_ns: u64, now: u64) {
        let gate = 2 * self.vote_deadline_ns();
        let node = &mut self.nodes[id as usize];
        node.request_scheduled = false;
        // A session approved since arming already covers this request.
        let superseded = node.last_sync_ns > armed_ns;
        if superseded || node.in_progress.is_some() || now < node.gate_until || self.silent(id, now) {
            return;
        }
        let node = &mut self.nodes[id as usize];
        let tip = node.chain.tip();
        let req = SyncRequest::new(&node.key, id, tip.header().clone(), tip.height(), reason, now);
        node.last_request_ns = Some(now);
        node.gate_until = now + gate;
        self.log.counters.sync_requests += 1;
        self.log.event(now, Some(id), EventKind::SyncRequest, format!("{reason:?} at height {}", req.latest_height));
        self.multicast(id, NetMsg::Request(req), true, now);
    }

    pub(super) fn on_sync_request(&mut self, id: NodeId, req: &SyncRequest, now: u64) {
        if !req.verify(&self.dir) {
            return;
        }
        let key = (req.requester, req.issued_ns);
        let gate = now + 2 * self.vote_deadline_ns();
        if id == self.sync_leader(req) {
            let led: &mut LeaderSession = self.nodes[id as usize].led.entry(key).or_default();
            if led.session.is_none() && !led.closed {
                let mut session = SyncSession::new(req.clone());
                for v in std::mem::take(&mut led.early) {
                    session.add_vote(v, &self.dir);
                }
                led.session = Some(session);
                let at = now + self.vote_deadline_ns();
                self.queue.schedule(at, Ev::VoteDeadline { leader: id, key });
                self.tally(id, key, false, now);
            }
        }
        let node = &mut self.nodes[id as usize];
        if id != req.requester {
            node.gate_until = node.gate_until.max(gate);
        }
        if node.chain.tip_height() < req.latest_height {
            node.deferred.push(req.clone());
        } else {
            self.vote_now(id, req, now);
        }
    }

    pub(super) fn release_deferred(&mut self, id: NodeId, now: u64) {
        let node = &mut self.nodes[id as usize];
        if node.deferred.is_empty() {
            return;
        }
        let tip = node.chain.tip_height();
        let (ready, wait): (Vec<_>, Vec<_>) = node.deferred.drain(..).partition(|r| r.latest_height <= tip);
        node.deferred = wait;
        for r in ready {
            self.vote_now(id, &r, now);
        }
    }

    fn vote_now(&mut self, id: NodeId, req: &SyncRequest, now: u64) {
        let node = &self.nodes[id as usize];
        let Some(block) = node.chain.get(req.latest_height) else {
            return;
        };
        if let Some(v) = vote_on_sync(req, block.header(), &self.dir, &node.key, id) {
            let leader = self.sync_leader(req);
            self.send(id, leader, Arc::new(NetMsg::Vote(v)), now);
        }
    }

    pub(super) fn on_sync_vote(&mut self, id: NodeId, v: SyncVote, now: u64) {
        let key = (v.requester, v.issued_ns);
        let led = self.nodes[id as usize].led.entry(key).or_default();
        if led.closed {
            return;
        }
        match led.session.as_mut() {
            Some(s) => {
                s.add_vote(v, &self.dir);
                self.tally(id, key, false, now);
            }
            None => led.early.push(v),
        }
    }

    /// Leader-side aggregation; broadcasts the decision once approved.
    pub(super) fn tally(&mut self, leader: NodeId, key: SessionKey, deadline_passed: bool, now: u64) {
        let node = &mut self.nodes[leader as usize];
        let Some(led) = node.led.get_mut(&key) else {
            return;
        };
        if led.closed {
            return;
        }
        let Some(session) = led.session.as_mut() else {
            return;
        };
        match aggregate_sync_votes(session, &self.ccfg, deadline_passed) {
            Ok(SessionDecision::Approved) => {
                led.closed = true;
                let dec = SyncDecision::new(&node.key, leader, session);
                let votes = dec.votes.len();
                self.log.counters.sync_sessions += 1;
                self.log.event(
                    now,
                    Some(leader),
                    EventKind::SyncApproved,
                    format!("request {key:?} approved by {votes} votes"),
                );
                self.multicast(leader, NetMsg::Decision(dec), true, now);
            }
            Ok(_) => {}
            Err(e) => {
                led.closed = true;
                let votes = session.agree_votes.len();
                self.log.counters.sync_rejected += 1;
                self.log.event(
                    now,
                    Some(leader),
                    EventKind::SyncRejected,
                    format!("request {key:?}: {e} with {votes} votes"),
                );
            }
        }
    }

    pub(super) fn on_sync_decision(&mut self, id: NodeId, dec: &SyncDecision, now: u64) {
        if verify_decision(dec, &self.ccfg, &self.dir).is_err() {
            self.log.counters.consensus_rejections += 1;
            return;
        }
        let key = (dec.request.requester, dec.request.issued_ns);
        let watchdog = transfer_time_ns(
            2 * self.nodes[id as usize].chain.bytes(),
            self.cfg.cloud_bandwidth_bps,
            self.cfg.transfer_overhead,
        ) + 60 * SECOND_NS;
        let node = &mut self.nodes[id as usize];
        if node.in_progress.is_some() {
            return;
        }
        node.in_progress = Some(key);
        node.last_sync_ns = now;
        node.gate_until = 0;
        node.deferred.retain(|r| (r.requester, r.issued_ns) != key);
        self.queue.schedule(now + watchdog, Ev::Watchdog { node: id, key });

        let requester = dec.request.requester;
        let uploader = if self.ledger.is_marked(requester) {
            self.ledger.next_uploader(requester, self.cfg.overlay_size)
        } else {
            Some(requester)
        };
        if uploader != Some(id) || self.uploads.contains_key(&key) {
            return;
        }
        let mut session = SyncSession::new(dec.request.clone());
        for v in &dec.votes {
            session.add_vote(v.clone(), &self.dir);
        }
        if aggregate_sync_votes(&mut session, &self.ccfg, false) != Ok(SessionDecision::Approved) {
            return;
        }
        self.uploads.insert(key, Upload { session, uploader: id, tried: BTreeSet::from([id]), segment: None });
        self.start_upload(key, id, now);
    }

    pub(super) fn start_upload(&mut self, key: SessionKey, id: NodeId, now: u64) {
        if self.silent(id, now) {
            return;
        }
        let bad = self.active(id, Behavior::BadSync, now);
        let Some(up) = self.uploads.get_mut(&key) else {
            return;
        };
        up.uploader = id;
        up.tried.insert(id);
        let plan = plan_sync(
            &mut up.session,
            &self.nodes[id as usize].chain,
            &self.cloud,
            self.cfg.cloud_bandwidth_bps,
            self.cfg.transfer_overhead,
        );
        match plan {
            Ok(SyncPlan::Deny(resp)) => {
                self.log.counters.sync_denied += 1;
                self.log.event(now, Some(id), EventKind::SyncDenied, "archive already holds the requested head");
                self.respond_all(key, resp, now);
            }
            Ok(SyncPlan::Transfer { segment, duration_ns }) => {
                let segment = if bad { corrupt(&segment) } else { segment };
                up.segment = Some(segment);
                let at = now + duration_ns + self.cloud_latency();
                self.queue.schedule(at, Ev::UploadDone { key });
            }
            Err(e) => {
                self.log.counters.sync_exceptions += 1;
                self.log.event(
                    now,
                    Some(id),
                    EventKind::SyncException,
                    format!("uploader {id} could not cut the segment: {e}"),
                );
                self.hand_over(key, id, now);
            }
        }
    }

    /// Passes the upload to the next untried, unmarked node, or gives up.
    fn hand_over(&mut self, key: SessionKey, after: NodeId, now: u64) {
        let n = self.cfg.overlay_size;
        let next = self.uploads.get(&key).and_then(|up| {
            (1..n).map(|k| (after + k) % n).find(|c| !up.tried.contains(c) && !self.ledger.is_marked(*c))
        });
        match next {
            Some(node) => {
                let at = now + self.cloud_latency();
                self.queue.schedule(at, Ev::UploadStart { key, node });
            }
            None => {
                self.uploads.remove(&key);
                self.respond_all(key, ResponseMessage::exception("no uploader left"), now);
            }
        }
    }

    pub(super) fn finish_upload(&mut self, key: SessionKey, now: u64) -> Result<(), SimError> {
        self.apply_cloud_tampering(now);
        let report = self.cloud.verify_consistency();
        if !report.is_consistent() {
            let bad = report.replicas();
            self.log.counters.sync_exceptions += 1;
            self.log.event(
                now,
                None,
                EventKind::SyncException,
                format!("cloud replicas {bad:?} diverge from the agreed archive"),
            );
            let fixed =
                self.cloud.repair(&report).map_err(|e| self.violation(now, format!("cloud repair failed: {e}")))?;
            self.log.counters.replica_repairs += 1;
            self.log.event(
                now,
                None,
                EventKind::ReplicaRepair,
                format!("{fixed} replicas restored from the majority copy"),
            );
        }
        let Some(up) = self.uploads.get_mut(&key) else {
            return Ok(());
        };
        let uploader = up.uploader;
        let segment = up.segment.take().expect("upload in flight");
        let resp = complete_sync(&mut up.session, &mut self.cloud, &segment);
        match resp.kind {
            ResponseKind::Regular => {
                let up = self.uploads.remove(&key).expect("present");
                self.log.counters.sync_regular += 1;
                self.log.event(
                    now,
                    Some(uploader),
                    EventKind::SyncRegular,
                    format!(
                        "archived heights {}..={} ({} bytes)",
                        segment.first_height(),
                        segment.last_height(),
                        segment.encoded_len()
                    ),
                );
                self.last_sync = Some((up.session, segment));
                if self.cloud.is_materialized() {
                    self.check_archive(now)?;
                }
                self.respond_all(key, resp, now);
            }
            _ => {
                let detail = resp.error_detail.clone().unwrap_or_default();
                self.log.counters.sync_exceptions += 1;
                self.log.event(
                    now,
                    Some(uploader),
                    EventKind::SyncException,
                    format!("upload from node {uploader} refused: {detail}"),
                );
                let action = handle_sync_exception(&mut self.ledger, uploader, &detail, self.cfg.overlay_size);
                if let ExceptionAction::MarkMalicious { alert, .. } = action {
                    self.log.counters.malicious_marks += 1;
                    self.log.counters.admin_alerts += 1;
                    self.log.event(
                        now,
                        Some(alert.node),
                        EventKind::MaliciousMark,
                        format!("node {} marked potentially malicious", alert.node),
                    );
                    self.log.event(
                        now,
                        Some(alert.node),
                        EventKind::AdminAlert,
                        format!("node {} reached {} sync errors; last: {}", alert.node, alert.errors, alert.detail),
                    );
                }
                self.hand_over(key, uploader, now);
            }
        }
        Ok(())
    }

    fn apply_cloud_tampering(&mut self, now: u64) {
        let head = self.cloud.get_head().map(|h| h.height).unwrap_or(0);
        if head == 0 {
            return;
        }
        for (i, f) in self.cfg.faults.iter().enumerate() {
            if f.behavior == Behavior::TamperCloudReplica
                && f.active_at(now)
                && !self.tampered.contains(&i)
                && self.cloud.tamper_block(f.node, head)
            {
                self.tampered.insert(i);
            }
        }
    }

    fn respond_all(&mut self, key: SessionKey, resp: ResponseMessage, now: u64) {
        let msg = Arc::new(NetMsg::Response(key, resp));
        for to in 0..self.cfg.overlay_size {
            let at = now + self.cloud_latency();
            self.queue.schedule(at, Ev::Deliver { from: CLOUD, to, msg: msg.clone() });
        }
    }

    pub(super) fn on_sync_response(&mut self, id: NodeId, key: SessionKey, resp: &ResponseMessage) {
        let node = &mut self.nodes[id as usize];
        if resp.kind == ResponseKind::Regular {
            match prune_local(&mut node.chain, resp) {
                Ok(n) => {
                    self.log.counters.pruned_blocks += n as u64;
                    node.note_bytes();
                }
                Err(SyncError::HeadMismatch) => log::debug!("node {id} does not hold the archived head yet"),
                Err(e) => log::debug!("node {id} could not prune: {e}"),
            }
        }
        if node.in_progress == Some(key) {
            node.in_progress = None;
        }
    }
}

/// A segment with one block's merkle root flipped, as a faulty uploader
/// would send it.
fn corrupt(segment: &ChainSegment) -> ChainSegment {
    let mut blocks = segment.blocks().to_vec();
    let i = blocks.len() / 2;
    let mut b = (*blocks[i]).clone();
    b.header_mut().merkle_root[0] ^= 0xff;
    blocks[i] = Arc::new(b);
    ChainSegment::new(blocks).expect("heights unchanged")
}
