//! Sync request, agreement votes and the leader's aggregated decision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusConfig, Directory};
use crate::crypto::{sign, Digest, KeyPair, Signature, SignatureScheme};
use crate::error::SyncError;
use crate::types::{BlockHeader, NodeId};

use super::trigger::TriggerDecision;

pub const KIND_SYNC_REQUEST: u8 = 0x10;
pub const KIND_SYNC_VOTE: u8 = 0x11;
pub const KIND_SYNC_DECISION: u8 = 0x12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncReason {
    ThresholdReached,
    Scheduled,
}

impl SyncReason {
    pub fn from_trigger(t: TriggerDecision) -> Option<Self> {
        match t {
            TriggerDecision::ThresholdReached => Some(SyncReason::ThresholdReached),
            TriggerDecision::Scheduled => Some(SyncReason::Scheduled),
            TriggerDecision::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncRequest {
    pub requester: NodeId,
    pub latest_block: BlockHeader,
    pub latest_height: u64,
    pub reason: SyncReason,
    pub issued_ns: u64,
    pub signature: Signature,
}

impl SyncRequest {
    pub fn new(
        key: &KeyPair,
        requester: NodeId,
        latest_block: BlockHeader,
        latest_height: u64,
        reason: SyncReason,
        issued_ns: u64,
    ) -> Self {
        let mut r =
            SyncRequest { requester, latest_block, latest_height, reason, issued_ns, signature: Signature::ZERO };
        r.signature = sign(SignatureScheme::Mac33, key, &r.signing_bytes());
        r
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + 113 + 8 + 1 + 8);
        out.push(KIND_SYNC_REQUEST);
        out.extend_from_slice(&self.requester.to_le_bytes());
        out.extend_from_slice(&self.latest_block.encode());
        out.extend_from_slice(&self.latest_height.to_le_bytes());
        out.push(self.reason as u8);
        out.extend_from_slice(&self.issued_ns.to_le_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        dir.verify(self.requester, &self.signing_bytes(), &self.signature)
    }

    pub fn head_hash(&self) -> Digest {
        self.latest_block.block_hash
    }
}

/// A signed "agree to synchronization" response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncVote {
    pub voter: NodeId,
    pub requester: NodeId,
    pub issued_ns: u64,
    pub head_hash: Digest,
    pub signature: Signature,
}

impl SyncVote {
    pub fn new(key: &KeyPair, voter: NodeId, req: &SyncRequest) -> Self {
        let mut v = SyncVote {
            voter,
            requester: req.requester,
            issued_ns: req.issued_ns,
            head_hash: req.head_hash(),
            signature: Signature::ZERO,
        };
        v.signature = sign(SignatureScheme::Mac33, key, &v.signing_bytes());
        v
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + 4 + 8 + 32);
        out.push(KIND_SYNC_VOTE);
        out.extend_from_slice(&self.voter.to_le_bytes());
        out.extend_from_slice(&self.requester.to_le_bytes());
        out.extend_from_slice(&self.issued_ns.to_le_bytes());
        out.extend_from_slice(&self.head_hash);
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        dir.verify(self.voter, &self.signing_bytes(), &self.signature)
    }

    fn matches(&self, req: &SyncRequest) -> bool {
        self.requester == req.requester && self.issued_ns == req.issued_ns && self.head_hash == req.head_hash()
    }
}

/// Agree iff the request is authentic and the requester's head equals ours.
pub fn vote_on_sync(
    req: &SyncRequest,
    my_latest: &BlockHeader,
    dir: &Directory,
    key: &KeyPair,
    me: NodeId,
) -> Option<SyncVote> {
    if !req.verify(dir) {
        log::debug!("node {me}: dropping sync request with bad signature from {}", req.requester);
        return None;
    }
    (req.head_hash() == my_latest.block_hash).then(|| SyncVote::new(key, me, req))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionDecision {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    None,
    Regular,
    Exception,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncSession {
    pub request: SyncRequest,
    pub agree_votes: BTreeMap<NodeId, SyncVote>,
    pub decision: SessionDecision,
    /// Heights `first..=last` of the segment, fixed when the transfer starts.
    pub segment: Option<(u64, u64)>,
    pub outcome: SessionOutcome,
}

impl SyncSession {
    pub fn new(request: SyncRequest) -> Self {
        SyncSession {
            request,
            agree_votes: BTreeMap::new(),
            decision: SessionDecision::Pending,
            segment: None,
            outcome: SessionOutcome::None,
        }
    }

    /// Records a vote if it is authentic and matches the request. Returns
    /// whether the vote was new.
    pub fn add_vote(&mut self, vote: SyncVote, dir: &Directory) -> bool {
        if !vote.matches(&self.request) || !vote.verify(dir) || self.agree_votes.contains_key(&vote.voter) {
            return false;
        }
        self.agree_votes.insert(vote.voter, vote);
        true
    }
}

/// Leader-side tally. Approval needs strictly more than two thirds of all
/// peers; a session still short of that at the deadline is rejected.
pub fn aggregate_sync_votes(
    session: &mut SyncSession,
    cfg: &ConsensusConfig,
    deadline_passed: bool,
) -> Result<SessionDecision, SyncError> {
    if session.decision != SessionDecision::Pending {
        return Ok(session.decision);
    }
    if session.agree_votes.len() as u32 >= cfg.quorum {
        session.decision = SessionDecision::Approved;
    } else if deadline_passed {
        session.decision = SessionDecision::Rejected;
        return Err(SyncError::QuorumTimeout);
    }
    Ok(session.decision)
}

/// The leader's broadcast of who agreed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncDecision {
    pub leader: NodeId,
    pub request: SyncRequest,
    pub votes: Vec<SyncVote>,
    pub signature: Signature,
}

impl SyncDecision {
    pub fn new(key: &KeyPair, leader: NodeId, session: &SyncSession) -> Self {
        let mut d = SyncDecision {
            leader,
            request: session.request.clone(),
            votes: session.agree_votes.values().cloned().collect(),
            signature: Signature::ZERO,
        };
        d.signature = sign(SignatureScheme::Mac33, key, &d.signing_bytes());
        d
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = vec![KIND_SYNC_DECISION];
        out.extend_from_slice(&self.leader.to_le_bytes());
        out.extend_from_slice(&self.request.encode());
        out.extend_from_slice(&(self.votes.len() as u32).to_le_bytes());
        for v in &self.votes {
            out.extend_from_slice(&v.encode());
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }
}

/// Re-checks every vote carried by a decision, so a leader cannot approve a
/// session by forging or replaying agreement.
pub fn verify_decision(dec: &SyncDecision, cfg: &ConsensusConfig, dir: &Directory) -> Result<(), SyncError> {
    if !dir.verify(dec.leader, &dec.signing_bytes(), &dec.signature) || !dec.request.verify(dir) {
        return Err(SyncError::NotApproved);
    }
    let mut voters = BTreeSet::new();
    for v in &dec.votes {
        if v.matches(&dec.request) && v.verify(dir) {
            voters.insert(v.voter);
        }
    }
    if (voters.len() as u32) < cfg.quorum {
        return Err(SyncError::NotApproved);
    }
    Ok(())
}
