//! Consensus wire messages. Every message kind has a canonical encoding: a
//! one-byte kind tag, the signed body, then the 33-byte sender signature.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::crypto::{sign, Digest, KeyPair, Signature, SignatureScheme};
use crate::types::{ChainBlock, NodeId};

use super::config::Directory;

pub const KIND_PROPOSE: u8 = 1;
pub const KIND_VOTE: u8 = 2;
pub const KIND_VIEW_CHANGE: u8 = 3;
pub const KIND_NEW_VIEW: u8 = 4;
pub const KIND_BLOCK_REQUEST: u8 = 5;
pub const KIND_BLOCK_RESPONSE: u8 = 6;
pub const KIND_DECIDED: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum VoteStage {
    Prepare = 0,
    Commit = 1,
}

fn block_bytes(block: &ChainBlock) -> Vec<u8> {
    match block {
        ChainBlock::Full(b) => b.encode(),
        ChainBlock::Stub(s) => {
            let mut out = s.header.encode().to_vec();
            out.extend_from_slice(&s.height.to_le_bytes());
            out.extend_from_slice(&s.body_bytes.to_le_bytes());
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedVote {
    pub voter: NodeId,
    pub epoch: u64,
    pub view: u32,
    pub stage: VoteStage,
    pub block_hash: Digest,
    pub signature: Signature,
}

impl SignedVote {
    pub fn new(key: &KeyPair, voter: NodeId, epoch: u64, view: u32, stage: VoteStage, block_hash: Digest) -> Self {
        let mut v = SignedVote { voter, epoch, view, stage, block_hash, signature: Signature::ZERO };
        v.signature = sign(SignatureScheme::Mac33, key, &v.signing_bytes());
        v
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + 8 + 4 + 1 + 32);
        out.push(KIND_VOTE);
        out.extend_from_slice(&self.voter.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.view.to_le_bytes());
        out.push(self.stage as u8);
        out.extend_from_slice(&self.block_hash);
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
}

/// Checks that `votes` are at least `quorum` signature-valid votes from
/// distinct voters, all for the given epoch, stage and block.
pub fn check_quorum_certificate(
    dir: &Directory,
    votes: &[SignedVote],
    quorum: u32,
    epoch: u64,
    stage: VoteStage,
    hash: &Digest,
    view: Option<u32>,
) -> Result<(), String> {
    let mut voters = BTreeSet::new();
    for v in votes {
        if v.epoch != epoch || v.stage != stage || &v.block_hash != hash || view.is_some_and(|w| w != v.view) {
            return Err(format!("vote from {} does not match certificate", v.voter));
        }
        if !v.verify(dir) {
            return Err(format!("bad signature on vote from {}", v.voter));
        }
        voters.insert(v.voter);
    }
    if (voters.len() as u32) < quorum {
        return Err(format!("{} distinct voters, quorum is {quorum}", voters.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub leader: NodeId,
    pub epoch: u64,
    pub view: u32,
    pub block: Arc<ChainBlock>,
    pub signature: Signature,
}

impl Proposal {
    pub fn new(key: &KeyPair, leader: NodeId, epoch: u64, view: u32, block: Arc<ChainBlock>) -> Self {
        let mut p = Proposal { leader, epoch, view, block, signature: Signature::ZERO };
        p.signature = sign(SignatureScheme::Mac33, key, &p.signing_bytes());
        p
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + 8 + 4 + 32);
        out.push(KIND_PROPOSE);
        out.extend_from_slice(&self.leader.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.view.to_le_bytes());
        out.extend_from_slice(&self.block.hash());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        let body = block_bytes(&self.block);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        dir.verify(self.leader, &self.signing_bytes(), &self.signature)
    }
}

/// Proof that a block gathered a prepare quorum in some view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedCert {
    pub view: u32,
    pub block: Arc<ChainBlock>,
    pub votes: Vec<SignedVote>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewChange {
    pub sender: NodeId,
    pub epoch: u64,
    pub new_view: u32,
    pub prepared: Option<PreparedCert>,
    pub signature: Signature,
}

impl ViewChange {
    pub fn new(key: &KeyPair, sender: NodeId, epoch: u64, new_view: u32, prepared: Option<PreparedCert>) -> Self {
        let mut m = ViewChange { sender, epoch, new_view, prepared, signature: Signature::ZERO };
        m.signature = sign(SignatureScheme::Mac33, key, &m.signing_bytes());
        m
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + 8 + 4 + 1 + 4 + 32);
        out.push(KIND_VIEW_CHANGE);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.new_view.to_le_bytes());
        match &self.prepared {
            Some(c) => {
                out.push(1);
                out.extend_from_slice(&c.view.to_le_bytes());
                out.extend_from_slice(&c.block.hash());
            }
            None => out.push(0),
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        if let Some(c) = &self.prepared {
            out.extend_from_slice(&(c.votes.len() as u32).to_le_bytes());
            for v in &c.votes {
                out.extend_from_slice(&v.encode());
            }
        }
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn verify(&self, dir: &Directory, quorum: u32) -> Result<(), String> {
        if !dir.verify(self.sender, &self.signing_bytes(), &self.signature) {
            return Err(format!("bad view-change signature from {}", self.sender));
        }
        if let Some(c) = &self.prepared {
            if c.view >= self.new_view {
                return Err("prepared certificate is not from an earlier view".into());
            }
            check_quorum_certificate(
                dir,
                &c.votes,
                quorum,
                self.epoch,
                VoteStage::Prepare,
                &c.block.hash(),
                Some(c.view),
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewView {
    pub leader: NodeId,
    pub epoch: u64,
    pub view: u32,
    pub proofs: Vec<ViewChange>,
    pub signature: Signature,
}

impl NewView {
    pub fn new(key: &KeyPair, leader: NodeId, epoch: u64, view: u32, proofs: Vec<ViewChange>) -> Self {
        let mut m = NewView { leader, epoch, view, proofs, signature: Signature::ZERO };
        m.signature = sign(SignatureScheme::Mac33, key, &m.signing_bytes());
        m
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + 8 + 4 + 4 + self.proofs.len() * 4);
        out.push(KIND_NEW_VIEW);
        out.extend_from_slice(&self.leader.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.view.to_le_bytes());
        out.extend_from_slice(&(self.proofs.len() as u32).to_le_bytes());
        for p in &self.proofs {
            out.extend_from_slice(&p.sender.to_le_bytes());
            out.extend_from_slice(&p.signature.0);
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        for p in &self.proofs {
            let enc = p.encode();
            out.extend_from_slice(&(enc.len() as u32).to_le_bytes());
            out.extend_from_slice(&enc);
        }
        out.extend_from_slice(&self.signature.0);
        out
    }

    /// The block the new leader is bound to re-propose: the one carried by the
    /// highest-view prepared certificate among the proofs, if any.
    pub fn required_block(&self) -> Option<Arc<ChainBlock>> {
        required_block(&self.proofs)
    }
}

pub fn required_block(proofs: &[ViewChange]) -> Option<Arc<ChainBlock>> {
    proofs.iter().filter_map(|p| p.prepared.as_ref()).max_by_key(|c| c.view).map(|c| c.block.clone())
}

/// A finalized block with its commit certificate, sent to nodes that fell behind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decided {
    pub epoch: u64,
    pub block: Arc<ChainBlock>,
    pub commits: Vec<SignedVote>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusMsg {
    Propose(Proposal),
    Vote(SignedVote),
    ViewChange(ViewChange),
    NewView(NewView),
    BlockRequest { epoch: u64, hash: Digest },
    BlockResponse { epoch: u64, block: Arc<ChainBlock> },
    Decided(Decided),
}

impl ConsensusMsg {
    pub fn epoch(&self) -> u64 {
        match self {
            ConsensusMsg::Propose(p) => p.epoch,
            ConsensusMsg::Vote(v) => v.epoch,
            ConsensusMsg::ViewChange(v) => v.epoch,
            ConsensusMsg::NewView(v) => v.epoch,
            ConsensusMsg::BlockRequest { epoch, .. } | ConsensusMsg::BlockResponse { epoch, .. } => *epoch,
            ConsensusMsg::Decided(d) => d.epoch,
        }
    }

    pub fn kind(&self) -> u8 {
        match self {
            ConsensusMsg::Propose(_) => KIND_PROPOSE,
            ConsensusMsg::Vote(_) => KIND_VOTE,
            ConsensusMsg::ViewChange(_) => KIND_VIEW_CHANGE,
            ConsensusMsg::NewView(_) => KIND_NEW_VIEW,
            ConsensusMsg::BlockRequest { .. } => KIND_BLOCK_REQUEST,
            ConsensusMsg::BlockResponse { .. } => KIND_BLOCK_RESPONSE,
            ConsensusMsg::Decided(_) => KIND_DECIDED,
        }
    }
}
