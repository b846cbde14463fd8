//! Per-node simulation state and block building shared by both fidelities.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cloud_connector::{SyncRequest, SyncSession, SyncVote};
use crate::connector::{assemble_block, BlockForming, TxPool, ValidatedTransaction};
use crate::consensus::{ProposalSource, Replica};
use crate::crypto::{sign, HashScheme, KeyPair, Signature, SignatureScheme, ZERO_DIGEST};
use crate::types::{BlockHeader, BlockStub, ChainBlock, LocalChain, NodeId, BLOCK_VERSION};

use super::workload::{BatchShape, StubPool};

/// Identifies a sync session by its requester and issue time.
pub type SessionKey = (NodeId, u64);

/// Transactions waiting for a block.
#[derive(Debug, Clone)]
pub(crate) enum Pending {
    Stubs(StubPool),
    Txs(TxPool),
}

impl Pending {
    pub fn is_empty(&self) -> bool {
        match self {
            Pending::Stubs(p) => p.is_empty(),
            Pending::Txs(p) => p.is_empty(),
        }
    }

    pub fn remove_through(&mut self, block: &ChainBlock) {
        if let Some(k) = block.last_key() {
            match self {
                Pending::Stubs(p) => p.remove_through(&k),
                Pending::Txs(p) => p.remove_through(&k),
            };
        }
    }

    /// Next block on top of `parent`, leaving the pool untouched.
    pub fn build(
        &self,
        parent: &ChainBlock,
        key: &KeyPair,
        scheme: HashScheme,
        ts: u64,
        max_txs: usize,
    ) -> Option<ChainBlock> {
        if ts <= parent.header().timestamp {
            return None;
        }
        match self {
            Pending::Stubs(p) => p.peek(max_txs).map(|shape| stub_block(parent, key, scheme, ts, shape)),
            Pending::Txs(p) => {
                let txs = p.peek(max_txs);
                (!txs.is_empty()).then(|| tx_block(parent, key, scheme, ts, &txs))
            }
        }
    }
}

pub(crate) fn stub_block(
    parent: &ChainBlock,
    key: &KeyPair,
    scheme: HashScheme,
    ts: u64,
    shape: BatchShape,
) -> ChainBlock {
    let height = parent.height() + 1;
    let mut header = BlockHeader {
        hash_pre_data_blk: parent.hash(),
        block_hash: ZERO_DIGEST,
        version: BLOCK_VERSION,
        merkle_root: BlockStub::body_commitment(scheme, height, shape.count, shape.body_bytes, Some(shape.last_key)),
        num_txs: shape.count,
        signature: Signature::ZERO,
        timestamp: ts,
    };
    header.signature = sign(SignatureScheme::Mac33, key, &header.signing_bytes());
    ChainBlock::Stub(BlockStub {
        header: header.sealed(scheme),
        height,
        body_bytes: shape.body_bytes,
        last_key: Some(shape.last_key),
    })
}

pub(crate) fn tx_block(
    parent: &ChainBlock,
    key: &KeyPair,
    scheme: HashScheme,
    ts: u64,
    txs: &[Arc<ValidatedTransaction>],
) -> ChainBlock {
    let forming = BlockForming {
        parent: parent.header(),
        parent_height: parent.height(),
        max_txs: txs.len(),
        leader_key: key,
        hash_scheme: scheme,
    };
    ChainBlock::Full(assemble_block(txs, &forming, ts).expect("non-empty batch on a later timestamp"))
}

/// Adapts a node's pool to the consensus proposal interface.
pub(crate) struct PoolSource<'a> {
    pub pool: &'a Pending,
    pub scheme: HashScheme,
    pub max_txs: usize,
}

impl ProposalSource for PoolSource<'_> {
    fn has_pending(&self) -> bool {
        !self.pool.is_empty()
    }

    fn build(&mut self, parent: &ChainBlock, leader_key: &KeyPair, now_ns: u64) -> Option<ChainBlock> {
        self.pool.build(parent, leader_key, self.scheme, now_ns / 1_000_000_000, self.max_txs)
    }
}

/// Sync agreement state kept by the session leader.
#[derive(Debug, Default)]
pub(crate) struct LeaderSession {
    pub session: Option<SyncSession>,
    /// Votes that overtook the request.
    pub early: Vec<SyncVote>,
    pub closed: bool,
}

#[derive(Debug)]
pub(crate) struct SimNode {
    pub id: NodeId,
    pub key: KeyPair,
    pub chain: LocalChain,
    /// Full fidelity only.
    pub replica: Option<Replica>,
    /// Per-node pool in full fidelity.
    pub pool: Option<Pending>,
    /// Bytes of every block this node ever appended, genesis included.
    pub appended_bytes: u64,
    pub last_sync_ns: u64,
    pub last_request_ns: Option<u64>,
    pub request_scheduled: bool,
    /// Own requests are held back until then after seeing someone else's.
    pub gate_until: u64,
    /// Requests for heights this node has not reached yet.
    pub deferred: Vec<SyncRequest>,
    pub in_progress: Option<SessionKey>,
    pub led: BTreeMap<SessionKey, LeaderSession>,
    pub day_max: u64,
    pub day_min: u64,
}

impl SimNode {
    pub fn new(
        id: NodeId,
        key: KeyPair,
        genesis: Arc<ChainBlock>,
        replica: Option<Replica>,
        pool: Option<Pending>,
    ) -> Self {
        let bytes = genesis.encoded_len();
        SimNode {
            id,
            key,
            chain: LocalChain::new(genesis),
            replica,
            pool,
            appended_bytes: bytes,
            last_sync_ns: 0,
            last_request_ns: None,
            request_scheduled: false,
            gate_until: 0,
            deferred: Vec::new(),
            in_progress: None,
            led: BTreeMap::new(),
            day_max: bytes,
            day_min: bytes,
        }
    }

    pub fn note_bytes(&mut self) {
        let b = self.chain.bytes();
        self.day_max = self.day_max.max(b);
        self.day_min = self.day_min.min(b);
    }

    pub fn reset_day(&mut self) {
        self.day_max = self.chain.bytes();
        self.day_min = self.chain.bytes();
    }
}
