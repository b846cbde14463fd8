use std::sync::Arc;

use crate::crypto::{sign, HashScheme, KeyPair, Signature, SignatureScheme, ZERO_DIGEST};
use crate::error::FormingError;
use crate::types::{BlockBody, BlockHeader, DataBlock, NodeId, BLOCK_VERSION};

use super::pool::TxPool;
use super::validation::ValidatedTransaction;

pub const DEFAULT_MAX_TXS: usize = 5000;

/// Parent and leader context for forming the next block.
#[derive(Debug, Clone, Copy)]
pub struct BlockForming<'a> {
    pub parent: &'a BlockHeader,
    pub parent_height: u64,
    pub max_txs: usize,
    pub leader_key: &'a KeyPair,
    pub hash_scheme: HashScheme,
}

/// Bundles already-ordered validated transactions into a signed block.
pub fn assemble_block(
    txs: &[Arc<ValidatedTransaction>],
    forming: &BlockForming<'_>,
    now: u64,
) -> Result<DataBlock, FormingError> {
    if txs.is_empty() {
        return Err(FormingError::EmptyPool);
    }
    if now <= forming.parent.timestamp {
        return Err(FormingError::StaleTimestamp { now, parent: forming.parent.timestamp });
    }
    let entries = txs.iter().enumerate().map(|(i, t)| t.to_entry(i as u32 + 1)).collect();
    let body = BlockBody { entries };
    let mut header = BlockHeader {
        hash_pre_data_blk: forming.parent.block_hash,
        block_hash: ZERO_DIGEST,
        version: BLOCK_VERSION,
        merkle_root: body.merkle_root(forming.hash_scheme),
        num_txs: txs.len() as u32,
        signature: Signature::ZERO,
        timestamp: now,
    };
    header.signature = sign(SignatureScheme::Mac33, forming.leader_key, &header.signing_bytes());
    Ok(DataBlock { header: header.sealed(forming.hash_scheme), body, height: forming.parent_height + 1 })
}

/// Forms the next block from the head of the pool. Up to `max_txs`
/// transactions leave the pool; the rest stay for later epochs.
pub fn build_block(
    pool: &mut TxPool,
    forming: &BlockForming<'_>,
    caller: NodeId,
    leader: NodeId,
    now: u64,
) -> Result<DataBlock, FormingError> {
    if caller != leader {
        return Err(FormingError::NotLeader);
    }
    if pool.is_empty() {
        return Err(FormingError::EmptyPool);
    }
    let txs = pool.peek(forming.max_txs);
    let block = assemble_block(&txs, forming, now)?;
    pool.take(txs.len());
    Ok(block)
}
