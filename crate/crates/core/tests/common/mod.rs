//! Builders and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use sha2::{Digest as _, Sha256};

use chainsplitter::connector::{
    assemble_block, BlockForming, PermissionRegistry, Role, ValidatedTransaction, Validator, DEFAULT_RETRY_BOUND,
};
use chainsplitter::crypto::{Digest, HashScheme, KeyPair};
use chainsplitter::types::{Address, ChainBlock, DataBlock, Transaction, TxType};

pub const GATEWAY: u64 = 0;

pub fn leader_key() -> KeyPair {
    KeyPair::from_seed(b"fixture-leader")
}

pub fn device_key(d: u64) -> KeyPair {
    KeyPair::from_seed(format!("fixture-device-{d}").as_bytes())
}

/// A sealed reading from `device` with the given field contents.
pub fn reading(device: u64, tx_id: u32, timestamp: u64, device_info: Vec<u8>, data: Vec<u8>) -> Transaction {
    Transaction::sealed(
        Address::device(device),
        Address::gateway(GATEWAY),
        TxType::Reading,
        device_info,
        data,
        timestamp,
        tx_id,
        &device_key(device),
        HashScheme::Sha256,
    )
    .unwrap()
}

pub fn validate(txs: Vec<Transaction>) -> Vec<Arc<ValidatedTransaction>> {
    let gw = Address::gateway(GATEWAY);
    let mut reg = PermissionRegistry::new();
    reg.admit(gw, [Role::Submit]);
    let mut v = Validator::new(gw, DEFAULT_RETRY_BOUND);
    txs.into_iter().map(|tx| Arc::new(v.validate_transaction(&reg, gw, tx).unwrap())).collect()
}

pub fn block_on(parent: &ChainBlock, txs: &[Arc<ValidatedTransaction>], now: u64) -> DataBlock {
    let key = leader_key();
    let forming = BlockForming {
        parent: parent.header(),
        parent_height: parent.height(),
        max_txs: txs.len(),
        leader_key: &key,
        hash_scheme: HashScheme::Sha256,
    };
    assemble_block(txs, &forming, now).unwrap()
}

/// Genesis followed by `blocks` blocks of `per_block` transactions, one
/// block per second starting at t=1.
pub fn chain(blocks: u64, per_block: u32) -> Vec<Arc<ChainBlock>> {
    let mut out = vec![Arc::new(ChainBlock::genesis(HashScheme::Sha256, true))];
    for h in 1..=blocks {
        let txs = (0..per_block)
            .map(|i| reading(i as u64, h as u32, h, vec![i as u8; 10], h.to_le_bytes().to_vec()))
            .collect();
        let block = block_on(out.last().unwrap(), &validate(txs), h);
        out.push(Arc::new(ChainBlock::Full(block)));
    }
    out
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

/// Merkle root by direct recursion with sha2: an odd level repeats its last
/// node, pairs are hashed bottom-up, and a lone leaf is hashed once.
pub fn oracle_merkle(leaves: &[Digest]) -> Digest {
    assert!(!leaves.is_empty());
    if leaves.len() == 1 {
        return sha256(&leaves[0]);
    }
    fn up(level: &[Digest]) -> Digest {
        if level.len() == 1 {
            return level[0];
        }
        let mut padded = level.to_vec();
        if padded.len() % 2 == 1 {
            padded.push(*padded.last().unwrap());
        }
        let next: Vec<Digest> = (0..padded.len() / 2)
            .map(|i| {
                let mut cat = padded[2 * i].to_vec();
                cat.extend_from_slice(&padded[2 * i + 1]);
                sha256(&cat)
            })
            .collect();
        up(&next)
    }
    up(leaves)
}

/// Canonical transaction bytes written field by field from the layout table,
/// with the mark byte after the signature type when given.
pub fn oracle_tx_bytes(tx: &Transaction, mark: Option<u8>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&tx.from.0);
    out.extend_from_slice(&tx.to.0);
    out.push(tx.tx_type as u8);
    out.extend_from_slice(&(tx.device_info.len() as u32).to_le_bytes());
    out.extend_from_slice(&tx.device_info);
    out.extend_from_slice(&tx.one_time_pk.0);
    out.extend_from_slice(&tx.timestamp.to_le_bytes());
    out.extend_from_slice(&tx.tx_id.to_le_bytes());
    out.extend_from_slice(&(tx.data.len() as u32).to_le_bytes());
    out.extend_from_slice(&tx.data);
    out.push(tx.hash_type);
    out.extend_from_slice(&tx.tx_hash);
    out.push(tx.sig_type);
    if let Some(m) = mark {
        out.push(m);
    }
    out.extend_from_slice(&tx.signature.0);
    out
}

/// Block size from field widths: 32+4+32+4+33+8 header bytes, then per
/// entry 4 (no) + 4 (tx id) + 4 (length) + marked tx + 32 (hash).
pub fn oracle_block_len(marked_tx_lens: &[usize]) -> usize {
    (32 + 4 + 32 + 4 + 33 + 8) + marked_tx_lens.iter().map(|l| 4 + 4 + 4 + l + 32).sum::<usize>()
}
