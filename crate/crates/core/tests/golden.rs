//! Frozen byte vectors for one transaction, one block and one 3-block segment.
//! Set `CHAINSPLITTER_BLESS=1` to rewrite the fixtures after a deliberate
//! format change.

mod common;

use std::path::PathBuf;

use chainsplitter::connector::MARK;
use chainsplitter::crypto::HashScheme;
use chainsplitter::types::{decode_block, ChainBlock, ChainSegment, DataBlock, Transaction, HEADER_LEN, TX_FIXED_LEN};

use common::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check_golden(name: &str, bytes: &[u8]) {
    let path = fixture(name);
    if std::env::var_os("CHAINSPLITTER_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, hex::encode(bytes) + "\n").unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let golden = hex::decode(text.trim()).unwrap();
    assert_eq!(hex::encode(bytes), hex::encode(&golden), "{name} drifted from its fixture");
}

fn golden_tx() -> Transaction {
    reading(3, 7, 1_700_000_000, b"temp-probe".to_vec(), 215u64.to_le_bytes().to_vec())
}

fn golden_block() -> DataBlock {
    let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
    let txs = (0..3).map(|d| reading(d, 1, 1_700_000_000, vec![d as u8; 4], vec![0xAB; 8])).collect();
    block_on(&genesis, &validate(txs), 1_700_000_001)
}

#[test]
fn transaction_vector() {
    let tx = golden_tx();
    let bytes = tx.encode().unwrap();
    assert_eq!(bytes, oracle_tx_bytes(&tx, None));
    assert_eq!(bytes.len(), TX_FIXED_LEN + 10 + 8);
    // The hash covers every field before it.
    let preimage_len = bytes.len() - 32 - 1 - 33;
    assert_eq!(tx.tx_hash, sha256(&bytes[..preimage_len]));
    check_golden("transaction.hex", &bytes);
    assert_eq!(Transaction::decode(&bytes).unwrap(), tx);
}

#[test]
fn block_vector() {
    let block = golden_block();
    let bytes = block.encode();
    let marked: Vec<usize> = block.body.entries.iter().map(|e| e.tx_data.len()).collect();
    assert_eq!(bytes.len(), oracle_block_len(&marked));
    let leaves: Vec<_> = block.body.entries.iter().map(|e| sha256(&e.tx_data)).collect();
    assert_eq!(block.header.merkle_root, oracle_merkle(&leaves));
    for e in &block.body.entries {
        let (tx, mark) = e.transaction().unwrap();
        assert_eq!(mark, MARK);
        assert_eq!(e.tx_data, oracle_tx_bytes(&tx, Some(MARK)));
    }
    assert_eq!(block.header.block_hash, sha256(&bytes[..HEADER_LEN]));
    check_golden("block.hex", &bytes);
    assert_eq!(decode_block(&bytes, 1, HashScheme::Sha256).unwrap(), block);
}

#[test]
fn segment_vector() {
    let blocks = chain(3, 2);
    let segment = ChainSegment::new(blocks[1..].to_vec()).unwrap();
    let bytes = segment.encode().unwrap();
    let body: usize = blocks[1..].iter().map(|b| 4 + b.encoded_len() as usize).sum();
    assert_eq!(bytes.len(), 8 + 4 + body);
    check_golden("segment.hex", &bytes);
    let back = ChainSegment::decode(&bytes, HashScheme::Sha256).unwrap();
    assert_eq!(
        back.blocks().iter().map(|b| b.hash()).collect::<Vec<_>>(),
        blocks[1..].iter().map(|b| b.hash()).collect::<Vec<_>>()
    );
}

#[test]
fn two_thousand_transaction_block_size() {
    // 150-byte transactions: 140 fixed bytes, 2 of device info, 8 of data.
    let txs: Vec<_> = (0..2000u64).map(|d| reading(d, 1, 10, vec![1, 2], vec![0; 8])).collect();
    assert!(txs.iter().all(|t| t.encoded_len() == 150));
    let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
    let block = block_on(&genesis, &validate(txs), 11);
    assert_eq!(block.encoded_len(), oracle_block_len(&[151; 2000]));
    assert_eq!(block.encoded_len(), 390_113);
    assert_eq!(block.encode().len(), 390_113);
}

#[test]
fn flipped_merkle_byte_is_malformed() {
    let mut bytes = golden_block().encode();
    bytes[36] ^= 0x01;
    assert!(decode_block(&bytes, 1, HashScheme::Sha256).is_err());
    let mut bytes = golden_block().encode();
    let last = bytes.len() - 40;
    bytes[last] ^= 0x01;
    assert!(decode_block(&bytes, 1, HashScheme::Sha256).is_err());
}

#[test]
fn genesis_is_a_bare_header() {
    let g = ChainBlock::genesis(HashScheme::Sha256, true);
    assert_eq!(g.encoded_len(), HEADER_LEN as u64);
    assert_eq!(ChainBlock::genesis(HashScheme::Sha256, false).hash(), g.hash());
}
