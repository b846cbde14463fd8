//! Chain verification, block forming and the byte-size model.

mod common;

use std::sync::Arc;

use proptest::prelude::*;

use chainsplitter::connector::{build_block, BlockForming, TxPool};
use chainsplitter::crypto::{sign, HashScheme, SignatureScheme};
use chainsplitter::error::FormingError;
use chainsplitter::sim::presets::preset;
use chainsplitter::sim::workload::{stub_workload, StubPool, Workload};
use chainsplitter::types::{verify_blocks, verify_chain, ChainBlock, ChainSegment, DataBlock, HEADER_LEN};

use common::*;

fn segment(blocks: &[Arc<ChainBlock>]) -> ChainSegment {
    ChainSegment::new(blocks.to_vec()).unwrap()
}

fn full(b: &ChainBlock) -> DataBlock {
    match b {
        ChainBlock::Full(d) => d.clone(),
        ChainBlock::Stub(_) => panic!("expected a materialized block"),
    }
}

#[test]
fn ten_linked_blocks_pass() {
    let c = chain(10, 3);
    let report = verify_chain(&segment(&c[1..]), Some(c[0].header()), HashScheme::Sha256);
    assert!(report.passed(), "{}", report.summary());
    assert_eq!(report.checks.len(), 10);
}

#[test]
fn mutated_body_fails_merkle_only_at_that_height() {
    let mut c = chain(10, 3);
    let mut b5 = full(&c[5]);
    let e = &mut b5.body.entries[1];
    let n = e.tx_data.len();
    e.tx_data[n - 40] ^= 0xff;
    // Keep the entry self-consistent so only the root can catch it.
    e.tx_hash = sha256(&e.tx_data);
    let leaves: Vec<_> = b5.body.entries.iter().map(|e| e.tx_hash).collect();
    assert_ne!(oracle_merkle(&leaves), b5.header.merkle_root);
    c[5] = Arc::new(ChainBlock::Full(b5));

    let report = verify_chain(&segment(&c[1..]), Some(c[0].header()), HashScheme::Sha256);
    assert!(!report.passed());
    let failed: Vec<_> = report.failures().map(|f| f.height).collect();
    assert_eq!(failed, vec![5]);
    assert!(report.checks.iter().all(|c| c.hash_link && c.block_hash && c.timestamp));
    assert!(!report.checks[4].merkle_root);
}

#[test]
fn repeated_timestamp_fails_monotonicity() {
    let c = chain(2, 2);
    let mut b3 = block_on(&c[2], &validate(vec![reading(0, 3, 3, vec![], vec![3])]), 3);
    b3.header.timestamp = c[2].header().timestamp;
    b3.header.signature = sign(SignatureScheme::Mac33, &leader_key(), &b3.header.signing_bytes());
    b3.header = b3.header.clone().sealed(HashScheme::Sha256);
    let b3 = Arc::new(ChainBlock::Full(b3));
    let b4 = Arc::new(ChainBlock::Full(block_on(&b3, &validate(vec![reading(0, 4, 4, vec![], vec![4])]), 4)));
    let blocks = vec![c[1].clone(), c[2].clone(), b3, b4];
    let report = verify_blocks(&blocks, Some(c[0].header()), HashScheme::Sha256);
    let failed: Vec<_> = report.failures().map(|f| (f.height, f.timestamp)).collect();
    assert_eq!(failed, vec![(3, false)]);
}

#[test]
fn wrong_trusted_head_is_unanchored() {
    let c = chain(4, 1);
    let report = verify_chain(&segment(&c[2..]), Some(c[0].header()), HashScheme::Sha256);
    assert!(!report.anchored);
    assert!(!report.passed());
    assert!(verify_chain(&segment(&c[2..]), Some(c[1].header()), HashScheme::Sha256).passed());
    assert!(verify_chain(&segment(&c[2..]), None, HashScheme::Sha256).passed());
}

#[test]
fn swapped_blocks_break_links() {
    let c = chain(4, 1);
    let blocks = vec![c[1].clone(), c[3].clone(), c[2].clone()];
    let report = verify_blocks(&blocks, Some(c[0].header()), HashScheme::Sha256);
    assert!(report.failures().any(|f| !f.hash_link));
}

fn pool_of(n: u64) -> TxPool {
    let mut pool = TxPool::new(10_000);
    let txs = (0..n).map(|i| reading(i % 50, (i / 50) as u32, 100 + i / 50, vec![], vec![i as u8; 4])).collect();
    for tx in validate(txs) {
        pool.insert(tx).unwrap();
    }
    pool
}

fn forming<'a>(parent: &'a ChainBlock, key: &'a chainsplitter::crypto::KeyPair, max_txs: usize) -> BlockForming<'a> {
    BlockForming {
        parent: parent.header(),
        parent_height: parent.height(),
        max_txs,
        leader_key: key,
        hash_scheme: HashScheme::Sha256,
    }
}

#[test]
fn build_block_takes_up_to_max_in_order() {
    let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
    let key = leader_key();
    let mut pool = pool_of(5);
    let b = build_block(&mut pool, &forming(&genesis, &key, 2000), 0, 0, 500).unwrap();
    assert_eq!(b.header.num_txs, 5);
    assert_eq!(b.body.entries.iter().map(|e| e.no).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    let leaves: Vec<_> = b.body.entries.iter().map(|e| sha256(&e.tx_data)).collect();
    assert_eq!(b.header.merkle_root, oracle_merkle(&leaves));
    assert!(pool.is_empty());
    let single = verify_chain(&segment(&[Arc::new(ChainBlock::Full(b))]), Some(genesis.header()), HashScheme::Sha256);
    assert!(single.passed());

    let mut pool = pool_of(3000);
    let b = build_block(&mut pool, &forming(&genesis, &key, 2000), 0, 0, 500).unwrap();
    assert_eq!(b.header.num_txs, 2000);
    assert_eq!(pool.len(), 1000);
    let keys: Vec<_> = b.body.entries.iter().map(|e| e.transaction().unwrap().0.key()).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn build_block_errors() {
    let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
    let key = leader_key();
    let mut pool = pool_of(3);
    assert_eq!(build_block(&mut pool, &forming(&genesis, &key, 10), 1, 0, 5).unwrap_err(), FormingError::NotLeader);
    assert_eq!(pool.len(), 3);
    let mut empty = TxPool::new(10);
    assert_eq!(build_block(&mut empty, &forming(&genesis, &key, 10), 0, 0, 5).unwrap_err(), FormingError::EmptyPool);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The simulator's size-only accounting of a tick's workload equals the
    /// encoded length of the block built from the same transactions.
    #[test]
    fn accounting_size_equals_encoder_size(
        wsans in 1u32..4,
        per_wsan in 1u32..7,
        avg in 140u32..181,
        seed in any::<u64>(),
        tick in 1u64..10_000,
    ) {
        let mut cfg = preset("tiny-e2e").unwrap();
        cfg.num_wsans = wsans;
        cfg.nodes_per_wsan = per_wsan;
        cfg.avg_tx_bytes = avg;
        cfg.seed = seed;
        cfg.validate().unwrap();
        let workload = Workload::new(&cfg);
        let txs: Vec<_> = workload.generate_workload(&cfg, tick).into_iter().map(|(_, tx)| tx).collect();
        let validated = validate(txs);
        let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
        let block = block_on(&genesis, &validated, tick_s(tick) + 1);
        let marked: Vec<usize> = validated.iter().map(|v| v.marked_bytes().len()).collect();

        let mut stubs = StubPool::default();
        for s in stub_workload(&cfg, workload.sizes(), tick) {
            stubs.insert(s);
        }
        let shape = stubs.peek(usize::MAX).unwrap();
        prop_assert_eq!(shape.count as usize, validated.len());
        prop_assert_eq!(block.encoded_len(), oracle_block_len(&marked));
        prop_assert_eq!(block.encode().len() as u64, HEADER_LEN as u64 + shape.body_bytes);
    }

    /// Roots from block forming match the brute-force tree on random pools.
    #[test]
    fn build_block_root_matches_oracle(n in 1u64..300, max in 1usize..400) {
        let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
        let key = leader_key();
        let mut pool = pool_of(n);
        let b = build_block(&mut pool, &forming(&genesis, &key, max), 0, 0, 1000).unwrap();
        prop_assert_eq!(b.header.num_txs as u64, n.min(max as u64));
        let leaves: Vec<_> = b.body.entries.iter().map(|e| sha256(&e.tx_data)).collect();
        prop_assert_eq!(b.header.merkle_root, oracle_merkle(&leaves));
    }
}

fn tick_s(tick: u64) -> u64 {
    tick * preset("tiny-e2e").unwrap().sample_period_ms / 1000
}
