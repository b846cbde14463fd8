use std::sync::Arc;

use super::*;
use crate::connector::{AccessPolicy, Permission};
use crate::crypto::HashScheme;
use crate::error::StoreError;
use crate::testutil::full_chain;
use crate::types::{verify_blocks, Address, ChainBlock, ChainSegment};

const SCHEME: HashScheme = HashScheme::Sha256;

fn segment(chain: &[Arc<ChainBlock>], first: u64, last: u64) -> ChainSegment {
    ChainSegment::new(chain[first as usize..=last as usize].to_vec()).unwrap()
}

fn archive(chain: &[Arc<ChainBlock>]) -> CloudArchive {
    CloudArchive::new(&chain[0], DEFAULT_REPLICATION, SCHEME, true)
}

fn reader() -> (Address, AccessPolicy) {
    let owner = Address::gateway(0);
    let reader = Address::device(7);
    let mut p = AccessPolicy::new();
    p.claim(CHAIN_RESOURCE, owner).unwrap();
    p.grant_access(&owner, reader, CHAIN_RESOURCE, Permission::Read).unwrap();
    (reader, p)
}

#[test]
fn first_segment_sets_head() {
    let chain = full_chain(SCHEME, 6, 2);
    let mut a = archive(&chain);
    let r = a.store_segment(&segment(&chain, 1, 4)).unwrap();
    assert_eq!((r.first, r.last), (1, 4));
    let head = a.get_head().unwrap();
    assert_eq!(head.height, 4);
    assert_eq!(head.header, *chain[4].header());
    assert!(head.dissenters.is_empty());
    assert_eq!(a.bytes(), (1..=4).map(|h| chain[h].encoded_len()).sum::<u64>());
}

#[test]
fn restore_is_idempotent() {
    let chain = full_chain(SCHEME, 4, 1);
    let mut a = archive(&chain);
    let seg = segment(&chain, 1, 4);
    let r1 = a.store_segment(&seg).unwrap();
    let bytes = a.bytes();
    let r2 = a.store_segment(&seg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(a.bytes(), bytes);
    assert_eq!(a.index().len(), 1);
}

#[test]
fn gap_is_rejected() {
    let chain = full_chain(SCHEME, 6, 1);
    let mut a = archive(&chain);
    a.store_segment(&segment(&chain, 1, 2)).unwrap();
    let err = a.store_segment(&segment(&chain, 4, 6)).unwrap_err();
    assert_eq!(err, StoreError::HeadGap { head_height: 2, segment_first: 4 });
}

#[test]
fn corrupted_segment_fails_verification() {
    let chain = full_chain(SCHEME, 3, 2);
    let mut a = archive(&chain);
    let mut blocks = chain[1..=3].to_vec();
    let mut b = (*blocks[1]).clone();
    if let ChainBlock::Full(db) = &mut b {
        db.body.entries[0].tx_data[10] ^= 1;
    }
    blocks[1] = Arc::new(b);
    let err = a.store_segment(&ChainSegment::new(blocks).unwrap()).unwrap_err();
    assert!(matches!(err, StoreError::Verification(_)), "{err:?}");
    assert_eq!(a.get_head().unwrap().height, 0);
}

#[test]
fn majority_head_with_one_tampered_replica() {
    let chain = full_chain(SCHEME, 4, 1);
    let mut a = archive(&chain);
    a.store_segment(&segment(&chain, 1, 4)).unwrap();
    a.tamper_head(2, chain[3].header().clone(), 3);
    let head = a.get_head().unwrap();
    assert_eq!(head.height, 4);
    assert_eq!(head.dissenters, vec![2]);
}

#[test]
fn two_identically_tampered_replicas_win() {
    // Outside the honest-majority model: the wrong head is returned.
    let chain = full_chain(SCHEME, 4, 1);
    let mut a = archive(&chain);
    a.store_segment(&segment(&chain, 1, 4)).unwrap();
    a.tamper_head(1, chain[3].header().clone(), 3);
    a.tamper_head(2, chain[3].header().clone(), 3);
    assert_eq!(a.get_head().unwrap().height, 3);
}

#[test]
fn no_quorum_when_all_differ() {
    let chain = full_chain(SCHEME, 4, 1);
    let mut a = archive(&chain);
    a.store_segment(&segment(&chain, 1, 4)).unwrap();
    a.tamper_head(1, chain[3].header().clone(), 3);
    a.tamper_head(2, chain[2].header().clone(), 2);
    assert_eq!(a.get_head().unwrap_err(), StoreError::NoQuorum);
}

/// Oracle: for each single-replica tamper of each height, recompute per-replica
/// digests by hand and compare with the report.
#[test]
fn consistency_reports_mutated_replica_and_range() {
    let chain = full_chain(SCHEME, 6, 2);
    for replica in 0..3u32 {
        for height in 1..=6u64 {
            let mut a = archive(&chain);
            a.store_segment(&segment(&chain, 1, 3)).unwrap();
            a.store_segment(&segment(&chain, 4, 6)).unwrap();
            assert!(a.verify_consistency().is_consistent());
            assert!(a.tamper_block(replica, height));
            let report = a.verify_consistency();
            let expected_first = if height <= 3 { 1 } else { 4 };
            assert_eq!(report.replicas().into_iter().collect::<Vec<_>>(), vec![replica]);
            assert!(report.divergent.iter().any(|d| d.first == expected_first));
            let blocks = a.replicas()[replica as usize].segments[&expected_first].blocks.clone().unwrap();
            assert_ne!(segment_digest(&blocks, SCHEME), a.index().get(height).unwrap().digest);
            // Reads avoid the bad replica; repair restores agreement.
            let (who, policy) = reader();
            let seg = a.query_blocks(&who, &policy, 1, 6).unwrap();
            assert!(verify_blocks(seg.blocks(), Some(chain[0].header()), SCHEME).passed());
            assert_eq!(a.repair(&report).unwrap(), 1);
            assert!(a.verify_consistency().is_consistent());
        }
    }
}

#[test]
fn query_access_and_range() {
    let chain = full_chain(SCHEME, 5, 1);
    let mut a = archive(&chain);
    a.store_segment(&segment(&chain, 1, 5)).unwrap();
    let (who, policy) = reader();
    let seg = a.query_blocks(&who, &policy, 2, 4).unwrap();
    assert_eq!((seg.first_height(), seg.last_height()), (2, 4));
    assert!(verify_blocks(seg.blocks(), Some(chain[1].header()), SCHEME).passed());
    let stranger = Address::device(99);
    assert_eq!(a.query_blocks(&stranger, &policy, 1, 2).unwrap_err(), StoreError::AccessDenied);
    assert!(matches!(a.query_blocks(&who, &policy, 4, 9).unwrap_err(), StoreError::RangeUnavailable { .. }));
}

#[test]
fn accounting_mode_keeps_sizes_only() {
    let chain = full_chain(SCHEME, 3, 1);
    let mut a = CloudArchive::new(&chain[0], 3, SCHEME, false);
    a.store_segment(&segment(&chain, 1, 3)).unwrap();
    let (who, policy) = reader();
    assert_eq!(a.query_blocks(&who, &policy, 1, 3).unwrap_err(), StoreError::NotMaterialized);
    assert!(a.tamper_block(0, 2));
    assert_eq!(a.verify_consistency().replicas().into_iter().collect::<Vec<_>>(), vec![0]);
}

#[test]
fn persisted_archive_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let chain = full_chain(SCHEME, 6, 2);
    let mut a = archive(&chain).with_dir(dir.path()).unwrap();
    a.store_segment(&segment(&chain, 1, 2)).unwrap();
    a.store_segment(&segment(&chain, 3, 6)).unwrap();
    assert!(dir.path().join("replica-0/segment-3-6.bin").exists());
    assert!(dir.path().join("replica-2/head.json").exists());
    let b = CloudArchive::load(dir.path()).unwrap();
    assert_eq!(b.get_head().unwrap().height, 6);
    assert_eq!(b.bytes(), a.bytes());
    assert!(b.verify_consistency().is_consistent());
    assert!(b.recorded_digests_hold());
    let blocks = b.archived_blocks().unwrap();
    assert!(verify_blocks(&blocks, Some(chain[0].header()), SCHEME).passed());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// With a minority of replicas tampered (any heights, head or body),
        /// the head and reads match what was stored.
        #[test]
        fn minority_tampering_never_changes_reads(
            bad in 0u32..3,
            heights in proptest::collection::vec(1u64..=5, 1..4),
            fake_head in 0u64..5,
        ) {
            let chain = full_chain(SCHEME, 5, 1);
            let mut a = archive(&chain);
            a.store_segment(&segment(&chain, 1, 2)).unwrap();
            a.store_segment(&segment(&chain, 3, 5)).unwrap();
            for h in heights {
                a.tamper_block(bad, h);
            }
            a.tamper_head(bad, chain[fake_head as usize].header().clone(), fake_head);
            let head = a.get_head().unwrap();
            prop_assert_eq!(head.height, 5);
            prop_assert_eq!(&head.header, chain[5].header());
            let (who, policy) = reader();
            let seg = a.query_blocks(&who, &policy, 1, 5).unwrap();
            prop_assert_eq!(seg.blocks(), &chain[1..=5]);
        }
    }
}
