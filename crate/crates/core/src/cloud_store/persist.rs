//! On-disk layout: one directory per replica holding
//! `segment-<first>-<last>.bin` files in segment wire format and a
//! `head.json` manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, HashScheme};
use crate::error::StoreError;
use crate::types::{BlockHeader, ChainBlock, ChainSegment};

use super::archive::{segment_digest, CloudArchive, CloudNode, IndexEntry, StoreReceipt, StoredSegment};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    replica: u32,
    hash_scheme: u8,
    head_height: u64,
    /// Canonical header encoding of the head block, hex.
    head: String,
    segments: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    first: u64,
    last: u64,
    bytes: u64,
    #[serde(with = "hex::serde")]
    digest: Digest,
    file: String,
}

pub fn replica_dir(root: &Path, id: u32) -> PathBuf {
    root.join(format!("replica-{id}"))
}

fn segment_file(first: u64, last: u64) -> String {
    format!("segment-{first}-{last}.bin")
}

pub(crate) fn write_replica(root: &Path, r: &CloudNode, scheme: HashScheme) -> Result<(), StoreError> {
    let dir = replica_dir(root, r.id);
    fs::create_dir_all(&dir)?;
    let mut entries = Vec::with_capacity(r.segments.len());
    for s in r.segments.values() {
        let file = segment_file(s.first, s.last);
        let path = dir.join(&file);
        let blocks = s.blocks.as_ref().ok_or(StoreError::NotMaterialized)?;
        let seg = ChainSegment::new(blocks.clone()).map_err(StoreError::Verification)?;
        let bytes = seg.encode().ok_or(StoreError::NotMaterialized)?;
        // Segments are immutable once written unless this replica's copy changed.
        let stale = fs::read(&path).map(|old| old != bytes).unwrap_or(true);
        if stale {
            fs::write(&path, bytes)?;
        }
        entries.push(ManifestEntry { first: s.first, last: s.last, bytes: s.bytes, digest: s.digest, file });
    }
    let manifest = Manifest {
        replica: r.id,
        hash_scheme: scheme.id(),
        head_height: r.head_height,
        head: hex::encode(r.head.encode()),
        segments: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| StoreError::Io(e.to_string()))?;
    fs::write(dir.join("head.json"), json)?;
    Ok(())
}

fn read_replica(dir: &Path) -> Result<(CloudNode, HashScheme), StoreError> {
    let raw = fs::read_to_string(dir.join("head.json"))?;
    let m: Manifest = serde_json::from_str(&raw).map_err(|e| StoreError::Io(format!("{}: {e}", dir.display())))?;
    let scheme = HashScheme::from_id(m.hash_scheme).map_err(|e| StoreError::Verification(e.to_string()))?;
    let head_bytes = hex::decode(&m.head).map_err(|e| StoreError::Verification(e.to_string()))?;
    let head = BlockHeader::decode(&head_bytes, scheme).map_err(|e| StoreError::Verification(e.to_string()))?;
    let mut segments = BTreeMap::new();
    let mut total = 0;
    for e in &m.segments {
        let bytes = fs::read(dir.join(&e.file))?;
        let seg = ChainSegment::decode(&bytes, scheme)
            .map_err(|err| StoreError::Verification(format!("{}: {err}", e.file)))?;
        if seg.first_height() != e.first || seg.last_height() != e.last {
            return Err(StoreError::Verification(format!(
                "{} holds heights {}..={}",
                e.file,
                seg.first_height(),
                seg.last_height()
            )));
        }
        total += e.bytes;
        segments.insert(
            e.first,
            StoredSegment {
                first: e.first,
                last: e.last,
                bytes: e.bytes,
                blocks: Some(seg.blocks().to_vec()),
                digest: e.digest,
            },
        );
    }
    let node = CloudNode { id: m.replica, honest: true, segments, head, head_height: m.head_height, bytes: total };
    Ok((node, scheme))
}

impl CloudArchive {
    /// Loads a persisted archive. The index is rebuilt from the replicas'
    /// manifests by majority over recorded digests.
    pub fn load(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let mut replicas = Vec::new();
        let mut scheme = None;
        for id in 0.. {
            let dir = replica_dir(&root, id);
            if !dir.exists() {
                break;
            }
            let (node, s) = read_replica(&dir)?;
            scheme = Some(s);
            replicas.push(node);
        }
        let scheme = scheme.ok_or_else(|| StoreError::Io(format!("no replicas under {}", root.display())))?;
        let genesis = ChainBlock::genesis(scheme, true);
        let mut archive = CloudArchive::new(&genesis, replicas.len(), scheme, true);
        archive.replicas = replicas;
        let quorum = archive.quorum;

        // Majority per range over (last, digest, head hash of range).
        let mut votes: BTreeMap<(u64, u64, Digest), Vec<u32>> = BTreeMap::new();
        for r in &archive.replicas {
            for s in r.segments.values() {
                votes.entry((s.first, s.last, s.digest)).or_default().push(r.id);
            }
        }
        for ((first, last, digest), ids) in votes {
            if ids.len() < quorum {
                continue;
            }
            let r = &archive.replicas[ids[0] as usize];
            let s = &r.segments[&first];
            let blocks: &Vec<Arc<ChainBlock>> = s.blocks.as_ref().expect("loaded segments are materialized");
            let last_hash = blocks.last().expect("non-empty").hash();
            let entry = IndexEntry { first, last, replicas: ids.clone(), last_hash, digest, bytes: s.bytes };
            archive.receipts.insert(
                (first, last),
                StoreReceipt { first, last, bytes: s.bytes, head_hash: last_hash, digest, replicas: ids },
            );
            archive.index.insert(entry);
        }
        archive.root = Some(root);
        Ok(archive)
    }

    /// Recomputes every stored segment digest against its manifest record.
    pub fn recorded_digests_hold(&self) -> bool {
        self.replicas.iter().all(|r| {
            r.segments.values().all(|s| s.blocks.as_ref().is_none_or(|b| segment_digest(b, self.scheme) == s.digest))
        })
    }
}
