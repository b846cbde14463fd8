use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use crate::connector::{AccessPolicy, Permission};
use crate::crypto::{Digest, HashScheme};
use crate::error::StoreError;
use crate::types::{verify_blocks, verify_chain, Address, BlockHeader, ChainBlock, ChainSegment};

use super::persist;

/// Resource name guarded by the archive's read policy.
pub const CHAIN_RESOURCE: &str = "chain";
pub const DEFAULT_REPLICATION: usize = 3;

/// Digest over the content digests of `blocks`, in order.
pub fn segment_digest(blocks: &[Arc<ChainBlock>], scheme: HashScheme) -> Digest {
    let mut buf = Vec::with_capacity(blocks.len() * 32);
    for b in blocks {
        buf.extend_from_slice(&b.content_digest(scheme));
    }
    scheme.hash(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoreReceipt {
    pub first: u64,
    pub last: u64,
    pub bytes: u64,
    #[serde(with = "hex::serde")]
    pub head_hash: Digest,
    #[serde(with = "hex::serde")]
    pub digest: Digest,
    pub replicas: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(crate) struct StoredSegment {
    pub first: u64,
    pub last: u64,
    pub bytes: u64,
    /// Present in materialized mode only.
    pub blocks: Option<Vec<Arc<ChainBlock>>>,
    /// Digest this replica reports; tracks the blocks in materialized mode.
    pub digest: Digest,
}

impl StoredSegment {
    fn current_digest(&self, scheme: HashScheme) -> Digest {
        match &self.blocks {
            Some(b) => segment_digest(b, scheme),
            None => self.digest,
        }
    }
}

/// One cloud provider's copy of the archive.
#[derive(Debug, Clone)]
pub struct CloudNode {
    pub id: u32,
    pub honest: bool,
    pub(crate) segments: BTreeMap<u64, StoredSegment>,
    pub(crate) head: BlockHeader,
    pub(crate) head_height: u64,
    pub(crate) bytes: u64,
}

impl CloudNode {
    fn new(id: u32, genesis: &BlockHeader) -> Self {
        CloudNode { id, honest: true, segments: BTreeMap::new(), head: genesis.clone(), head_height: 0, bytes: 0 }
    }

    pub fn head(&self) -> (&BlockHeader, u64) {
        (&self.head, self.head_height)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    fn blocks_in(&self, first: u64, last: u64) -> Option<Vec<Arc<ChainBlock>>> {
        let mut out = Vec::with_capacity((last - first + 1) as usize);
        for seg in self.segments.range(..=last).rev() {
            let seg = seg.1;
            if seg.last < first {
                break;
            }
            let blocks = seg.blocks.as_ref()?;
            let lo = first.max(seg.first);
            let hi = last.min(seg.last);
            let mut part: Vec<_> = blocks[(lo - seg.first) as usize..=(hi - seg.first) as usize].to_vec();
            part.append(&mut out);
            out = part;
        }
        (out.len() as u64 == last - first + 1).then_some(out)
    }
}

/// Majority-agreed archive head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadView {
    pub header: BlockHeader,
    pub height: u64,
    /// Replicas reporting a different head.
    pub dissenters: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub replica: u32,
    pub first: u64,
    pub last: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub divergent: Vec<Divergence>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.divergent.is_empty()
    }

    pub fn replicas(&self) -> BTreeSet<u32> {
        self.divergent.iter().map(|d| d.replica).collect()
    }
}

/// Which replicas hold each archived height range, and its block hash span.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArchiveIndex {
    entries: BTreeMap<u64, IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub first: u64,
    pub last: u64,
    pub replicas: Vec<u32>,
    pub last_hash: Digest,
    pub digest: Digest,
    pub bytes: u64,
}

impl ArchiveIndex {
    pub fn get(&self, height: u64) -> Option<&IndexEntry> {
        self.entries.range(..=height).next_back().map(|e| e.1).filter(|e| e.last >= height)
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn insert(&mut self, e: IndexEntry) {
        self.entries.insert(e.first, e);
    }
}

/// Replicated multi-cloud archive with majority agreement over replicas.
#[derive(Debug, Clone)]
pub struct CloudArchive {
    pub(crate) replicas: Vec<CloudNode>,
    pub(crate) quorum: usize,
    pub(crate) index: ArchiveIndex,
    pub(crate) scheme: HashScheme,
    pub(crate) materialized: bool,
    pub(crate) genesis: BlockHeader,
    pub(crate) receipts: BTreeMap<(u64, u64), StoreReceipt>,
    pub(crate) root: Option<PathBuf>,
}

impl CloudArchive {
    pub fn new(genesis: &ChainBlock, replication: usize, scheme: HashScheme, materialized: bool) -> Self {
        assert!(replication >= 1);
        CloudArchive {
            replicas: (0..replication as u32).map(|i| CloudNode::new(i, genesis.header())).collect(),
            quorum: replication / 2 + 1,
            index: ArchiveIndex::default(),
            scheme,
            materialized,
            genesis: genesis.header().clone(),
            receipts: BTreeMap::new(),
            root: None,
        }
    }

    /// Persists every replica under `root` from now on (materialized only).
    pub fn with_dir(mut self, root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        if !self.materialized {
            return Err(StoreError::NotMaterialized);
        }
        let root = root.into();
        for r in &self.replicas {
            persist::write_replica(&root, r, self.scheme)?;
        }
        self.root = Some(root);
        Ok(self)
    }

    pub fn replication_factor(&self) -> usize {
        self.replicas.len()
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn scheme(&self) -> HashScheme {
        self.scheme
    }

    pub fn is_materialized(&self) -> bool {
        self.materialized
    }

    pub fn replicas(&self) -> &[CloudNode] {
        &self.replicas
    }

    pub fn index(&self) -> &ArchiveIndex {
        &self.index
    }

    /// Archived bytes, counted once regardless of replication.
    pub fn bytes(&self) -> u64 {
        self.index.entries().map(|e| e.bytes).sum()
    }

    pub fn get_head(&self) -> Result<HeadView, StoreError> {
        let mut tally: BTreeMap<(u64, Digest), Vec<u32>> = BTreeMap::new();
        for r in &self.replicas {
            tally.entry((r.head_height, r.head.block_hash)).or_default().push(r.id);
        }
        let ((height, hash), _) =
            tally.iter().max_by_key(|(k, v)| (v.len(), std::cmp::Reverse(**k))).expect("at least one replica");
        let (height, hash) = (*height, *hash);
        if tally[&(height, hash)].len() < self.quorum {
            return Err(StoreError::NoQuorum);
        }
        let agree = &self.replicas[tally[&(height, hash)][0] as usize];
        let dissenters = self
            .replicas
            .iter()
            .filter(|r| (r.head_height, r.head.block_hash) != (height, hash))
            .map(|r| r.id)
            .collect();
        Ok(HeadView { header: agree.head.clone(), height, dissenters })
    }

    /// Stores `segment` on every replica. Re-storing an already archived
    /// segment returns the original receipt and changes nothing.
    pub fn store_segment(&mut self, segment: &ChainSegment) -> Result<StoreReceipt, StoreError> {
        let key = (segment.first_height(), segment.last_height());
        if let Some(prior) = self.receipts.get(&key) {
            if prior.head_hash == segment.last().hash() {
                return Ok(prior.clone());
            }
        }
        let head = self.get_head()?;
        if segment.first_height() != head.height + 1 {
            return Err(StoreError::HeadGap { head_height: head.height, segment_first: segment.first_height() });
        }
        let report = verify_chain(segment, Some(&head.header), self.scheme);
        if !report.passed() {
            return Err(StoreError::Verification(report.summary()));
        }
        let digest = segment_digest(segment.blocks(), self.scheme);
        let bytes = segment.encoded_len();
        let stored = StoredSegment {
            first: key.0,
            last: key.1,
            bytes,
            blocks: self.materialized.then(|| segment.blocks().to_vec()),
            digest,
        };
        let last_header = segment.last().header().clone();
        for r in &mut self.replicas {
            r.segments.insert(key.0, stored.clone());
            r.head = last_header.clone();
            r.head_height = key.1;
            r.bytes += bytes;
        }
        let receipt = StoreReceipt {
            first: key.0,
            last: key.1,
            bytes,
            head_hash: last_header.block_hash,
            digest,
            replicas: self.replicas.iter().map(|r| r.id).collect(),
        };
        self.index.insert(IndexEntry {
            first: key.0,
            last: key.1,
            replicas: receipt.replicas.clone(),
            last_hash: last_header.block_hash,
            digest,
            bytes,
        });
        self.receipts.insert(key, receipt.clone());
        if let Some(root) = &self.root {
            for r in &self.replicas {
                persist::write_replica(root, r, self.scheme)?;
            }
        }
        Ok(receipt)
    }

    /// Compares every replica's copy of every archived range against the
    /// digest recorded at store time, and re-verifies materialized chains.
    pub fn verify_consistency(&self) -> ConsistencyReport {
        let mut report = ConsistencyReport::default();
        for r in &self.replicas {
            for e in self.index.entries() {
                let detail = match r.segments.get(&e.first) {
                    None => Some("segment missing".to_string()),
                    Some(s) if s.last != e.last => Some(format!("range ends at {}", s.last)),
                    Some(s) if s.current_digest(self.scheme) != e.digest => Some("digest mismatch".to_string()),
                    Some(_) => None,
                };
                if let Some(detail) = detail {
                    report.divergent.push(Divergence { replica: r.id, first: e.first, last: e.last, detail });
                }
            }
            if self.materialized && !self.index.is_empty() {
                if let Some(blocks) = r.blocks_in(1, r.head_height.max(1)) {
                    let chk = verify_blocks(&blocks, Some(&self.genesis), self.scheme);
                    for c in chk.failures() {
                        let e = self.index.get(c.height).expect("indexed");
                        if !report.divergent.iter().any(|d| d.replica == r.id && d.first == e.first) {
                            report.divergent.push(Divergence {
                                replica: r.id,
                                first: e.first,
                                last: e.last,
                                detail: format!("chain check failed at {}", c.height),
                            });
                        }
                    }
                }
            }
            let expected_head = self.index.entries().last().map(|e| (e.last, e.last_hash));
            let (h, hh) = (r.head_height, r.head.block_hash);
            if let Some((eh, ehash)) = expected_head {
                if (h, hh) != (eh, ehash) {
                    report.divergent.push(Divergence {
                        replica: r.id,
                        first: eh,
                        last: eh,
                        detail: format!("head at {h} differs"),
                    });
                }
            }
        }
        report
    }

    /// Copies the agreed data over every divergent replica in `report`.
    pub fn repair(&mut self, report: &ConsistencyReport) -> Result<usize, StoreError> {
        let bad = report.replicas();
        let good = self.replicas.iter().find(|r| !bad.contains(&r.id)).cloned().ok_or(StoreError::NoQuorum)?;
        if self.replicas.len() - bad.len() < self.quorum {
            return Err(StoreError::NoQuorum);
        }
        for id in &bad {
            let r = &mut self.replicas[*id as usize];
            r.segments = good.segments.clone();
            r.head = good.head.clone();
            r.head_height = good.head_height;
            r.bytes = good.bytes;
        }
        if let Some(root) = &self.root {
            for id in &bad {
                persist::write_replica(root, &self.replicas[*id as usize], self.scheme)?;
            }
        }
        Ok(bad.len())
    }

    /// Reads heights `first..=last` for an authorized reader from a replica
    /// whose copy matches the index.
    pub fn query_blocks(
        &self,
        who: &Address,
        policy: &AccessPolicy,
        first: u64,
        last: u64,
    ) -> Result<ChainSegment, StoreError> {
        policy.require(who, CHAIN_RESOURCE, Permission::Read).map_err(|_| StoreError::AccessDenied)?;
        self.read_range(first, last)
    }

    fn read_range(&self, first: u64, last: u64) -> Result<ChainSegment, StoreError> {
        let head = self.get_head()?;
        if first == 0 || first > last || last > head.height {
            return Err(StoreError::RangeUnavailable { first, last, head: head.height });
        }
        if !self.materialized {
            return Err(StoreError::NotMaterialized);
        }
        let report = self.verify_consistency();
        let bad = report.replicas();
        for r in self.replicas.iter().filter(|r| !bad.contains(&r.id)) {
            if let Some(blocks) = r.blocks_in(first, last) {
                return ChainSegment::new(blocks).map_err(StoreError::Verification);
            }
        }
        Err(StoreError::NoQuorum)
    }

    /// All archived blocks from the agreed copy, in height order.
    pub fn archived_blocks(&self) -> Result<Vec<Arc<ChainBlock>>, StoreError> {
        let head = self.get_head()?;
        if head.height == 0 {
            return Ok(Vec::new());
        }
        self.read_range(1, head.height).map(|s| s.blocks().to_vec())
    }

    // Simulation controls for dishonest providers.

    pub fn set_honest(&mut self, replica: u32, honest: bool) {
        self.replicas[replica as usize].honest = honest;
    }

    /// Makes a replica report a different head.
    pub fn tamper_head(&mut self, replica: u32, header: BlockHeader, height: u64) {
        let r = &mut self.replicas[replica as usize];
        r.honest = false;
        r.head = header;
        r.head_height = height;
    }

    /// Corrupts the stored copy of `height` on one replica. Returns false if
    /// the replica does not hold that height.
    pub fn tamper_block(&mut self, replica: u32, height: u64) -> bool {
        let scheme = self.scheme;
        let r = &mut self.replicas[replica as usize];
        let Some((_, seg)) = r.segments.range_mut(..=height).next_back() else {
            return false;
        };
        if seg.last < height {
            return false;
        }
        r.honest = false;
        match &mut seg.blocks {
            Some(blocks) => {
                let idx = (height - seg.first) as usize;
                let mut b = (*blocks[idx]).clone();
                if let ChainBlock::Full(db) = &mut b {
                    if let Some(e) = db.body.entries.first_mut() {
                        if let Some(byte) = e.tx_data.last_mut() {
                            *byte ^= 0xff;
                        }
                    }
                } else {
                    b.header_mut().timestamp ^= 1;
                }
                blocks[idx] = Arc::new(b);
            }
            None => seg.digest = scheme.hash(&seg.digest),
        }
        true
    }
}
