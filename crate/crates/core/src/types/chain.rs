use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use crate::crypto::{Digest, HashScheme};
use crate::error::{CodecError, SyncError};

use super::block::{decode_block, BlockHeader, ChainBlock};
use super::codec::Reader;

/// Contiguous run of blocks, the unit of cloud synchronization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSegment {
    blocks: Vec<Arc<ChainBlock>>,
}

impl ChainSegment {
    /// Fails when `blocks` is empty or heights are not consecutive.
    pub fn new(blocks: Vec<Arc<ChainBlock>>) -> Result<Self, String> {
        let first = blocks.first().ok_or("empty segment")?.height();
        for (i, b) in blocks.iter().enumerate() {
            if b.height() != first + i as u64 {
                return Err(format!("height {} at position {i}, expected {}", b.height(), first + i as u64));
            }
        }
        Ok(ChainSegment { blocks })
    }

    pub fn blocks(&self) -> &[Arc<ChainBlock>] {
        &self.blocks
    }

    pub fn first_height(&self) -> u64 {
        self.blocks[0].height()
    }

    pub fn last_height(&self) -> u64 {
        self.blocks[self.blocks.len() - 1].height()
    }

    pub fn first(&self) -> &ChainBlock {
        &self.blocks[0]
    }

    pub fn last(&self) -> &ChainBlock {
        &self.blocks[self.blocks.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn encoded_len(&self) -> u64 {
        self.blocks.iter().map(|b| b.encoded_len()).sum()
    }

    pub fn is_materialized(&self) -> bool {
        self.blocks.iter().all(|b| matches!(**b, ChainBlock::Full(_)))
    }

    /// Segment wire format: first height (u64), block count (u32), then each
    /// block as a u32 length prefix plus its canonical encoding. Only
    /// materialized segments can be encoded.
    pub fn encode(&self) -> Option<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.first_height().to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            let ChainBlock::Full(block) = &**b else {
                return None;
            };
            let enc = block.encode();
            out.extend_from_slice(&(enc.len() as u32).to_le_bytes());
            out.extend_from_slice(&enc);
        }
        Some(out)
    }

    pub fn decode(bytes: &[u8], scheme: HashScheme) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, CodecError::MalformedBlock);
        let first = r.u64()?;
        let count = r.u32()? as u64;
        let mut blocks = Vec::new();
        for h in first..first + count {
            let raw = r.var()?;
            blocks.push(Arc::new(ChainBlock::Full(decode_block(raw, h, scheme)?)));
        }
        r.finish()?;
        ChainSegment::new(blocks).map_err(CodecError::MalformedBlock)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockCheck {
    pub height: u64,
    pub hash_link: bool,
    pub block_hash: bool,
    pub merkle_root: bool,
    pub timestamp: bool,
    pub detail: Option<String>,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.hash_link && self.block_hash && self.merkle_root && self.timestamp
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<BlockCheck>,
    /// False when a trusted head was given and the segment does not extend it.
    pub anchored: bool,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.anchored && self.checks.iter().all(BlockCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn summary(&self) -> String {
        let bad: Vec<String> = self
            .failures()
            .map(|c| {
                let mut what = Vec::new();
                if !c.hash_link {
                    what.push("link");
                }
                if !c.block_hash {
                    what.push("hash");
                }
                if !c.merkle_root {
                    what.push("merkle");
                }
                if !c.timestamp {
                    what.push("timestamp");
                }
                format!("h{}:{}", c.height, what.join("+"))
            })
            .collect();
        if !self.anchored {
            format!("not anchored to trusted head; {}", bad.join(", "))
        } else {
            bad.join(", ")
        }
    }
}

/// Checks hash links, block hashes, merkle roots and timestamp monotonicity
/// over `blocks`. Failures are reported per height, never raised.
pub fn verify_blocks(
    blocks: &[Arc<ChainBlock>],
    trusted_head: Option<&BlockHeader>,
    scheme: HashScheme,
) -> VerificationReport {
    let mut checks = Vec::with_capacity(blocks.len());
    let mut prev: Option<&BlockHeader> = trusted_head;
    for b in blocks {
        let h = b.header();
        let (hash_link, timestamp) = match prev {
            Some(p) => (h.hash_pre_data_blk == p.block_hash, h.timestamp > p.timestamp),
            None => (true, true),
        };
        let block_hash = h.compute_hash(scheme) == h.block_hash;
        let contents = b.check_contents(scheme);
        checks.push(BlockCheck {
            height: b.height(),
            hash_link,
            block_hash,
            merkle_root: contents.is_ok(),
            timestamp,
            detail: contents.err(),
        });
        prev = Some(h);
    }
    let anchored = match (trusted_head, blocks.first()) {
        (Some(t), Some(first)) => first.header().hash_pre_data_blk == t.block_hash,
        _ => true,
    };
    VerificationReport { checks, anchored }
}

pub fn verify_chain(
    segment: &ChainSegment,
    trusted_head: Option<&BlockHeader>,
    scheme: HashScheme,
) -> VerificationReport {
    verify_blocks(segment.blocks(), trusted_head, scheme)
}

/// The partial chain held on an overlay node: the last synchronized block
/// followed by everything finalized since.
#[derive(Debug, Clone)]
pub struct LocalChain {
    blocks: VecDeque<Arc<ChainBlock>>,
    bytes: u64,
}

impl LocalChain {
    pub fn new(genesis: Arc<ChainBlock>) -> Self {
        let bytes = genesis.encoded_len();
        let mut blocks = VecDeque::new();
        blocks.push_back(genesis);
        LocalChain { blocks, bytes }
    }

    pub fn tip(&self) -> &Arc<ChainBlock> {
        self.blocks.back().expect("local chain is never empty")
    }

    pub fn tip_height(&self) -> u64 {
        self.tip().height()
    }

    pub fn first_height(&self) -> u64 {
        self.blocks.front().expect("local chain is never empty").height()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn push(&mut self, block: Arc<ChainBlock>) -> Result<(), String> {
        if block.height() != self.tip_height() + 1 {
            return Err(format!("append height {} onto tip {}", block.height(), self.tip_height()));
        }
        self.bytes += block.encoded_len();
        self.blocks.push_back(block);
        Ok(())
    }

    pub fn get(&self, height: u64) -> Option<&Arc<ChainBlock>> {
        let first = self.first_height();
        if height < first {
            return None;
        }
        self.blocks.get((height - first) as usize)
    }

    pub fn contains_hash(&self, height: u64, hash: &Digest) -> bool {
        self.get(height).is_some_and(|b| &b.hash() == hash)
    }

    /// Blocks with heights in `first..=last`, if all are held.
    pub fn range(&self, first: u64, last: u64) -> Option<Vec<Arc<ChainBlock>>> {
        if first > last || first < self.first_height() || last > self.tip_height() {
            return None;
        }
        let off = self.first_height();
        Some(self.blocks.range((first - off) as usize..=(last - off) as usize).cloned().collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<ChainBlock>> {
        self.blocks.iter()
    }

    /// Drops every block below `head`, which becomes the first block of the
    /// partial chain. Returns the number of blocks removed.
    pub fn prune_to(&mut self, head: &BlockHeader, height: u64) -> Result<usize, SyncError> {
        if !self.contains_hash(height, &head.block_hash) {
            return Err(SyncError::HeadMismatch);
        }
        let mut removed = 0;
        while self.first_height() < height {
            let b = self.blocks.pop_front().expect("head is retained");
            self.bytes -= b.encoded_len();
            removed += 1;
        }
        Ok(removed)
    }
}
