//! Replicated multi-cloud archive for synchronized chain segments.

mod archive;
mod persist;

pub use archive::{
    segment_digest, ArchiveIndex, CloudArchive, CloudNode, ConsistencyReport, Divergence, HeadView, IndexEntry,
    StoreReceipt, CHAIN_RESOURCE, DEFAULT_REPLICATION,
};
pub use persist::replica_dir;

#[cfg(test)]
mod tests;
