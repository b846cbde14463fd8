//! Canonical data model: transactions, data blocks and chain segments.
//!
//! All encodings are fixed-order and little-endian with 4-byte length
//! prefixes on variable fields, so byte accounting is exact.

pub mod block;
pub mod chain;
mod codec;
pub mod transaction;

pub use block::{
    decode_block, encode_block, BlockBody, BlockHeader, BlockStub, BodyEntry, ChainBlock, DataBlock, BLOCK_VERSION,
    ENTRY_FRAMING_LEN, HEADER_LEN, HEADER_UNSIGNED_LEN,
};
pub use chain::{verify_blocks, verify_chain, BlockCheck, ChainSegment, LocalChain, VerificationReport};
pub use transaction::{Address, Transaction, TxKey, TxType, TX_FIXED_LEN};

/// Identifier of an overlay (consensus) node.
pub type NodeId = u32;
