use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unknown scheme id {0}")]
    UnknownScheme(u8),
    #[error("merkle tree needs at least one leaf")]
    EmptyLeaves,
    #[error("{what} must be {expected} bytes, got {actual}")]
    Width { what: &'static str, expected: usize, actual: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("field {field} has wrong length: expected {expected}, got {actual}")]
    FieldLength { field: &'static str, expected: usize, actual: usize },
    #[error("malformed block: {0}")]
    MalformedBlock(String),
    #[error("malformed transaction: {0}")]
    MalformedTransaction(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("sender is not permitted to submit transactions")]
    NotPermitted,
    #[error("transaction hash does not match its contents")]
    HashMismatch,
    #[error("retry limit of {bound} exceeded for this transaction; gateway flagged")]
    RetryLimit { bound: u32 },
    #[error("transaction already carries the validation mark")]
    AlreadyMarked,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("transaction pool is full (capacity {capacity})")]
    Full { capacity: usize },
    #[error("duplicate transaction")]
    Duplicate,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormingError {
    #[error("transaction pool is empty")]
    EmptyPool,
    #[error("caller is not the current epoch leader")]
    NotLeader,
    #[error("block timestamp {now} does not advance past parent timestamp {parent}")]
    StaleTimestamp { now: u64, parent: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccessError {
    #[error("caller does not own resource {0}")]
    NotOwner(String),
    #[error("access denied")]
    AccessDenied,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("sender {sender} is not the leader for epoch {epoch} view {view}")]
    NotLeader { sender: u32, epoch: u64, view: u32 },
    #[error("invalid block: {0}")]
    InvalidBlock(String),
    #[error("duplicate vote from {0}")]
    DuplicateVote(u32),
    #[error("stale message for epoch {epoch} view {view}")]
    StaleVote { epoch: u64, view: u32 },
    #[error("bad signature from {0}")]
    BadSignature(u32),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("sync vote quorum not reached before the deadline")]
    QuorumTimeout,
    #[error("segment transfer interrupted: {0}")]
    TransferInterrupted(String),
    #[error("cloud head at height {cloud_height} is not the parent of the segment starting at {segment_first}")]
    HeadGap { cloud_height: u64, segment_first: u64 },
    #[error("updated head is not present in the local chain")]
    HeadMismatch,
    #[error("session is not approved")]
    NotApproved,
    #[error("response is not a regular response")]
    NotRegular,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("segment starting at {segment_first} does not extend archive head {head_height}")]
    HeadGap { head_height: u64, segment_first: u64 },
    #[error("segment failed verification: {0}")]
    Verification(String),
    #[error("no majority of replicas agrees on a head")]
    NoQuorum,
    #[error("access denied")]
    AccessDenied,
    #[error("heights {first}..={last} are not available (head {head})")]
    RangeUnavailable { first: u64, last: u64, head: u64 },
    #[error("archive keeps sizes only; block contents were not materialized")]
    NotMaterialized,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown fault behavior {0:?}")]
    UnknownBehavior(String),
    #[error("invariant violated at t={time_ns}ns: {detail}")]
    InvariantViolation { time_ns: u64, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
