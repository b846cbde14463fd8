//! Segment upload against the archive and pruning of the local chain.

use serde::Serialize;

use crate::cloud_store::CloudArchive;
use crate::error::SyncError;
use crate::types::{BlockHeader, ChainSegment, LocalChain};

use super::session::{SessionDecision, SessionOutcome, SyncSession};

pub const DEFAULT_OVERHEAD: f64 = 1.3;

/// Simulated upload time for `bytes` over a link of `bandwidth_bps` bits per
/// second, stretched by a protocol overhead factor.
pub fn transfer_time_ns(bytes: u64, bandwidth_bps: u64, overhead: f64) -> u64 {
    let secs = bytes as f64 * 8.0 / bandwidth_bps as f64 * overhead;
    (secs * 1e9).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Regular,
    Exception,
    /// The archive already holds this head.
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMessage {
    pub kind: ResponseKind,
    /// Most recently archived block (Regular and Denied).
    pub updated_head: Option<(BlockHeader, u64)>,
    pub error_detail: Option<String>,
}

impl ResponseMessage {
    pub fn regular(head: BlockHeader, height: u64) -> Self {
        ResponseMessage { kind: ResponseKind::Regular, updated_head: Some((head, height)), error_detail: None }
    }

    pub fn denied(head: BlockHeader, height: u64) -> Self {
        ResponseMessage { kind: ResponseKind::Denied, updated_head: Some((head, height)), error_detail: None }
    }

    pub fn exception(detail: impl Into<String>) -> Self {
        ResponseMessage { kind: ResponseKind::Exception, updated_head: None, error_detail: Some(detail.into()) }
    }
}

/// What the uploader does once a session is approved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncPlan {
    Deny(ResponseMessage),
    Transfer { segment: ChainSegment, duration_ns: u64 },
}

/// Compares the archive head with the approved head and cuts the segment in
/// between from the local chain.
pub fn plan_sync(
    session: &mut SyncSession,
    chain: &LocalChain,
    cloud: &CloudArchive,
    bandwidth_bps: u64,
    overhead: f64,
) -> Result<SyncPlan, SyncError> {
    if session.decision != SessionDecision::Approved {
        return Err(SyncError::NotApproved);
    }
    let head = cloud.get_head()?;
    let target = session.request.latest_height;
    if head.height >= target {
        session.outcome = SessionOutcome::Denied;
        return Ok(SyncPlan::Deny(ResponseMessage::denied(head.header, head.height)));
    }
    if !chain.contains_hash(head.height, &head.header.block_hash) {
        return Err(SyncError::HeadGap { cloud_height: head.height, segment_first: chain.first_height() });
    }
    let blocks = chain.range(head.height + 1, target).ok_or(SyncError::HeadMismatch)?;
    if blocks.last().map(|b| b.hash()) != Some(session.request.head_hash()) {
        return Err(SyncError::HeadMismatch);
    }
    let segment = ChainSegment::new(blocks).map_err(SyncError::TransferInterrupted)?;
    session.segment = Some((segment.first_height(), segment.last_height()));
    let duration_ns = transfer_time_ns(segment.encoded_len(), bandwidth_bps, overhead);
    Ok(SyncPlan::Transfer { segment, duration_ns })
}

/// Cloud side of a finished transfer.
pub fn complete_sync(session: &mut SyncSession, cloud: &mut CloudArchive, segment: &ChainSegment) -> ResponseMessage {
    match cloud.store_segment(segment) {
        Ok(_) => {
            session.outcome = SessionOutcome::Regular;
            ResponseMessage::regular(segment.last().header().clone(), segment.last_height())
        }
        Err(e) => {
            session.outcome = SessionOutcome::Exception;
            ResponseMessage::exception(e.to_string())
        }
    }
}

/// Plan and complete in one step, with no simulated time in between.
pub fn execute_sync(
    session: &mut SyncSession,
    chain: &LocalChain,
    cloud: &mut CloudArchive,
    bandwidth_bps: u64,
    overhead: f64,
) -> Result<ResponseMessage, SyncError> {
    match plan_sync(session, chain, cloud, bandwidth_bps, overhead)? {
        SyncPlan::Deny(r) => Ok(r),
        SyncPlan::Transfer { segment, .. } => Ok(complete_sync(session, cloud, &segment)),
    }
}

/// Keeps the archived head as the first block of the partial chain and drops
/// everything before it. Returns the number of blocks removed.
pub fn prune_local(chain: &mut LocalChain, response: &ResponseMessage) -> Result<usize, SyncError> {
    if response.kind != ResponseKind::Regular {
        return Err(SyncError::NotRegular);
    }
    let (head, height) = response.updated_head.as_ref().ok_or(SyncError::NotRegular)?;
    chain.prune_to(head, *height)
}
