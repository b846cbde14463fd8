//! Overlay-side output port to the cloud: when to synchronize, agreement on
//! the request, segment upload, local pruning and exception handling.

pub mod fault;
pub mod session;
pub mod sync;
pub mod trigger;

pub use fault::{handle_sync_exception, AdminAlert, ExceptionAction, FaultLedger, MALICIOUS_THRESHOLD};
pub use session::{
    aggregate_sync_votes, verify_decision, vote_on_sync, SessionDecision, SessionOutcome, SyncDecision, SyncReason,
    SyncRequest, SyncSession, SyncVote,
};
pub use sync::{
    complete_sync, execute_sync, plan_sync, prune_local, transfer_time_ns, ResponseKind, ResponseMessage, SyncPlan,
    DEFAULT_OVERHEAD,
};
pub use trigger::{check_trigger, SyncPolicy, TriggerDecision, GB, HOUR_NS, SECOND_NS};
