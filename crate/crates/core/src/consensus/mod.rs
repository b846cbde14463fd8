//! Epoch-based BFT agreement among overlay nodes.

pub mod config;
pub mod messages;
pub mod replica;

pub use config::{elect_leader, f_max, quorum, ConsensusConfig, Directory};
pub use messages::{
    check_quorum_certificate, ConsensusMsg, Decided, NewView, PreparedCert, Proposal, SignedVote, ViewChange, VoteStage,
};
pub use replica::{equivocal_twin, EpochState, Output, Phase, ProposalSource, Replica};
