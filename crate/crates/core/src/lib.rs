//! Hierarchical blockchain storage for industrial IoT.
//!
//! Gateways validate device measurements and form data blocks under an
//! epoch-based BFT protocol; old blocks are periodically synchronized to a
//! replicated cloud archive and pruned locally so only the most recent part
//! of the chain stays on the overlay. The [`sim`] module drives all of it
//! from a deterministic discrete-event loop.

pub mod cloud_connector;
pub mod cloud_store;
pub mod connector;
pub mod consensus;
pub mod crypto;
pub mod error;
pub mod sim;
pub mod types;

#[cfg(test)]
mod testutil;
