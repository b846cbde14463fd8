//! Gateway-side middleware: who may do what, transaction validation with the
//! universal mark, and block forming for the epoch leader.

pub mod access;
pub mod forming;
pub mod permission;
pub mod pool;
pub mod validation;

pub use access::{AccessPolicy, Permission};
pub use forming::{assemble_block, build_block, BlockForming, DEFAULT_MAX_TXS};
pub use permission::{PermissionRegistry, Role};
pub use pool::TxPool;
pub use validation::{Incoming, ValidatedTransaction, Validator, DEFAULT_RETRY_BOUND, MARK};
