use std::collections::{BTreeSet, HashMap};

use crate::crypto::{Digest, HashScheme};
use crate::error::ValidationError;
use crate::types::{Address, BodyEntry, Transaction, TxKey};

use super::permission::{PermissionRegistry, Role};

pub const MARK: u8 = 1;
pub const DEFAULT_RETRY_BOUND: u32 = 3;

/// A transaction that passed both validation phases. Only [`Validator`] can
/// construct one, so nothing unvalidated can reach block forming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedTransaction {
    inner: Transaction,
    mark: u8,
    post_mark_hash: Digest,
    validator: Address,
    marked_bytes: Vec<u8>,
}

impl ValidatedTransaction {
    pub fn inner(&self) -> &Transaction {
        &self.inner
    }

    pub fn mark(&self) -> u8 {
        self.mark
    }

    pub fn post_mark_hash(&self) -> Digest {
        self.post_mark_hash
    }

    pub fn validator(&self) -> Address {
        self.validator
    }

    pub fn key(&self) -> TxKey {
        self.inner.key()
    }

    /// Canonical encoding of the marked transaction.
    pub fn marked_bytes(&self) -> &[u8] {
        &self.marked_bytes
    }

    /// Body entry for position `no` (1-based).
    pub fn to_entry(&self, no: u32) -> BodyEntry {
        BodyEntry { no, tx_id: self.inner.tx_id, tx_data: self.marked_bytes.clone(), tx_hash: self.post_mark_hash }
    }
}

/// What arrives at a gateway: a raw transaction, or one already carrying the mark.
#[derive(Debug, Clone)]
pub enum Incoming {
    Raw(Transaction),
    Marked(ValidatedTransaction),
}

/// Two-phase transaction validation with bounded re-requests.
#[derive(Debug, Clone)]
pub struct Validator {
    identity: Address,
    retry_bound: u32,
    failures: HashMap<(Address, TxKey), u32>,
    flagged: BTreeSet<Address>,
}

impl Validator {
    pub fn new(identity: Address, retry_bound: u32) -> Self {
        Validator { identity, retry_bound, failures: HashMap::new(), flagged: BTreeSet::new() }
    }

    pub fn flagged_gateways(&self) -> &BTreeSet<Address> {
        &self.flagged
    }

    pub fn failures_for(&self, gateway: &Address, key: &TxKey) -> u32 {
        self.failures.get(&(*gateway, *key)).copied().unwrap_or(0)
    }

    pub fn validate_incoming(
        &mut self,
        registry: &PermissionRegistry,
        gateway: Address,
        incoming: Incoming,
    ) -> Result<ValidatedTransaction, ValidationError> {
        match incoming {
            Incoming::Raw(tx) => self.validate_transaction(registry, gateway, tx),
            Incoming::Marked(_) => Err(ValidationError::AlreadyMarked),
        }
    }

    /// Phase one recomputes the digest and compares it with the one computed
    /// by the data engine; phase two sets the mark and rehashes. A mismatch
    /// asks the gateway to resend; past `retry_bound` failures for the same
    /// transaction the gateway is flagged.
    pub fn validate_transaction(
        &mut self,
        registry: &PermissionRegistry,
        gateway: Address,
        tx: Transaction,
    ) -> Result<ValidatedTransaction, ValidationError> {
        if !registry.check_permission(&gateway, Role::Submit) || self.flagged.contains(&gateway) {
            return Err(ValidationError::NotPermitted);
        }
        let key = tx.key();
        let scheme = HashScheme::from_id(tx.hash_type)?;
        let preimage = tx.hash_preimage().map_err(|_| ValidationError::HashMismatch)?;
        if scheme.hash(&preimage) != tx.tx_hash {
            let count = self.failures.entry((gateway, key)).or_insert(0);
            *count += 1;
            if *count > self.retry_bound {
                self.flagged.insert(gateway);
                return Err(ValidationError::RetryLimit { bound: self.retry_bound });
            }
            return Err(ValidationError::HashMismatch);
        }
        self.failures.remove(&(gateway, key));
        let marked_bytes = tx.encode_marked(MARK).map_err(|_| ValidationError::HashMismatch)?;
        let post_mark_hash = scheme.hash(&marked_bytes);
        Ok(ValidatedTransaction { inner: tx, mark: MARK, post_mark_hash, validator: self.identity, marked_bytes })
    }
}
