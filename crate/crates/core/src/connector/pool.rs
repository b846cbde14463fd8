use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::PoolError;
use crate::types::TxKey;

use super::validation::ValidatedTransaction;

/// Bounded buffer of validated transactions, kept in block ordering
/// `(timestamp, from, tx_id)`. When full, the incoming transaction is
/// rejected and already-validated work is kept.
#[derive(Debug, Clone)]
pub struct TxPool {
    pending: BTreeMap<TxKey, Arc<ValidatedTransaction>>,
    capacity: usize,
    rejected: u64,
}

impl TxPool {
    pub fn new(capacity: usize) -> Self {
        TxPool { pending: BTreeMap::new(), capacity, rejected: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Count of transactions turned away because the pool was full.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn insert(&mut self, tx: Arc<ValidatedTransaction>) -> Result<(), PoolError> {
        let key = tx.key();
        if self.pending.contains_key(&key) {
            return Err(PoolError::Duplicate);
        }
        if self.pending.len() >= self.capacity {
            self.rejected += 1;
            return Err(PoolError::Full { capacity: self.capacity });
        }
        self.pending.insert(key, tx);
        Ok(())
    }

    /// The first `max` transactions in block order, left in place.
    pub fn peek(&self, max: usize) -> Vec<Arc<ValidatedTransaction>> {
        self.pending.values().take(max).cloned().collect()
    }

    /// Removes and returns the first `max` transactions in block order.
    pub fn take(&mut self, max: usize) -> Vec<Arc<ValidatedTransaction>> {
        let out = self.peek(max);
        if let Some(last) = out.last() {
            self.remove_through(&last.key());
        }
        out
    }

    /// Drops every transaction ordered at or before `key`.
    pub fn remove_through(&mut self, key: &TxKey) -> usize {
        let keep = match key.tx_id.checked_add(1) {
            Some(id) => self.pending.split_off(&TxKey { tx_id: id, ..*key }),
            None => {
                let mut rest = std::mem::take(&mut self.pending);
                rest.retain(|k, _| k > key);
                rest
            }
        };
        let removed = self.pending.len();
        self.pending = keep;
        removed
    }

    pub fn contains(&self, key: &TxKey) -> bool {
        self.pending.contains_key(key)
    }
}
