use std::sync::Arc;

use crate::crypto::{verify, KeyPair, KeyRing, PublicKey, Signature, SignatureScheme};
use crate::types::{BlockHeader, NodeId};

/// Smallest integer strictly greater than `2n/3`.
pub fn quorum(n: u32) -> u32 {
    2 * n / 3 + 1
}

/// Largest Byzantine count tolerated by `n` nodes.
pub fn f_max(n: u32) -> u32 {
    n.saturating_sub(1) / 3
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub n: u32,
    pub f_max: u32,
    pub quorum: u32,
    /// How long a view may run without finalizing, in simulated nanoseconds.
    pub epoch_timeout_ns: u64,
    pub rotation: Vec<NodeId>,
}

impl ConsensusConfig {
    pub fn new(n: u32, epoch_timeout_ns: u64) -> Self {
        assert!(n >= 1, "consensus needs at least one node");
        ConsensusConfig { n, f_max: f_max(n), quorum: quorum(n), epoch_timeout_ns, rotation: (0..n).collect() }
    }

    /// Leader for `(epoch, view)`: rotation slot `(epoch + view) mod n`.
    pub fn elect_leader(&self, epoch: u64, view: u32) -> NodeId {
        let idx = (epoch.wrapping_add(view as u64) % self.n as u64) as usize;
        self.rotation[idx]
    }
}

pub fn elect_leader(cfg: &ConsensusConfig, epoch: u64, view: u32) -> NodeId {
    cfg.elect_leader(epoch, view)
}

/// Registered public keys of all overlay nodes plus the pre-shared ring used
/// to check their signatures.
#[derive(Debug, Clone)]
pub struct Directory {
    ring: KeyRing,
    keys: Vec<PublicKey>,
}

impl Directory {
    pub fn new(keypairs: &[KeyPair]) -> Self {
        let mut ring = KeyRing::new();
        for k in keypairs {
            ring.register(k);
        }
        Directory { ring, keys: keypairs.iter().map(KeyPair::public).collect() }
    }

    pub fn shared(keypairs: &[KeyPair]) -> Arc<Self> {
        Arc::new(Self::new(keypairs))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_of(&self, node: NodeId) -> Option<&PublicKey> {
        self.keys.get(node as usize)
    }

    pub fn verify(&self, node: NodeId, msg: &[u8], sig: &Signature) -> bool {
        self.key_of(node).is_some_and(|pk| verify(SignatureScheme::Mac33, &self.ring, pk, msg, sig))
    }

    /// Which member signed this block header, if any.
    pub fn header_signer(&self, header: &BlockHeader) -> Option<NodeId> {
        let msg = header.signing_bytes();
        (0..self.keys.len() as NodeId).find(|&n| self.verify(n, &msg, &header.signature))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leader_rotation_examples() {
        let c4 = ConsensusConfig::new(4, 1);
        assert_eq!(c4.elect_leader(0, 0), 0);
        assert_eq!(c4.elect_leader(0, 1), 1);
        let c50 = ConsensusConfig::new(50, 1);
        assert_eq!(c50.elect_leader(103, 0), 3);
    }

    #[test]
    fn quorum_arithmetic() {
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(50), 34);
        assert_eq!(f_max(4), 1);
        assert_eq!(f_max(50), 16);
        for n in 4..=200u32 {
            let q = quorum(n);
            // q > 2n/3 and q - 1 <= 2n/3, checked in integers
            assert!(3 * q > 2 * n, "n={n}");
            assert!(3 * (q - 1) <= 2 * n, "n={n}");
            assert!(n > 3 * f_max(n));
            // two quorums always share an honest node
            assert!(2 * q > n + f_max(n));
        }
    }
}
