//! Hashing, Merkle trees and signatures.
//!
//! Two hash schemes are registered: real SHA-256 for integrity runs and a keyed
//! BLAKE3 PRF used as a fast test double in accounting runs. Both emit 32-byte
//! digests, so every artifact has the same encoded size under either scheme.
//!
//! Signatures use a size-faithful stand-in: a 33-byte truncated HMAC-SHA512 tag
//! with a 20-byte public key. Verification goes through a [`KeyRing`] of
//! pre-shared keys, which models the key distribution done by the data engine.

use std::collections::HashMap;
use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256, Sha512};

use crate::error::CryptoError;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 20;
pub const SIGNATURE_LEN: usize = 33;

/// 32-byte digest.
pub type Digest = [u8; DIGEST_LEN];

pub const ZERO_DIGEST: Digest = [0u8; DIGEST_LEN];

const TEST_DOUBLE_KEY: [u8; 32] = *b"chainsplitter.test-double.hash.k";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum HashScheme {
    Sha256 = 0,
    TestDouble = 1,
}

impl HashScheme {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, CryptoError> {
        match id {
            0 => Ok(HashScheme::Sha256),
            1 => Ok(HashScheme::TestDouble),
            other => Err(CryptoError::UnknownScheme(other)),
        }
    }

    pub fn digest_width(self) -> usize {
        DIGEST_LEN
    }

    pub fn hash(self, msg: &[u8]) -> Digest {
        match self {
            HashScheme::Sha256 => Sha256::digest(msg).into(),
            HashScheme::TestDouble => *blake3::keyed_hash(&TEST_DOUBLE_KEY, msg).as_bytes(),
        }
    }

    /// Hash of `left ‖ right`, the inner-node step of the Merkle tree.
    pub fn hash_pair(self, left: &Digest, right: &Digest) -> Digest {
        let mut buf = [0u8; 2 * DIGEST_LEN];
        buf[..DIGEST_LEN].copy_from_slice(left);
        buf[DIGEST_LEN..].copy_from_slice(right);
        self.hash(&buf)
    }
}

/// Hashes `msg` under the scheme registered for `id`.
pub fn hash(id: u8, msg: &[u8]) -> Result<Digest, CryptoError> {
    Ok(HashScheme::from_id(id)?.hash(msg))
}

/// Binary Merkle root. A level with an odd node count duplicates its last node;
/// a single leaf is hashed once.
pub fn merkle_root(scheme: HashScheme, leaves: &[Digest]) -> Result<Digest, CryptoError> {
    match leaves {
        [] => Err(CryptoError::EmptyLeaves),
        [only] => Ok(scheme.hash(only)),
        _ => {
            let mut level: Vec<Digest> = leaves.to_vec();
            while level.len() > 1 {
                level = level
                    .chunks(2)
                    .map(|pair| match pair {
                        [l, r] => scheme.hash_pair(l, r),
                        [l] => scheme.hash_pair(l, l),
                        _ => unreachable!(),
                    })
                    .collect();
            }
            Ok(level[0])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum SignatureScheme {
    Mac33 = 0,
}

impl SignatureScheme {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, CryptoError> {
        match id {
            0 => Ok(SignatureScheme::Mac33),
            other => Err(CryptoError::UnknownScheme(other)),
        }
    }

    pub fn signature_width(self) -> usize {
        SIGNATURE_LEN
    }

    pub fn public_key_width(self) -> usize {
        PUBLIC_KEY_LEN
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::Width {
            what: "public key",
            expected: PUBLIC_KEY_LEN,
            actual: bytes.len(),
        })?;
        Ok(PublicKey(arr))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..6]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub const ZERO: Signature = Signature([0u8; SIGNATURE_LEN]);

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNATURE_LEN] = bytes.try_into().map_err(|_| CryptoError::Width {
            what: "signature",
            expected: SIGNATURE_LEN,
            actual: bytes.len(),
        })?;
        Ok(Signature(arr))
    }
}

impl Default for Signature {
    fn default() -> Self {
        Signature::ZERO
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..6]))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    secret: [u8; 32],
    public: PublicKey,
}

impl KeyPair {
    /// Deterministically derives a key pair from arbitrary seed material.
    pub fn from_seed(seed: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(b"chainsplitter/secret");
        h.update(seed);
        let secret: [u8; 32] = h.finalize().into();
        let mut h = Sha256::new();
        h.update(b"chainsplitter/public");
        h.update(secret);
        let digest = h.finalize();
        let mut public = [0u8; PUBLIC_KEY_LEN];
        public.copy_from_slice(&digest[..PUBLIC_KEY_LEN]);
        KeyPair { secret, public: PublicKey(public) }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

fn mac33(secret: &[u8; 32], msg: &[u8]) -> Signature {
    let mut mac = <Hmac<Sha512> as Mac>::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(msg);
    let tag = mac.finalize().into_bytes();
    let mut out = [0u8; SIGNATURE_LEN];
    out.copy_from_slice(&tag[..SIGNATURE_LEN]);
    Signature(out)
}

pub fn sign(scheme: SignatureScheme, keypair: &KeyPair, msg: &[u8]) -> Signature {
    match scheme {
        SignatureScheme::Mac33 => mac33(&keypair.secret, msg),
    }
}

/// Pre-shared verification keys, indexed by public key.
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    secrets: HashMap<PublicKey, [u8; 32]>,
}

impl KeyRing {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, keypair: &KeyPair) {
        self.secrets.insert(keypair.public, keypair.secret);
    }

    pub fn knows(&self, pk: &PublicKey) -> bool {
        self.secrets.contains_key(pk)
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }
}

/// True iff `sig` was produced over `msg` by the secret matching `pk`.
/// Unknown keys never verify.
pub fn verify(scheme: SignatureScheme, ring: &KeyRing, pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    match scheme {
        SignatureScheme::Mac33 => match ring.secrets.get(pk) {
            Some(secret) => {
                let mut mac = <Hmac<Sha512> as Mac>::new_from_slice(secret).expect("hmac accepts any key length");
                mac.update(msg);
                // constant-time compare over the truncated prefix
                mac.verify_truncated_left(&sig.0).is_ok()
            }
            None => false,
        },
    }
}
