use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, HashScheme, PublicKey, Signature, DIGEST_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::error::CodecError;

use super::codec::Reader;

/// Encoded size of a transaction whose two variable fields are empty.
pub const TX_FIXED_LEN: usize = 16 + 16 + 1 + 4 + PUBLIC_KEY_LEN + 8 + 4 + 4 + 1 + DIGEST_LEN + 1 + SIGNATURE_LEN;

/// 16-byte identity (UUID-shaped) for devices and gateways.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Address(pub [u8; 16]);

const DEVICE_TAG: u8 = 0xD0;
const GATEWAY_TAG: u8 = 0x6A;

impl Address {
    /// Device addresses sort in index order.
    pub fn device(index: u64) -> Self {
        Self::tagged(DEVICE_TAG, index)
    }

    pub fn gateway(index: u64) -> Self {
        Self::tagged(GATEWAY_TAG, index)
    }

    fn tagged(tag: u8, index: u64) -> Self {
        let mut b = [0u8; 16];
        b[0] = tag;
        b[8..].copy_from_slice(&index.to_be_bytes());
        Address(b)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CodecError> {
        let arr: [u8; 16] = bytes.try_into().map_err(|_| CodecError::FieldLength {
            field: "address",
            expected: 16,
            actual: bytes.len(),
        })?;
        Ok(Address(arr))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx = u64::from_be_bytes(self.0[8..].try_into().unwrap());
        match self.0[0] {
            DEVICE_TAG if self.0[1..8] == [0; 7] => write!(f, "device:{idx}"),
            GATEWAY_TAG if self.0[1..8] == [0; 7] => write!(f, "gateway:{idx}"),
            _ => write!(f, "{}", hex::encode(self.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TxType {
    Reading = 0,
    Warning = 1,
    Alarm = 2,
    Status = 3,
}

impl TryFrom<u8> for TxType {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        Ok(match v {
            0 => TxType::Reading,
            1 => TxType::Warning,
            2 => TxType::Alarm,
            3 => TxType::Status,
            other => return Err(CodecError::MalformedTransaction(format!("unknown tx type {other}"))),
        })
    }
}

/// Ordering key used when bundling transactions into a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxKey {
    pub timestamp: u64,
    pub from: Address,
    pub tx_id: u32,
}

/// One industrial measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub from: Address,
    pub to: Address,
    pub tx_type: TxType,
    pub device_info: Vec<u8>,
    pub one_time_pk: PublicKey,
    pub timestamp: u64,
    pub tx_id: u32,
    pub data: Vec<u8>,
    pub hash_type: u8,
    pub tx_hash: Digest,
    pub sig_type: u8,
    pub signature: Signature,
}

fn put_var(out: &mut Vec<u8>, field: &'static str, bytes: &[u8]) -> Result<(), CodecError> {
    let len = u32::try_from(bytes.len()).map_err(|_| CodecError::FieldLength {
        field,
        expected: u32::MAX as usize,
        actual: bytes.len(),
    })?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

impl Transaction {
    pub fn key(&self) -> TxKey {
        TxKey { timestamp: self.timestamp, from: self.from, tx_id: self.tx_id }
    }

    pub fn encoded_len(&self) -> usize {
        TX_FIXED_LEN + self.device_info.len() + self.data.len()
    }

    /// Bytes covered by `tx_hash`: every field up to and including `hash_type`.
    pub fn hash_preimage(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_preimage(&mut out)?;
        Ok(out)
    }

    fn write_preimage(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        out.extend_from_slice(&self.from.0);
        out.extend_from_slice(&self.to.0);
        out.push(self.tx_type as u8);
        put_var(out, "device_info", &self.device_info)?;
        out.extend_from_slice(&self.one_time_pk.0);
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&self.tx_id.to_le_bytes());
        put_var(out, "data", &self.data)?;
        out.push(self.hash_type);
        Ok(())
    }

    pub fn compute_hash(&self) -> Result<Digest, CodecError> {
        let scheme = HashScheme::from_id(self.hash_type)?;
        Ok(scheme.hash(&self.hash_preimage()?))
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        self.encode_inner(None)
    }

    /// Encoding with the one-byte validation mark placed after `sig_type`.
    pub fn encode_marked(&self, mark: u8) -> Result<Vec<u8>, CodecError> {
        self.encode_inner(Some(mark))
    }

    fn encode_inner(&self, mark: Option<u8>) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(self.encoded_len() + 1);
        self.write_preimage(&mut out)?;
        out.extend_from_slice(&self.tx_hash);
        out.push(self.sig_type);
        if let Some(m) = mark {
            out.push(m);
        }
        out.extend_from_slice(&self.signature.0);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, CodecError::MalformedTransaction);
        let tx = Self::read(&mut r, false)?.0;
        r.finish()?;
        Ok(tx)
    }

    /// Decodes a marked encoding, returning the transaction and its mark byte.
    pub fn decode_marked(bytes: &[u8]) -> Result<(Self, u8), CodecError> {
        let mut r = Reader::new(bytes, CodecError::MalformedTransaction);
        let (tx, mark) = Self::read(&mut r, true)?;
        r.finish()?;
        Ok((tx, mark.unwrap_or(0)))
    }

    fn read(r: &mut Reader<'_>, marked: bool) -> Result<(Self, Option<u8>), CodecError> {
        let from = Address(r.array()?);
        let to = Address(r.array()?);
        let tx_type = TxType::try_from(r.u8()?)?;
        let device_info = r.var()?.to_vec();
        let one_time_pk = PublicKey(r.array()?);
        let timestamp = r.u64()?;
        let tx_id = r.u32()?;
        let data = r.var()?.to_vec();
        let hash_type = r.u8()?;
        let tx_hash = r.array()?;
        let sig_type = r.u8()?;
        let mark = if marked { Some(r.u8()?) } else { None };
        let signature = Signature(r.array()?);
        Ok((
            Transaction {
                from,
                to,
                tx_type,
                device_info,
                one_time_pk,
                timestamp,
                tx_id,
                data,
                hash_type,
                tx_hash,
                sig_type,
                signature,
            },
            mark,
        ))
    }
}

impl Transaction {
    /// Builds a transaction and fills in `tx_hash` and `signature` the way a
    /// device's data engine would: the hash covers the leading fields and the
    /// signature covers the hash.
    #[allow(clippy::too_many_arguments)]
    pub fn sealed(
        from: Address,
        to: Address,
        tx_type: TxType,
        device_info: Vec<u8>,
        data: Vec<u8>,
        timestamp: u64,
        tx_id: u32,
        device_key: &crate::crypto::KeyPair,
        hash_scheme: HashScheme,
    ) -> Result<Self, CodecError> {
        let sig_scheme = crate::crypto::SignatureScheme::Mac33;
        let mut tx = Transaction {
            from,
            to,
            tx_type,
            device_info,
            one_time_pk: device_key.public(),
            timestamp,
            tx_id,
            data,
            hash_type: hash_scheme.id(),
            tx_hash: [0u8; DIGEST_LEN],
            sig_type: sig_scheme.id(),
            signature: Signature::ZERO,
        };
        tx.tx_hash = tx.compute_hash()?;
        tx.signature = crate::crypto::sign(sig_scheme, device_key, &tx.tx_hash);
        Ok(tx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use proptest::prelude::*;

    fn sample(info: usize, data: usize) -> Transaction {
        Transaction::sealed(
            Address::device(7),
            Address::gateway(1),
            TxType::Reading,
            vec![0xAB; info],
            vec![0x11; data],
            1_600_000_000,
            42,
            &KeyPair::from_seed(b"dev7"),
            HashScheme::Sha256,
        )
        .unwrap()
    }

    #[test]
    fn empty_variable_fields_encode_to_140_bytes() {
        assert_eq!(TX_FIXED_LEN, 140);
        let tx = sample(0, 0);
        assert_eq!(tx.encode().unwrap().len(), 140);
        assert_eq!(tx.encoded_len(), 140);
    }

    #[test]
    fn typical_transaction_is_158_bytes() {
        let tx = sample(10, 8);
        let n = tx.encode().unwrap().len();
        assert_eq!(n, 158);
        assert!((120..=180).contains(&n));
    }

    #[test]
    fn marked_encoding_adds_one_byte_after_sig_type() {
        let tx = sample(3, 4);
        let plain = tx.encode().unwrap();
        let marked = tx.encode_marked(1).unwrap();
        assert_eq!(marked.len(), plain.len() + 1);
        let sig_type_at = plain.len() - 34;
        assert_eq!(marked[..=sig_type_at], plain[..=sig_type_at]);
        assert_eq!(marked[sig_type_at + 1], 1);
        assert_eq!(Transaction::decode_marked(&marked).unwrap(), (tx, 1));
    }

    #[test]
    fn tx_hash_covers_leading_fields() {
        let tx = sample(2, 2);
        assert_eq!(tx.compute_hash().unwrap(), tx.tx_hash);
        let mut bad = tx.clone();
        bad.data[0] ^= 1;
        assert_ne!(bad.compute_hash().unwrap(), tx.tx_hash);
    }

    #[test]
    fn truncated_and_trailing_input_is_rejected() {
        let enc = sample(1, 1).encode().unwrap();
        assert!(Transaction::decode(&enc[..enc.len() - 1]).is_err());
        let mut longer = enc.clone();
        longer.push(0);
        assert!(Transaction::decode(&longer).is_err());
        assert!(PublicKey::from_slice(&[0u8; 19]).is_err());
        assert!(matches!(
            Address::from_slice(&[0u8; 15]),
            Err(CodecError::FieldLength { expected: 16, actual: 15, .. })
        ));
    }

    prop_compose! {
        fn arb_tx()(from in any::<[u8; 16]>(), to in any::<[u8; 16]>(), ty in 0u8..4,
                    info in proptest::collection::vec(any::<u8>(), 0..64),
                    pk in any::<[u8; 20]>(), ts in any::<u64>(), id in any::<u32>(),
                    data in proptest::collection::vec(any::<u8>(), 0..64),
                    ht in 0u8..2, h in any::<[u8; 32]>(), sig in proptest::collection::vec(any::<u8>(), 33))
                    -> Transaction {
            Transaction {
                from: Address(from), to: Address(to), tx_type: TxType::try_from(ty).unwrap(),
                device_info: info, one_time_pk: PublicKey(pk), timestamp: ts, tx_id: id, data,
                hash_type: ht, tx_hash: h, sig_type: 0, signature: Signature::from_slice(&sig).unwrap(),
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_round_trip(tx in arb_tx()) {
            let enc = tx.encode().unwrap();
            prop_assert_eq!(enc.len(), tx.encoded_len());
            prop_assert_eq!(Transaction::decode(&enc).unwrap(), tx.clone());
            prop_assert_eq!(tx.encode().unwrap(), enc);
        }
    }
}
