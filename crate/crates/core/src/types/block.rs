use crate::crypto::{merkle_root, Digest, HashScheme, Signature, DIGEST_LEN, SIGNATURE_LEN, ZERO_DIGEST};
use crate::error::CodecError;

use super::codec::Reader;
use super::transaction::{Transaction, TxKey};

/// Unsigned header portion: prev hash, version, merkle root, tx count, timestamp.
pub const HEADER_UNSIGNED_LEN: usize = DIGEST_LEN + 4 + DIGEST_LEN + 4 + 8;
/// Encoded header: the unsigned portion plus the creator signature. The block
/// hash is derived from these bytes and is not itself serialized.
pub const HEADER_LEN: usize = HEADER_UNSIGNED_LEN + SIGNATURE_LEN;
/// Framing bytes per body entry: number, tx id, length prefix and tx hash.
pub const ENTRY_FRAMING_LEN: usize = 4 + 4 + 4 + DIGEST_LEN;

pub const BLOCK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub hash_pre_data_blk: Digest,
    pub block_hash: Digest,
    pub version: u32,
    pub merkle_root: Digest,
    pub num_txs: u32,
    pub signature: Signature,
    pub timestamp: u64,
}

impl BlockHeader {
    /// Bytes the block creator signs.
    pub fn signing_bytes(&self) -> [u8; HEADER_UNSIGNED_LEN] {
        let mut out = [0u8; HEADER_UNSIGNED_LEN];
        out[..32].copy_from_slice(&self.hash_pre_data_blk);
        out[32..36].copy_from_slice(&self.version.to_le_bytes());
        out[36..68].copy_from_slice(&self.merkle_root);
        out[68..72].copy_from_slice(&self.num_txs.to_le_bytes());
        out[72..80].copy_from_slice(&self.timestamp.to_le_bytes());
        out
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..32].copy_from_slice(&self.hash_pre_data_blk);
        out[32..36].copy_from_slice(&self.version.to_le_bytes());
        out[36..68].copy_from_slice(&self.merkle_root);
        out[68..72].copy_from_slice(&self.num_txs.to_le_bytes());
        out[72..105].copy_from_slice(&self.signature.0);
        out[105..113].copy_from_slice(&self.timestamp.to_le_bytes());
        out
    }

    pub fn compute_hash(&self, scheme: HashScheme) -> Digest {
        scheme.hash(&self.encode())
    }

    /// Recomputes and stores `block_hash`.
    pub fn sealed(mut self, scheme: HashScheme) -> Self {
        self.block_hash = self.compute_hash(scheme);
        self
    }

    pub fn decode(bytes: &[u8], scheme: HashScheme) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, CodecError::MalformedBlock);
        let h = Self::read(&mut r, scheme)?;
        r.finish()?;
        Ok(h)
    }

    fn read(r: &mut Reader<'_>, scheme: HashScheme) -> Result<Self, CodecError> {
        let hash_pre_data_blk = r.array()?;
        let version = r.u32()?;
        let merkle_root = r.array()?;
        let num_txs = r.u32()?;
        let signature = Signature(r.array()?);
        let timestamp = r.u64()?;
        Ok(BlockHeader {
            hash_pre_data_blk,
            block_hash: ZERO_DIGEST,
            version,
            merkle_root,
            num_txs,
            signature,
            timestamp,
        }
        .sealed(scheme))
    }
}

/// One numbered body entry carrying a full (marked) transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyEntry {
    pub no: u32,
    pub tx_id: u32,
    pub tx_data: Vec<u8>,
    pub tx_hash: Digest,
}

impl BodyEntry {
    pub fn encoded_len(&self) -> usize {
        ENTRY_FRAMING_LEN + self.tx_data.len()
    }

    pub fn transaction(&self) -> Result<(Transaction, u8), CodecError> {
        Transaction::decode_marked(&self.tx_data)
    }

    /// Checks that the entry hash matches its bytes under the transaction's
    /// own hash scheme and that the tx id agrees with the payload.
    pub fn check(&self) -> Result<(), String> {
        let (tx, _) = self.transaction().map_err(|e| e.to_string())?;
        if tx.tx_id != self.tx_id {
            return Err(format!("entry {} tx_id {} disagrees with payload {}", self.no, self.tx_id, tx.tx_id));
        }
        let scheme = HashScheme::from_id(tx.hash_type).map_err(|e| e.to_string())?;
        if scheme.hash(&self.tx_data) != self.tx_hash {
            return Err(format!("entry {} tx_hash mismatch", self.no));
        }
        Ok(())
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.no.to_le_bytes());
        out.extend_from_slice(&self.tx_id.to_le_bytes());
        out.extend_from_slice(&(self.tx_data.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.tx_data);
        out.extend_from_slice(&self.tx_hash);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockBody {
    pub entries: Vec<BodyEntry>,
}

impl BlockBody {
    pub fn encoded_len(&self) -> usize {
        self.entries.iter().map(BodyEntry::encoded_len).sum()
    }

    pub fn merkle_root(&self, scheme: HashScheme) -> Digest {
        if self.entries.is_empty() {
            return ZERO_DIGEST;
        }
        let leaves: Vec<Digest> = self.entries.iter().map(|e| e.tx_hash).collect();
        merkle_root(scheme, &leaves).expect("non-empty")
    }

    /// Entry numbering, per-entry hashes and tx ids.
    pub fn check_entries(&self) -> Result<(), String> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.no as usize != i + 1 {
                return Err(format!("entry at position {} numbered {}", i + 1, e.no));
            }
            e.check()?;
        }
        Ok(())
    }

    /// Ordering key of the last transaction in the body.
    pub fn last_key(&self) -> Option<TxKey> {
        self.entries.last().and_then(|e| e.transaction().ok()).map(|(tx, _)| tx.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    pub header: BlockHeader,
    pub body: BlockBody,
    pub height: u64,
}

impl DataBlock {
    pub fn genesis(scheme: HashScheme) -> Self {
        DataBlock {
            header: BlockHeader {
                hash_pre_data_blk: ZERO_DIGEST,
                block_hash: ZERO_DIGEST,
                version: BLOCK_VERSION,
                merkle_root: ZERO_DIGEST,
                num_txs: 0,
                signature: Signature::ZERO,
                timestamp: 0,
            }
            .sealed(scheme),
            body: BlockBody::default(),
            height: 0,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.body.encoded_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header.encode());
        for e in &self.body.entries {
            e.write(&mut out);
        }
        out
    }

    /// Structural checks that need no chain context: tx count, genesis shape,
    /// entries and merkle root.
    pub fn check_contents(&self, scheme: HashScheme) -> Result<(), String> {
        if self.header.num_txs as usize != self.body.entries.len() {
            return Err(format!("num_txs {} but body holds {}", self.header.num_txs, self.body.entries.len()));
        }
        if self.body.entries.is_empty() && self.height != 0 {
            return Err("non-genesis block without transactions".into());
        }
        self.body.check_entries()?;
        if self.body.merkle_root(scheme) != self.header.merkle_root {
            return Err("merkle root mismatch".into());
        }
        Ok(())
    }
}

/// Decodes and verifies one block. Height is not part of the encoding; the
/// caller supplies it from the surrounding segment.
pub fn decode_block(bytes: &[u8], height: u64, scheme: HashScheme) -> Result<DataBlock, CodecError> {
    let mut r = Reader::new(bytes, CodecError::MalformedBlock);
    let header = BlockHeader::read(&mut r, scheme)?;
    let mut entries = Vec::with_capacity((header.num_txs as usize).min(r.remaining() / ENTRY_FRAMING_LEN + 1));
    for _ in 0..header.num_txs {
        let no = r.u32()?;
        let tx_id = r.u32()?;
        let tx_data = r.var()?.to_vec();
        let tx_hash = r.array()?;
        entries.push(BodyEntry { no, tx_id, tx_data, tx_hash });
    }
    r.finish()?;
    let block = DataBlock { header, body: BlockBody { entries }, height };
    block.check_contents(scheme).map_err(CodecError::MalformedBlock)?;
    Ok(block)
}

pub fn encode_block(block: &DataBlock) -> Vec<u8> {
    block.encode()
}

/// Size-only stand-in for a block: a real header plus the byte length of the
/// body it would carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStub {
    pub header: BlockHeader,
    pub height: u64,
    pub body_bytes: u64,
    pub last_key: Option<TxKey>,
}

impl BlockStub {
    /// Header-level stand-in for the merkle root: commits to the body shape.
    pub fn body_commitment(
        scheme: HashScheme,
        height: u64,
        num_txs: u32,
        body_bytes: u64,
        last_key: Option<TxKey>,
    ) -> Digest {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(b"stub");
        buf.extend_from_slice(&height.to_le_bytes());
        buf.extend_from_slice(&num_txs.to_le_bytes());
        buf.extend_from_slice(&body_bytes.to_le_bytes());
        if let Some(k) = last_key {
            buf.extend_from_slice(&k.timestamp.to_le_bytes());
            buf.extend_from_slice(&k.from.0);
            buf.extend_from_slice(&k.tx_id.to_le_bytes());
        }
        scheme.hash(&buf)
    }

    pub fn check_contents(&self, scheme: HashScheme) -> Result<(), String> {
        if self.header.num_txs == 0 && self.height != 0 {
            return Err("non-genesis block without transactions".into());
        }
        let c = Self::body_commitment(scheme, self.height, self.header.num_txs, self.body_bytes, self.last_key);
        if self.height != 0 && c != self.header.merkle_root {
            return Err("merkle root mismatch".into());
        }
        Ok(())
    }
}

/// A block as held by a node: fully materialized, or size-only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainBlock {
    Full(DataBlock),
    Stub(BlockStub),
}

impl ChainBlock {
    pub fn header(&self) -> &BlockHeader {
        match self {
            ChainBlock::Full(b) => &b.header,
            ChainBlock::Stub(s) => &s.header,
        }
    }

    pub fn header_mut(&mut self) -> &mut BlockHeader {
        match self {
            ChainBlock::Full(b) => &mut b.header,
            ChainBlock::Stub(s) => &mut s.header,
        }
    }

    pub fn height(&self) -> u64 {
        match self {
            ChainBlock::Full(b) => b.height,
            ChainBlock::Stub(s) => s.height,
        }
    }

    pub fn hash(&self) -> Digest {
        self.header().block_hash
    }

    pub fn encoded_len(&self) -> u64 {
        match self {
            ChainBlock::Full(b) => b.encoded_len() as u64,
            ChainBlock::Stub(s) => HEADER_LEN as u64 + s.body_bytes,
        }
    }

    pub fn num_txs(&self) -> u32 {
        self.header().num_txs
    }

    pub fn last_key(&self) -> Option<TxKey> {
        match self {
            ChainBlock::Full(b) => b.body.last_key(),
            ChainBlock::Stub(s) => s.last_key,
        }
    }

    pub fn check_contents(&self, scheme: HashScheme) -> Result<(), String> {
        match self {
            ChainBlock::Full(b) => b.check_contents(scheme),
            ChainBlock::Stub(s) => s.check_contents(scheme),
        }
    }

    /// Digest over everything the block stores, body included; replicas are
    /// compared on this.
    pub fn content_digest(&self, scheme: HashScheme) -> Digest {
        match self {
            ChainBlock::Full(b) => scheme.hash(&b.encode()),
            ChainBlock::Stub(s) => {
                let mut buf = s.header.encode().to_vec();
                buf.extend_from_slice(&s.body_bytes.to_le_bytes());
                scheme.hash(&buf)
            }
        }
    }

    pub fn genesis(scheme: HashScheme, materialized: bool) -> Self {
        let g = DataBlock::genesis(scheme);
        if materialized {
            ChainBlock::Full(g)
        } else {
            ChainBlock::Stub(BlockStub { header: g.header, height: 0, body_bytes: 0, last_key: None })
        }
    }
}
