//! Device traffic: per-transaction sizes, rate arithmetic and the pools that
//! feed block forming.

use std::collections::{BTreeMap, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crypto::{HashScheme, KeyPair};
use crate::types::{Address, NodeId, Transaction, TxKey, TxType, ENTRY_FRAMING_LEN, HEADER_LEN, TX_FIXED_LEN};

use super::config::ScenarioConfig;

/// Bytes a transaction adds to a block beyond its own encoding: the mark
/// byte plus the body-entry framing.
pub const ENTRY_OVERHEAD: u64 = 1 + ENTRY_FRAMING_LEN as u64;

/// Deterministic per-transaction sizes. Devices are paired; in every tick the
/// even device of a pair is `mean + off` and the odd one `mean - off`, with
/// `off` drawn uniformly from `0..=half_width`. Sizes therefore stay inside
/// the configured band and every tick's total is exactly `devices * mean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SizeModel {
    pub mean: u32,
    pub lo: u32,
    pub hi: u32,
    pub half_width: u32,
    pub devices: u64,
    seed: u64,
}

impl SizeModel {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let lo = cfg.tx_min_bytes.max(TX_FIXED_LEN as u32);
        let hi = cfg.tx_max_bytes;
        let mean = cfg.avg_tx_bytes;
        SizeModel {
            mean,
            lo,
            hi,
            half_width: mean.saturating_sub(lo).min(hi.saturating_sub(mean)),
            devices: cfg.devices(),
            seed: cfg.seed,
        }
    }

    fn offset(&self, tick: u64, pair: u64) -> u32 {
        if self.half_width == 0 {
            return 0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tick);
        rng.set_word_pos(pair as u128);
        rng.next_u32() % (self.half_width + 1)
    }

    fn paired(&self, device: u64) -> bool {
        !(self.devices % 2 == 1 && device == self.devices - 1)
    }

    pub fn size(&self, tick: u64, device: u64) -> u32 {
        if !self.paired(device) {
            return self.mean;
        }
        let off = self.offset(tick, device / 2);
        if device.is_multiple_of(2) {
            self.mean + off
        } else {
            self.mean - off
        }
    }

    /// Total transaction bytes of devices `a..b` in `tick`, in O(1) draws:
    /// complete pairs sum to `2 * mean`, so only split pairs at the edges
    /// contribute an offset.
    pub fn range_bytes(&self, tick: u64, a: u64, b: u64) -> u64 {
        if a >= b {
            return 0;
        }
        let mut total = (b - a) as i64 * self.mean as i64;
        if a % 2 == 1 && self.paired(a) {
            total -= self.offset(tick, a / 2) as i64;
        }
        let last = b - 1;
        if last.is_multiple_of(2) && self.paired(last) {
            // The partner of `last` is `b`, outside the range.
            total += self.offset(tick, last / 2) as i64;
        }
        total as u64
    }
}

/// Aggregate device payload in bytes per second.
pub fn payload_rate(cfg: &ScenarioConfig) -> f64 {
    cfg.devices() as f64 * cfg.avg_tx_bytes as f64 * 1000.0 / cfg.sample_period_ms as f64
}

pub fn tx_rate(cfg: &ScenarioConfig) -> f64 {
    cfg.devices() as f64 * 1000.0 / cfg.sample_period_ms as f64
}

/// `rate * duration`.
pub fn compute_volume_projection(rate_bytes_per_s: f64, duration_s: f64) -> f64 {
    rate_bytes_per_s * duration_s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeProjection {
    pub rate_bytes_per_s: f64,
    pub duration_s: f64,
    pub payload_bytes: f64,
    /// Payload plus per-entry framing and one header per block slot.
    pub block_bytes: f64,
}

/// Projection for a workload, with the block overhead of one block per second.
pub fn project(cfg: &ScenarioConfig, duration_s: f64) -> VolumeProjection {
    let rate = payload_rate(cfg);
    let payload = compute_volume_projection(rate, duration_s);
    let framing = tx_rate(cfg) * ENTRY_OVERHEAD as f64 * duration_s;
    VolumeProjection {
        rate_bytes_per_s: rate,
        duration_s,
        payload_bytes: payload,
        block_bytes: payload + framing + HEADER_LEN as f64 * duration_s,
    }
}

pub fn wsan_of(cfg: &ScenarioConfig, device: u64) -> u64 {
    device / cfg.nodes_per_wsan as u64
}

/// Gateway node that validates a WSAN's transactions.
pub fn gateway_of(cfg: &ScenarioConfig, device: u64) -> NodeId {
    (wsan_of(cfg, device) % cfg.overlay_size as u64) as NodeId
}

/// Time of tick `k` (ticks start at 1).
pub fn tick_time_ns(cfg: &ScenarioConfig, tick: u64) -> u64 {
    tick * cfg.sample_period_ms * 1_000_000
}

fn tick_key(cfg: &ScenarioConfig, tick: u64, device: u64) -> TxKey {
    TxKey { timestamp: tick_time_ns(cfg, tick) / 1_000_000_000, from: Address::device(device), tx_id: tick as u32 }
}

/// Materialized transaction stream.
pub struct Workload {
    sizes: SizeModel,
    device_keys: Vec<KeyPair>,
    scheme: HashScheme,
}

impl Workload {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Workload {
            sizes: SizeModel::new(cfg),
            device_keys: (0..cfg.devices())
                .map(|d| KeyPair::from_seed(&[b"device".as_slice(), &d.to_le_bytes()].concat()))
                .collect(),
            scheme: cfg.hash_scheme(),
        }
    }

    pub fn sizes(&self) -> &SizeModel {
        &self.sizes
    }

    /// Every device's transaction for `tick`, tagged with its gateway.
    pub fn generate_workload(&self, cfg: &ScenarioConfig, tick: u64) -> Vec<(NodeId, Transaction)> {
        (0..cfg.devices())
            .map(|d| {
                let size = self.sizes.size(tick, d) as usize;
                let extra = size - TX_FIXED_LEN;
                let data_len = extra.min(8);
                let data: Vec<u8> = (tick ^ d).to_le_bytes()[..data_len].to_vec();
                let info = vec![(d % 251) as u8; extra - data_len];
                let key = tick_key(cfg, tick, d);
                let gw = gateway_of(cfg, d);
                let tx = Transaction::sealed(
                    key.from,
                    Address::gateway(gw as u64),
                    TxType::Reading,
                    info,
                    data,
                    key.timestamp,
                    key.tx_id,
                    &self.device_keys[d as usize],
                    self.scheme,
                )
                .expect("workload transactions fit the layout");
                (gw, tx)
            })
            .collect()
    }
}

/// Size-only stand-in for a validated transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxStub {
    pub key: TxKey,
    /// Encoded size of the unmarked transaction.
    pub size: u32,
}

pub fn stub_workload(cfg: &ScenarioConfig, sizes: &SizeModel, tick: u64) -> Vec<TxStub> {
    (0..cfg.devices()).map(|d| TxStub { key: tick_key(cfg, tick, d), size: sizes.size(tick, d) }).collect()
}

/// Shape of the next block drawn from a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchShape {
    pub count: u32,
    /// Body bytes, entries included.
    pub body_bytes: u64,
    pub last_key: TxKey,
}

/// Ordered pool of transaction stubs, one per overlay node in full fidelity.
#[derive(Debug, Clone, Default)]
pub struct StubPool {
    txs: BTreeMap<TxKey, u32>,
}

impl StubPool {
    pub fn insert(&mut self, tx: TxStub) {
        self.txs.insert(tx.key, tx.size);
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn peek(&self, max: usize) -> Option<BatchShape> {
        let mut count = 0;
        let mut bytes = 0;
        let mut last = None;
        for (k, s) in self.txs.iter().take(max) {
            count += 1;
            bytes += *s as u64 + ENTRY_OVERHEAD;
            last = Some(*k);
        }
        last.map(|last_key| BatchShape { count, body_bytes: bytes, last_key })
    }

    pub fn remove_through(&mut self, key: &TxKey) -> usize {
        let keep = self.txs.split_off(key);
        let removed = std::mem::replace(&mut self.txs, keep);
        let mut n = removed.len();
        if self.txs.remove(key).is_some() {
            n += 1;
        }
        n
    }
}

/// Closed-form pool for batched runs: pending transactions are whole ticks
/// plus a cursor into the oldest one, so nothing per transaction is stored.
#[derive(Debug, Clone)]
pub struct BatchPool {
    sizes: SizeModel,
    ticks: VecDeque<u64>,
    /// Devices of the front tick already taken.
    cursor: u64,
}

impl BatchPool {
    pub fn new(sizes: SizeModel) -> Self {
        BatchPool { sizes, ticks: VecDeque::new(), cursor: 0 }
    }

    pub fn push_tick(&mut self, tick: u64) {
        self.ticks.push_back(tick);
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn len(&self) -> u64 {
        (self.ticks.len() as u64 * self.sizes.devices).saturating_sub(self.cursor)
    }

    /// Removes up to `max` transactions in key order.
    pub fn take(&mut self, cfg: &ScenarioConfig, max: u64) -> Option<BatchShape> {
        let mut count = 0;
        let mut bytes = 0;
        let mut last = None;
        while count < max {
            let Some(&tick) = self.ticks.front() else { break };
            let n = (max - count).min(self.sizes.devices - self.cursor);
            let end = self.cursor + n;
            bytes += self.sizes.range_bytes(tick, self.cursor, end) + n * ENTRY_OVERHEAD;
            count += n;
            last = Some(tick_key(cfg, tick, end - 1));
            if end == self.sizes.devices {
                self.ticks.pop_front();
                self.cursor = 0;
            } else {
                self.cursor = end;
            }
        }
        last.map(|last_key| BatchShape { count: count as u32, body_bytes: bytes, last_key })
    }
}
