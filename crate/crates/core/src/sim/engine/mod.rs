//! Discrete-event driver: one event queue, one seeded RNG, every node's state
//! machines and the cloud archive.

mod consensus;
mod monitor;
mod sync;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud_connector::{
    FaultLedger, ResponseMessage, SyncDecision, SyncReason, SyncRequest, SyncSession, SyncVote, SECOND_NS,
};
use crate::cloud_store::CloudArchive;
use crate::connector::{PermissionRegistry, Role, TxPool, Validator, DEFAULT_RETRY_BOUND};
use crate::consensus::{ConsensusConfig, ConsensusMsg, Directory, Replica};
use crate::crypto::{Digest, HashScheme, KeyPair};
use crate::error::SimError;
use crate::types::{Address, ChainBlock, ChainSegment, LocalChain, NodeId};

use super::config::{Behavior, Fidelity, Mode, ScenarioConfig};
use super::metrics::{MetricsLog, DAY_S};
use super::node::{Pending, SessionKey, SimNode};
use super::queue::EventQueue;
use super::workload::{stub_workload, tick_time_ns, BatchPool, SizeModel, StubPool, Workload};

pub use monitor::reconstruct_chain;

const POOL_CAPACITY: usize = 1 << 24;
/// Sender id used for messages coming from the cloud.
const CLOUD: NodeId = NodeId::MAX;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Persist the archive here (materialized mode only).
    pub archive_dir: Option<PathBuf>,
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub log: MetricsLog,
    pub archive: CloudArchive,
    pub genesis: Arc<ChainBlock>,
    pub chains: Vec<LocalChain>,
    /// The last session that ended with a regular response, with its segment.
    pub last_sync: Option<(SyncSession, ChainSegment)>,
}

impl RunOutput {
    /// Archive plus `node`'s local tail, from genesis, checked end to end.
    pub fn reconstruct(&self, node: NodeId) -> Result<Vec<Arc<ChainBlock>>, SimError> {
        reconstruct_chain(&self.archive, &self.genesis, &self.chains[node as usize], 0)
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    run_with(cfg, &RunOptions::default())
}

pub fn run_with(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg.clone(), opts)?;
    engine.run()?;
    Ok(engine.into_output())
}

#[derive(Debug, Clone)]
pub(crate) enum NetMsg {
    Consensus(ConsensusMsg),
    Request(SyncRequest),
    Vote(SyncVote),
    Decision(SyncDecision),
    Response(SessionKey, ResponseMessage),
}

#[derive(Debug)]
pub(crate) enum Ev {
    Tick(u64),
    Slot,
    Deliver { from: NodeId, to: NodeId, msg: Arc<NetMsg> },
    Timeout { node: NodeId, epoch: u64, view: u32 },
    RequestFire { node: NodeId, reason: SyncReason, armed_ns: u64 },
    VoteDeadline { leader: NodeId, key: SessionKey },
    UploadStart { key: SessionKey, node: NodeId },
    UploadDone { key: SessionKey },
    Watchdog { node: NodeId, key: SessionKey },
    Sample,
    DayEnd(u64),
}

/// Pool shared by all nodes in batched fidelity.
enum Shared {
    None,
    Batch(BatchPool),
    Txs(TxPool),
}

/// An approved session being uploaded.
struct Upload {
    session: SyncSession,
    uploader: NodeId,
    tried: BTreeSet<NodeId>,
    segment: Option<ChainSegment>,
}

pub(crate) struct Engine {
    cfg: ScenarioConfig,
    scheme: HashScheme,
    ccfg: Arc<ConsensusConfig>,
    dir: Arc<Directory>,
    nodes: Vec<SimNode>,
    queue: EventQueue<Ev>,
    rng: ChaCha8Rng,
    cloud: CloudArchive,
    ledger: FaultLedger,
    log: MetricsLog,
    genesis: Arc<ChainBlock>,
    sizes: SizeModel,
    workload: Option<Workload>,
    validators: Vec<Validator>,
    registry: PermissionRegistry,
    shared: Shared,
    uploads: BTreeMap<SessionKey, Upload>,
    last_sync: Option<(SyncSession, ChainSegment)>,
    /// Safety monitor: height to the hash honest nodes finalized.
    decided: BTreeMap<u64, Digest>,
    finalized_height: u64,
    views_seen: BTreeSet<(u64, u32)>,
    byzantine: BTreeSet<NodeId>,
    tampered: BTreeSet<usize>,
    peak_local: u64,
    days_recorded: u64,
    end_ns: u64,
}

impl Engine {
    fn new(cfg: ScenarioConfig, opts: &RunOptions) -> Result<Self, SimError> {
        let scheme = cfg.hash_scheme();
        let materialized = cfg.mode == Mode::Materialized;
        let n = cfg.overlay_size;
        let keys: Vec<KeyPair> =
            (0..n).map(|i| KeyPair::from_seed(&[b"gateway".as_slice(), &i.to_le_bytes()].concat())).collect();
        let dir = Directory::shared(&keys);
        let ccfg = Arc::new(ConsensusConfig::new(n, cfg.epoch_timeout_ms * 1_000_000));
        let genesis = Arc::new(ChainBlock::genesis(scheme, materialized));
        let full = cfg.fidelity == Fidelity::Full;
        let nodes = keys
            .into_iter()
            .enumerate()
            .map(|(i, key)| {
                let id = i as NodeId;
                let replica =
                    full.then(|| Replica::new(id, key.clone(), ccfg.clone(), dir.clone(), scheme, genesis.clone()));
                let pool = full.then(|| {
                    if materialized {
                        Pending::Txs(TxPool::new(POOL_CAPACITY))
                    } else {
                        Pending::Stubs(StubPool::default())
                    }
                });
                SimNode::new(id, key, genesis.clone(), replica, pool)
            })
            .collect();
        let shared = match (full, materialized) {
            (true, _) => Shared::None,
            (false, false) => Shared::Batch(BatchPool::new(SizeModel::new(&cfg))),
            (false, true) => Shared::Txs(TxPool::new(POOL_CAPACITY)),
        };
        let mut registry = PermissionRegistry::new();
        for i in 0..n {
            registry.admit(Address::gateway(i as u64), [Role::Submit, Role::Validate, Role::Aggregate]);
        }
        let mut cloud = CloudArchive::new(&genesis, cfg.replication as usize, scheme, materialized);
        if let (Some(root), true) = (&opts.archive_dir, materialized) {
            cloud = cloud.with_dir(root).map_err(|e| SimError::Config(format!("archive directory: {e}")))?;
        }
        Ok(Engine {
            scheme,
            ccfg,
            dir,
            nodes,
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cloud,
            ledger: FaultLedger::new(),
            log: MetricsLog::new(&cfg),
            sizes: SizeModel::new(&cfg),
            workload: materialized.then(|| Workload::new(&cfg)),
            validators: (0..n).map(|i| Validator::new(Address::gateway(i as u64), DEFAULT_RETRY_BOUND)).collect(),
            registry,
            shared,
            uploads: BTreeMap::new(),
            last_sync: None,
            decided: BTreeMap::new(),
            finalized_height: 0,
            views_seen: BTreeSet::new(),
            byzantine: cfg.byzantine_nodes().into_iter().collect(),
            tampered: BTreeSet::new(),
            peak_local: genesis.encoded_len(),
            days_recorded: 0,
            end_ns: cfg.duration_s * SECOND_NS,
            genesis,
            cfg,
        })
    }

    fn run(&mut self) -> Result<(), SimError> {
        let first_tick = tick_time_ns(&self.cfg, 1);
        if first_tick <= self.end_ns {
            self.queue.schedule(first_tick, Ev::Tick(1));
        }
        if SECOND_NS / 2 < self.end_ns {
            self.queue.schedule(SECOND_NS / 2, Ev::Slot);
        }
        let interval = self.cfg.metrics_interval_s * SECOND_NS;
        if interval <= self.end_ns {
            self.queue.schedule(interval, Ev::Sample);
        }
        if DAY_S * SECOND_NS <= self.end_ns {
            self.queue.schedule(DAY_S * SECOND_NS, Ev::DayEnd(1));
        }
        while let Some((now, ev)) = self.queue.pop() {
            if now > self.end_ns {
                break;
            }
            self.handle(now, ev)?;
        }
        self.finish()
    }

    fn handle(&mut self, now: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Tick(k) => {
                self.on_tick(k, now)?;
                let next = tick_time_ns(&self.cfg, k + 1);
                if next <= self.end_ns {
                    self.queue.schedule(next, Ev::Tick(k + 1));
                }
            }
            Ev::Slot => {
                self.on_slot(now)?;
                if now + SECOND_NS < self.end_ns {
                    self.queue.schedule(now + SECOND_NS, Ev::Slot);
                }
            }
            Ev::Deliver { from, to, msg } => self.on_deliver(from, to, &msg, now)?,
            Ev::Timeout { node, epoch, view } => {
                if !self.silent(node, now) {
                    let outs =
                        self.nodes[node as usize].replica.as_mut().expect("full fidelity").on_timeout(epoch, view);
                    self.route(node, outs, now)?;
                }
            }
            Ev::RequestFire { node, reason, armed_ns } => self.fire_request(node, reason, armed_ns, now),
            Ev::VoteDeadline { leader, key } => self.tally(leader, key, true, now),
            Ev::UploadStart { key, node } => self.start_upload(key, node, now),
            Ev::UploadDone { key } => self.finish_upload(key, now)?,
            Ev::Watchdog { node, key } => {
                let n = &mut self.nodes[node as usize];
                if n.in_progress == Some(key) {
                    n.in_progress = None;
                }
            }
            Ev::Sample => {
                self.sample(now)?;
                let next = now + self.cfg.metrics_interval_s * SECOND_NS;
                if next <= self.end_ns {
                    self.queue.schedule(next, Ev::Sample);
                }
            }
            Ev::DayEnd(d) => {
                self.day_end(d)?;
                let next = (d + 1) * DAY_S * SECOND_NS;
                if next <= self.end_ns {
                    self.queue.schedule(next, Ev::DayEnd(d + 1));
                }
            }
        }
        Ok(())
    }

    fn active(&self, node: NodeId, behavior: Behavior, now: u64) -> bool {
        self.cfg.faults.iter().any(|f| f.node == node && f.behavior == behavior && f.active_at(now))
    }

    fn silent(&self, node: NodeId, now: u64) -> bool {
        node != CLOUD && self.active(node, Behavior::Silent, now)
    }

    fn overlay_latency(&mut self) -> u64 {
        let r = self.cfg.overlay_latency;
        self.rng.gen_range(r.min_us..=r.max_us) * 1_000
    }

    fn cloud_latency(&mut self) -> u64 {
        let r = self.cfg.cloud_latency;
        self.rng.gen_range(r.min_us..=r.max_us) * 1_000
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Arc<NetMsg>, now: u64) {
        if self.silent(from, now) {
            return;
        }
        let delay = if from == to { 1 } else { self.overlay_latency() };
        self.queue.schedule(now + delay, Ev::Deliver { from, to, msg });
    }

    /// Sends to every node, the sender included when `include_self`.
    fn multicast(&mut self, from: NodeId, msg: NetMsg, include_self: bool, now: u64) {
        let msg = Arc::new(msg);
        for to in 0..self.cfg.overlay_size {
            if to != from || include_self {
                self.send(from, to, msg.clone(), now);
            }
        }
    }

    fn on_deliver(&mut self, from: NodeId, to: NodeId, msg: &NetMsg, now: u64) -> Result<(), SimError> {
        if self.silent(to, now) {
            return Ok(());
        }
        match msg {
            NetMsg::Consensus(m) => self.deliver_consensus(from, to, m.clone(), now)?,
            NetMsg::Request(r) => self.on_sync_request(to, r, now),
            NetMsg::Vote(v) => self.on_sync_vote(to, v.clone(), now),
            NetMsg::Decision(d) => self.on_sync_decision(to, d, now),
            NetMsg::Response(key, r) => self.on_sync_response(to, *key, r),
        }
        Ok(())
    }

    fn on_tick(&mut self, tick: u64, now: u64) -> Result<(), SimError> {
        match &mut self.shared {
            Shared::Batch(p) => {
                p.push_tick(tick);
                return Ok(());
            }
            Shared::None if self.workload.is_none() => {
                let stubs = stub_workload(&self.cfg, &self.sizes, tick);
                for node in &mut self.nodes {
                    if let Some(Pending::Stubs(p)) = &mut node.pool {
                        for s in &stubs {
                            p.insert(*s);
                        }
                    }
                }
                return Ok(());
            }
            _ => {}
        }
        let txs = self.workload.as_ref().expect("materialized").generate_workload(&self.cfg, tick);
        for (gw, tx) in txs {
            let v = self.validators[gw as usize]
                .validate_transaction(&self.registry, Address::gateway(gw as u64), tx)
                .map_err(|e| {
                    self.violation(now, format!("device transaction failed validation at gateway {gw}: {e}"))
                })?;
            let v = Arc::new(v);
            let pools: Vec<&mut TxPool> = match &mut self.shared {
                Shared::Txs(p) => vec![p],
                _ => self
                    .nodes
                    .iter_mut()
                    .filter_map(|n| match &mut n.pool {
                        Some(Pending::Txs(p)) => Some(p),
                        _ => None,
                    })
                    .collect(),
            };
            for p in pools {
                // A full pool turns the transaction away; the pool counts it.
                let _ = p.insert(v.clone());
            }
        }
        Ok(())
    }

    fn on_slot(&mut self, now: u64) -> Result<(), SimError> {
        if matches!(self.shared, Shared::None) {
            for id in 0..self.cfg.overlay_size {
                if self.silent(id, now) {
                    continue;
                }
                let scheme = self.scheme;
                let max_txs = self.cfg.max_txs_per_block as usize;
                let node = &mut self.nodes[id as usize];
                let mut src =
                    super::node::PoolSource { pool: node.pool.as_ref().expect("full fidelity"), scheme, max_txs };
                let outs = node.replica.as_mut().expect("full fidelity").on_slot(now, &mut src);
                self.route(id, outs, now)?;
            }
            return Ok(());
        }
        let ts = now / SECOND_NS;
        let parent = self.nodes[0].chain.tip().clone();
        if ts <= parent.header().timestamp {
            return Ok(());
        }
        let leader = self.ccfg.elect_leader(parent.height(), 0);
        let key = &self.nodes[leader as usize].key;
        let max = self.cfg.max_txs_per_block;
        let block = match &mut self.shared {
            Shared::Batch(p) => match p.take(&self.cfg, max as u64) {
                Some(shape) => super::node::stub_block(&parent, key, self.scheme, ts, shape),
                None => return Ok(()),
            },
            Shared::Txs(p) => {
                let txs = p.take(max as usize);
                if txs.is_empty() {
                    return Ok(());
                }
                super::node::tx_block(&parent, key, self.scheme, ts, &txs)
            }
            Shared::None => unreachable!(),
        };
        let block = Arc::new(block);
        self.finalized_height = block.height();
        self.log.counters.finalized_blocks += 1;
        for id in 0..self.cfg.overlay_size {
            self.append(id, block.clone(), now)?;
        }
        Ok(())
    }

    /// Adds a finalized block to a node's chain and runs the per-append checks.
    fn append(&mut self, id: NodeId, block: Arc<ChainBlock>, now: u64) -> Result<(), SimError> {
        let capacity = self.cfg.capacity_bytes;
        let node = &mut self.nodes[id as usize];
        let len = block.encoded_len();
        if let Err(e) = node.chain.push(block) {
            return Err(self.violation(now, format!("node {id}: {e}")));
        }
        node.appended_bytes += len;
        node.note_bytes();
        let bytes = node.chain.bytes();
        self.peak_local = self.peak_local.max(bytes);
        if bytes > capacity {
            return Err(self.violation(now, format!("node {id} holds {bytes} bytes, disk is {capacity}")));
        }
        self.release_deferred(id, now);
        self.check_trigger(id, now);
        Ok(())
    }

    fn into_output(self) -> RunOutput {
        RunOutput {
            config: self.cfg,
            log: self.log,
            archive: self.cloud,
            genesis: self.genesis,
            chains: self.nodes.into_iter().map(|n| n.chain).collect(),
            last_sync: self.last_sync,
        }
    }
}
