//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chainsplitter::cloud_connector::{
    aggregate_sync_votes, complete_sync, transfer_time_ns, verify_decision, vote_on_sync, ResponseKind,
    SessionDecision, SyncDecision, SyncReason, SyncRequest, SyncSession, SyncVote, SECOND_NS,
};
use chainsplitter::connector::{build_block, BlockForming, TxPool};
use chainsplitter::consensus::{ConsensusConfig, Directory};
use chainsplitter::crypto::{sign, HashScheme, KeyPair, SignatureScheme};
use chainsplitter::error::SyncError;
use chainsplitter::sim::{
    byzantine_sweep, inject_fault, preset, project, run_scenario, Behavior, EventKind, Mode, RunOutput, PRESET_NAMES,
};
use chainsplitter::types::{verify_blocks, ChainBlock};

use common::*;

const GB: f64 = 1e9;

fn within(actual: f64, expected: f64, rel: f64) -> bool {
    (actual - expected).abs() <= rel * expected.abs()
}

fn round_sig(x: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

static WEEK: OnceLock<(RunOutput, Duration)> = OnceLock::new();

fn paper_week() -> &'static (RunOutput, Duration) {
    WEEK.get_or_init(|| timed(|| run_scenario(&preset("paper-week").unwrap()).expect("paper-week run")))
}

fn rate_arithmetic() -> String {
    let cfg = preset("bitcoin-compare").unwrap();
    let (out, took) = timed(|| run_scenario(&cfg).unwrap());
    let h = &out.log.headline;
    assert!(took < Duration::from_secs(1), "took {took:?}");
    assert_eq!(round_sig(h.payload_rate_bytes_per_s / 1e3, 3), 1.67, "{}", h.payload_rate_bytes_per_s);
    let week_gb = h.week.payload_bytes / GB;
    assert_eq!(round_sig(week_gb, 1), 1.0, "{week_gb}");
    assert_eq!(round_sig(h.reference_week_bytes / GB, 3), 302.0);
    assert_eq!(h.reference_week_bytes, 302.4e9);
    format!(
        "{:.2} KB/s, {week_gb:.3} GB/week; 500 KB/s -> {:.1} GB/week",
        h.payload_rate_bytes_per_s / 1e3,
        h.reference_week_bytes / GB
    )
}

fn case_study_rate() -> String {
    let (out, took) = paper_week();
    let h = &out.log.headline;
    assert_eq!(h.payload_rate_bytes_per_s, 750_000.0);
    assert_eq!(h.run.payload_bytes, 453.6e9);
    assert!(h.run.block_bytes > 500e9, "{}", h.run.block_bytes);
    // The simulated chain matches the projection to the byte, minus the
    // one block that would fall exactly at the end of the run.
    let chain = out.log.totals.chain_bytes as f64;
    assert!(within(chain, h.run.block_bytes, 1e-5), "chain {chain} vs projected {}", h.run.block_bytes);
    assert!(*took < Duration::from_secs(60), "took {took:?}");
    format!(
        "750000 B/s, payload {:.1} GB, blocks {:.2} GB, run {:.1} s",
        h.run.payload_bytes / GB,
        chain / GB,
        took.as_secs_f64()
    )
}

fn sawtooth() -> String {
    let (out, _) = paper_week();
    let cfg = &out.config;
    let day_blocks = project(cfg, 86_400.0).block_bytes;
    let nodes = cfg.overlay_size;
    let days = out.log.daily.len() as u64;
    assert_eq!(days, 7);
    let mut worst = 0f64;
    for day in 0..days {
        for n in 0..nodes {
            let peak = out
                .log
                .samples
                .iter()
                .filter(|s| s.node == n && s.t_s > day * 86_400 && s.t_s <= (day + 1) * 86_400)
                .map(|s| s.local_bytes)
                .max()
                .unwrap() as f64;
            worst = worst.max((peak / day_blocks - 1.0).abs());
            assert!(within(peak, day_blocks, 0.10), "node {n} day {day}: peak {peak} vs {day_blocks}");
        }
    }
    let max = out.log.samples.iter().map(|s| s.local_bytes).max().unwrap();
    assert!(max <= cfg.capacity_bytes, "{max} over the disk");

    let regular: Vec<u64> = out.log.events_of(EventKind::SyncRegular).map(|e| e.t_ns / SECOND_NS).collect();
    let requests: Vec<u64> = out.log.events_of(EventKind::SyncRequest).map(|e| e.t_ns / SECOND_NS).collect();
    assert_eq!(regular.len(), 6, "{regular:?}");
    for (i, (&req, &done)) in requests.iter().zip(&regular).enumerate() {
        assert!(req.abs_diff((i as u64 + 1) * 86_400) < 120, "sync {i} requested at {req}");
        for n in 0..nodes {
            let before = out.log.samples.iter().rfind(|s| s.node == n && s.t_s <= req).unwrap();
            let after = out.log.samples.iter().find(|s| s.node == n && s.t_s > done + 60).unwrap();
            assert!(after.local_bytes < before.local_bytes / 4, "node {n} did not drop at sync {i}");
        }
    }
    let first = regular[0];
    assert!(out.log.samples.iter().filter(|s| s.t_s > first).all(|s| s.local_bytes > 0));
    format!("peaks within {:.1}% of {:.2} GB, max {:.2} GB, 6 drops", worst * 100.0, day_blocks / GB, max as f64 / GB)
}

fn sync_duration() -> String {
    let cfg = preset("paper-week").unwrap();
    let day_payload = 86_400.0 * 750_000.0;
    assert_eq!(day_payload, 64.8e9);
    let raw = transfer_time_ns(day_payload as u64, cfg.cloud_bandwidth_bps, 1.0);
    assert_eq!(raw, 2592 * SECOND_NS);
    let with = transfer_time_ns(day_payload as u64, cfg.cloud_bandwidth_bps, cfg.transfer_overhead);
    let minutes = with as f64 / 60e9;
    assert!((50.0..=70.0).contains(&minutes), "{minutes} min");
    let h = &paper_week().0.log.headline;
    assert_eq!(h.day_upload.raw_s, 2592.0);
    assert_eq!(h.day_upload.with_overhead_s, with as f64 / 1e9);

    // The simulated upload of the first framed day segment follows the same model.
    let out = &paper_week().0;
    let approved = out.log.events_of(EventKind::SyncApproved).next().unwrap().t_ns;
    let done = out.log.events_of(EventKind::SyncRegular).next().unwrap().t_ns;
    let segment = out.log.daily[1].cloud_bytes;
    let model = transfer_time_ns(segment, cfg.cloud_bandwidth_bps, cfg.transfer_overhead);
    let simulated = done - approved;
    assert!(within(simulated as f64, model as f64, 0.01), "simulated {simulated} vs model {model}");
    format!(
        "64.8 GB: raw 2592 s, with overhead {minutes:.2} min; framed segment {:.2} GB took {:.1} min",
        segment as f64 / GB,
        simulated as f64 / 60e9
    )
}

fn month_ratio() -> String {
    let cfg = preset("paper-month").unwrap();
    let (out, took) = timed(|| run_scenario(&cfg).unwrap());
    let daily = &out.log.daily;
    assert_eq!(daily.len(), 30);
    for w in daily.windows(2) {
        assert!(
            w[1].local_ratio < w[0].local_ratio,
            "day {} ratio {} !< {}",
            w[1].day,
            w[1].local_ratio,
            w[0].local_ratio
        );
    }
    let last = daily.last().unwrap();
    let expected = 100e9 / last.chain_bytes as f64;
    assert!(within(last.local_ratio, expected, 0.10), "{} vs {expected}", last.local_ratio);
    assert!(took < Duration::from_secs(60), "took {took:?}");
    format!("day-30 ratio {:.4} vs {expected:.4}, run {:.1} s", last.local_ratio, took.as_secs_f64())
}

fn bft_safety() -> String {
    assert_eq!(ConsensusConfig::new(4, 1).quorum, 3);
    let base = preset("byzantine-sweep").unwrap();
    assert_eq!(base.overlay_size, 4);
    let (report, took) = timed(|| byzantine_sweep(&base, 100, &[Behavior::Silent, Behavior::Equivocate]).unwrap());
    assert_eq!(report.runs.len(), 200);
    if let Some(r) = report.failures().next() {
        panic!("seed {} {}: {}", r.seed, r.behavior, r.failure.as_deref().unwrap_or_default());
    }
    assert!(report.min_finalized() > 0);
    assert!(took < Duration::from_secs(60), "took {took:?}");
    let view_changes: u64 = report.runs.iter().map(|r| r.view_changes).sum();
    format!(
        "200 runs, no conflicts, fewest finalized {}, {view_changes} view changes, {:.1} s",
        report.min_finalized(),
        took.as_secs_f64()
    )
}

fn sync_vote_quorum() -> String {
    let keys: Vec<KeyPair> = (0..50u32).map(|i| KeyPair::from_seed(&i.to_le_bytes())).collect();
    let dir = Directory::new(&keys);
    let cfg = ConsensusConfig::new(50, 1);
    assert_eq!(cfg.quorum, 34);
    let head = chain(1, 1)[1].header().clone();
    let req = SyncRequest::new(&keys[7], 7, head.clone(), 1, SyncReason::ThresholdReached, 0);
    let session = |votes: u32| {
        let mut s = SyncSession::new(req.clone());
        for i in 0..votes {
            assert!(s.add_vote(vote_on_sync(&req, &head, &dir, &keys[i as usize], i).unwrap(), &dir));
        }
        s
    };
    let leader = 3;

    let mut s34 = session(34);
    assert_eq!(aggregate_sync_votes(&mut s34, &cfg, false).unwrap(), SessionDecision::Approved);
    assert!(verify_decision(&SyncDecision::new(&keys[leader], leader as u32, &s34), &cfg, &dir).is_ok());

    let mut s33 = session(33);
    assert_eq!(aggregate_sync_votes(&mut s33, &cfg, false).unwrap(), SessionDecision::Pending);
    assert_eq!(aggregate_sync_votes(&mut s33, &cfg, true).unwrap_err(), SyncError::QuorumTimeout);
    assert_eq!(s33.decision, SessionDecision::Rejected);

    // An aggregating leader claiming approval with 33 real votes plus a
    // forged, a replayed or a foreign one is caught on re-verification.
    let resign = |mut d: SyncDecision| {
        d.signature = sign(SignatureScheme::Mac33, &keys[leader], &d.signing_bytes());
        d
    };
    let mut forged = SyncDecision::new(&keys[leader], leader as u32, &s33);
    let mut fake = SyncVote::new(&keys[leader], leader as u32, &req);
    fake.voter = 45;
    forged.votes.push(fake);
    let mut replayed = SyncDecision::new(&keys[leader], leader as u32, &s33);
    replayed.votes.push(replayed.votes[0].clone());
    let other = SyncRequest::new(&keys[8], 8, head.clone(), 1, SyncReason::Scheduled, 5);
    let mut foreign = SyncDecision::new(&keys[leader], leader as u32, &s33);
    foreign.votes.push(SyncVote::new(&keys[40], 40, &other));
    for d in [forged, replayed, foreign] {
        assert_eq!(verify_decision(&resign(d), &cfg, &dir), Err(SyncError::NotApproved));
    }
    // A valid decision whose leader signature was tampered with is refused too.
    let mut bad_sig = SyncDecision::new(&keys[leader], leader as u32, &s34);
    bad_sig.signature.0[0] ^= 1;
    assert_eq!(verify_decision(&bad_sig, &cfg, &dir), Err(SyncError::NotApproved));
    "34/50 approved, 33/50 rejected, padded decisions refused".into()
}

fn malicious_marking() -> String {
    let tiny = preset("tiny-e2e").unwrap();
    let twice = run_scenario(&inject_fault(tiny.clone(), 0, "bad_sync", (0, None)).unwrap()).unwrap();
    assert_eq!(twice.log.totals.marked_nodes, vec![0]);
    assert_eq!(twice.log.events_of(EventKind::MaliciousMark).count(), 1);
    assert_eq!(twice.log.events_of(EventKind::AdminAlert).count(), 1);
    assert_eq!(twice.log.counters.sync_exceptions, 2);
    // The sync itself still completes through another uploader.
    assert_eq!(twice.log.counters.sync_regular, 2);

    let once = run_scenario(&inject_fault(tiny, 0, "bad_sync", (0, Some(40))).unwrap()).unwrap();
    assert!(once.log.totals.marked_nodes.is_empty());
    assert_eq!(once.log.events_of(EventKind::AdminAlert).count(), 0);
    assert_eq!(once.log.counters.sync_exceptions, 1);
    "two bad uploads mark node 0 and alert; one does not".into()
}

fn end_to_end() -> String {
    let cfg = preset("tiny-e2e").unwrap();
    assert_eq!((cfg.overlay_size, cfg.devices(), cfg.duration_s, cfg.mode), (4, 10, 60, Mode::Materialized));
    let (out, took) = timed(|| run_scenario(&cfg).unwrap());
    assert_eq!(out.log.counters.sync_regular, 2);
    let mut len = 0;
    for n in 0..cfg.overlay_size {
        let blocks = out.reconstruct(n).unwrap();
        assert!(blocks.iter().all(|b| matches!(**b, ChainBlock::Full(_))));
        let report = verify_blocks(&blocks[1..], Some(out.genesis.header()), HashScheme::from_id(0).unwrap());
        assert!(report.passed(), "node {n}: {}", report.summary());
        assert_eq!(blocks.last().unwrap().height(), out.chains[n as usize].tip_height());
        len = blocks.len();
    }

    let (session, segment) = out.last_sync.clone().unwrap();
    let mut archive = out.archive;
    let before = (archive.bytes(), archive.get_head().unwrap(), archive.index().clone());
    let mut replay = session.clone();
    let resp = complete_sync(&mut replay, &mut archive, &segment);
    assert_ne!(resp.kind, ResponseKind::Exception);
    assert_eq!(
        resp.updated_head.map(|(h, height)| (h.block_hash, height)),
        Some((before.1.header.block_hash, before.1.height))
    );
    assert_eq!((archive.bytes(), archive.get_head().unwrap(), archive.index().clone()), before);
    assert!(took < Duration::from_secs(10), "took {took:?}");
    format!("{len} blocks rebuilt and verified on all 4 nodes, replay is a no-op, {:.2} s", took.as_secs_f64())
}

fn oracle_equivalence() -> String {
    let materialized = run_scenario(&preset("tiny-e2e").unwrap()).unwrap();
    let mut cfg = preset("tiny-e2e").unwrap();
    cfg.mode = Mode::Accounting;
    let accounting = run_scenario(&cfg).unwrap();
    assert!(!materialized.log.samples.is_empty());
    assert_eq!(materialized.log.samples, accounting.log.samples);
    assert_eq!(materialized.log.daily, accounting.log.daily);

    let genesis = ChainBlock::genesis(HashScheme::Sha256, true);
    let key = leader_key();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for pool_no in 0..100 {
        let n = rng.gen_range(1..=600u64);
        let mut pool = TxPool::new(1000);
        let txs = (0..n)
            .map(|i| {
                let info = vec![rng.gen(); rng.gen_range(0..=30)];
                let data = (0..rng.gen_range(0..=20)).map(|_| rng.gen()).collect();
                reading(rng.gen_range(0..1000), i as u32, rng.gen_range(1..100), info, data)
            })
            .collect();
        for tx in validate(txs) {
            let _ = pool.insert(tx);
        }
        let forming = BlockForming {
            parent: genesis.header(),
            parent_height: 0,
            max_txs: rng.gen_range(1..=700),
            leader_key: &key,
            hash_scheme: HashScheme::Sha256,
        };
        let block = build_block(&mut pool, &forming, 0, 0, 1_000).unwrap();
        let leaves: Vec<_> = block.body.entries.iter().map(|e| sha256(&e.tx_data)).collect();
        assert_eq!(block.header.merkle_root, oracle_merkle(&leaves), "pool {pool_no}");
    }
    format!("{} identical samples; 100 pool roots match the oracle", accounting.log.samples.len())
}

type Criterion = (&'static str, fn() -> String);

fn main() -> ExitCode {
    assert_eq!(PRESET_NAMES.len(), 5);
    let criteria: [Criterion; 10] = [
        ("rate arithmetic", rate_arithmetic),
        ("case-study rate", case_study_rate),
        ("daily sawtooth", sawtooth),
        ("sync duration", sync_duration),
        ("decreasing local ratio", month_ratio),
        ("BFT safety sweep", bft_safety),
        ("sync-vote quorum", sync_vote_quorum),
        ("malicious marking", malicious_marking),
        ("end-to-end integrity", end_to_end),
        ("oracle equivalence", oracle_equivalence),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (result, took) = timed(|| catch_unwind(AssertUnwindSafe(check)));
        match result {
            Ok(detail) => println!("criterion {:>2} {name:<24} PASS  {detail} [{:.2} s]", i + 1, took.as_secs_f64()),
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2} {name:<24} FAIL  {msg} [{:.2} s]", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
