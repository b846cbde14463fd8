//! Seed sweep of a consensus overlay with one adversarial node.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::SimError;
use crate::types::NodeId;

use super::config::{inject_fault, Behavior, ScenarioConfig};
use super::engine::run_scenario;

/// Outcome of one seeded run.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRun {
    pub seed: u64,
    pub behavior: Behavior,
    pub byzantine: NodeId,
    pub finalized_blocks: u64,
    pub view_changes: u64,
    pub consensus_rejections: u64,
    /// Invariant violation or error text, if the run failed.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
}

impl SweepReport {
    pub fn failures(&self) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(|r| r.failure.is_some())
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Fewest blocks finalized by any run.
    pub fn min_finalized(&self) -> u64 {
        self.runs.iter().map(|r| r.finalized_blocks).min().unwrap_or(0)
    }
}

/// Runs `base` once per (seed, behavior) with node `seed mod n` scripted to
/// misbehave for the whole run. Runs are spread over the available cores;
/// the report is ordered by seed then behavior.
pub fn byzantine_sweep(base: &ScenarioConfig, seeds: u64, behaviors: &[Behavior]) -> Result<SweepReport, SimError> {
    let mut jobs = Vec::new();
    for seed in 0..seeds {
        for &b in behaviors {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let node = (seed % cfg.overlay_size as u64) as NodeId;
            jobs.push((inject_fault(cfg, node, &b.to_string(), (0, None))?, b, node));
        }
    }
    let next = AtomicUsize::new(0);
    let results = Mutex::new(vec![None; jobs.len()]);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, behavior, byzantine)) = jobs.get(i) else { break };
                let run = match run_scenario(cfg) {
                    Ok(out) => SweepRun {
                        seed: cfg.seed,
                        behavior: *behavior,
                        byzantine: *byzantine,
                        finalized_blocks: out.log.counters.finalized_blocks,
                        view_changes: out.log.counters.view_changes,
                        consensus_rejections: out.log.counters.consensus_rejections,
                        failure: None,
                    },
                    Err(e) => SweepRun {
                        seed: cfg.seed,
                        behavior: *behavior,
                        byzantine: *byzantine,
                        finalized_blocks: 0,
                        view_changes: 0,
                        consensus_rejections: 0,
                        failure: Some(e.to_string()),
                    },
                };
                results.lock().expect("no worker panics")[i] = Some(run);
            });
        }
    });
    let runs = results.into_inner().expect("no worker panics").into_iter().map(|r| r.expect("every job ran")).collect();
    Ok(SweepReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::presets::preset;

    #[test]
    fn small_sweep_is_ordered_and_clean() {
        let base = preset("byzantine-sweep").unwrap();
        let report = byzantine_sweep(&base, 3, &[Behavior::Silent, Behavior::Equivocate]).unwrap();
        assert_eq!(report.runs.len(), 6);
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.runs[3].seed, 1);
        assert_eq!(report.runs[3].behavior, Behavior::Equivocate);
        assert_eq!(report.runs[5].byzantine, 2);
        assert!(report.min_finalized() > 30);
    }
}
