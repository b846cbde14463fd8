//! Deterministic discrete-event simulation of the overlay, the cloud archive
//! and the device workload.

pub mod config;
pub mod engine;
pub mod metrics;
mod node;
pub mod presets;
pub mod queue;
pub mod sweep;
pub mod workload;

pub use config::{inject_fault, Behavior, FaultSpec, Fidelity, LatencyRange, Mode, ScenarioConfig};
pub use engine::{reconstruct_chain, run_scenario, run_with, RunOptions, RunOutput};
pub use metrics::{
    emit_report, Counters, DailyStat, EventKind, Headline, LogEvent, MetricsLog, ReportFormat, Sample, Totals,
};
pub use presets::{describe, preset, PRESET_NAMES};
pub use queue::EventQueue;
pub use sweep::{byzantine_sweep, SweepReport, SweepRun};
pub use workload::{
    compute_volume_projection, payload_rate, project, BatchPool, SizeModel, StubPool, VolumeProjection, Workload,
};
