//! Chaos-driven multi-armed bandit decision making.
//!
//! A scalar signal (a replayed 8-bit chaos trace or a synthetic surrogate) is
//! compared against a cascade of forgetting thresholds, one comparison per bit
//! of the selected arm. The crate also ships the two simulated worlds used to
//! study the method: a two-armed bandit whose reward probabilities swap on a
//! schedule, and a four-channel throughput environment with rotating congestion.

pub mod config;
pub mod decision;
pub mod environment;
pub mod harness;
pub mod signal;

pub use decision::{Decision, OmegaMode, OmegaStrategy, RewardEstimates, ThresholdTree};
pub use environment::{ChannelEnv, RewardRule, SwitchingBernoulliEnv, ThroughputSample};
pub use config::{ExperimentConfig, ExperimentKind};
pub use harness::RunResult;
pub use signal::{CalibrationStats, SignalSample, SignalSource, SourceSpec};
