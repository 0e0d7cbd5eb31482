//! Load-aware training scheduling for model-circulation decentralized
//! federated learning.
//!
//! A single model travels between nodes. Each round the scheduler looks at
//! the compute and bandwidth every node has left over from background load,
//! decides which node trains next and on how much of each label, and the
//! simulator charges the resulting computation, transmission and idle time.

pub mod config;
pub mod data;
pub mod domain;
pub mod error;
pub mod learner;
pub mod report;
pub mod resources;
pub mod sched;
pub mod sim;
pub mod strategy;
pub mod timing;

pub use config::ScenarioConfig;
pub use domain::{
    label_variance, mu, AllocationVector, LabelId, LinkProfile, ModelSpec, NodeId, NodeProfile,
    RoundDecision, ScheduleState, SchedulerConstants, Topology,
};
pub use error::{Error, Result};
pub use resources::{sample_round, RoundResources, UtilizationDistribution};
pub use sched::{decide_round, solve_max_samples, CandidateEvaluation, MaxSamplesSolution};
pub use sim::{run_simulation, time_to_accuracy, RoundRecord, RunSummary};
pub use strategy::StrategyKind;
pub use timing::RoundTiming;
