//! Value types shared by the scheduler, the timing model and the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a class label within a scenario's fixed label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelId(pub usize);

/// Index of a participating node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-node data holdings and baseline compute.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProfile {
    /// Samples held per label, indexed by `LabelId`.
    pub label_counts: Vec<u64>,
    /// Baseline compute capacity in FLOPS.
    pub baseline_compute: f64,
}

impl NodeProfile {
    pub fn new(label_counts: Vec<u64>, baseline_compute: f64) -> Result<Self> {
        if !(baseline_compute.is_finite() && baseline_compute > 0.0) {
            return Err(Error::invalid("baseline_compute_flops", "must be positive"));
        }
        Ok(Self {
            label_counts,
            baseline_compute,
        })
    }

    pub fn count(&self, label: LabelId) -> u64 {
        self.label_counts[label.0]
    }

    pub fn total_samples(&self) -> u64 {
        self.label_counts.iter().sum()
    }
}

/// Symmetric baseline bandwidth matrix in bits per second.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkProfile {
    nodes: usize,
    bandwidth: Vec<f64>,
}

impl LinkProfile {
    /// Every pair of distinct nodes gets the same baseline bandwidth.
    pub fn uniform(nodes: usize, bits_per_sec: f64) -> Result<Self> {
        if !(bits_per_sec.is_finite() && bits_per_sec > 0.0) {
            return Err(Error::invalid(
                "baseline_bandwidth_bits_per_sec",
                "must be positive",
            ));
        }
        Ok(Self {
            nodes,
            bandwidth: vec![bits_per_sec; nodes * nodes],
        })
    }

    /// Overrides one link, keeping the matrix symmetric.
    pub fn set(&mut self, a: NodeId, b: NodeId, bits_per_sec: f64) -> Result<()> {
        if a == b || a.0 >= self.nodes || b.0 >= self.nodes {
            return Err(Error::invalid("links", format!("bad link ({a}, {b})")));
        }
        if !(bits_per_sec.is_finite() && bits_per_sec > 0.0) {
            return Err(Error::invalid("links", "bandwidth must be positive"));
        }
        self.bandwidth[a.0 * self.nodes + b.0] = bits_per_sec;
        self.bandwidth[b.0 * self.nodes + a.0] = bits_per_sec;
        Ok(())
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        self.bandwidth[a.0 * self.nodes + b.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }
}

/// Cost of the circulated model: work per sample and size on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub flops_per_sample: f64,
    pub model_bits: f64,
}

impl ModelSpec {
    pub fn new(flops_per_sample: f64, model_bits: f64) -> Result<Self> {
        if !(flops_per_sample.is_finite() && flops_per_sample > 0.0) {
            return Err(Error::invalid("model.flops_per_sample", "must be positive"));
        }
        if !(model_bits.is_finite() && model_bits > 0.0) {
            return Err(Error::invalid("model.model_size_bits", "must be positive"));
        }
        Ok(Self {
            flops_per_sample,
            model_bits,
        })
    }

    /// 3x3/3x3 conv net used for MNIST.
    pub fn mnist_cnn() -> Self {
        Self {
            flops_per_sample: 71.57e6,
            model_bits: 38.42e6,
        }
    }

    /// ResNet18 with a ten-way head, used for CIFAR-10.
    pub fn resnet18() -> Self {
        Self {
            flops_per_sample: 10.65e9,
            model_bits: 358.38e6,
        }
    }
}

/// Scheduler knobs: variance bound, idle wait, round budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConstants {
    /// Upper bound on the across-label variance of cumulative usage (samples²).
    pub variance_bound: f64,
    /// Wait charged on a skipped round (seconds).
    pub idle_wait: f64,
    /// Number of rounds to run.
    pub total_rounds: usize,
    /// Constant added to every objective denominator (seconds).
    pub time_offset: f64,
}

impl SchedulerConstants {
    pub const DEFAULT_IDLE_WAIT: f64 = 1.0;
    pub const DEFAULT_TIME_OFFSET: f64 = 1.0;

    pub fn new(variance_bound: f64, idle_wait: f64, total_rounds: usize) -> Result<Self> {
        let c = Self {
            variance_bound,
            idle_wait,
            total_rounds,
            time_offset: Self::DEFAULT_TIME_OFFSET,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance_bound.is_finite() && self.variance_bound >= 0.0) {
            return Err(Error::invalid("variance_bound_samples_sq", "must be >= 0"));
        }
        if !(self.idle_wait.is_finite() && self.idle_wait > 0.0) {
            return Err(Error::invalid("idle_wait_sec", "must be > 0"));
        }
        if !(self.time_offset.is_finite() && self.time_offset > 0.0) {
            return Err(Error::invalid("time_offset_sec", "must be > 0"));
        }
        Ok(())
    }

    /// Slack allowed on the variance constraint for committed state and solver output.
    pub fn variance_slack(&self) -> f64 {
        1e-6 * self.variance_bound.max(1.0)
    }
}

/// Fraction of each label's pool used in a round, indexed by `LabelId`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationVector(pub Vec<f64>);

impl AllocationVector {
    pub fn zeros(labels: usize) -> Self {
        Self(vec![0.0; labels])
    }

    pub fn uniform(labels: usize, fraction: f64) -> Self {
        Self(vec![fraction; labels])
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|x| (0.0..=1.0).contains(x))
    }

    /// Real-valued samples this allocation would use from `profile`.
    pub fn samples(&self, profile: &NodeProfile) -> f64 {
        self.0
            .iter()
            .zip(&profile.label_counts)
            .map(|(x, &l)| x * l as f64)
            .sum()
    }
}

/// Scheduler bookkeeping carried from round to round.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub cumulative_label_usage: Vec<f64>,
    pub cumulative_samples: f64,
    pub cumulative_time: f64,
    pub holder: NodeId,
    pub round_index: usize,
}

impl ScheduleState {
    pub fn new(labels: usize, holder: NodeId) -> Self {
        Self {
            cumulative_label_usage: vec![0.0; labels],
            cumulative_samples: 0.0,
            cumulative_time: 0.0,
            holder,
            round_index: 0,
        }
    }

    pub fn label_count(&self) -> usize {
        self.cumulative_label_usage.len()
    }

    /// Variance of cumulative usage with no candidate added.
    pub fn variance(&self) -> f64 {
        label_variance(self, &vec![0.0; self.label_count()])
    }

    /// Records a trained round. `counts` are the whole samples actually used.
    pub fn commit_train(&mut self, node: NodeId, counts: &[u64], elapsed: f64) {
        for (usage, &n) in self.cumulative_label_usage.iter_mut().zip(counts) {
            *usage += n as f64;
        }
        self.cumulative_samples += counts.iter().sum::<u64>() as f64;
        self.cumulative_time += elapsed;
        self.holder = node;
        self.round_index += 1;
    }

    pub fn commit_skip(&mut self, elapsed: f64) {
        self.cumulative_time += elapsed;
        self.round_index += 1;
    }
}

/// Outcome of the scheduling step for one round.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundDecision {
    Train {
        node: NodeId,
        allocation: AllocationVector,
        counts: Vec<u64>,
    },
    Skip,
}

impl RoundDecision {
    pub fn node(&self) -> Option<NodeId> {
        match self {
            RoundDecision::Train { node, .. } => Some(*node),
            RoundDecision::Skip => None,
        }
    }

    pub fn total_samples(&self) -> u64 {
        match self {
            RoundDecision::Train { counts, .. } => counts.iter().sum(),
            RoundDecision::Skip => 0,
        }
    }

    /// Builds a train decision, degrading to `Skip` when nothing would be trained.
    pub fn train_or_skip(node: NodeId, allocation: AllocationVector, counts: Vec<u64>) -> Self {
        if counts.iter().sum::<u64>() >= 1 {
            RoundDecision::Train {
                node,
                allocation,
                counts,
            }
        } else {
            RoundDecision::Skip
        }
    }
}

/// Mean per-label cumulative usage including the candidate round.
pub fn mu(state: &ScheduleState, candidate_usage: &[f64]) -> f64 {
    debug_assert_eq!(candidate_usage.len(), state.label_count());
    let n = state.label_count() as f64;
    state
        .cumulative_label_usage
        .iter()
        .zip(candidate_usage)
        .map(|(u, c)| u + c)
        .sum::<f64>()
        / n
}

/// Population variance across labels of cumulative usage plus the candidate round.
pub fn label_variance(state: &ScheduleState, candidate_usage: &[f64]) -> f64 {
    let mean = mu(state, candidate_usage);
    let n = state.label_count() as f64;
    state
        .cumulative_label_usage
        .iter()
        .zip(candidate_usage)
        .map(|(u, c)| {
            let d = u + c - mean;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Population variance of a plain usage vector.
pub fn variance_of(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Node profiles and links that together describe who holds what.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub profiles: Vec<NodeProfile>,
    pub links: LinkProfile,
}

impl Topology {
    pub fn new(profiles: Vec<NodeProfile>, links: LinkProfile) -> Result<Self> {
        if profiles.len() < 2 {
            return Err(Error::invalid("nodes", "at least 2 nodes are required"));
        }
        if links.node_count() != profiles.len() {
            return Err(Error::invalid("links", "link matrix does not match node count"));
        }
        let labels = profiles[0].label_counts.len();
        if labels < 2 {
            return Err(Error::invalid("labels", "at least 2 labels are required"));
        }
        for (i, p) in profiles.iter().enumerate() {
            if p.label_counts.len() != labels {
                return Err(Error::invalid(
                    format!("nodes[{i}].label_counts"),
                    format!("expected {labels} entries, got {}", p.label_counts.len()),
                ));
            }
        }
        for c in 0..labels {
            if profiles.iter().all(|p| p.label_counts[c] == 0) {
                return Err(Error::invalid(
                    "nodes",
                    format!("label {c} is not held by any node"),
                ));
            }
        }
        Ok(Self { profiles, links })
    }

    pub fn node_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn label_count(&self) -> usize {
        self.profiles[0].label_counts.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }
}
