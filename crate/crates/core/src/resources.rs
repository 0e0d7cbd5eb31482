//! Per-round availability of compute and bandwidth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, NodeProfile, LinkProfile};
use crate::error::{Error, Result};

/// Closed interval the per-round utilization ratio is drawn from, uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationDistribution {
    pub lower: f64,
    pub upper: f64,
}

impl UtilizationDistribution {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower) || !(upper > 0.0 && upper <= 1.0) || lower > upper {
            return Err(Error::invalid(
                "utilization",
                format!("need 0 <= lower <= upper <= 1 and upper > 0, got [{lower}, {upper}]"),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn compute_default() -> Self {
        Self {
            lower: 0.01,
            upper: 1.0,
        }
    }

    pub fn bandwidth_default() -> Self {
        Self {
            lower: 0.005,
            upper: 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lower == self.upper {
            self.lower
        } else {
            rng.gen_range(self.lower..=self.upper)
        }
    }
}

/// Resources available to federated training during one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResources {
    /// Available FLOPS per node.
    pub compute: Vec<f64>,
    nodes: usize,
    bandwidth: Vec<f64>,
}

impl RoundResources {
    pub fn new(compute: Vec<f64>, bandwidth_matrix: Vec<f64>) -> Self {
        let nodes = compute.len();
        assert_eq!(bandwidth_matrix.len(), nodes * nodes);
        Self {
            compute,
            nodes,
            bandwidth: bandwidth_matrix,
        }
    }

    /// Full availability: resources equal the baselines.
    pub fn baseline(profiles: &[NodeProfile], links: &LinkProfile) -> Self {
        let n = profiles.len();
        let mut bandwidth = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    bandwidth[i * n + j] = links.get(NodeId(i), NodeId(j));
                }
            }
        }
        Self::new(profiles.iter().map(|p| p.baseline_compute).collect(), bandwidth)
    }

    pub fn compute(&self, node: NodeId) -> f64 {
        self.compute[node.0]
    }

    pub fn bandwidth(&self, a: NodeId, b: NodeId) -> f64 {
        self.bandwidth[a.0 * self.nodes + b.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// Multiplies every compute and bandwidth value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            compute: self.compute.iter().map(|c| c * factor).collect(),
            nodes: self.nodes,
            bandwidth: self.bandwidth.iter().map(|b| b * factor).collect(),
        }
    }
}

/// Draws one round of available resources.
///
/// Node utilizations are drawn first in ascending node order, then one
/// utilization per unordered link in ascending `(i, j)` order with `i < j`,
/// applied to both directions.
pub fn sample_round<R: Rng + ?Sized>(
    profiles: &[NodeProfile],
    links: &LinkProfile,
    compute_dist: &UtilizationDistribution,
    bandwidth_dist: &UtilizationDistribution,
    rng: &mut R,
) -> RoundResources {
    let n = profiles.len();
    let compute = profiles
        .iter()
        .map(|p| p.baseline_compute * compute_dist.sample(rng))
        .collect();
    let mut bandwidth = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let b = links.get(NodeId(i), NodeId(j)) * bandwidth_dist.sample(rng);
            bandwidth[i * n + j] = b;
            bandwidth[j * n + i] = b;
        }
    }
    RoundResources::new(compute, bandwidth)
}
