//! Scenario files: schema, validation, shipped presets.
//!
//! Scenarios are TOML. Every physical quantity carries its unit in the key
//! name (`_flops`, `_bits`, `_bits_per_sec`, `_sec`, `_samples_sq`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, PartitionedDataset};
use crate::domain::{LinkProfile, ModelSpec, NodeId, NodeProfile, SchedulerConstants, Topology};
use crate::error::{Error, Result};
use crate::learner::{Learner, LogisticLearner, SurrogateLearner, TrainerConfig};
use crate::resources::UtilizationDistribution;
use crate::sim::{stream_rng, RngStream, SimSetup};
use crate::strategy::StrategyKind;

/// Overrides `dataset.dir` for IDX-backed scenarios.
pub const DATA_DIR_ENV: &str = "CIRCSCHED_DATA_DIR";

const PRESETS: &[(&str, &str)] = &[
    ("mnist-3", include_str!("../presets/mnist-3.toml")),
    ("mnist-5", include_str!("../presets/mnist-5.toml")),
    ("mnist-10", include_str!("../presets/mnist-10.toml")),
    ("mnist-5-uneven", include_str!("../presets/mnist-5-uneven.toml")),
    ("cifar-3", include_str!("../presets/cifar-3.toml")),
    ("cifar-5", include_str!("../presets/cifar-5.toml")),
    ("cifar-10", include_str!("../presets/cifar-10.toml")),
    ("cifar-5-uneven", include_str!("../presets/cifar-5-uneven.toml")),
    ("blobs-5", include_str!("../presets/blobs-5.toml")),
    ("blobs-5-uneven", include_str!("../presets/blobs-5-uneven.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub seed: u64,
    pub rounds: usize,
    pub variance_bound_samples_sq: f64,
    #[serde(default = "default_idle_wait")]
    pub idle_wait_sec: f64,
    #[serde(default = "default_time_offset")]
    pub time_offset_sec: f64,
    pub accuracy_thresholds: Vec<f64>,
    pub model: ModelSection,
    pub resources: ResourceSection,
    pub learner: LearnerSection,
    pub dataset: DatasetSection,
    pub nodes: Vec<NodeSection>,
}

fn default_idle_wait() -> f64 {
    SchedulerConstants::DEFAULT_IDLE_WAIT
}

fn default_time_offset() -> f64 {
    SchedulerConstants::DEFAULT_TIME_OFFSET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub flops_per_sample: f64,
    pub model_size_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSection {
    pub baseline_compute_flops: f64,
    pub baseline_bandwidth_bits_per_sec: f64,
    pub compute_utilization: [f64; 2],
    pub bandwidth_utilization: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: usize,
    pub b: usize,
    pub bandwidth_bits_per_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    Logistic,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub kind: LearnerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs_per_round: usize,
    #[serde(default = "default_ceiling")]
    pub surrogate_ceiling: f64,
    #[serde(default = "default_scale")]
    pub surrogate_scale_samples: f64,
}

fn default_lr() -> f64 {
    TrainerConfig::default().learning_rate
}
fn default_momentum() -> f64 {
    TrainerConfig::default().momentum
}
fn default_batch() -> usize {
    TrainerConfig::default().batch_size
}
fn default_epochs() -> usize {
    TrainerConfig::default().epochs_per_round
}
fn default_ceiling() -> f64 {
    0.9
}
fn default_scale() -> f64 {
    2000.0
}

impl LearnerSection {
    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs_per_round: self.epochs_per_round,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    /// IDX files in MNIST layout.
    Mnist,
    /// Gaussian blobs generated from the run seed.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Nodes holding the same label see the same samples.
    #[serde(default)]
    pub shared_pools: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Training samples generated per class; defaults to exactly what the nodes demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_class: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<u64>,
    /// Fixes the generated dataset across run seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub label_counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_compute_flops: Option<f64>,
}

impl ScenarioConfig {
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn preset(name: &str) -> Option<Result<Self>> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Reads a scenario from `source`, which is either a file path or a preset name.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Self::from_toml(&text);
        }
        match Self::preset(source) {
            Some(cfg) => cfg,
            None => Err(Error::io(
                path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "no such file and no preset with that name",
                ),
            )),
        }
    }

    pub fn label_count(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.label_counts.len())
    }

    pub fn label_table(&self) -> Vec<Vec<u64>> {
        self.nodes.iter().map(|n| n.label_counts.clone()).collect()
    }

    pub fn constants(&self) -> Result<SchedulerConstants> {
        let mut c = SchedulerConstants::new(
            self.variance_bound_samples_sq,
            self.idle_wait_sec,
            self.rounds,
        )?;
        c.time_offset = self.time_offset_sec;
        c.validate()?;
        Ok(c)
    }

    pub fn topology(&self) -> Result<Topology> {
        let profiles = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                NodeProfile::new(
                    n.label_counts.clone(),
                    n.baseline_compute_flops.unwrap_or(self.resources.baseline_compute_flops),
                )
                .map_err(|_| Error::invalid(format!("nodes[{i}].baseline_compute_flops"), "must be positive"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut links = LinkProfile::uniform(
            self.nodes.len(),
            self.resources.baseline_bandwidth_bits_per_sec,
        )
        .map_err(|_| Error::invalid("resources.baseline_bandwidth_bits_per_sec", "must be positive"))?;
        for l in &self.resources.links {
            if l.a >= self.nodes.len() || l.b >= self.nodes.len() {
                return Err(Error::invalid("resources.links", format!("node index out of range in ({}, {})", l.a, l.b)));
            }
            links.set(NodeId(l.a), NodeId(l.b), l.bandwidth_bits_per_sec)?;
        }
        Topology::new(profiles, links)
    }

    /// Checks every invariant that does not need the dataset on disk.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        self.constants()?;
        ModelSpec::new(self.model.flops_per_sample, self.model.model_size_bits)?;
        if !(self.resources.baseline_compute_flops.is_finite() && self.resources.baseline_compute_flops > 0.0) {
            return Err(Error::invalid("resources.baseline_compute_flops", "must be positive"));
        }
        let [lo, hi] = self.resources.compute_utilization;
        UtilizationDistribution::new(lo, hi)
            .map_err(|e| Error::invalid("resources.compute_utilization", e.to_string()))?;
        let [lo, hi] = self.resources.bandwidth_utilization;
        UtilizationDistribution::new(lo, hi)
            .map_err(|e| Error::invalid("resources.bandwidth_utilization", e.to_string()))?;
        for (i, t) in self.accuracy_thresholds.iter().enumerate() {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::invalid(format!("accuracy_thresholds[{i}]"), "must be in [0, 1]"));
            }
        }
        self.learner.trainer().validate()?;
        self.topology()?;

        if self.learner.kind == LearnerKind::Logistic && self.dataset.source == DatasetSource::Synthetic {
            let classes = self.label_count();
            let dim = self.dataset.dim.unwrap_or(classes);
            if dim == 0 || (classes > dim && dim < 2) {
                return Err(Error::invalid("dataset.dim", "must be >= 2 (or >= number of labels)"));
            }
            if let Some(sep) = self.dataset.separation {
                if !(sep.is_finite() && sep >= 0.0) {
                    return Err(Error::invalid("dataset.separation", "must be >= 0"));
                }
            }
            if let Some(supply) = self.dataset.samples_per_class {
                let demand = self.label_demand();
                for (c, d) in demand.iter().enumerate() {
                    if *d > supply {
                        return Err(Error::invalid(
                            "nodes.label_counts",
                            format!("label {c}: demand {d}, supply {supply}"),
                        ));
                    }
                }
            }
            if self.dataset.test_per_class == Some(0) && self.dataset.samples_per_class.is_none() {
                return Err(Error::invalid("dataset.test_per_class", "no samples left for the test set"));
            }
        }
        Ok(())
    }

    /// Samples each label must supply across all node pools.
    pub fn label_demand(&self) -> Vec<u64> {
        (0..self.label_count())
            .map(|c| {
                let col = self.nodes.iter().map(|n| n.label_counts[c]);
                if self.dataset.shared_pools {
                    col.max().unwrap_or(0)
                } else {
                    col.sum()
                }
            })
            .collect()
    }

    pub fn data_dir(&self) -> PathBuf {
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.dataset.dir.clone())
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    pub fn build(&self) -> Result<BuiltScenario> {
        self.validate()?;
        let [clo, chi] = self.resources.compute_utilization;
        let [blo, bhi] = self.resources.bandwidth_utilization;
        Ok(BuiltScenario {
            setup: SimSetup {
                topology: self.topology()?,
                model: ModelSpec::new(self.model.flops_per_sample, self.model.model_size_bits)?,
                constants: self.constants()?,
                compute_dist: UtilizationDistribution::new(clo, chi)?,
                bandwidth_dist: UtilizationDistribution::new(blo, bhi)?,
                strategy: self.strategy,
                seed: self.seed,
                thresholds: self.accuracy_thresholds.clone(),
            },
            config: self.clone(),
        })
    }

    /// Generates or loads the raw data and splits it across nodes.
    pub fn load_partition(&self) -> Result<PartitionedDataset> {
        let mut rng = stream_rng(self.dataset.seed.unwrap_or(self.seed), RngStream::Dataset);
        let table = self.label_table();
        let partitioned = match self.dataset.source {
            DatasetSource::Synthetic => {
                let classes = self.label_count();
                let per_class = self
                    .dataset
                    .samples_per_class
                    .unwrap_or_else(|| self.label_demand().into_iter().max().unwrap_or(0))
                    + self.dataset.test_per_class.unwrap_or(200);
                let raw = data::generate_blobs(
                    classes,
                    per_class as usize,
                    self.dataset.dim.unwrap_or(classes),
                    self.dataset.separation.unwrap_or(3.0),
                    &mut rng,
                )?;
                data::partition(&raw, &table, None, self.dataset.shared_pools, &mut rng)?
            }
            DatasetSource::Mnist => {
                let (train, test) = data::load_mnist_dir(&self.data_dir())?;
                data::partition(&train, &table, Some(&test), self.dataset.shared_pools, &mut rng)?
            }
        };
        if partitioned.label_counts() != table {
            return Err(Error::Contract("partitioned pools disagree with the label table".into()));
        }
        Ok(partitioned)
    }
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub setup: SimSetup,
    pub config: ScenarioConfig,
}

impl BuiltScenario {
    pub fn learner(&self) -> Result<Box<dyn Learner>> {
        match self.config.learner.kind {
            LearnerKind::Surrogate => Ok(Box::new(SurrogateLearner::new(
                &self.config.label_table(),
                self.config.learner.surrogate_ceiling,
                self.config.learner.surrogate_scale_samples,
            )?)),
            LearnerKind::Logistic => Ok(Box::new(LogisticLearner::new(
                self.config.load_partition()?,
                self.config.learner.trainer(),
            )?)),
        }
    }
}
