//! Training backends run by the node that holds the model.

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartitionedDataset};
use crate::domain::NodeId;
use crate::error::{Error, Result};

/// Upper bound on rows used for a node's local loss.
const LOCAL_EVAL_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 32,
            epochs_per_round: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learner.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learner.momentum", "must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("learner.batch_size", "must be positive"));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::invalid("learner.epochs_per_round", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Multinomial logistic regression with a momentum buffer that travels with the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub classes: usize,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    velocity_w: Vec<f64>,
    velocity_b: Vec<f64>,
}

/// Gradient of the mean cross-entropy over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            velocity_w: vec![0.0; classes * dim],
            velocity_b: vec![0.0; classes],
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let w = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + w.iter().zip(x).map(|(w, &x)| w * x as f64).sum::<f64>()
            })
            .collect()
    }

    /// Lowest class index wins ties.
    pub fn predict(&self, x: &[f32]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }

    pub fn loss_and_gradient(&self, data: &Dataset, rows: &[usize]) -> Gradient {
        let mut grad = Gradient {
            loss: 0.0,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.classes],
        };
        if rows.is_empty() {
            return grad;
        }
        for &r in rows {
            let x = data.row(r);
            let y = data.labels[r] as usize;
            let (probs, loss) = softmax_xent(&self.logits(x), y);
            grad.loss += loss;
            for k in 0..self.classes {
                let d = probs[k] - if k == y { 1.0 } else { 0.0 };
                grad.bias[k] += d;
                let gw = &mut grad.weights[k * self.dim..(k + 1) * self.dim];
                for (g, &xj) in gw.iter_mut().zip(x) {
                    *g += d * xj as f64;
                }
            }
        }
        let n = rows.len() as f64;
        grad.loss /= n;
        grad.weights.iter_mut().for_each(|g| *g /= n);
        grad.bias.iter_mut().for_each(|g| *g /= n);
        grad
    }

    pub fn loss(&self, data: &Dataset, rows: &[usize]) -> f64 {
        rows.iter()
            .map(|&r| softmax_xent(&self.logits(data.row(r)), data.labels[r] as usize).1)
            .sum::<f64>()
            / rows.len().max(1) as f64
    }

    /// `v <- momentum * v + g; w <- w - lr * v`.
    pub fn momentum_step(&mut self, grad: &Gradient, learning_rate: f64, momentum: f64) {
        for ((w, v), g) in self.weights.iter_mut().zip(&mut self.velocity_w).zip(&grad.weights) {
            *v = momentum * *v + g;
            *w -= learning_rate * *v;
        }
        for ((b, v), g) in self.bias.iter_mut().zip(&mut self.velocity_b).zip(&grad.bias) {
            *v = momentum * *v + g;
            *b -= learning_rate * *v;
        }
    }

    /// One pass of minibatch momentum SGD over `rows` in the given order.
    pub fn train_on_rows(&mut self, data: &Dataset, rows: &[usize], config: &TrainerConfig) {
        for _ in 0..config.epochs_per_round {
            for batch in rows.chunks(config.batch_size) {
                let grad = self.loss_and_gradient(data, batch);
                self.momentum_step(&grad, config.learning_rate, config.momentum);
            }
        }
    }

    pub fn evaluate(&self, data: &Dataset, rows: &[usize]) -> Result<Evaluation> {
        if rows.is_empty() {
            return Err(Error::Contract("evaluation set is empty".into()));
        }
        let mut correct = 0usize;
        let mut loss = 0.0;
        for &r in rows {
            let x = data.row(r);
            let y = data.labels[r] as usize;
            let z = self.logits(x);
            if self.predict(x) == y {
                correct += 1;
            }
            loss += softmax_xent(&z, y).1;
        }
        let n = rows.len() as f64;
        Ok(Evaluation {
            accuracy: correct as f64 / n,
            loss: loss / n,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Softmax probabilities and the cross-entropy of label `y`.
fn softmax_xent(logits: &[f64], y: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[y] - max);
    (exps.into_iter().map(|e| e / sum).collect(), loss)
}

/// Plain minibatch fit on a fixed row set, used as a reference classifier.
pub fn fit_reference<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[usize],
    learning_rate: f64,
    momentum: f64,
    epochs: usize,
    rng: &mut R,
) -> LinearModel {
    let mut model = LinearModel::zeros(data.classes, data.dim);
    let config = TrainerConfig {
        learning_rate,
        momentum,
        batch_size: 32,
        epochs_per_round: 1,
    };
    let mut order = rows.to_vec();
    for _ in 0..epochs {
        order.shuffle(rng);
        model.train_on_rows(data, &order, &config);
    }
    model
}

/// Rows a node trains on this round: `counts[c]` distinct rows from each
/// label pool, concatenated and shuffled.
pub fn draw_round_rows<R: Rng + ?Sized>(
    pools: &[Vec<usize>],
    counts: &[u64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if counts.len() != pools.len() {
        return Err(Error::Contract(format!(
            "expected {} label counts, got {}",
            pools.len(),
            counts.len()
        )));
    }
    let mut rows = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    for (c, (pool, &want)) in pools.iter().zip(counts).enumerate() {
        let want = want as usize;
        if want > pool.len() {
            return Err(Error::Contract(format!(
                "label {c}: asked for {want} samples, node holds {}",
                pool.len()
            )));
        }
        rows.extend(index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]));
    }
    rows.shuffle(rng);
    Ok(rows)
}

/// A training backend invoked once per committed round.
pub trait Learner: Send {
    /// Trains on `node`'s data and returns the number of samples consumed.
    fn train_round(&mut self, node: NodeId, counts: &[u64], rng: &mut dyn RngCore) -> Result<u64>;

    /// Accuracy and loss on the global test set.
    fn evaluate(&self) -> Evaluation;

    /// Loss on the data held by `node`.
    fn local_loss(&self, node: NodeId) -> f64;
}

pub struct LogisticLearner {
    model: LinearModel,
    data: PartitionedDataset,
    config: TrainerConfig,
    local_rows: Vec<Vec<usize>>,
}

impl LogisticLearner {
    pub fn new(data: PartitionedDataset, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        if data.test.is_empty() {
            return Err(Error::Contract("test set is empty".into()));
        }
        let local_rows = data
            .pools
            .iter()
            .map(|labels| {
                let all: Vec<usize> = labels.iter().flatten().copied().collect();
                if all.len() <= LOCAL_EVAL_CAP {
                    all
                } else {
                    let stride = all.len() as f64 / LOCAL_EVAL_CAP as f64;
                    (0..LOCAL_EVAL_CAP)
                        .map(|k| all[(k as f64 * stride) as usize])
                        .collect()
                }
            })
            .collect();
        Ok(Self {
            model: LinearModel::zeros(data.data.classes, data.data.dim),
            data,
            config,
            local_rows,
        })
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn data(&self) -> &PartitionedDataset {
        &self.data
    }
}

impl Learner for LogisticLearner {
    fn train_round(&mut self, node: NodeId, counts: &[u64], rng: &mut dyn RngCore) -> Result<u64> {
        let pools = self
            .data
            .pools
            .get(node.0)
            .ok_or_else(|| Error::Contract(format!("unknown node {node}")))?;
        let rows = draw_round_rows(pools, counts, rng)?;
        self.model.train_on_rows(&self.data.data, &rows, &self.config);
        if !self.model.is_finite() {
            return Err(Error::Contract("model weights diverged".into()));
        }
        Ok(rows.len() as u64)
    }

    fn evaluate(&self) -> Evaluation {
        self.model
            .evaluate(&self.data.data, &self.data.test)
            .expect("test set checked non-empty at construction")
    }

    fn local_loss(&self, node: NodeId) -> f64 {
        self.model.loss(&self.data.data, &self.local_rows[node.0])
    }
}

/// Scheduler-only stand-in for a real learner.
///
/// Accuracy rises from chance toward `ceiling` as the least-used label
/// accumulates samples: `ceiling - (ceiling - 1/C) * exp(-min_usage / scale)`.
/// Loss is the negative log of that accuracy. This is a modeling convenience
/// for fast sweeps, not a claim about how real networks learn.
#[derive(Debug, Clone)]
pub struct SurrogateLearner {
    usage: Vec<f64>,
    holds: Vec<Vec<bool>>,
    ceiling: f64,
    scale: f64,
}

impl SurrogateLearner {
    pub fn new(label_counts: &[Vec<u64>], ceiling: f64, scale: f64) -> Result<Self> {
        let classes = label_counts.first().map_or(0, |r| r.len());
        if classes < 2 {
            return Err(Error::invalid("labels", "at least 2 labels are required"));
        }
        if !(ceiling > 1.0 / classes as f64 && ceiling <= 1.0) {
            return Err(Error::invalid("learner.surrogate_ceiling", "must be in (1/C, 1]"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("learner.surrogate_scale_samples", "must be positive"));
        }
        Ok(Self {
            usage: vec![0.0; classes],
            holds: label_counts
                .iter()
                .map(|row| row.iter().map(|&n| n > 0).collect())
                .collect(),
            ceiling,
            scale,
        })
    }

    fn accuracy_at(&self, min_usage: f64) -> f64 {
        let base = 1.0 / self.usage.len() as f64;
        self.ceiling - (self.ceiling - base) * (-min_usage / self.scale).exp()
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy_at(self.usage.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

impl Learner for SurrogateLearner {
    fn train_round(&mut self, node: NodeId, counts: &[u64], _rng: &mut dyn RngCore) -> Result<u64> {
        if counts.len() != self.usage.len() || node.0 >= self.holds.len() {
            return Err(Error::Contract("count vector does not match the scenario".into()));
        }
        for (u, &n) in self.usage.iter_mut().zip(counts) {
            *u += n as f64;
        }
        Ok(counts.iter().sum())
    }

    fn evaluate(&self) -> Evaluation {
        let accuracy = self.accuracy();
        Evaluation {
            accuracy,
            loss: -accuracy.ln(),
        }
    }

    fn local_loss(&self, node: NodeId) -> f64 {
        let local_min = self
            .usage
            .iter()
            .zip(&self.holds[node.0])
            .filter(|(_, &held)| held)
            .map(|(u, _)| *u)
            .fold(f64::INFINITY, f64::min);
        let local_min = if local_min.is_finite() { local_min } else { 0.0 };
        -self.accuracy_at(local_min).ln()
    }
}
