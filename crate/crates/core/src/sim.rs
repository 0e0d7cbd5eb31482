//! Round loop: query resources, schedule, transmit, train, evaluate, record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::domain::{ModelSpec, NodeId, RoundDecision, ScheduleState, SchedulerConstants, Topology};
use crate::error::{Error, Result};
use crate::learner::Learner;
use crate::resources::{sample_round, UtilizationDistribution};
use crate::strategy::{DecisionContext, Strategy, StrategyKind};
use crate::timing::{comm_time, comp_time, RoundTiming};

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy)]
pub enum RngStream {
    InitialHolder = 0,
    Resources = 1,
    Strategy = 2,
    Learner = 3,
    Dataset = 4,
}

pub fn stream_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub decision: RoundDecision,
    pub timing: RoundTiming,
    pub cumulative_time: f64,
    pub cumulative_samples: f64,
    pub label_usage: Vec<f64>,
    pub variance: f64,
    pub accuracy: f64,
    pub global_loss: f64,
    pub local_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: StrategyKind,
    pub seed: u64,
    /// `(threshold, seconds)`; `None` means the threshold was never reached.
    pub time_to_accuracy: Vec<(f64, Option<f64>)>,
    pub final_accuracy: f64,
    pub rounds: usize,
}

/// Cumulative time at the first round whose accuracy reaches `threshold`.
pub fn time_to_accuracy(trace: &[RoundRecord], threshold: f64) -> Option<f64> {
    trace
        .iter()
        .find(|r| r.accuracy >= threshold)
        .map(|r| r.cumulative_time)
}

/// Everything a run needs besides the learner.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub topology: Topology,
    pub model: ModelSpec,
    pub constants: SchedulerConstants,
    pub compute_dist: UtilizationDistribution,
    pub bandwidth_dist: UtilizationDistribution,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub thresholds: Vec<f64>,
}

/// Runs the round loop for `setup.constants.total_rounds` rounds.
pub fn simulate(setup: &SimSetup, learner: &mut dyn Learner) -> Result<(Vec<RoundRecord>, RunSummary)> {
    let n = setup.topology.node_count();
    let holder = NodeId(stream_rng(setup.seed, RngStream::InitialHolder).gen_range(0..n));
    let mut resources_rng = stream_rng(setup.seed, RngStream::Resources);
    let mut strategy_rng = stream_rng(setup.seed, RngStream::Strategy);
    let mut learner_rng = stream_rng(setup.seed, RngStream::Learner);

    let mut state = ScheduleState::new(setup.topology.label_count(), holder);
    let mut strategy = Strategy::new(setup.strategy, holder);
    let initial = learner.evaluate();
    let mut accuracy = initial.accuracy;
    let mut global_loss = initial.loss;
    let mut local_loss = learner.local_loss(holder);
    let mut trace = Vec::with_capacity(setup.constants.total_rounds);

    for round in 1..=setup.constants.total_rounds {
        let resources = sample_round(
            &setup.topology.profiles,
            &setup.topology.links,
            &setup.compute_dist,
            &setup.bandwidth_dist,
            &mut resources_rng,
        );
        let ctx = DecisionContext {
            state: &state,
            topology: &setup.topology,
            resources: &resources,
            model: &setup.model,
            constants: &setup.constants,
        };
        let decision = strategy.decide(&ctx, &mut strategy_rng);

        let timing = match &decision {
            RoundDecision::Skip => {
                let t = RoundTiming::skip(&setup.constants);
                state.commit_skip(t.total);
                t
            }
            RoundDecision::Train { node, counts, .. } => {
                let samples = counts.iter().sum::<u64>();
                let comm = comm_time(
                    state.holder,
                    *node,
                    &setup.model,
                    resources.bandwidth(state.holder, *node),
                )?;
                let comp = comp_time(samples as f64, &setup.model, resources.compute(*node))?;
                let consumed = learner.train_round(*node, counts, &mut learner_rng)?;
                if consumed != samples {
                    return Err(Error::Contract(format!(
                        "round {round}: learner consumed {consumed} samples, scheduler committed {samples}"
                    )));
                }
                let t = RoundTiming::new(comp, comm, 0.0);
                state.commit_train(*node, counts, t.total);
                let eval = learner.evaluate();
                accuracy = eval.accuracy;
                global_loss = eval.loss;
                local_loss = learner.local_loss(*node);
                t
            }
        };

        trace.push(RoundRecord {
            round,
            decision,
            timing,
            cumulative_time: state.cumulative_time,
            cumulative_samples: state.cumulative_samples,
            label_usage: state.cumulative_label_usage.clone(),
            variance: state.variance(),
            accuracy,
            global_loss,
            local_loss,
        });
    }

    let summary = RunSummary {
        strategy: setup.strategy,
        seed: setup.seed,
        time_to_accuracy: setup
            .thresholds
            .iter()
            .map(|&t| (t, time_to_accuracy(&trace, t)))
            .collect(),
        final_accuracy: trace.last().map_or(initial.accuracy, |r| r.accuracy),
        rounds: trace.len(),
    };
    Ok((trace, summary))
}

/// Builds the dataset and learner described by `config` and runs it.
pub fn run_simulation(config: &ScenarioConfig) -> Result<(Vec<RoundRecord>, RunSummary)> {
    let built = config.build()?;
    let mut learner = built.learner()?;
    simulate(&built.setup, learner.as_mut())
}
