//! The load-aware scheduler and the three baselines behind one interface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AllocationVector, ModelSpec, NodeId, RoundDecision, ScheduleState, SchedulerConstants,
    Topology,
};
use crate::error::Error;
use crate::resources::RoundResources;
use crate::sched;

/// Fixed fraction used by the time-first baseline.
pub const TIME_FIRST_FRACTION: f64 = 0.1;
/// Upper end of the random baseline's per-label fraction.
pub const RANDOM_MAX_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    LoadAware,
    Random,
    TimeFirst,
    VarianceFirst,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::LoadAware,
        StrategyKind::Random,
        StrategyKind::TimeFirst,
        StrategyKind::VarianceFirst,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::LoadAware => "load-aware",
            StrategyKind::Random => "random",
            StrategyKind::TimeFirst => "time-first",
            StrategyKind::VarianceFirst => "variance-first",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "strategy",
                    format!("unknown strategy `{s}` (expected load-aware, random, time-first or variance-first)"),
                )
            })
    }
}

/// Read-only inputs to one scheduling decision.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub state: &'a ScheduleState,
    pub topology: &'a Topology,
    pub resources: &'a RoundResources,
    pub model: &'a ModelSpec,
    pub constants: &'a SchedulerConstants,
}

/// A strategy plus whatever it remembers between rounds.
#[derive(Debug, Clone)]
pub struct Strategy {
    kind: StrategyKind,
    /// Next node in the variance-first cycle.
    cursor: NodeId,
}

impl Strategy {
    pub fn new(kind: StrategyKind, initial_holder: NodeId) -> Self {
        Self {
            kind,
            cursor: initial_holder,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn decide<R: Rng + ?Sized>(&mut self, ctx: &DecisionContext<'_>, rng: &mut R) -> RoundDecision {
        match self.kind {
            StrategyKind::LoadAware => {
                sched::decide_round(ctx.state, ctx.topology, ctx.resources, ctx.model, ctx.constants)
            }
            StrategyKind::Random => decide_random(ctx, rng),
            StrategyKind::TimeFirst => decide_time_first(ctx),
            StrategyKind::VarianceFirst => {
                let node = self.cursor;
                self.cursor = NodeId((node.0 + 1) % ctx.topology.node_count());
                decide_fixed_node(node, ctx)
            }
        }
    }
}

fn floor_counts(fractions: &[f64], counts: &[u64]) -> Vec<u64> {
    fractions
        .iter()
        .zip(counts)
        .map(|(&x, &l)| ((x * l as f64 + 1e-9).floor() as u64).min(l))
        .collect()
}

/// One node uniformly at random, each label's fraction uniform on `[0, 0.1]`.
pub fn decide_random<R: Rng + ?Sized>(ctx: &DecisionContext<'_>, rng: &mut R) -> RoundDecision {
    let node = NodeId(rng.gen_range(0..ctx.topology.node_count()));
    let fractions: Vec<f64> = (0..ctx.topology.label_count())
        .map(|_| rng.gen_range(0.0..=RANDOM_MAX_FRACTION))
        .collect();
    let counts = floor_counts(&fractions, &ctx.topology.profiles[node.0].label_counts);
    RoundDecision::train_or_skip(node, AllocationVector(fractions), counts)
}

/// Round time of training `counts` on `node` this round.
pub fn round_time(node: NodeId, counts: &[u64], ctx: &DecisionContext<'_>) -> f64 {
    let samples = counts.iter().sum::<u64>() as f64;
    if samples < 1.0 {
        return ctx.constants.idle_wait;
    }
    let comp = ctx.model.flops_per_sample * samples / ctx.resources.compute(node);
    let comm = if node == ctx.state.holder {
        0.0
    } else {
        ctx.model.model_bits / ctx.resources.bandwidth(ctx.state.holder, node)
    };
    comp + comm
}

/// The node with the shortest round time at a fixed 10 % of every label.
pub fn decide_time_first(ctx: &DecisionContext<'_>) -> RoundDecision {
    let labels = ctx.topology.label_count();
    let mut best: Option<(NodeId, Vec<u64>, f64)> = None;
    for node in ctx.topology.nodes() {
        let counts = floor_counts(
            &vec![TIME_FIRST_FRACTION; labels],
            &ctx.topology.profiles[node.0].label_counts,
        );
        let t = round_time(node, &counts, ctx);
        if best.as_ref().is_none_or(|(_, _, bt)| t < *bt) {
            best = Some((node, counts, t));
        }
    }
    let (node, counts, _) = best.expect("topology has at least two nodes");
    RoundDecision::train_or_skip(node, AllocationVector::uniform(labels, TIME_FIRST_FRACTION), counts)
}

/// Variance-constrained data amount on a node chosen by someone else.
pub fn decide_fixed_node(node: NodeId, ctx: &DecisionContext<'_>) -> RoundDecision {
    let cand = sched::evaluate_candidate(
        node,
        &ctx.topology.profiles[node.0],
        ctx.state,
        ctx.resources,
        ctx.model,
        ctx.constants,
    );
    if cand.train {
        RoundDecision::train_or_skip(node, cand.allocation_at_star, cand.counts)
    } else {
        RoundDecision::Skip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LinkProfile, NodeProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn topo(n: usize) -> Topology {
        let profiles = (0..n)
            .map(|_| NodeProfile::new(vec![100, 100, 100], 10e12).unwrap())
            .collect();
        Topology::new(profiles, LinkProfile::uniform(n, 200e6).unwrap()).unwrap()
    }

    struct Fixture {
        topology: Topology,
        resources: RoundResources,
        model: ModelSpec,
        constants: SchedulerConstants,
        state: ScheduleState,
    }

    impl Fixture {
        fn new(n: usize, holder: usize) -> Self {
            let topology = topo(n);
            let resources = RoundResources::baseline(&topology.profiles, &topology.links);
            Self {
                topology,
                resources,
                model: ModelSpec::mnist_cnn(),
                constants: SchedulerConstants::new(1e4, 1.0, 10).unwrap(),
                state: ScheduleState::new(3, NodeId(holder)),
            }
        }

        fn ctx(&self) -> DecisionContext<'_> {
            DecisionContext {
                state: &self.state,
                topology: &self.topology,
                resources: &self.resources,
                model: &self.model,
                constants: &self.constants,
            }
        }
    }

    #[test]
    fn parses_kebab_names() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("greedy".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn time_first_prefers_the_holder_when_resources_match() {
        let f = Fixture::new(4, 2);
        match decide_time_first(&f.ctx()) {
            RoundDecision::Train { node, counts, .. } => {
                assert_eq!(node, NodeId(2));
                assert_eq!(counts, vec![10, 10, 10]);
            }
            RoundDecision::Skip => panic!("expected training"),
        }
    }

    #[test]
    fn time_first_never_picks_a_slower_node() {
        let mut f = Fixture::new(4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            f.resources = crate::resources::sample_round(
                &f.topology.profiles,
                &f.topology.links,
                &crate::UtilizationDistribution::compute_default(),
                &crate::UtilizationDistribution::bandwidth_default(),
                &mut rng,
            );
            f.state.holder = NodeId(rng.gen_range(0..4));
            let ctx = f.ctx();
            let chosen = decide_time_first(&ctx).node().unwrap();
            let counts = vec![10, 10, 10];
            let t = round_time(chosen, &counts, &ctx);
            for other in f.topology.nodes() {
                assert!(t <= round_time(other, &counts, &ctx));
            }
        }
    }

    #[test]
    fn variance_first_cycles_in_node_order() {
        let f = Fixture::new(3, 1);
        let mut s = Strategy::new(StrategyKind::VarianceFirst, NodeId(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picked: Vec<_> = (0..5).map(|_| s.decide(&f.ctx(), &mut rng).node()).collect();
        assert_eq!(
            picked,
            vec![Some(NodeId(1)), Some(NodeId(2)), Some(NodeId(0)), Some(NodeId(1)), Some(NodeId(2))]
        );
    }

    #[test]
    fn random_is_reproducible_and_bounded() {
        let f = Fixture::new(5, 0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| decide_random(&f.ctx(), &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(11);
        assert_eq!(a, draw(11));
        for d in &a {
            if let RoundDecision::Train { allocation, counts, .. } = d {
                assert!(allocation.0.iter().all(|x| (0.0..=0.1).contains(x)));
                assert!(counts.iter().all(|&c| c <= 10));
            }
        }
    }

    #[test]
    fn random_zero_draw_is_a_skip() {
        let profiles = vec![
            NodeProfile::new(vec![1, 1], 10e12).unwrap(),
            NodeProfile::new(vec![1, 1], 10e12).unwrap(),
        ];
        let topology = Topology::new(profiles, LinkProfile::uniform(2, 200e6).unwrap()).unwrap();
        let resources = RoundResources::baseline(&topology.profiles, &topology.links);
        let state = ScheduleState::new(2, NodeId(0));
        let ctx = DecisionContext {
            state: &state,
            topology: &topology,
            resources: &resources,
            model: &ModelSpec::mnist_cnn(),
            constants: &SchedulerConstants::new(1e4, 1.0, 1).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // With one sample per label, floor(x) is 0 for every x < 1.
        assert_eq!(decide_random(&ctx, &mut rng), RoundDecision::Skip);
    }
}
