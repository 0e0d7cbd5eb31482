//! Per-round greedy scheduler.
//!
//! For every candidate node the scheduler finds the largest amount of data
//! that node could train without pushing the across-label variance of
//! cumulative usage over the bound, scores that amount with the cumulative
//! throughput objective `(S + S_total) / (T_round + T_total + offset)`, keeps
//! it only if it beats not training at all, and finally picks the best node.

use rayon::prelude::*;

use crate::domain::{
    label_variance, variance_of, AllocationVector, ModelSpec, NodeId, NodeProfile,
    RoundDecision, ScheduleState, SchedulerConstants, Topology,
};
use crate::resources::RoundResources;

const MAX_BISECTION_STEPS: usize = 200;
const MAX_ASCENT_SWEEPS: usize = 10_000;

/// Result of the max-samples subproblem for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxSamplesSolution {
    /// Largest feasible real-valued sample count.
    pub samples: f64,
    pub allocation: AllocationVector,
    /// Set when the prior state already violates the variance bound.
    pub infeasible_prior: bool,
    /// Set when the level bisection did not converge and coordinate ascent was used.
    pub used_fallback: bool,
}

/// Box `[lo, hi]` per label in cumulative-usage space.
struct UsageBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl UsageBox {
    fn new(profile: &NodeProfile, state: &ScheduleState) -> Self {
        let lo = state.cumulative_label_usage.clone();
        let hi = lo
            .iter()
            .zip(&profile.label_counts)
            .map(|(p, &l)| p + l as f64)
            .collect();
        Self { lo, hi }
    }

    /// Cumulative usage with every label raised toward `level` and clipped to its box.
    fn at_level(&self, level: f64) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| level.clamp(lo, hi))
            .collect()
    }

    /// Level `t` with `t == mean(at_level(t))`, where path variance is smallest.
    fn balance_level(&self, mut below: f64, mut above: f64) -> f64 {
        let n = self.lo.len() as f64;
        for _ in 0..MAX_BISECTION_STEPS {
            let mid = 0.5 * (below + above);
            if mid <= below || mid >= above {
                break;
            }
            if mid - self.at_level(mid).iter().sum::<f64>() / n < 0.0 {
                below = mid;
            } else {
                above = mid;
            }
        }
        let b = variance_of(&self.at_level(below));
        if b <= variance_of(&self.at_level(above)) {
            below
        } else {
            above
        }
    }

    fn gain(&self, usage: &[f64]) -> f64 {
        usage.iter().zip(&self.lo).map(|(y, p)| y - p).sum()
    }

    fn allocation(&self, usage: &[f64], profile: &NodeProfile) -> AllocationVector {
        AllocationVector(
            usage
                .iter()
                .zip(&self.lo)
                .zip(&profile.label_counts)
                .map(|((y, p), &l)| {
                    if l == 0 {
                        0.0
                    } else {
                        ((y - p) / l as f64).clamp(0.0, 1.0)
                    }
                })
                .collect(),
        )
    }
}

/// Maximizes the samples `node` can train this round subject to the variance bound.
///
/// The feasible set is a box intersected with a convex variance ball in
/// cumulative-usage space. Stationarity forces every label that is not
/// pinned to a box face onto one common usage level, so the optimum is
/// `clamp(level, lo, hi)` for the largest level whose variance stays
/// within bound. Variance along that path is smallest at the level equal to
/// the mean usage and grows on either side, so two bisections suffice: one
/// for the minimizing level, one for the upper end of the feasible levels.
/// The state is infeasible only when even the minimizing level violates the bound.
pub fn solve_max_samples(
    profile: &NodeProfile,
    state: &ScheduleState,
    constants: &SchedulerConstants,
) -> MaxSamplesSolution {
    let labels = state.label_count();
    let bound = constants.variance_bound + constants.variance_slack();
    let bx = UsageBox::new(profile, state);

    if variance_of(&bx.hi) <= bound {
        return finish(&bx, bx.hi.clone(), profile, false);
    }

    let bottom = bx.lo.iter().copied().fold(f64::INFINITY, f64::min);
    let top = bx.hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = bx.balance_level(bottom, top);
    if variance_of(&bx.at_level(center)) > bound {
        return MaxSamplesSolution {
            samples: 0.0,
            allocation: AllocationVector::zeros(labels),
            infeasible_prior: true,
            used_fallback: false,
        };
    }

    let mut feasible = center;
    let mut infeasible = top;
    let mut converged = false;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (feasible + infeasible);
        if mid <= feasible || mid >= infeasible {
            converged = true;
            break;
        }
        if variance_of(&bx.at_level(mid)) <= bound {
            feasible = mid;
        } else {
            infeasible = mid;
        }
        let got = bx.gain(&bx.at_level(feasible));
        let upper = bx.gain(&bx.at_level(infeasible));
        if upper - got < 1e-9 * (1.0 + got.abs()) {
            converged = true;
            break;
        }
    }

    let usage = bx.at_level(feasible);
    if converged {
        finish(&bx, usage, profile, false)
    } else {
        let usage = coordinate_ascent(&bx.lo, &bx.hi, usage, bound);
        finish(&bx, usage, profile, true)
    }
}

fn finish(
    bx: &UsageBox,
    usage: Vec<f64>,
    profile: &NodeProfile,
    used_fallback: bool,
) -> MaxSamplesSolution {
    let allocation = bx.allocation(&usage, profile);
    let samples = allocation.samples(profile);
    MaxSamplesSolution {
        samples,
        allocation,
        infeasible_prior: false,
        used_fallback,
    }
}

/// Raises one label at a time by the largest step the variance bound allows.
///
/// `usage` must start feasible; it stays feasible throughout.
pub(crate) fn coordinate_ascent(lo: &[f64], hi: &[f64], mut usage: Vec<f64>, bound: f64) -> Vec<f64> {
    let n = usage.len() as f64;
    let quad = (1.0 / n) * (1.0 - 1.0 / n);
    let mut total: f64 = usage.iter().zip(lo).map(|(y, p)| y - p).sum();
    for _ in 0..MAX_ASCENT_SWEEPS {
        let before = total;
        for c in 0..usage.len() {
            let room = hi[c] - usage[c];
            if room <= 0.0 {
                continue;
            }
            let mean = usage.iter().sum::<f64>() / n;
            let lin = (2.0 / n) * (usage[c] - mean);
            let slack = variance_of(&usage) - bound;
            if slack > 0.0 {
                continue;
            }
            // Largest d with quad·d² + lin·d + slack <= 0.
            let disc = (lin * lin - 4.0 * quad * slack).max(0.0);
            let step = ((-lin + disc.sqrt()) / (2.0 * quad) * (1.0 - 1e-12)).clamp(0.0, room);
            if step > 0.0 {
                let old = usage[c];
                usage[c] = old + step;
                if variance_of(&usage) > bound {
                    usage[c] = old;
                } else {
                    total += step;
                }
            }
        }
        if total - before < 1e-9 * (1.0 + total.abs()) {
            break;
        }
    }
    usage
}

/// Whole-sample counts for a real allocation, repaired to respect the variance bound.
pub fn integerize(
    allocation: &AllocationVector,
    profile: &NodeProfile,
    state: &ScheduleState,
    constants: &SchedulerConstants,
) -> Vec<u64> {
    let mut counts: Vec<u64> = allocation
        .0
        .iter()
        .zip(&profile.label_counts)
        .map(|(&x, &l)| {
            let raw = (x.clamp(0.0, 1.0) * l as f64 + 1e-9).floor();
            (raw as u64).min(l)
        })
        .collect();

    let bound = constants.variance_bound + constants.variance_slack();
    loop {
        let usage: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
        if label_variance(state, &usage) <= bound {
            break;
        }
        let cumulative: Vec<f64> = state
            .cumulative_label_usage
            .iter()
            .zip(&usage)
            .map(|(p, n)| p + n)
            .collect();
        // Trim the label sitting farthest above the mean that still has samples to give back.
        let victim = (0..counts.len())
            .filter(|&c| counts[c] > 0)
            .max_by(|&a, &b| cumulative[a].total_cmp(&cumulative[b]).then(b.cmp(&a)));
        match victim {
            Some(c) => counts[c] -= 1,
            None => break,
        }
    }
    counts
}

/// Cumulative-throughput score of training `samples` on `node` this round.
///
/// Transmission is charged only when the model moves and at least one whole
/// sample is trained; the idle wait is charged when fewer than one is.
pub fn efficiency_score(
    node: NodeId,
    samples: f64,
    state: &ScheduleState,
    resources: &RoundResources,
    model: &ModelSpec,
    constants: &SchedulerConstants,
) -> f64 {
    let comp = if samples > 0.0 {
        model.flops_per_sample * samples / resources.compute(node)
    } else {
        0.0
    };
    let (comm, idle) = if samples >= 1.0 {
        let comm = if node == state.holder {
            0.0
        } else {
            model.model_bits / resources.bandwidth(state.holder, node)
        };
        (comm, 0.0)
    } else {
        (0.0, constants.idle_wait)
    };
    (samples + state.cumulative_samples)
        / (comp + comm + idle + state.cumulative_time + constants.time_offset)
}

/// Everything the scheduler worked out about one candidate node.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub node: NodeId,
    /// Real-valued optimum of the max-samples subproblem.
    pub s_star: f64,
    pub allocation_at_star: AllocationVector,
    pub objective_at_star: f64,
    /// Whole samples that would be committed.
    pub counts: Vec<u64>,
    /// Score at the committed whole-sample amount.
    pub objective_committed: f64,
    pub objective_at_zero: f64,
    pub train: bool,
    pub infeasible_prior: bool,
}

impl CandidateEvaluation {
    /// Objective of whichever branch this candidate settled on.
    pub fn winning_objective(&self) -> f64 {
        if self.train {
            self.objective_committed
        } else {
            self.objective_at_zero
        }
    }
}

/// Solves the subproblem for `node` and applies the train-or-wait comparison.
pub fn evaluate_candidate(
    node: NodeId,
    profile: &NodeProfile,
    state: &ScheduleState,
    resources: &RoundResources,
    model: &ModelSpec,
    constants: &SchedulerConstants,
) -> CandidateEvaluation {
    let sol = solve_max_samples(profile, state, constants);
    let counts = integerize(&sol.allocation, profile, state, constants);
    let committed = counts.iter().sum::<u64>() as f64;
    let objective_at_star = efficiency_score(node, sol.samples, state, resources, model, constants);
    let objective_committed = efficiency_score(node, committed, state, resources, model, constants);
    let objective_at_zero = efficiency_score(node, 0.0, state, resources, model, constants);
    let train = committed >= 1.0 && objective_committed >= objective_at_zero;
    CandidateEvaluation {
        node,
        s_star: sol.samples,
        allocation_at_star: sol.allocation,
        objective_at_star,
        counts,
        objective_committed,
        objective_at_zero,
        train,
        infeasible_prior: sol.infeasible_prior,
    }
}

/// Evaluates every node. Results are in ascending `NodeId` order.
pub fn evaluate_candidates(
    state: &ScheduleState,
    topology: &Topology,
    resources: &RoundResources,
    model: &ModelSpec,
    constants: &SchedulerConstants,
) -> Vec<CandidateEvaluation> {
    topology
        .profiles
        .par_iter()
        .enumerate()
        .map(|(i, profile)| evaluate_candidate(NodeId(i), profile, state, resources, model, constants))
        .collect()
}

/// Picks the highest-scoring training candidate; lower `NodeId` wins ties.
pub fn select(candidates: &[CandidateEvaluation]) -> RoundDecision {
    let mut best: Option<&CandidateEvaluation> = None;
    for cand in candidates.iter().filter(|c| c.train) {
        match best {
            Some(b) if cand.objective_committed <= b.objective_committed => {}
            _ => best = Some(cand),
        }
    }
    match best {
        Some(c) => RoundDecision::train_or_skip(c.node, c.allocation_at_star.clone(), c.counts.clone()),
        None => RoundDecision::Skip,
    }
}

/// The load-aware scheduling step for one round.
pub fn decide_round(
    state: &ScheduleState,
    topology: &Topology,
    resources: &RoundResources,
    model: &ModelSpec,
    constants: &SchedulerConstants,
) -> RoundDecision {
    select(&evaluate_candidates(state, topology, resources, model, constants))
}
