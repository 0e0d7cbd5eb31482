//! Fixtures shared by the scheduler benchmarks.

use circsched_core::resources::RoundResources;
use circsched_core::{LinkProfile, NodeId, NodeProfile, ScheduleState, Topology};

/// Ten nodes, ten labels, each node holding four labels with 1350 samples apiece.
pub fn ten_node_topology() -> Topology {
    let profiles = (0..10)
        .map(|i| {
            let mut counts = vec![0u64; 10];
            for k in 0..4 {
                counts[(i + k) % 10] = 1350;
            }
            NodeProfile::new(counts, 10e12).unwrap()
        })
        .collect();
    Topology::new(profiles, LinkProfile::uniform(10, 200e6).unwrap()).unwrap()
}

/// A mid-run state with mildly unbalanced usage.
pub fn mid_run_state(labels: usize) -> ScheduleState {
    let mut state = ScheduleState::new(labels, NodeId(0));
    state.cumulative_label_usage = (0..labels).map(|c| 5000.0 + 37.0 * c as f64).collect();
    state.cumulative_samples = state.cumulative_label_usage.iter().sum();
    state.cumulative_time = 12.5;
    state
}

pub fn baseline_resources(topology: &Topology) -> RoundResources {
    RoundResources::baseline(&topology.profiles, &topology.links)
}
