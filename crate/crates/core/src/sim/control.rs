//! Classical baselines: fixed-time cycling and max-pressure.

use alloc::vec::Vec;

use crate::network::{phase_pressure, Network, NUM_PHASES};
use crate::sim::state::SimState;

/// Round-robin over a fixed phase order, one phase per control step, identical at every
/// intersection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTime {
    pub cycle: Vec<usize>,
}

impl Default for FixedTime {
    fn default() -> Self {
        FixedTime { cycle: (0..NUM_PHASES).collect() }
    }
}

impl FixedTime {
    pub fn phase_at(&self, step: usize) -> usize {
        self.cycle[step % self.cycle.len()]
    }

    pub fn actions(&self, network: &Network, step: usize) -> Vec<usize> {
        alloc::vec![self.phase_at(step); network.num_intersections()]
    }
}

/// Per intersection, the phase of highest pressure over lane vehicle counts; ties go to the
/// lowest index.
pub fn max_pressure_actions(network: &Network, state: &SimState) -> Vec<usize> {
    let counts = state.lane_counts();
    network
        .intersections
        .iter()
        .map(|inter| {
            let mut best = (0, f64::NEG_INFINITY);
            for phase in &inter.phases {
                let p = phase_pressure(&counts, inter, phase).expect("every lane has a count");
                if p > best.1 {
                    best = (phase.index, p);
                }
            }
            best.0
        })
        .collect()
}
