//! Two-step chain `s0 -> s1 -> s2`. Both actions advance the chain; `a0`
//! pays 1 and `a1` pays 0.

use super::{FiniteMdp, RefPolicySpec, TabularPolicy};

pub(crate) const HORIZON: usize = 2;
pub(crate) const NUM_STATES: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Chain2;

impl Chain2 {
    /// Near-optimal mode always plays `a0`, the detour always `a1`.
    pub fn ref_policy(&self, spec: &RefPolicySpec) -> TabularPolicy {
        let optimal = vec![vec![1.0, 0.0]; NUM_STATES];
        let detour = vec![vec![0.0, 1.0]; NUM_STATES];
        TabularPolicy::mix(&optimal, &detour, spec)
    }
}

impl FiniteMdp for Chain2 {
    fn num_states(&self) -> usize {
        NUM_STATES
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn transition(&self, state: usize, action: usize) -> (usize, f64) {
        ((state + 1).min(NUM_STATES - 1), if action == 0 { 1.0 } else { 0.0 })
    }
}
