//! Point mass in the square `[0, 5]^2` with a wall block `[2, 3] x [0, 3.5]`.
//! Actions are velocities in `[-1, 1]^2` scaled by 0.25 per step; a move that
//! would leave the square or enter the wall is cancelled. Entering the goal
//! disc pays 1 and freezes the agent.

use super::RefPolicySpec;
use crate::rng::{normal, Rng};
use rand::Rng as _;

pub(crate) const HORIZON: usize = 50;
pub(crate) const START: [f64; 2] = [0.5, 0.5];
const SIZE: f64 = 5.0;
const SPEED: f64 = 0.25;
const WALL: ([f64; 2], [f64; 2]) = ([2.0, 0.0], [3.0, 3.5]);
pub const GOAL: [f64; 2] = [4.5, 4.5];
pub const GOAL_RADIUS: f64 = 0.5;
const DETOUR_CORNER: [f64; 2] = [0.5, 4.5];

pub(crate) fn in_bounds(p: [f64; 2]) -> bool {
    p.iter().all(|v| (0.0..=SIZE).contains(v)) && !in_wall(p)
}

fn in_wall(p: [f64; 2]) -> bool {
    let (lo, hi) = WALL;
    (lo[0]..=hi[0]).contains(&p[0]) && (lo[1]..=hi[1]).contains(&p[1])
}

pub fn in_goal(p: [f64; 2]) -> bool {
    (p[0] - GOAL[0]).hypot(p[1] - GOAL[1]) <= GOAL_RADIUS
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PointmassMaze;

impl PointmassMaze {
    pub fn transition(&self, pos: [f64; 2], action: [f64; 2]) -> ([f64; 2], f64) {
        if in_goal(pos) {
            return (pos, 0.0);
        }
        let moved = [pos[0] + SPEED * action[0], pos[1] + SPEED * action[1]];
        let next = if in_bounds(moved) { moved } else { pos };
        (next, if in_goal(next) { 1.0 } else { 0.0 })
    }
}

/// Per-step mixture: with `weights[0]` steer along the route over the wall,
/// otherwise toward the top-left corner. Gaussian jitter, clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointMixture {
    pub weights: [f64; 2],
    pub noise: f64,
}

fn route_target(p: [f64; 2]) -> [f64; 2] {
    if p[0] < 2.0 && p[1] < 3.75 {
        [1.5, 4.2]
    } else if p[0] < 3.0 {
        [3.6, 4.2]
    } else {
        GOAL
    }
}

impl WaypointMixture {
    pub fn sample(&self, pos: [f64; 2], rng: &mut Rng) -> [f64; 2] {
        let target = if rng.gen::<f64>() < self.weights[0] {
            route_target(pos)
        } else {
            DETOUR_CORNER
        };
        let (dx, dy) = (target[0] - pos[0], target[1] - pos[1]);
        let norm = dx.hypot(dy).max(1e-9);
        let scale = (norm / SPEED).min(1.0) / norm;
        let mut a = [dx * scale, dy * scale];
        for v in &mut a {
            *v = (*v + self.noise * normal::<f64>(rng)).clamp(-1.0, 1.0);
        }
        a
    }
}

pub(crate) fn ref_mixture(spec: &RefPolicySpec) -> WaypointMixture {
    WaypointMixture {
        weights: [spec.optimal_weight, spec.detour_weight],
        noise: 0.3,
    }
}
