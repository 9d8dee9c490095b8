//! 5x5 maze with a sparse goal reward.
//!
//! ```text
//! S . . # #
//! . . . # .
//! . . . . .
//! . . D . .
//! # # . # G
//! ```
//!
//! Cells are indexed `row * 5 + col`. Moves into walls or off the board leave
//! the agent in place. Entering `G` pays 1; `G` is absorbing and pays nothing
//! afterwards. The detour mode of the reference policy walks to `D` and
//! loiters there.

use std::collections::VecDeque;

use super::{FiniteMdp, RefPolicySpec, TabularPolicy};

pub(crate) const HORIZON: usize = 10;
pub(crate) const SIDE: usize = 5;
pub(crate) const CELLS: usize = SIDE * SIDE;

const LAYOUT: [&str; SIDE] = ["S..##", "...#.", ".....", "..D..", "##.#G"];

/// up, down, left, right
const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gridworld5 {
    walls: [bool; CELLS],
    start: usize,
    goal: usize,
    distractor: usize,
}

impl Default for Gridworld5 {
    fn default() -> Self {
        Self::new()
    }
}

impl Gridworld5 {
    pub fn new() -> Self {
        let mut walls = [false; CELLS];
        let (mut start, mut goal, mut distractor) = (0, 0, 0);
        for (r, row) in LAYOUT.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let i = r * SIDE + c;
                match ch {
                    '#' => walls[i] = true,
                    'S' => start = i,
                    'G' => goal = i,
                    'D' => distractor = i,
                    _ => {}
                }
            }
        }
        Gridworld5 {
            walls,
            start,
            goal,
            distractor,
        }
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn distractor(&self) -> usize {
        self.distractor
    }

    pub fn is_open(&self, cell: usize) -> bool {
        cell < CELLS && !self.walls[cell]
    }

    /// Cell reached by a move, ignoring the goal's absorption.
    fn moved(&self, cell: usize, action: usize) -> usize {
        let (dr, dc) = MOVES[action];
        let r = (cell / SIDE) as isize + dr;
        let c = (cell % SIDE) as isize + dc;
        if !(0..SIDE as isize).contains(&r) || !(0..SIDE as isize).contains(&c) {
            return cell;
        }
        let next = r as usize * SIDE + c as usize;
        if self.walls[next] {
            cell
        } else {
            next
        }
    }

    /// Shortest-path move counts to `target` (`usize::MAX` if unreachable).
    pub fn distances_to(&self, target: usize) -> [usize; CELLS] {
        let mut dist = [usize::MAX; CELLS];
        dist[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(cell) = queue.pop_front() {
            for a in 0..MOVES.len() {
                let n = self.moved(cell, a);
                if dist[n] == usize::MAX {
                    dist[n] = dist[cell] + 1;
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Uniform over moves that shorten the distance to `target`; uniform over
    /// all moves where none does.
    fn greedy_toward(&self, target: usize) -> Vec<Vec<f64>> {
        let dist = self.distances_to(target);
        (0..CELLS)
            .map(|cell| {
                let better: Vec<usize> = (0..MOVES.len())
                    .filter(|&a| dist[self.moved(cell, a)] < dist[cell])
                    .collect();
                let mut row = vec![0.0; MOVES.len()];
                if better.is_empty() {
                    row.fill(1.0 / MOVES.len() as f64);
                } else {
                    for a in better.iter().copied() {
                        row[a] = 1.0 / better.len() as f64;
                    }
                }
                row
            })
            .collect()
    }

    pub fn ref_policy(&self, spec: &RefPolicySpec) -> TabularPolicy {
        TabularPolicy::mix(&self.greedy_toward(self.goal), &self.greedy_toward(self.distractor), spec)
    }
}

impl FiniteMdp for Gridworld5 {
    fn num_states(&self) -> usize {
        CELLS
    }

    fn num_actions(&self) -> usize {
        MOVES.len()
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn initial_state(&self) -> usize {
        self.start
    }

    fn transition(&self, cell: usize, action: usize) -> (usize, f64) {
        if cell == self.goal {
            return (cell, 0.0);
        }
        let next = self.moved(cell, action);
        (next, if next == self.goal { 1.0 } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, Env, EnvId, State};

    #[test]
    fn layout_landmarks() {
        let g = Gridworld5::new();
        assert_eq!((g.start, g.goal, g.distractor), (0, 24, 17));
        assert_eq!(g.walls.iter().filter(|&&w| w).count(), 6);
        assert_eq!(g.distances_to(g.goal)[g.start], 8);
    }

    #[test]
    fn every_open_cell_reaches_the_goal() {
        let g = Gridworld5::new();
        let d = g.distances_to(g.goal);
        for cell in 0..CELLS {
            assert_eq!(g.is_open(cell), d[cell] != usize::MAX, "cell {cell}");
        }
    }

    #[test]
    fn walls_block_moves() {
        let env = Env::new(EnvId::Gridworld5);
        // (1, 4) sits directly below the wall at (0, 4).
        let s = State::Finite { index: 9, step: 3 };
        let out = env.step(&s, &Action::Discrete(0)).unwrap();
        assert_eq!(out.next, State::Finite { index: 9, step: 4 });
        assert_eq!((out.reward, out.terminal), (0.0, false));
    }

    #[test]
    fn board_edges_block_moves() {
        let g = Gridworld5::new();
        assert_eq!(g.transition(0, 0), (0, 0.0));
        assert_eq!(g.transition(0, 2), (0, 0.0));
    }

    #[test]
    fn goal_pays_once_and_absorbs() {
        let g = Gridworld5::new();
        assert_eq!(g.transition(19, 1), (24, 1.0));
        for a in 0..4 {
            assert_eq!(g.transition(24, a), (24, 0.0));
        }
    }

    #[test]
    fn wall_cells_are_not_states() {
        let env = Env::new(EnvId::Gridworld5);
        assert!(env.step(&State::Finite { index: 3, step: 0 }, &Action::Discrete(0)).is_err());
    }

    #[test]
    fn reference_modes_descend_their_distance_maps() {
        let g = Gridworld5::new();
        let p = g.ref_policy(&RefPolicySpec::default());
        // From the start both modes move down or right.
        assert_eq!(p.row(0), &[0.0, 0.5, 0.0, 0.5]);
        // At the distractor the detour mode dithers uniformly.
        let at_d = p.row(g.distractor);
        assert!(at_d.iter().all(|&q| q >= 0.125));
    }
}
