//! Small deterministic finite-horizon MDPs, their reference (data-generating)
//! policies and offline datasets.
//!
//! Step indices are zero-based: an episode visits steps `0..H` and the
//! transition taken at step `H - 1` is the terminal one.

mod bandit;
mod chain;
pub mod dataset;
mod grid;
mod pointmass;
mod reference;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bandit::BimodalBandit;
pub use chain::Chain2;
pub use dataset::{annotate_returns, gen_dataset, DatasetMeta, OfflineDataset, Transition};
pub use grid::Gridworld5;
pub use pointmass::PointmassMaze;
pub use reference::{RefPolicy, RefPolicySpec, TabularPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    Chain2,
    Gridworld5,
    BimodalBandit,
    PointmassMaze,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [EnvId::Chain2, EnvId::Gridworld5, EnvId::BimodalBandit, EnvId::PointmassMaze];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::Chain2 => "chain2",
            EnvId::Gridworld5 => "gridworld5",
            EnvId::BimodalBandit => "bimodal-bandit",
            EnvId::PointmassMaze => "pointmass-maze",
        }
    }

    pub(crate) fn code(self) -> u32 {
        self as u32
    }

    pub(crate) fn from_code(code: u32) -> Option<EnvId> {
        EnvId::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment `{s}`")))
    }
}

/// Environment state. `step` is the zero-based time index.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Finite { index: usize, step: usize },
    Continuous { pos: [f64; 2], step: usize },
}

impl State {
    pub fn step(&self) -> usize {
        match *self {
            State::Finite { step, .. } | State::Continuous { step, .. } => step,
        }
    }

    /// Tabular index, if the state space is finite.
    pub fn index(&self) -> Option<usize> {
        match *self {
            State::Finite { index, .. } => Some(index),
            State::Continuous { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match *self {
            Action::Discrete(i) => Some(i),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    /// `n` actions embedded as one-hot vectors.
    Discrete(usize),
    /// Axis-aligned box `[low, high]^dim`.
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    pub fn embed(&self, action: &Action) -> Result<Vec<f64>> {
        match (self, action) {
            (&ActionSpace::Discrete(n), &Action::Discrete(i)) if i < n => {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                Ok(v)
            }
            (&ActionSpace::Box { dim, low, high }, Action::Continuous(v))
                if v.len() == dim && v.iter().all(|x| (low..=high).contains(x)) =>
            {
                Ok(v.clone())
            }
            _ => Err(Error::InputDomain(format!("action {action:?} not in {self:?}"))),
        }
    }

    /// Map a raw sampled vector onto the space: nearest one-hot embedding
    /// (ties to the lowest index) or clipping to the box.
    pub fn project(&self, raw: &[f64]) -> Action {
        match *self {
            ActionSpace::Discrete(_) => Action::Discrete(snap_index(raw)),
            ActionSpace::Box { low, high, .. } => {
                Action::Continuous(raw.iter().map(|v| v.clamp(low, high)).collect())
            }
        }
    }
}

/// Index of the nearest one-hot vector. `||v - e_i||^2 = ||v||^2 - 2 v_i + 1`,
/// so this is the first maximal component.
pub fn snap_index(raw: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in raw.iter().enumerate() {
        if v > raw[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: State,
    pub reward: f64,
    pub terminal: bool,
}

/// Finite deterministic MDP view used by the exact oracles. States are
/// indices; the step index is tracked by the caller.
pub trait FiniteMdp {
    fn num_states(&self) -> usize;

    fn num_actions(&self) -> usize;

    fn horizon(&self) -> usize;

    fn initial_state(&self) -> usize;

    /// Next state and reward. Only meaningful for states reachable before
    /// the horizon.
    fn transition(&self, state: usize, action: usize) -> (usize, f64);
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    Chain2(Chain2),
    Gridworld5(Gridworld5),
    BimodalBandit(BimodalBandit),
    PointmassMaze(PointmassMaze),
}

/// A built-in environment together with its discount factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    kind: EnvKind,
    gamma: f64,
}

impl Env {
    /// Environment with its default discount (1 for the single-episode
    /// toy problems, 0.99 for the mazes).
    pub fn new(id: EnvId) -> Self {
        let (kind, gamma) = match id {
            EnvId::Chain2 => (EnvKind::Chain2(Chain2), 1.0),
            EnvId::Gridworld5 => (EnvKind::Gridworld5(Gridworld5::new()), 0.99),
            EnvId::BimodalBandit => (EnvKind::BimodalBandit(BimodalBandit), 1.0),
            EnvId::PointmassMaze => (EnvKind::PointmassMaze(PointmassMaze), 0.99),
        };
        Env { kind, gamma }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount {gamma} outside [0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn id(&self) -> EnvId {
        match self.kind {
            EnvKind::Chain2(_) => EnvId::Chain2,
            EnvKind::Gridworld5(_) => EnvId::Gridworld5,
            EnvKind::BimodalBandit(_) => EnvId::BimodalBandit,
            EnvKind::PointmassMaze(_) => EnvId::PointmassMaze,
        }
    }

    pub fn kind(&self) -> &EnvKind {
        &self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        match &self.kind {
            EnvKind::Chain2(_) => chain::HORIZON,
            EnvKind::Gridworld5(_) => grid::HORIZON,
            EnvKind::BimodalBandit(_) => 1,
            EnvKind::PointmassMaze(_) => pointmass::HORIZON,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match &self.kind {
            EnvKind::Chain2(_) => chain::NUM_STATES,
            EnvKind::Gridworld5(_) => grid::CELLS + 1,
            EnvKind::BimodalBandit(_) => 1,
            EnvKind::PointmassMaze(_) => 3,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match &self.kind {
            EnvKind::Chain2(_) => ActionSpace::Discrete(2),
            EnvKind::Gridworld5(_) => ActionSpace::Discrete(4),
            EnvKind::BimodalBandit(_) => ActionSpace::Box {
                dim: 1,
                low: bandit::LOW,
                high: bandit::HIGH,
            },
            EnvKind::PointmassMaze(_) => ActionSpace::Box {
                dim: 2,
                low: -1.0,
                high: 1.0,
            },
        }
    }

    pub fn act_dim(&self) -> usize {
        self.action_space().dim()
    }

    /// Tabular view for the exact oracles.
    pub fn as_finite(&self) -> Option<&dyn FiniteMdp> {
        match &self.kind {
            EnvKind::Chain2(c) => Some(c),
            EnvKind::Gridworld5(g) => Some(g),
            _ => None,
        }
    }

    pub fn reset(&self) -> State {
        match &self.kind {
            EnvKind::Chain2(c) => State::Finite {
                index: c.initial_state(),
                step: 0,
            },
            EnvKind::Gridworld5(g) => State::Finite {
                index: g.initial_state(),
                step: 0,
            },
            EnvKind::BimodalBandit(_) => State::Finite { index: 0, step: 0 },
            EnvKind::PointmassMaze(_) => State::Continuous {
                pos: pointmass::START,
                step: 0,
            },
        }
    }

    /// Observation vector fed to the networks.
    pub fn observe(&self, state: &State) -> Vec<f64> {
        let h = self.horizon() as f64;
        match (&self.kind, state) {
            (EnvKind::Chain2(_), &State::Finite { index, .. }) => one_hot(index, chain::NUM_STATES),
            (EnvKind::Gridworld5(_), &State::Finite { index, step }) => {
                let mut v = one_hot(index, grid::CELLS);
                v.push(step as f64 / h);
                v
            }
            (EnvKind::BimodalBandit(_), _) => vec![1.0],
            (EnvKind::PointmassMaze(_), &State::Continuous { pos, step }) => vec![pos[0], pos[1], step as f64 / h],
            _ => unreachable!("state variant always matches its environment"),
        }
    }

    /// Inverse of [`Env::observe`] given the tabular index from a dataset record.
    pub(crate) fn state_from_record(&self, step: usize, index: Option<usize>, obs: &[f64]) -> Result<State> {
        let state = match (&self.kind, index) {
            (EnvKind::PointmassMaze(_), None) => State::Continuous {
                pos: [obs[0], obs[1]],
                step,
            },
            (EnvKind::PointmassMaze(_), Some(_)) => {
                return Err(Error::format("dataset", "pointmass record carries a tabular state id"))
            }
            (_, Some(index)) => State::Finite { index, step },
            (_, None) => return Err(Error::format("dataset", "finite-state record without a state id")),
        };
        self.validate_state(&state)?;
        Ok(state)
    }

    fn validate_state(&self, state: &State) -> Result<()> {
        let ok = state.step() < self.horizon()
            && match (&self.kind, state) {
                (EnvKind::Chain2(_), &State::Finite { index, step }) => index == step,
                (EnvKind::Gridworld5(g), &State::Finite { index, .. }) => g.is_open(index),
                (EnvKind::BimodalBandit(_), &State::Finite { index, .. }) => index == 0,
                (EnvKind::PointmassMaze(_), State::Continuous { pos, .. }) => pointmass::in_bounds(*pos),
                _ => false,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InputDomain(format!("state {state:?} not in {} state space", self.id())))
        }
    }

    /// Deterministic transition. Errors on states or actions outside the
    /// spaces, including stepping past the horizon.
    pub fn step(&self, state: &State, action: &Action) -> Result<StepOutcome> {
        self.validate_state(state)?;
        self.action_space().embed(action)?;
        let step = state.step();
        let terminal = step + 1 == self.horizon();
        let (next, reward) = match (&self.kind, state, action) {
            (EnvKind::Chain2(c), &State::Finite { index, .. }, &Action::Discrete(a)) => {
                let (s, r) = c.transition(index, a);
                (State::Finite { index: s, step: step + 1 }, r)
            }
            (EnvKind::Gridworld5(g), &State::Finite { index, .. }, &Action::Discrete(a)) => {
                let (s, r) = g.transition(index, a);
                (State::Finite { index: s, step: step + 1 }, r)
            }
            (EnvKind::BimodalBandit(b), State::Finite { .. }, Action::Continuous(a)) => {
                (State::Finite { index: 0, step: step + 1 }, b.reward(a[0]))
            }
            (EnvKind::PointmassMaze(p), State::Continuous { pos, .. }, Action::Continuous(a)) => {
                let (pos, r) = p.transition(*pos, [a[0], a[1]]);
                (State::Continuous { pos, step: step + 1 }, r)
            }
            _ => unreachable!("validated above"),
        };
        Ok(StepOutcome { next, reward, terminal })
    }

    /// Whether an episode with this undiscounted return counts as a success:
    /// the optimal return on chain2, any reward elsewhere (goal reached or a
    /// high-reward interval hit).
    pub fn is_success(&self, undiscounted_return: f64) -> bool {
        match self.kind {
            EnvKind::Chain2(_) => undiscounted_return >= chain::HORIZON as f64 - 1e-9,
            _ => undiscounted_return > 0.0,
        }
    }

    /// Reference policy built from mixture weights.
    pub fn ref_policy(&self, spec: &RefPolicySpec) -> Result<RefPolicy> {
        spec.validate()?;
        Ok(match &self.kind {
            EnvKind::Chain2(c) => RefPolicy::Tabular(c.ref_policy(spec)),
            EnvKind::Gridworld5(g) => RefPolicy::Tabular(g.ref_policy(spec)),
            EnvKind::BimodalBandit(_) => RefPolicy::Bandit(bandit::ref_mixture(spec)),
            EnvKind::PointmassMaze(_) => RefPolicy::Pointmass(pointmass::ref_mixture(spec)),
        })
    }
}

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_ids_round_trip_through_names() {
        for id in EnvId::ALL {
            assert_eq!(id.name().parse::<EnvId>().unwrap(), id);
            assert_eq!(EnvId::from_code(id.code()), Some(id));
        }
        assert!("maze9".parse::<EnvId>().is_err());
    }

    #[test]
    fn snapping_prefers_lowest_index_on_ties() {
        assert_eq!(snap_index(&[0.2, 0.7, 0.7]), 1);
        assert_eq!(snap_index(&[0.5, 0.5]), 0);
        assert_eq!(snap_index(&[-3.0, -1.0]), 1);
    }

    #[test]
    fn box_projection_clips() {
        let space = ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 };
        assert_eq!(space.project(&[1.5, -0.25]), Action::Continuous(vec![1.0, -0.25]));
    }

    #[test]
    fn embedding_rejects_out_of_space_actions() {
        assert!(ActionSpace::Discrete(2).embed(&Action::Discrete(2)).is_err());
        let space = ActionSpace::Box { dim: 1, low: -3.0, high: 3.0 };
        assert!(space.embed(&Action::Continuous(vec![3.5])).is_err());
        assert!(space.embed(&Action::Discrete(0)).is_err());
    }

    #[test]
    fn step_is_a_pure_function() {
        for id in EnvId::ALL {
            let env = Env::new(id);
            let s = env.reset();
            let a = env.action_space().project(&vec![0.3; env.act_dim()]);
            assert_eq!(env.step(&s, &a).unwrap(), env.step(&s, &a).unwrap());
        }
    }

    #[test]
    fn observations_have_declared_width() {
        for id in EnvId::ALL {
            let env = Env::new(id);
            assert_eq!(env.observe(&env.reset()).len(), env.obs_dim());
        }
    }

    #[test]
    fn every_rollout_ends_exactly_at_the_horizon() {
        for id in EnvId::ALL {
            let env = Env::new(id);
            let mut s = env.reset();
            let a = env.action_space().project(&vec![0.1; env.act_dim()]);
            for h in 0..env.horizon() {
                let out = env.step(&s, &a).unwrap();
                assert_eq!(out.terminal, h + 1 == env.horizon());
                assert!((0.0..=1.0).contains(&out.reward));
                s = out.next;
            }
            assert!(env.step(&s, &a).is_err());
        }
    }
}
