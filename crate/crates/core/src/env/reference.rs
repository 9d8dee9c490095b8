//! Reference policies: a per-state mixture of a near-optimal mode and a
//! detour mode.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{bandit::GaussianMixture1d, pointmass::WaypointMixture, Action, Env, State};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Mixture weights of the near-optimal and the detour behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefPolicySpec {
    pub optimal_weight: f64,
    pub detour_weight: f64,
}

impl Default for RefPolicySpec {
    fn default() -> Self {
        RefPolicySpec {
            optimal_weight: 0.5,
            detour_weight: 0.5,
        }
    }
}

impl RefPolicySpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.optimal_weight, self.detour_weight);
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights {a}, {b} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

/// Stationary tabular policy, `probs[state][action]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InputDomain(format!("policy row {s} is not a distribution: {row:?}")));
            }
        }
        Ok(TabularPolicy { probs })
    }

    /// Mixture `w_a * a + w_b * b` of two deterministic-or-not policies.
    pub fn mix(a: &[Vec<f64>], b: &[Vec<f64>], spec: &RefPolicySpec) -> Self {
        let probs = a
            .iter()
            .zip(b)
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(pa, pb)| spec.optimal_weight * pa + spec.detour_weight * pb)
                    .collect()
            })
            .collect();
        TabularPolicy { probs }
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state][action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn sample(&self, state: usize, rng: &mut Rng) -> usize {
        let row = &self.probs[state];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RefPolicy {
    Tabular(TabularPolicy),
    Bandit(GaussianMixture1d),
    Pointmass(WaypointMixture),
}

impl RefPolicy {
    pub fn sample(&self, env: &Env, state: &State, rng: &mut Rng) -> Result<Action> {
        match (self, state) {
            (RefPolicy::Tabular(p), &State::Finite { index, .. }) if index < p.num_states() => {
                Ok(Action::Discrete(p.sample(index, rng)))
            }
            (RefPolicy::Bandit(m), State::Finite { .. }) => Ok(Action::Continuous(vec![m.sample(rng)])),
            (RefPolicy::Pointmass(m), &State::Continuous { pos, .. }) => Ok(Action::Continuous(m.sample(pos, rng).to_vec())),
            _ => Err(Error::InputDomain(format!("reference policy cannot act in {} state {state:?}", env.id()))),
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularPolicy> {
        match self {
            RefPolicy::Tabular(p) => Some(p),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn weights_must_form_a_distribution() {
        assert!(RefPolicySpec::default().validate().is_ok());
        let bad = RefPolicySpec {
            optimal_weight: 0.7,
            detour_weight: 0.7,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rows_must_sum_to_one() {
        assert!(TabularPolicy::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(TabularPolicy::new(vec![vec![0.25, 0.75]]).is_ok());
    }

    #[test]
    fn sampling_matches_row_frequencies() {
        let p = TabularPolicy::new(vec![vec![0.2, 0.0, 0.8]]).unwrap();
        let mut rng = seeded(1);
        let n = 20_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[p.sample(0, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / n as f64 - 0.2).abs() < 0.015);
    }
}
