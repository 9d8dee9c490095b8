//! Exact dynamic programming on finite deterministic MDPs.
//!
//! All tables are indexed by `(step, state)` and hold one entry per action.
//! Only `(step, state)` pairs reachable from the initial state under some
//! action sequence are populated.

use std::fmt::Write as _;

use crate::env::{Env, FiniteMdp, RefPolicySpec, TabularPolicy};
use crate::error::{Error, Result};

/// Atoms closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

/// Finite distribution over returns, atoms sorted by value.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteReturnDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteReturnDistribution {
    pub fn point(value: f64) -> Self {
        DiscreteReturnDistribution {
            atoms: vec![(value, 1.0)],
        }
    }

    /// Build from `(value, probability)` pairs, dropping empty atoms and
    /// merging near-equal values.
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.retain(|&(_, p)| p > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if (v - last.0).abs() < MERGE_TOL => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        DiscreteReturnDistribution { atoms: merged }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    /// `eta * ln E[exp(Z / eta)]`.
    pub fn log_mean_exp(&self, eta: f64) -> f64 {
        let (values, probs): (Vec<f64>, Vec<f64>) = self.atoms.iter().copied().unzip();
        weighted_lse(&values, &probs, eta)
    }

    /// Distribution of `reward + gamma * Z`.
    pub fn shifted(&self, reward: f64, gamma: f64) -> Self {
        Self::from_atoms(self.atoms.iter().map(|&(v, p)| (reward + gamma * v, p)).collect())
    }
}

/// `eta * ln sum_i w_i exp(v_i / eta)` with a max shift over the atoms of
/// positive weight.
pub fn weighted_lse(values: &[f64], weights: &[f64], eta: f64) -> f64 {
    let m = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| w * ((v - m) / eta).exp())
        .sum();
    m + eta * s.ln()
}

/// Values per reachable `(step, state)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTable<T> {
    horizon: usize,
    num_states: usize,
    cells: Vec<Option<T>>,
}

impl<T> StepTable<T> {
    fn empty(horizon: usize, num_states: usize) -> Self {
        StepTable {
            horizon,
            num_states,
            cells: (0..horizon * num_states).map(|_| None).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, step: usize, state: usize) -> Option<&T> {
        if step >= self.horizon || state >= self.num_states {
            return None;
        }
        self.cells[step * self.num_states + state].as_ref()
    }

    fn set(&mut self, step: usize, state: usize, value: T) {
        self.cells[step * self.num_states + state] = Some(value);
    }

    /// Populated cells in `(step, state)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let n = self.num_states;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|v| (i / n, i % n, v)))
    }

    fn map<U>(&self, mut f: impl FnMut(usize, usize, &T) -> U) -> StepTable<U> {
        let mut out = StepTable::empty(self.horizon, self.num_states);
        for (h, s, v) in self.iter() {
            out.set(h, s, f(h, s, v));
        }
        out
    }
}

/// States reachable at each step, in increasing index order.
pub fn reachable(mdp: &dyn FiniteMdp) -> Vec<Vec<usize>> {
    let mut layers = vec![vec![mdp.initial_state()]];
    for _ in 1..mdp.horizon() {
        let mut seen = vec![false; mdp.num_states()];
        for &s in layers.last().unwrap() {
            for a in 0..mdp.num_actions() {
                seen[mdp.transition(s, a).0] = true;
            }
        }
        layers.push((0..mdp.num_states()).filter(|&s| seen[s]).collect());
    }
    layers
}

/// Backward induction skeleton: `f(step, next_state, action, reward,
/// continuation)` where the continuation is the next step's row at
/// `next_state` (absent at the last step).
fn backward<T: Clone>(
    mdp: &dyn FiniteMdp,
    mut f: impl FnMut(usize, usize, usize, f64, Option<&Vec<T>>) -> T,
) -> StepTable<Vec<T>> {
    let layers = reachable(mdp);
    let horizon = mdp.horizon();
    let mut table: StepTable<Vec<T>> = StepTable::empty(horizon, mdp.num_states());
    for h in (0..horizon).rev() {
        for &s in &layers[h] {
            let row = (0..mdp.num_actions())
                .map(|a| {
                    let (next, r) = mdp.transition(s, a);
                    let cont = if h + 1 < horizon { table.get(h + 1, next) } else { None };
                    f(h, next, a, r, cont)
                })
                .collect();
            table.set(h, s, row);
        }
    }
    table
}

fn check_policy(mdp: &dyn FiniteMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.num_states() != mdp.num_states() || (0..policy.num_states()).any(|s| policy.row(s).len() != mdp.num_actions()) {
        return Err(Error::Shape(format!(
            "policy table does not cover {} states x {} actions",
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InputDomain(format!("discount {gamma} outside [0, 1]")));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InputDomain(format!("temperature {eta} must be positive")));
    }
    Ok(())
}

/// Exact reward-to-go distributions `Z_h(x, a)` under `policy`.
pub fn exact_rtg_distribution(
    mdp: &dyn FiniteMdp,
    policy: &TabularPolicy,
    gamma: f64,
) -> Result<StepTable<Vec<DiscreteReturnDistribution>>> {
    check_policy(mdp, policy)?;
    check_gamma(gamma)?;
    Ok(backward(mdp, |_, next, _, r, cont: Option<&Vec<DiscreteReturnDistribution>>| match cont {
        None => DiscreteReturnDistribution::point(r),
        Some(row) => {
            let mut atoms = Vec::new();
            for (a2, z) in row.iter().enumerate() {
                let p = policy.prob(next, a2);
                if p > 0.0 {
                    atoms.extend(z.atoms().iter().map(|&(v, q)| (r + gamma * v, p * q)));
                }
            }
            DiscreteReturnDistribution::from_atoms(atoms)
        }
    }))
}

/// Exact `Q^pi_h(x, a)` by backward policy evaluation.
pub fn exact_q_pi(mdp: &dyn FiniteMdp, policy: &TabularPolicy, gamma: f64) -> Result<StepTable<Vec<f64>>> {
    check_policy(mdp, policy)?;
    check_gamma(gamma)?;
    Ok(backward(mdp, |_, next, _, r, cont: Option<&Vec<f64>>| match cont {
        None => r,
        Some(row) => r + gamma * row.iter().enumerate().map(|(a2, q)| policy.prob(next, a2) * q).sum::<f64>(),
    }))
}

/// `Q*_h(x, a) = eta ln E[exp(Z_h(x, a) / eta)]` over exact distributions.
pub fn q_star_from_distributions(
    dists: &StepTable<Vec<DiscreteReturnDistribution>>,
    eta: f64,
) -> Result<StepTable<Vec<f64>>> {
    check_eta(eta)?;
    Ok(dists.map(|_, _, row| row.iter().map(|z| z.log_mean_exp(eta)).collect()))
}

/// Optimal regularised Q computed from the reward-to-go distribution of the
/// reference policy.
pub fn exact_q_star_from_returns(
    mdp: &dyn FiniteMdp,
    policy: &TabularPolicy,
    eta: f64,
    gamma: f64,
) -> Result<StepTable<Vec<f64>>> {
    q_star_from_distributions(&exact_rtg_distribution(mdp, policy, gamma)?, eta)
}

/// Soft value iteration against the reference policy, plus `Q^pi` for it.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTables {
    pub eta: f64,
    pub gamma: f64,
    pub v_star: StepTable<f64>,
    pub q_star: StepTable<Vec<f64>>,
    pub pi_star: StepTable<Vec<f64>>,
    pub q_pi: StepTable<Vec<f64>>,
}

/// `Q*_h = r + gamma V*_{h+1}`, `V*_h = eta ln E_ref exp(Q*_h / eta)`,
/// `pi*_h ∝ pi_ref exp(Q*_h / eta)`, with `V*_H = 0`.
pub fn soft_value_iteration(mdp: &dyn FiniteMdp, policy: &TabularPolicy, eta: f64, gamma: f64) -> Result<OracleTables> {
    check_policy(mdp, policy)?;
    check_gamma(gamma)?;
    check_eta(eta)?;
    let soft_value = |s: usize, q: &[f64]| weighted_lse(q, policy.row(s), eta);
    let q_star = backward(mdp, |_, next, _, r, cont: Option<&Vec<f64>>| match cont {
        None => r,
        Some(row) => r + gamma * soft_value(next, row),
    });
    let v_star = q_star.map(|_, s, q| soft_value(s, q));
    let pi_star = q_star.map(|_, s, q| {
        let v = soft_value(s, q);
        q.iter()
            .zip(policy.row(s))
            .map(|(&qa, &p)| if p > 0.0 { p * ((qa - v) / eta).exp() } else { 0.0 })
            .collect()
    });
    Ok(OracleTables {
        eta,
        gamma,
        v_star,
        q_star,
        pi_star,
        q_pi: exact_q_pi(mdp, policy, gamma)?,
    })
}

impl OracleTables {
    /// Tables for a built-in finite environment under its reference policy.
    pub fn for_env(env: &Env, spec: &RefPolicySpec, eta: f64) -> Result<Self> {
        let (mdp, policy) = finite_parts(env, spec)?;
        soft_value_iteration(mdp, &policy, eta, env.gamma())
    }

    /// Structured text export, one line per `(step, state, action)` and per
    /// `(step, state)`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# oracle eta={} gamma={}\n# step state action q_star q_pi pi_star\n", self.eta, self.gamma);
        for (h, st, q) in self.q_star.iter() {
            let qp = self.q_pi.get(h, st).expect("same support");
            let ps = self.pi_star.get(h, st).expect("same support");
            for a in 0..q.len() {
                writeln!(s, "q {h} {st} {a} {:.12} {:.12} {:.12}", q[a], qp[a], ps[a]).unwrap();
            }
        }
        s.push_str("# step state v_star\n");
        for (h, st, v) in self.v_star.iter() {
            writeln!(s, "v {h} {st} {v:.12}").unwrap();
        }
        s
    }
}

/// Tabular view and reference policy of a finite environment.
pub fn finite_parts<'a>(env: &'a Env, spec: &RefPolicySpec) -> Result<(&'a dyn FiniteMdp, TabularPolicy)> {
    let mdp = env
        .as_finite()
        .ok_or_else(|| Error::Unsupported(format!("exact oracles need a finite environment, got {}", env.id())))?;
    let policy = env
        .ref_policy(spec)?
        .as_tabular()
        .cloned()
        .expect("finite environments have tabular reference policies");
    Ok((mdp, policy))
}

/// Reference-policy return distributions of a built-in finite environment.
pub fn env_rtg_distribution(env: &Env, spec: &RefPolicySpec) -> Result<StepTable<Vec<DiscreteReturnDistribution>>> {
    let (mdp, policy) = finite_parts(env, spec)?;
    exact_rtg_distribution(mdp, &policy, env.gamma())
}

/// `(step, state, a, b)` where `first` strictly prefers `a` over `b` but
/// `second` strictly prefers `b` over `a`.
pub fn ranking_disagreements(
    first: &StepTable<Vec<f64>>,
    second: &StepTable<Vec<f64>>,
    tol: f64,
) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for (h, s, q1) in first.iter() {
        let Some(q2) = second.get(h, s) else { continue };
        for a in 0..q1.len() {
            for b in 0..q1.len() {
                if q1[a] > q1[b] + tol && q2[a] < q2[b] - tol {
                    out.push((h, s, a, b));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Chain2, EnvId};
    use std::f64::consts::E;

    fn chain_policy() -> TabularPolicy {
        Chain2.ref_policy(&RefPolicySpec::default())
    }

    #[test]
    fn chain2_first_step_distribution() {
        let z = exact_rtg_distribution(&Chain2, &chain_policy(), 1.0).unwrap();
        let row = z.get(0, 0).unwrap();
        assert_eq!(row[0].atoms(), &[(1.0, 0.5), (2.0, 0.5)]);
        assert_eq!(row[1].atoms(), &[(0.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn last_step_is_a_point_mass_at_the_reward() {
        let z = exact_rtg_distribution(&Chain2, &chain_policy(), 1.0).unwrap();
        assert_eq!(z.get(1, 1).unwrap()[0], DiscreteReturnDistribution::point(1.0));
        assert_eq!(z.get(1, 1).unwrap()[1], DiscreteReturnDistribution::point(0.0));
    }

    #[test]
    fn zero_discount_collapses_to_rewards() {
        let z = exact_rtg_distribution(&Chain2, &chain_policy(), 0.0).unwrap();
        for (_, _, row) in z.iter() {
            assert_eq!(row[0], DiscreteReturnDistribution::point(1.0));
            assert_eq!(row[1], DiscreteReturnDistribution::point(0.0));
        }
    }

    #[test]
    fn unreachable_cells_are_empty() {
        let z = exact_rtg_distribution(&Chain2, &chain_policy(), 1.0).unwrap();
        assert!(z.get(0, 1).is_none());
        assert!(z.get(1, 0).is_none());
        assert!(z.get(2, 2).is_none());
    }

    #[test]
    fn chain2_closed_forms() {
        let t = soft_value_iteration(&Chain2, &chain_policy(), 1.0, 1.0).unwrap();
        let expected = ((E * E + E) / 2.0).ln();
        assert!((t.q_star.get(0, 0).unwrap()[0] - expected).abs() < 1e-12);
        assert!((expected - 1.620_11).abs() < 1e-5);
        assert!((t.q_pi.get(0, 0).unwrap()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_point_lse() {
        let d = DiscreteReturnDistribution::from_atoms(vec![(0.0, 0.5), (1.0, 0.5)]);
        assert!((d.log_mean_exp(1.0) - ((1.0 + E) / 2.0).ln()).abs() < 1e-15);
        assert!((d.log_mean_exp(1.0) - 0.620_115).abs() < 1e-6);
    }

    #[test]
    fn deterministic_return_is_its_own_q_star() {
        let d = DiscreteReturnDistribution::point(0.75);
        for eta in [1e-4, 0.1, 1.0, 1e3] {
            assert!((d.log_mean_exp(eta) - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_limits_on_chain2() {
        let hot = soft_value_iteration(&Chain2, &chain_policy(), 1e6, 1.0).unwrap();
        assert!((hot.v_star.get(0, 0).unwrap() - 1.0).abs() < 1e-3);
        let cold = soft_value_iteration(&Chain2, &chain_policy(), 1e-6, 1.0).unwrap();
        assert!((cold.v_star.get(0, 0).unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn merging_joins_near_equal_atoms() {
        let d = DiscreteReturnDistribution::from_atoms(vec![(1.0, 0.25), (1.0 + 1e-14, 0.25), (0.0, 0.5), (3.0, 0.0)]);
        assert_eq!(d.atoms().len(), 2);
        assert_eq!(d.atoms()[1].1, 0.5);
    }

    #[test]
    fn continuous_envs_are_unsupported() {
        let env = Env::new(EnvId::BimodalBandit);
        assert!(matches!(
            OracleTables::for_env(&env, &RefPolicySpec::default(), 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn text_export_lists_every_entry() {
        let t = OracleTables::for_env(&Env::new(EnvId::Chain2), &RefPolicySpec::default(), 1.0).unwrap();
        let text = t.to_text();
        assert_eq!(text.lines().filter(|l| l.starts_with("q ")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 2);
        assert!(text.contains("q 0 0 0 1.620114"));
    }
}
