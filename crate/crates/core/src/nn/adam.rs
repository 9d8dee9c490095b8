use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one network.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<ArrayD<F>>,
    second: Vec<ArrayD<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig, params: &Mlp<F>) -> Self {
        let zeros: Vec<ArrayD<F>> = params
            .tensors()
            .iter()
            .map(|t| ArrayD::zeros(t.raw_dim()))
            .collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[ArrayD<F>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[ArrayD<F>] {
        &self.second
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut Mlp<F>, grads: &Gradients<F>) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} gradients, {} moment slots",
                tensors.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (p, g) in tensors.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::one() - F::lit(c.beta1.powi(self.step as i32));
        let bc2 = F::one() - F::lit(c.beta2.powi(self.step as i32));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        for (((p, g), m), v) in tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// `target <- (1 - rho) * target + rho * online`, elementwise.
pub fn polyak_update<F: Real>(target: &mut Mlp<F>, online: &Mlp<F>, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InputDomain(format!("polyak coefficient {rho} outside [0, 1]")));
    }
    if target.spec() != online.spec() {
        return Err(Error::Shape("target and online networks differ in layout".into()));
    }
    let rho = F::lit(rho);
    let keep = F::one() - rho;
    for (mut t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
        Zip::from(&mut t).and(&o).for_each(|t, &o| *t = keep * *t + rho * o);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;
    use ndarray::{Array1, Array2};

    fn scalar_net(w: f64) -> Mlp<f64> {
        Mlp::from_layers(
            MlpSpec::new(1, &[], 1),
            vec![Array2::from_elem((1, 1), w)],
            vec![Array1::zeros(1)],
            vec![],
        )
        .unwrap()
    }

    fn scalar_grads(gw: f64) -> Gradients<f64> {
        vec![ArrayD::from_elem(vec![1, 1], gw), ArrayD::zeros(vec![1])]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net, &scalar_grads(0.37)).unwrap();
        let moved = 1.0 - net.weights()[0][[0, 0]];
        assert!((moved - 3e-4).abs() < 1e-9, "moved {moved}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut net = scalar_net(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net, &scalar_grads(1.0)).unwrap();
        let before = net.clone();
        let m_before = adam.first_moments()[0][[0, 0]];
        let v_before = adam.second_moments()[0][[0, 0]];
        adam.step(&mut net, &scalar_grads(0.0)).unwrap();
        // m decays but stays non-zero, so the parameter still moves; with a
        // fresh state zero gradients are an exact no-op.
        assert!((adam.first_moments()[0][[0, 0]] - 0.9 * m_before).abs() < 1e-15);
        assert!((adam.second_moments()[0][[0, 0]] - 0.999 * v_before).abs() < 1e-15);
        let mut fresh = scalar_net(0.5);
        let mut fresh_adam = AdamState::new(AdamConfig::default(), &fresh);
        fresh_adam.step(&mut fresh, &scalar_grads(0.0)).unwrap();
        assert_eq!(fresh, scalar_net(0.5));
        assert_ne!(before, net);
    }

    #[test]
    fn two_constant_steps_match_unrolled_recurrence() {
        let g = 0.8;
        let (lr, b1, b2, eps) = (3e-4, 0.9, 0.999, 1e-8);
        let mut w = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        let mut net = scalar_net(2.0);
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net, &scalar_grads(g)).unwrap();
        adam.step(&mut net, &scalar_grads(g)).unwrap();
        assert!((net.weights()[0][[0, 0]] - w).abs() < 1e-15);
    }

    #[test]
    fn gradient_scale_does_not_change_first_direction() {
        let mut a = scalar_net(1.0);
        let mut b = scalar_net(1.0);
        let mut sa = AdamState::new(AdamConfig::default(), &a);
        let mut sb = AdamState::new(AdamConfig::default(), &b);
        sa.step(&mut a, &scalar_grads(0.01)).unwrap();
        sb.step(&mut b, &scalar_grads(100.0)).unwrap();
        assert!((a.weights()[0][[0, 0]] - b.weights()[0][[0, 0]]).abs() < 1e-9);
    }

    #[test]
    fn polyak_examples() {
        let online = scalar_net(2.0);
        let mut t = scalar_net(0.0);
        polyak_update(&mut t, &online, 0.5).unwrap();
        assert_eq!(t.weights()[0][[0, 0]], 1.0);
        let mut t = scalar_net(0.0);
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        let mut t = scalar_net(0.3);
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, scalar_net(0.3));
        assert!(matches!(polyak_update(&mut t, &online, 1.5), Err(Error::InputDomain(_))));
    }
}
