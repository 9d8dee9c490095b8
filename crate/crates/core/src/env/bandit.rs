//! One-step bandit on `[-3, 3]` paying 1 inside `[-2.5, -1.5]` or
//! `[1.75, 2.25]`.

use rand::Rng as _;

use super::RefPolicySpec;
use crate::rng::{normal, Rng};

pub(crate) const LOW: f64 = -3.0;
pub(crate) const HIGH: f64 = 3.0;

/// Rewarding intervals, wide one first.
pub const INTERVALS: [(f64, f64); 2] = [(-2.5, -1.5), (1.75, 2.25)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BimodalBandit;

impl BimodalBandit {
    pub fn reward(&self, action: f64) -> f64 {
        if INTERVALS.iter().any(|&(lo, hi)| (lo..=hi).contains(&action)) {
            1.0
        } else {
            0.0
        }
    }
}

/// Two Gaussian modes centred on the rewarding intervals, clipped to the
/// action range.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture1d {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub std: f64,
}

impl GaussianMixture1d {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let k = if rng.gen::<f64>() < self.weights[0] { 0 } else { 1 };
        (self.means[k] + self.std * normal::<f64>(rng)).clamp(LOW, HIGH)
    }
}

pub(crate) fn ref_mixture(spec: &RefPolicySpec) -> GaussianMixture1d {
    GaussianMixture1d {
        weights: [spec.optimal_weight, spec.detour_weight],
        means: [-2.0, 2.0],
        std: 0.35,
    }
}
