//! Minimal differentiable substrate: MLPs with optional layer normalisation,
//! hand-written reverse-mode gradients, Adam, Polyak averaging and a
//! finite-difference checker.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for gradient verification.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::Rng as _;

use crate::rng::Rng;

pub use adam::{polyak_update, AdamConfig, AdamState};
pub(crate) use checkpoint::{read_block, Cursor};
pub use checkpoint::{read_mlp, read_mlp_file, write_mlp, write_mlp_file, Dtype};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use mlp::{grad, Activation, Gradients, LayerNorm, Mlp, MlpCache, MlpSpec};

/// Floating point element type usable by the substrate.
pub trait Real: NdFloat + FromPrimitive + Default {
    const DTYPE: Dtype;

    fn standard_normal(rng: &mut Rng) -> Self;

    fn unit_uniform(rng: &mut Rng) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn to_le(self, out: &mut Vec<u8>);

    fn from_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn standard_normal(rng: &mut Rng) -> Self {
        crate::rng::normal::<f32>(rng)
    }

    fn unit_uniform(rng: &mut Rng) -> Self {
        rng.gen::<f32>()
    }

    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn standard_normal(rng: &mut Rng) -> Self {
        crate::rng::normal::<f64>(rng)
    }

    fn unit_uniform(rng: &mut Rng) -> Self {
        rng.gen::<f64>()
    }

    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
