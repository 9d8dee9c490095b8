//! Conditional flow matching with linear interpolants and forward-Euler sampling.
//!
//! A [`ConditionalFlowModel`] is an MLP whose input row is laid out as
//! `[sample (d) | time features | condition (c)]` and whose output is a
//! velocity in the sample space.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{grad, Activation, Gradients, Mlp, MlpSpec, Real};
use crate::rng::Rng;

/// How the scalar flow time enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    /// `t` itself as one input column.
    #[default]
    Scalar,
    /// `sin(pi 2^k t), cos(pi 2^k t)` for `k = 0..4`.
    Sinusoidal8,
}

impl TimeEncoding {
    pub fn width(self) -> usize {
        match self {
            TimeEncoding::Scalar => 1,
            TimeEncoding::Sinusoidal8 => 8,
        }
    }

    fn write<F: Real>(self, t: F, out: &mut [F]) {
        match self {
            TimeEncoding::Scalar => out[0] = t,
            TimeEncoding::Sinusoidal8 => {
                let pi = F::lit(std::f64::consts::PI);
                for k in 0..4 {
                    let freq = pi * F::lit((1u32 << k) as f64);
                    out[2 * k] = (freq * t).sin();
                    out[2 * k + 1] = (freq * t).cos();
                }
            }
        }
    }
}

/// Architecture of a velocity network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowNetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub time: TimeEncoding,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        FlowNetConfig {
            hidden: vec![64, 64],
            activation: Activation::Gelu,
            layer_norm: false,
            time: TimeEncoding::Scalar,
        }
    }
}

impl FlowNetConfig {
    pub fn build<F: Real>(&self, sample_dim: usize, cond_dim: usize, rng: &mut Rng) -> Result<ConditionalFlowModel<F>> {
        ConditionalFlowModel::new(
            sample_dim,
            cond_dim,
            &self.hidden,
            self.time,
            |spec| spec.with_activation(self.activation).with_layer_norm(self.layer_norm),
            rng,
        )
    }
}

/// Anything that yields a velocity for a batch of points at given times.
pub trait VelocityField<F: Real> {
    fn sample_dim(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// `x` is `(n, d)`, `t` has length `n`, `cond` is `(n, c)`.
    fn velocity(&self, x: ArrayView2<F>, t: ArrayView1<F>, cond: ArrayView2<F>) -> Result<Array2<F>>;
}

/// Velocity network `v(x, t | cond)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFlowModel<F> {
    pub net: Mlp<F>,
    sample_dim: usize,
    cond_dim: usize,
    time: TimeEncoding,
}

impl<F: Real> ConditionalFlowModel<F> {
    pub fn input_width(sample_dim: usize, cond_dim: usize, time: TimeEncoding) -> usize {
        sample_dim + time.width() + cond_dim
    }

    pub fn new(
        sample_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        time: TimeEncoding,
        configure: impl FnOnce(MlpSpec) -> MlpSpec,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spec = configure(MlpSpec::new(
            Self::input_width(sample_dim, cond_dim, time),
            hidden,
            sample_dim,
        ));
        Self::from_net(Mlp::init(spec, rng)?, sample_dim, cond_dim, time)
    }

    pub fn from_net(net: Mlp<F>, sample_dim: usize, cond_dim: usize, time: TimeEncoding) -> Result<Self> {
        if net.input_dim() != Self::input_width(sample_dim, cond_dim, time) || net.output_dim() != sample_dim {
            return Err(Error::Shape(format!(
                "network {}->{} does not fit sample dim {sample_dim}, cond dim {cond_dim}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(ConditionalFlowModel {
            net,
            sample_dim,
            cond_dim,
            time,
        })
    }

    pub fn time_encoding(&self) -> TimeEncoding {
        self.time
    }

    /// Network input rows for `(x, t, cond)`.
    pub fn assemble(&self, x: ArrayView2<F>, t: ArrayView1<F>, cond: ArrayView2<F>) -> Result<Array2<F>> {
        let n = x.nrows();
        if x.ncols() != self.sample_dim || t.len() != n || cond.nrows() != n || cond.ncols() != self.cond_dim {
            return Err(Error::Shape(format!(
                "flow input x {:?}, t {}, cond {:?} for sample dim {}, cond dim {}",
                x.dim(),
                t.len(),
                cond.dim(),
                self.sample_dim,
                self.cond_dim
            )));
        }
        let tw = self.time.width();
        let d = self.sample_dim;
        let mut input = Array2::zeros((n, d + tw + self.cond_dim));
        input.slice_mut(s![.., ..d]).assign(&x);
        for (mut row, &ti) in input.outer_iter_mut().zip(t.iter()) {
            let feats = row.slice_mut(s![d..d + tw]);
            self.time.write(ti, feats.into_slice().expect("row-major slice"));
        }
        input.slice_mut(s![.., d + tw..]).assign(&cond);
        Ok(input)
    }
}

impl<F: Real> VelocityField<F> for ConditionalFlowModel<F> {
    fn sample_dim(&self) -> usize {
        self.sample_dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn velocity(&self, x: ArrayView2<F>, t: ArrayView1<F>, cond: ArrayView2<F>) -> Result<Array2<F>> {
        let input = self.assemble(x, t, cond)?;
        self.net.forward(input.view())
    }
}

/// `(1 - t) x0 + t x1`.
pub fn interpolate<F: Real>(x0: &[F], x1: &[F], t: F) -> Result<Vec<F>> {
    if x0.len() != x1.len() {
        return Err(Error::Shape(format!("interpolating {} vs {} dims", x0.len(), x1.len())));
    }
    if !(t >= F::zero() && t <= F::one()) {
        return Err(Error::InputDomain(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(&a, &b)| (F::one() - t) * a + t * b)
        .collect())
}

/// Noise, times and interpolants for one flow-matching minibatch.
#[derive(Clone, Debug)]
pub struct InterpolantBatch<F> {
    pub x0: Array2<F>,
    pub t: Array1<F>,
    pub xt: Array2<F>,
    /// `x1 - x0`
    pub target: Array2<F>,
}

/// Draw `x0 ~ N(0, I)` (row-major, one row per data point) and then
/// `t ~ U[0, 1)` (one per row), in that order, and build the interpolants.
pub fn draw_interpolants<F: Real>(x1: ArrayView2<F>, rng: &mut Rng) -> InterpolantBatch<F> {
    let (n, d) = x1.dim();
    let x0 = Array2::from_shape_simple_fn((n, d), || F::standard_normal(rng));
    let t = Array1::from_shape_simple_fn(n, || F::unit_uniform(rng));
    let mut xt = Array2::zeros((n, d));
    for i in 0..n {
        let ti = t[i];
        for j in 0..d {
            xt[[i, j]] = (F::one() - ti) * x0[[i, j]] + ti * x1[[i, j]];
        }
    }
    let target = &x1 - &x0;
    InterpolantBatch { x0, t, xt, target }
}

/// Minibatch mean of `||pred - target||^2` and its gradient with respect to `pred`.
pub fn squared_error<F: Real>(pred: ArrayView2<F>, target: ArrayView2<F>) -> (F, Array2<F>) {
    let n = F::from_usize(pred.nrows().max(1)).unwrap();
    let diff = &pred - &target;
    let loss = diff.iter().fold(F::zero(), |acc, &v| acc + v * v) / n;
    (loss, diff * (F::lit(2.0) / n))
}

/// Flow-matching loss on data points `x1` with conditions `cond`, plus
/// gradients for the velocity network.
pub fn fm_loss<F: Real>(
    model: &ConditionalFlowModel<F>,
    cond: ArrayView2<F>,
    x1: ArrayView2<F>,
    rng: &mut Rng,
) -> Result<(F, Gradients<F>)> {
    let batch = draw_interpolants(x1, rng);
    let input = model.assemble(batch.xt.view(), batch.t.view(), cond)?;
    let (loss, grads) = grad(&model.net, input.view(), |pred| squared_error(pred, batch.target.view()))
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("flow-matching loss: {m}")),
            other => other,
        })?;
    Ok((loss, grads))
}

/// Integrate `dx/dt = v(x, t | cond)` from `t = 0` to `1` with `steps` forward
/// Euler steps, starting at the given points.
pub fn euler_integrate<F: Real, V: VelocityField<F> + ?Sized>(
    field: &V,
    mut x: Array2<F>,
    cond: ArrayView2<F>,
    steps: usize,
) -> Result<Array2<F>> {
    if steps == 0 {
        return Err(Error::InputDomain("Euler sampling needs at least one step".into()));
    }
    let dt = F::one() / F::from_usize(steps).unwrap();
    let n = x.nrows();
    for m in 0..steps {
        let t = Array1::from_elem(n, F::from_usize(m).unwrap() * dt);
        let v = field.velocity(x.view(), t.view(), cond)?;
        x.scaled_add(dt, &v);
    }
    Ok(x)
}

/// One sample per condition row: draw `x ~ N(0, I)` row-major, then integrate.
pub fn euler_sample<F: Real, V: VelocityField<F> + ?Sized>(
    field: &V,
    cond: ArrayView2<F>,
    steps: usize,
    rng: &mut Rng,
) -> Result<Array2<F>> {
    let x0 = Array2::from_shape_simple_fn((cond.nrows(), field.sample_dim()), || F::standard_normal(rng));
    euler_integrate(field, x0, cond, steps)
}

/// Repeat each condition row `k` times (row `i` becomes rows `i*k .. i*k+k`).
pub fn repeat_rows<F: Real>(cond: ArrayView2<F>, k: usize) -> Array2<F> {
    let mut out = Array2::zeros((cond.nrows() * k, cond.ncols()));
    for (i, row) in cond.outer_iter().enumerate() {
        for j in 0..k {
            out.row_mut(i * k + j).assign(&row);
        }
    }
    out
}

/// Analytic velocity fields, handy for tests and oracles.
pub mod fields {
    use super::*;

    /// `v(x, t) = c` everywhere.
    pub struct Constant<F>(pub Array1<F>);

    impl<F: Real> VelocityField<F> for Constant<F> {
        fn sample_dim(&self) -> usize {
            self.0.len()
        }

        fn cond_dim(&self) -> usize {
            0
        }

        fn velocity(&self, x: ArrayView2<F>, _t: ArrayView1<F>, _c: ArrayView2<F>) -> Result<Array2<F>> {
            Ok(Array2::from_shape_fn(x.raw_dim(), |(_, j)| self.0[j]))
        }
    }

    /// `v(x, t) = x` in `d` dimensions.
    pub struct Linear(pub usize);

    impl<F: Real> VelocityField<F> for Linear {
        fn sample_dim(&self) -> usize {
            self.0
        }

        fn cond_dim(&self) -> usize {
            0
        }

        fn velocity(&self, x: ArrayView2<F>, _t: ArrayView1<F>, _c: ArrayView2<F>) -> Result<Array2<F>> {
            Ok(x.to_owned())
        }
    }

    /// Exact conditional velocity transporting `N(0, 1)` to a point mass at `c`:
    /// `v(x, t) = (c - x) / (1 - t)`, with `t` clamped below `t_max`.
    pub struct PointMass<F> {
        pub at: F,
        pub t_max: F,
    }

    impl<F: Real> VelocityField<F> for PointMass<F> {
        fn sample_dim(&self) -> usize {
            1
        }

        fn cond_dim(&self) -> usize {
            0
        }

        fn velocity(&self, x: ArrayView2<F>, t: ArrayView1<F>, _c: ArrayView2<F>) -> Result<Array2<F>> {
            let mut v = x.to_owned();
            for (mut row, &ti) in v.axis_iter_mut(Axis(0)).zip(t.iter()) {
                let denom = F::one() - ti.min(self.t_max);
                row.mapv_inplace(|xi| (self.at - xi) / denom);
            }
            Ok(v)
        }
    }
}
