use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};
use crate::rng::Rng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh approximation of GELU
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Gelu => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Gelu),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Gelu => {
                // 0.5 * (1 + tanh(y)) == sigmoid(2y); exp is much cheaper than tanh.
                let inner = F::lit(GELU_C) * (x + F::lit(GELU_K) * x * x * x);
                x / (F::one() + (-(inner + inner)).exp())
            }
        }
    }

    fn derivative<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Gelu => {
                let c = F::lit(GELU_C);
                let k = F::lit(GELU_K);
                let inner = c * (x + k * x * x * x);
                let sig = F::one() / (F::one() + (-(inner + inner)).exp());
                let slope = c * (F::one() + F::lit(3.0) * k * x * x);
                sig + (x + x) * sig * (F::one() - sig) * slope
            }
        }
    }
}

/// Layer widths and per-layer options of an MLP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// One flag per hidden layer.
    pub layer_norm: Vec<bool>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Gelu,
            layer_norm: vec![false; hidden.len()],
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Layer normalisation after every hidden linear layer.
    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = vec![on; self.hidden.len()];
        self
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.layer_norm.len() != self.hidden.len() {
            return Err(Error::Shape(format!(
                "{} layer-norm flags for {} hidden layers",
                self.layer_norm.len(),
                self.hidden.len()
            )));
        }
        if self.widths().contains(&0) {
            return Err(Error::Shape("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<F> {
    pub gain: Array1<F>,
    pub bias: Array1<F>,
}

/// Fully connected network. Weights are stored `(fan_in, fan_out)` so a
/// batch `X` of shape `(batch, fan_in)` maps to `X W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    spec: MlpSpec,
    weights: Vec<Array2<F>>,
    biases: Vec<Array1<F>>,
    norms: Vec<Option<LayerNorm<F>>>,
}

/// Parameter gradients, aligned with [`Mlp::tensors`].
pub type Gradients<F> = Vec<ArrayD<F>>;

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug)]
pub struct MlpCache<F> {
    inputs: Vec<Array2<F>>,
    normalized: Vec<Option<(Array2<F>, Array1<F>)>>,
    pre_activations: Vec<Array2<F>>,
}

impl<F: Real> Mlp<F> {
    /// Uniform fan-in initialisation: every weight and bias is drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = F::one() / F::from_usize(fan_in).unwrap().sqrt();
            let mut draw = || (F::lit(2.0) * F::unit_uniform(rng) - F::one()) * bound;
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw);
            let b = Array1::from_shape_simple_fn(fan_out, &mut draw);
            weights.push(w);
            biases.push(b);
        }
        let norms = spec
            .hidden
            .iter()
            .zip(&spec.layer_norm)
            .map(|(&width, &on)| {
                on.then(|| LayerNorm {
                    gain: Array1::ones(width),
                    bias: Array1::zeros(width),
                })
            })
            .collect();
        Ok(Mlp {
            spec,
            weights,
            biases,
            norms,
        })
    }

    /// Network with every parameter set to zero (layer-norm gains included).
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let weights = widths
            .windows(2)
            .map(|p| Array2::zeros((p[0], p[1])))
            .collect();
        let biases = widths[1..].iter().map(|&w| Array1::zeros(w)).collect();
        let norms = spec
            .hidden
            .iter()
            .zip(&spec.layer_norm)
            .map(|(&width, &on)| {
                on.then(|| LayerNorm {
                    gain: Array1::zeros(width),
                    bias: Array1::zeros(width),
                })
            })
            .collect();
        Ok(Mlp {
            spec,
            weights,
            biases,
            norms,
        })
    }

    /// Assemble a network from explicit layers. `weights[i]` is `(fan_in, fan_out)`.
    pub fn from_layers(
        spec: MlpSpec,
        weights: Vec<Array2<F>>,
        biases: Vec<Array1<F>>,
        norms: Vec<Option<LayerNorm<F>>>,
    ) -> Result<Self> {
        let mut mlp = Mlp::zeros(spec)?;
        if weights.len() != mlp.weights.len() || biases.len() != mlp.biases.len() {
            return Err(Error::Shape("layer count does not match spec".into()));
        }
        if norms.len() != mlp.norms.len() {
            return Err(Error::Shape("norm count does not match spec".into()));
        }
        for (dst, src) in mlp.weights.iter_mut().zip(weights) {
            if dst.dim() != src.dim() {
                return Err(Error::Shape(format!("weight {:?} vs {:?}", src.dim(), dst.dim())));
            }
            *dst = src;
        }
        for (dst, src) in mlp.biases.iter_mut().zip(biases) {
            if dst.len() != src.len() {
                return Err(Error::Shape(format!("bias {} vs {}", src.len(), dst.len())));
            }
            *dst = src;
        }
        for (dst, src) in mlp.norms.iter_mut().zip(norms) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) if d.gain.len() == s.gain.len() && d.bias.len() == s.bias.len() => {
                    *d = s
                }
                (None, None) => {}
                _ => return Err(Error::Shape("layer-norm layout does not match spec".into())),
            }
        }
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output
    }

    pub fn weights(&self) -> &[Array2<F>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<F>] {
        &self.biases
    }

    /// Every parameter tensor in a fixed order: per layer `W, b`, followed
    /// by `gain, bias` when that layer is normalised.
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut out = Vec::new();
        for i in 0..self.weights.len() {
            out.push(self.weights[i].view().into_dyn());
            out.push(self.biases[i].view().into_dyn());
            if let Some(Some(ln)) = self.norms.get(i) {
                out.push(ln.gain.view().into_dyn());
                out.push(ln.bias.view().into_dyn());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.view_mut().into_dyn());
            out.push(b.view_mut().into_dyn());
            if let Some(Some(ln)) = norms.next() {
                out.push(ln.gain.view_mut().into_dyn());
                out.push(ln.bias.view_mut().into_dyn());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &ArrayView2<F>) -> Result<()> {
        if input.ncols() != self.spec.input {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                input.ncols(),
                self.spec.input
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&input)?;
        let last = self.weights.len() - 1;
        let mut h = input.dot(&self.weights[0]) + &self.biases[0];
        if last == 0 {
            return Ok(h);
        }
        for i in 0..last {
            if let Some(ln) = &self.norms[i] {
                h = layer_norm_forward(h, ln).0;
            }
            let act = self.spec.activation;
            h.mapv_inplace(|v| act.apply(v));
            h = h.dot(&self.weights[i + 1]) + &self.biases[i + 1];
        }
        Ok(h)
    }

    pub fn forward_cached(&self, input: ArrayView2<F>) -> Result<(Array2<F>, MlpCache<F>)> {
        self.check_input(&input)?;
        let n_layers = self.weights.len();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n_layers),
            normalized: Vec::with_capacity(n_layers - 1),
            pre_activations: Vec::with_capacity(n_layers - 1),
        };
        let mut h = input.to_owned();
        for i in 0..n_layers {
            let z = h.dot(&self.weights[i]) + &self.biases[i];
            cache.inputs.push(h);
            if i == n_layers - 1 {
                return Ok((z, cache));
            }
            let u = match &self.norms[i] {
                Some(ln) => {
                    let (u, xhat, inv_std) = layer_norm_forward(z, ln);
                    cache.normalized.push(Some((xhat, inv_std)));
                    u
                }
                None => {
                    cache.normalized.push(None);
                    z
                }
            };
            let act = self.spec.activation;
            h = u.mapv(|v| act.apply(v));
            cache.pre_activations.push(u);
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass: parameter gradients of a scalar loss whose derivative
    /// with respect to the network output is `d_out`.
    pub fn backward(&self, cache: &MlpCache<F>, d_out: ArrayView2<F>) -> Result<Gradients<F>> {
        let n_layers = self.weights.len();
        let batch = cache.inputs[0].nrows();
        if d_out.dim() != (batch, self.spec.output) {
            return Err(Error::Shape(format!(
                "output gradient {:?} but forward produced ({}, {})",
                d_out.dim(),
                batch,
                self.spec.output
            )));
        }
        let mut linear: Vec<(Array2<F>, Array1<F>)> = Vec::with_capacity(n_layers);
        let mut norm_grads: Vec<Option<(Array1<F>, Array1<F>)>> = vec![None; n_layers - 1];
        let mut delta = d_out.to_owned();
        for i in (0..n_layers).rev() {
            linear.push((cache.inputs[i].t().dot(&delta), delta.sum_axis(Axis(0))));
            if i == 0 {
                break;
            }
            let j = i - 1;
            let mut dh = delta.dot(&self.weights[i].t());
            let act = self.spec.activation;
            Zip::from(&mut dh)
                .and(&cache.pre_activations[j])
                .for_each(|d, &u| *d = *d * act.derivative(u));
            delta = match (&self.norms[j], &cache.normalized[j]) {
                (Some(ln), Some((xhat, inv_std))) => {
                    let (dz, dgain, dbias) = layer_norm_backward(dh, ln, xhat, inv_std);
                    norm_grads[j] = Some((dgain, dbias));
                    dz
                }
                _ => dh,
            };
        }
        linear.reverse();
        let mut out = Vec::new();
        for (i, (dw, db)) in linear.into_iter().enumerate() {
            out.push(dw.into_dyn());
            out.push(db.into_dyn());
            if let Some(Some((dg, dbias))) = norm_grads.get_mut(i).map(Option::take) {
                out.push(dg.into_dyn());
                out.push(dbias.into_dyn());
            }
        }
        Ok(out)
    }
}

fn layer_norm_forward<F: Real>(z: Array2<F>, ln: &LayerNorm<F>) -> (Array2<F>, Array2<F>, Array1<F>) {
    let width = F::from_usize(z.ncols()).unwrap();
    let eps = F::lit(LN_EPS);
    let mut xhat = z;
    let mut inv_std = Array1::zeros(xhat.nrows());
    for (mut row, s) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(F::zero(), |acc, &v| acc + v * v) / width;
        let inv = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * inv);
        *s = inv;
    }
    let out = &xhat * &ln.gain + &ln.bias;
    (out, xhat, inv_std)
}

fn layer_norm_backward<F: Real>(
    d_out: Array2<F>,
    ln: &LayerNorm<F>,
    xhat: &Array2<F>,
    inv_std: &Array1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let dgain = (&d_out * xhat).sum_axis(Axis(0));
    let dbias = d_out.sum_axis(Axis(0));
    let dxhat = d_out * &ln.gain;
    let width = F::from_usize(xhat.ncols()).unwrap();
    let mut dz = Array2::zeros(xhat.raw_dim());
    for (((mut out, g), x), &inv) in dz
        .outer_iter_mut()
        .zip(dxhat.outer_iter())
        .zip(xhat.outer_iter())
        .zip(inv_std.iter())
    {
        let sum_g = g.sum();
        let sum_gx = g.iter().zip(x.iter()).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
        for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(x.iter()) {
            *o = inv / width * (width * gi - sum_g - xi * sum_gx);
        }
    }
    (dz, dgain, dbias)
}

/// Loss value and parameter gradients for a scalar loss of the network output.
///
/// `loss_fn` receives the forward output and returns the loss together with
/// its derivative with respect to that output.
pub fn grad<F, L>(mlp: &Mlp<F>, input: ArrayView2<F>, loss_fn: L) -> Result<(F, Gradients<F>)>
where
    F: Real,
    L: FnOnce(ArrayView2<F>) -> (F, Array2<F>),
{
    let (out, cache) = mlp.forward_cached(input)?;
    let (loss, d_out) = loss_fn(out.view());
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {loss}")));
    }
    let grads = mlp.backward(&cache, d_out.view())?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::<f64>::zeros(MlpSpec::new(3, &[4, 4], 2)).unwrap();
        let out = mlp.forward(array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let spec = MlpSpec::new(3, &[], 3);
        let mlp = Mlp::from_layers(spec, vec![Array2::<f64>::eye(3)], vec![Array1::zeros(3)], vec![]).unwrap();
        let x = array![[0.25, -1.5, 7.0]];
        assert_eq!(mlp.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn seeded_two_layer_matches_hand_arithmetic() {
        let mut rng = seeded(11);
        let spec = MlpSpec::new(2, &[3], 1).with_activation(Activation::Relu);
        let mlp = Mlp::<f64>::init(spec, &mut rng).unwrap();
        let x = [0.7, -0.4];
        let (w0, b0, w1, b1) = (&mlp.weights[0], &mlp.biases[0], &mlp.weights[1], &mlp.biases[1]);
        let mut expected = b1[0];
        for j in 0..3 {
            let mut h = b0[j];
            for i in 0..2 {
                h += x[i] * w0[[i, j]];
            }
            expected += h.max(0.0) * w1[[j, 0]];
        }
        let out = mlp.forward(array![[x[0], x[1]]].view()).unwrap();
        assert!((out[[0, 0]] - expected).abs() < 1e-14);
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let mlp = Mlp::<f32>::zeros(MlpSpec::new(3, &[4], 1)).unwrap();
        let err = mlp.forward(Array2::zeros((2, 5)).view()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn half_squared_norm_at_zero_params_has_zero_gradient() {
        let mlp = Mlp::<f64>::zeros(MlpSpec::new(3, &[5, 5], 2).with_layer_norm(true)).unwrap();
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let (loss, grads) = grad(&mlp, x.view(), |out| {
            (0.5 * out.iter().map(|v| v * v).sum::<f64>(), out.to_owned())
        })
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_least_squares_gradient_is_residual_form() {
        // L = 1/(2n) * ||X w + b - y||^2  =>  dL/dw = X^T r / n, dL/db = sum(r) / n
        let spec = MlpSpec::new(2, &[], 1);
        let w = array![[0.3], [-0.2]];
        let b = array![0.1];
        let mlp = Mlp::from_layers(spec, vec![w.clone()], vec![b.clone()], vec![]).unwrap();
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let y = array![[1.0], [0.0], [-2.0]];
        let n = 3.0;
        let (_, grads) = grad(&mlp, x.view(), |out| {
            let r = &out - &y;
            (0.5 * r.iter().map(|v| v * v).sum::<f64>() / n, r / n)
        })
        .unwrap();
        let residual = x.dot(&w) + &b - &y;
        let dw = x.t().dot(&residual) / n;
        let db = residual.sum() / n;
        for (g, e) in grads[0].iter().zip(dw.iter()) {
            assert!((g - e).abs() < 1e-14);
        }
        assert!((grads[1][[0]] - db).abs() < 1e-14);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mlp = Mlp::<f64>::zeros(MlpSpec::new(1, &[2], 1)).unwrap();
        let err = grad(&mlp, array![[1.0]].view(), |out| (f64::NAN, out.to_owned())).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn gradient_layout_matches_tensors() {
        let mut rng = seeded(3);
        let spec = MlpSpec {
            input: 3,
            hidden: vec![4, 5],
            output: 2,
            activation: Activation::Gelu,
            layer_norm: vec![true, false],
        };
        let mlp = Mlp::<f64>::init(spec, &mut rng).unwrap();
        let x = Array2::from_elem((2, 3), 0.5);
        let (_, grads) = grad(&mlp, x.view(), |out| (out.sum(), Array2::ones(out.raw_dim()))).unwrap();
        let shapes: Vec<_> = mlp.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let gshapes: Vec<_> = grads.iter().map(|g| g.shape().to_vec()).collect();
        assert_eq!(shapes, gshapes);
    }
}
