use ndarray::{Array2, ArrayView2};

use super::{grad, Mlp};
use crate::error::Result;

/// Worst-case disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
}

/// Compare [`grad`] against central finite differences on every parameter.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
/// with `floor = 1e-6`, so entries that are zero up to round-off do not blow up.
pub fn finite_difference_check<L>(
    mlp: &Mlp<f64>,
    input: ArrayView2<f64>,
    loss_fn: L,
    eps: f64,
) -> Result<GradCheckReport>
where
    L: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    let (_, analytic) = grad(mlp, input, &loss_fn)?;
    let mut probe = mlp.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
    };
    let n_tensors = analytic.len();
    for ti in 0..n_tensors {
        let len = analytic[ti].len();
        for k in 0..len {
            let original = *probe.tensors_mut()[ti].iter_mut().nth(k).unwrap();
            let eval = |value: f64, probe: &mut Mlp<f64>| -> Result<f64> {
                *probe.tensors_mut()[ti].iter_mut().nth(k).unwrap() = value;
                let out = probe.forward(input)?;
                Ok(loss_fn(out.view()).0)
            };
            let plus = eval(original + eps, &mut probe)?;
            let minus = eval(original - eps, &mut probe)?;
            eval(original, &mut probe)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = *analytic[ti].iter().nth(k).unwrap();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
            report.max_absolute_error = report.max_absolute_error.max(abs);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
