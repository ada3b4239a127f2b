//! Central finite-difference verification of analytic gradients.

use super::{Graph, Real, Tensor, Var};
use crate::error::Result;
use crate::exec;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step `h` in `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub abs_floor: f64,
    /// Check at most this many evenly spaced coordinates per input.
    pub max_coords_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-6,
            abs_floor: 1e-8,
            max_coords_per_input: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, flat coordinate)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Checks the gradient of the scalar built by `f` with respect to every
/// tensor in `inputs`. `f` receives the inputs as graph leaves.
pub fn gradient_check<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var> + Sync,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).data()[0].to_f64())
    };
    compare_gradients(eval, &analytic, inputs, opts)
}

/// Compares supplied analytic gradients against central differences of `eval`.
pub fn compare_gradients<T, E>(
    eval: E,
    analytic: &[Tensor<T>],
    inputs: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    E: Fn(&[Tensor<T>]) -> Result<f64> + Sync,
{
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.numel();
        match opts.max_coords_per_input {
            Some(m) if m < n => {
                coords.extend((0..m).map(|j| (i, j * n / m)));
            }
            _ => coords.extend((0..n).map(|j| (i, j))),
        }
    }

    let h = opts.step;
    let errors = exec::map_indexed(coords.len(), |c| -> Result<(f64, f64)> {
        let (i, j) = coords[c];
        let mut xs = inputs.to_vec();
        let x0 = xs[i].data()[j];
        xs[i].data_mut()[j] = T::from_f64(x0.to_f64() + h);
        let plus = eval(&xs)?;
        xs[i].data_mut()[j] = T::from_f64(x0.to_f64() - h);
        let minus = eval(&xs)?;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i].data()[j].to_f64();
        let abs = (a - numeric).abs();
        let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
        Ok((abs / denom, abs))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: coords.len(),
        tolerance: opts.tolerance,
    };
    for (c, e) in errors.into_iter().enumerate() {
        let (rel, abs) = e?;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst = Some(coords[c]);
        }
    }
    Ok(report)
}
