//! Central finite-difference checks of analytic gradients.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute terms; below it the
/// central difference is dominated by rounding.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Outcome of [`check_gradients`] for one input.
#[derive(Debug, Clone)]
pub struct InputCheck {
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|, SCALE_FLOOR)`
    /// over the checked elements.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub inputs: Vec<InputCheck>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

/// Evenly spaced element indices, at most `limit` of `n`.
pub fn spread_indices(n: usize, limit: usize) -> Vec<usize> {
    if limit >= n {
        return (0..n).collect();
    }
    (0..limit).map(|i| i * n / limit).collect()
}

/// Compares gradients of the scalar `f(inputs)` from [`Graph::backward`]
/// against central differences with step `h`. At most `limit` elements of
/// each input are perturbed.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, limit: usize, f: F) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let out = f(&graph, &vars)?;
    graph.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| graph.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let g = Graph::inference();
        let vs: Vec<Var<'_>> = probe.iter().map(|t| g.input(t.clone())).collect();
        let y = f(&g, &vs)?;
        let v = y.item()?;
        if !v.is_finite() {
            return Err(AutodiffError::Numerical(format!("non-finite objective {v}")));
        }
        Ok(v)
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut checks = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let idx = spread_indices(input.len(), limit);
        for &j in &idx {
            let x0 = input.data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel_error = max_diff / scale.max(SCALE_FLOOR);
        checks.push(InputCheck {
            rel_error,
            max_abs_error: max_diff,
            checked: idx.len(),
        });
    }
    Ok(GradCheck { inputs: checks })
}
