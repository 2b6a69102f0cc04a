use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::kernels::{irfft_rows, irfft_rows_adjoint, rfft_rows, rfft_rows_adjoint};
use crate::tensor::Tensor;

impl<'g> Var<'g> {
    /// Un-normalised one-sided DFT of the last axis: `[..., n] -> [..., 2, n/2+1]`
    /// with real parts before imaginary parts.
    pub fn rfft(&self) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let n = *shape.last().ok_or_else(|| invalid("rfft", "scalar input"))?;
        if n == 0 {
            return Err(invalid("rfft", "empty last axis"));
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend([2, n / 2 + 1]);
        let out = Tensor::new(out_shape, rfft_rows(a.data(), n))?;
        Ok(self.graph.record("rfft", out, &[*self], move |g, _| {
            vec![Some(Tensor::new(shape.clone(), rfft_rows_adjoint(g.data(), n)).expect("shape"))]
        }))
    }

    /// Inverse of [`Var::rfft`] for real signals of length `n`:
    /// `[..., 2, n/2+1] -> [..., n]`. The imaginary parts of the DC and
    /// Nyquist bins are ignored.
    pub fn irfft(&self, n: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let r = shape.len();
        if n == 0 || r < 2 || shape[r - 2] != 2 || shape[r - 1] != n / 2 + 1 {
            return Err(invalid(
                "irfft",
                format!("shape {shape:?} is not a packed spectrum for length {n}"),
            ));
        }
        let mut out_shape = shape[..r - 2].to_vec();
        out_shape.push(n);
        let out = Tensor::new(out_shape, irfft_rows(a.data(), n))?;
        Ok(self.graph.record("irfft", out, &[*self], move |g, _| {
            vec![Some(Tensor::new(shape.clone(), irfft_rows_adjoint(g.data(), n)).expect("shape"))]
        }))
    }
}
