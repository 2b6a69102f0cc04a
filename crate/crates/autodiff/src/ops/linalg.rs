use crate::error::{mismatch, Result};
use crate::graph::Var;
use crate::kernels::gemm;
use crate::tensor::Tensor;

impl<'g> Var<'g> {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.data(), k, 1, b.data(), n, 1, 0.0, &mut c, n, 1);
        let out = Tensor::new(vec![m, n], c)?;
        Ok(self.graph.record("matmul", out, &[*self, *other], move |g, needs| {
            // dA = G B^T, dB = A^T G
            let da = needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g.data(), n, 1, b.data(), 1, n, 0.0, &mut d, k, 1);
                Tensor::new(vec![m, k], d).expect("shape")
            });
            let db = needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, 1.0, a.data(), 1, k, g.data(), n, 1, 0.0, &mut d, n, 1);
                Tensor::new(vec![k, n], d).expect("shape")
            });
            vec![da, db]
        }))
    }

    /// Affine map over the last axis: `x [..., Cin] @ w [Cin, Cout] + b [Cout]`.
    pub fn linear(&self, weight: &Var<'g>, bias: Option<&Var<'g>>) -> Result<Var<'g>> {
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape().to_vec(), w.shape().to_vec());
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(mismatch("linear", &sx, &sw));
        }
        let (cin, cout) = (sw[0], sw[1]);
        let rows = x.len() / cin;
        let bias_val = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [cout] {
                    return Err(mismatch("linear", &[cout], bv.shape()));
                }
                Some(bv)
            }
            None => None,
        };
        let mut y = vec![0.0; rows * cout];
        if let Some(bv) = &bias_val {
            for r in 0..rows {
                y[r * cout..(r + 1) * cout].copy_from_slice(bv.data());
            }
        }
        gemm(rows, cin, cout, 1.0, x.data(), cin, 1, w.data(), cout, 1, 1.0, &mut y, cout, 1);
        let mut out_shape = sx.clone();
        *out_shape.last_mut().expect("rank >= 1") = cout;
        let out = Tensor::new(out_shape, y)?;
        let mut parents = vec![*self, *weight];
        if let Some(b) = bias {
            parents.push(*b);
        }
        let has_bias = bias.is_some();
        Ok(self.graph.record("linear", out, &parents, move |g, needs| {
            let dx = needs[0].then(|| {
                let mut d = vec![0.0; rows * cin];
                gemm(rows, cout, cin, 1.0, g.data(), cout, 1, w.data(), 1, cout, 0.0, &mut d, cin, 1);
                Tensor::new(sx.clone(), d).expect("shape")
            });
            let dw = needs[1].then(|| {
                let mut d = vec![0.0; cin * cout];
                gemm(cin, rows, cout, 1.0, x.data(), 1, cin, g.data(), cout, 1, 0.0, &mut d, cout, 1);
                Tensor::new(vec![cin, cout], d).expect("shape")
            });
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut d = vec![0.0; cout];
                    for row in g.data().chunks_exact(cout) {
                        for (s, v) in d.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    Tensor::new(vec![cout], d).expect("shape")
                }));
            }
            grads
        }))
    }
}
