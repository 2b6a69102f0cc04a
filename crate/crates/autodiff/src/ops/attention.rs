//! Fused multi-head self-attention.
//!
//! When gradients are recorded the `L x L` probability matrices of every
//! head are kept for backward; inference uses one scratch matrix.

use std::rc::Rc;

use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::kernels::{exp_nonpositive, gemm};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    len: usize,
    channels: usize,
    heads: usize,
}

impl Dims {
    fn from_shape(shape: &[usize], heads: usize) -> Result<Self> {
        if shape.len() != 3 || shape[2] % 3 != 0 {
            return Err(invalid(
                "attention",
                format!("expected packed [B, L, 3C] projections, got {shape:?}"),
            ));
        }
        let channels = shape[2] / 3;
        if heads == 0 || channels % heads != 0 {
            return Err(invalid(
                "attention",
                format!("{channels} channels do not split into {heads} heads"),
            ));
        }
        Ok(Self {
            batch: shape[0],
            len: shape[1],
            channels,
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    /// Offsets of the query, key and value blocks of head `h` in batch `b`.
    fn offsets(&self, b: usize, h: usize) -> (usize, usize, usize) {
        let base = b * self.len * 3 * self.channels + h * self.head_dim();
        (base, base + self.channels, base + 2 * self.channels)
    }
}

/// Copies the `hd`-wide block at `offset` of each of `l` rows (stride `rs`)
/// into a `[hd, l]` column-major buffer.
fn gather_transposed(x: &[f64], offset: usize, l: usize, hd: usize, rs: usize, out: &mut [f64]) {
    for j in 0..l {
        for e in 0..hd {
            out[e * l + j] = x[offset + j * rs + e];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-softmax probabilities `P = softmax(scale * Q K^T)` of one head.
/// Head widths are small, so scores are built as `hd` axpys per row over
/// transposed keys rather than through a packed matrix product.
fn head_probs(qkv: &[f64], d: &Dims, b: usize, h: usize, p: &mut [f64]) {
    let (l, hd, rs) = (d.len, d.head_dim(), 3 * d.channels);
    let (qo, ko, _) = d.offsets(b, h);
    let s = d.scale();
    let mut kt = vec![0.0; hd * l];
    gather_transposed(qkv, ko, l, hd, rs, &mut kt);
    for (i, row) in p.chunks_exact_mut(l).enumerate() {
        row.fill(0.0);
        for (e, &q) in qkv[qo + i * rs..qo + i * rs + hd].iter().enumerate() {
            let q = q * s;
            for (r, &k) in row.iter_mut().zip(&kt[e * l..(e + 1) * l]) {
                *r += q * k;
            }
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v -= m);
        exp_nonpositive(row);
        let inv = 1.0 / row.iter().sum::<f64>();
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// `out[i, e] = sum_j p[i, j] v[j, e]` for one head, writing rows of stride `c`.
fn head_values(p: &[f64], qkv: &[f64], d: &Dims, b: usize, h: usize, out: &mut [f64]) {
    let (l, hd, c, rs) = (d.len, d.head_dim(), d.channels, 3 * d.channels);
    let (_, _, vo) = d.offsets(b, h);
    let mut vt = vec![0.0; hd * l];
    gather_transposed(qkv, vo, l, hd, rs, &mut vt);
    for (i, row) in p.chunks_exact(l).enumerate() {
        for e in 0..hd {
            out[i * c + e] = dot(row, &vt[e * l..(e + 1) * l]);
        }
    }
}

/// Attention probabilities `[B, H, L, L]` for packed projections `[B, L, 3C]`.
pub fn attention_weights(qkv: &Tensor, heads: usize) -> Result<Tensor> {
    let d = Dims::from_shape(qkv.shape(), heads)?;
    let ll = d.len * d.len;
    let mut out = vec![0.0; d.batch * heads * ll];
    for b in 0..d.batch {
        for h in 0..heads {
            let at = (b * heads + h) * ll;
            head_probs(qkv.data(), &d, b, h, &mut out[at..at + ll]);
        }
    }
    Tensor::new(vec![d.batch, heads, d.len, d.len], out)
}

impl<'g> Var<'g> {
    /// Scaled dot-product self-attention. `self` packs queries, keys and
    /// values as `[B, L, 3C]` (in that order along the last axis); each of
    /// the `heads` heads uses a contiguous `C / heads` slice of each. The
    /// output is `[B, L, C]` with heads concatenated.
    pub fn self_attention(&self, heads: usize) -> Result<Var<'g>> {
        let qkv = self.value();
        let d = Dims::from_shape(qkv.shape(), heads)?;
        let (l, c, hd, rs) = (d.len, d.channels, d.head_dim(), 3 * d.channels);
        let ll = l * l;
        // Probabilities are kept for backward only when a gradient can flow.
        let keep = self.graph.is_recording() && self.requires_grad();
        let mut probs = vec![0.0; if keep { d.batch * heads * ll } else { ll }];
        let mut out = vec![0.0; d.batch * l * c];
        for b in 0..d.batch {
            for h in 0..heads {
                let at = if keep { (b * heads + h) * ll } else { 0 };
                let p = &mut probs[at..at + ll];
                head_probs(qkv.data(), &d, b, h, p);
                head_values(p, qkv.data(), &d, b, h, &mut out[b * l * c + h * hd..]);
            }
        }
        let out = Rc::new(Tensor::new(vec![d.batch, l, c], out)?);
        let o = out.clone();
        Ok(self.graph.record("self_attention", out, &[*self], move |g, _| {
            let x = qkv.data();
            let mut dx = vec![0.0; x.len()];
            let mut dp = vec![0.0; ll];
            let mut rowdot = vec![0.0; l];
            for b in 0..d.batch {
                for h in 0..heads {
                    let at = (b * heads + h) * ll;
                    let p = &probs[at..at + ll];
                    let (qo, ko, vo) = d.offsets(b, h);
                    let oo = b * l * c + h * hd;
                    let go = &g.data()[oo..];
                    // dV = P^T dO
                    gemm(l, l, hd, 1.0, p, 1, l, go, c, 1, 0.0, &mut dx[vo..], rs, 1);
                    // dP = dO V^T
                    gemm(l, hd, l, 1.0, go, c, 1, &x[vo..], 1, rs, 0.0, &mut dp, l, 1);
                    for (i, r) in rowdot.iter_mut().enumerate() {
                        let (gr, or) = (&g.data()[oo + i * c..oo + i * c + hd], &o.data()[oo + i * c..oo + i * c + hd]);
                        *r = gr.iter().zip(or).map(|(a, b)| a * b).sum();
                    }
                    // dS = P (dP - rowdot), stored in dp
                    for i in 0..l {
                        for j in 0..l {
                            dp[i * l + j] = p[i * l + j] * (dp[i * l + j] - rowdot[i]);
                        }
                    }
                    let s = d.scale();
                    gemm(l, l, hd, s, &dp, l, 1, &x[ko..], rs, 1, 0.0, &mut dx[qo..], rs, 1);
                    gemm(l, l, hd, s, &dp, 1, l, &x[qo..], rs, 1, 0.0, &mut dx[ko..], rs, 1);
                }
            }
            vec![Some(Tensor::new(qkv.shape().to_vec(), dx).expect("shape"))]
        }))
    }
}
