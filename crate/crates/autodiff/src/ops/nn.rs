use std::rc::Rc;

use crate::error::{invalid, mismatch, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Variance floor of [`Var::layer_stats_norm`].
pub const NORM_EPS: f64 = 1e-5;

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'g> Var<'g> {
    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut y = vec![0.0; a.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| a.data()[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..len {
                    let e = (a.data()[at(j)] - m).exp();
                    y[at(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    y[at(j)] /= s;
                }
            }
        }
        let y = Rc::new(Tensor::new(shape, y)?);
        let yc = y.clone();
        Ok(self.graph.record("softmax", y, &[*self], move |g, _| {
            let mut dx = vec![0.0; yc.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..len).map(|j| g.data()[at(j)] * yc.data()[at(j)]).sum();
                    for j in 0..len {
                        dx[at(j)] = yc.data()[at(j)] * (g.data()[at(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(yc.shape().to_vec(), dx).expect("shape"))]
        }))
    }

    /// Normalises to zero mean and unit (biased) variance over `axes`, with
    /// no learnable affine part.
    pub fn layer_stats_norm(&self, axes: &[usize]) -> Result<Var<'g>> {
        let rank = self.with_value(|t| t.rank());
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() || sorted.len() != axes.len() || sorted[sorted.len() - 1] >= rank {
            return Err(invalid(
                "layer_stats_norm",
                format!("bad axis set {axes:?} for rank {rank}"),
            ));
        }
        let k = sorted.len();
        if sorted.iter().enumerate().all(|(i, &a)| a == rank - k + i) {
            return self.norm_trailing(k);
        }
        let mut perm: Vec<usize> = (0..rank).filter(|a| !sorted.contains(a)).collect();
        perm.extend(&sorted);
        let mut inv = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.permute(&perm)?.norm_trailing(k)?.permute(&inv)
    }

    fn norm_trailing(&self, k: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let group: usize = shape[shape.len() - k..].iter().product();
        if group == 0 {
            return Err(invalid("layer_stats_norm", "empty normalisation group"));
        }
        let mut y = vec![0.0; a.len()];
        let mut inv_std = Vec::with_capacity(a.len() / group);
        for (src, dst) in a.data().chunks_exact(group).zip(y.chunks_exact_mut(group)) {
            let mean = src.iter().sum::<f64>() / group as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * r;
            }
            inv_std.push(r);
        }
        let y = Rc::new(Tensor::new(shape, y)?);
        let yc = y.clone();
        Ok(self.graph.record("layer_stats_norm", y, &[*self], move |g, _| {
            let mut dx = vec![0.0; yc.len()];
            let n = group as f64;
            for (((gs, ys), d), r) in g
                .data()
                .chunks_exact(group)
                .zip(yc.data().chunks_exact(group))
                .zip(dx.chunks_exact_mut(group))
                .zip(&inv_std)
            {
                let gm = gs.iter().sum::<f64>() / n;
                let gym = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / n;
                for ((d, g), y) in d.iter_mut().zip(gs).zip(ys) {
                    *d = r * (g - gm - y * gym);
                }
            }
            vec![Some(Tensor::new(yc.shape().to_vec(), dx).expect("shape"))]
        }))
    }

    /// Per-feature `x * gamma + beta` over the last axis.
    pub fn scale_shift(&self, gamma: &Var<'g>, beta: &Var<'g>) -> Result<Var<'g>> {
        let (x, ga, be) = (self.value(), gamma.value(), beta.value());
        let c = *x.shape().last().ok_or_else(|| invalid("scale_shift", "scalar input"))?;
        if ga.shape() != [c] || be.shape() != [c] {
            return Err(mismatch("scale_shift", x.shape(), ga.shape()));
        }
        let mut y = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(c) {
            y.extend(row.iter().zip(ga.data()).zip(be.data()).map(|((v, g), b)| v * g + b));
        }
        let out = Tensor::new(x.shape().to_vec(), y)?;
        Ok(self.graph.record("scale_shift", out, &[*self, *gamma, *beta], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut d = Vec::with_capacity(g.len());
                for row in g.data().chunks_exact(c) {
                    d.extend(row.iter().zip(ga.data()).map(|(g, s)| g * s));
                }
                Tensor::new(x.shape().to_vec(), d).expect("shape")
            });
            let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
            if needs[1] || needs[2] {
                for (grow, xrow) in g.data().chunks_exact(c).zip(x.data().chunks_exact(c)) {
                    for j in 0..c {
                        dg[j] += grow[j] * xrow[j];
                        db[j] += grow[j];
                    }
                }
            }
            vec![
                dx,
                needs[1].then(|| Tensor::new(vec![c], dg).expect("shape")),
                needs[2].then(|| Tensor::new(vec![c], db).expect("shape")),
            ]
        }))
    }
}
