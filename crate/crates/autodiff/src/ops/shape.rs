use crate::error::{invalid, mismatch, Result};
use crate::graph::Var;
use crate::kernels::reflect_index;
use crate::tensor::{strides, Tensor};

/// Gathers `src` (of `shape`) into the axis order `axes`.
fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    let rank = out_shape.len();
    if rank == 0 {
        return (out_shape, src.to_vec());
    }
    // Odometer over the output index, innermost axis unrolled.
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (n_last, s_last) = (out_shape[last], perm_strides[last]);
    if n_last == 0 {
        return (out_shape, out);
    }
    while out.len() < total {
        let base: usize = (0..last).map(|d| idx[d] * perm_strides[d]).sum();
        for i in 0..n_last {
            out.push(src[base + i * s_last]);
        }
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

impl<'g> Var<'g> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let n: usize = shape.iter().product();
        if n != a.len() {
            return Err(mismatch("reshape", a.shape(), shape));
        }
        let src = a.shape().to_vec();
        let out = Tensor::new(shape.to_vec(), a.data().to_vec())?;
        Ok(self.graph.record("reshape", out, &[*self], move |g, _| {
            vec![Some(Tensor::new(src.clone(), g.data().to_vec()).expect("shape"))]
        }))
    }

    /// Generalised transpose: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let rank = a.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
            return Err(invalid(
                "permute",
                format!("{axes:?} is not a permutation of the axes of {:?}", a.shape()),
            ));
        }
        let (shape, data) = permute_data(a.data(), a.shape(), axes);
        let out = Tensor::new(shape.clone(), data)?;
        let inv = inverse_axes(axes);
        Ok(self.graph.record("permute", out, &[*self], move |g, _| {
            let (s, d) = permute_data(g.data(), &shape, &inv);
            vec![Some(Tensor::new(s, d).expect("shape"))]
        }))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Var<'g>> {
        let rank = self.with_value(|t| t.rank());
        if a >= rank || b >= rank {
            return Err(invalid("transpose", format!("axes ({a}, {b}) out of range for rank {rank}")));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Contiguous range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (len, width) = (shape[axis], end - start);
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            data.extend_from_slice(&a.data()[base..base + width * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = width;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.graph.record("slice", out, &[*self], move |g, _| {
            let mut dx = Tensor::zeros(shape.clone());
            for o in 0..outer {
                let base = (o * len + start) * inner;
                dx.data_mut()[base..base + width * inner]
                    .copy_from_slice(&g.data()[o * width * inner..(o + 1) * width * inner]);
            }
            vec![Some(dx)]
        }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "nothing to concatenate"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let shape0 = values[0].shape().to_vec();
        if axis >= shape0.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {shape0:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != shape0.len()
                || s.iter().zip(&shape0).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(mismatch("concat", &shape0, s));
            }
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut out_shape = shape0.clone();
        out_shape[axis] = total;
        let out = Tensor::new(out_shape, data)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        drop(values);
        Ok(first.graph.record("concat", out, parts, move |g, needs| {
            let mut offset = 0;
            shapes
                .iter()
                .zip(&widths)
                .zip(needs)
                .map(|((s, &w), &need)| {
                    let r = need.then(|| {
                        let mut d = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + w * inner]);
                        }
                        Tensor::new(s.clone(), d).expect("shape")
                    });
                    offset += w;
                    r
                })
                .collect()
        }))
    }

    /// Symmetric (whole-sample) reflection padding of the last axis.
    pub fn pad_reflect(&self, pad: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| invalid("pad_reflect", "scalar input"))?;
        if n == 0 {
            return Err(invalid("pad_reflect", "empty last axis"));
        }
        let rows = a.len() / n;
        let m = n + 2 * pad;
        let map: Vec<usize> = (0..m)
            .map(|i| reflect_index(i as isize - pad as isize, n))
            .collect();
        let mut data = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let src = &a.data()[r * n..(r + 1) * n];
            data.extend(map.iter().map(|&j| src[j]));
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("rank >= 1") = m;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.graph.record("pad_reflect", out, &[*self], move |g, _| {
            let mut dx = vec![0.0; rows * n];
            for r in 0..rows {
                for (i, &j) in map.iter().enumerate() {
                    dx[r * n + j] += g.data()[r * m + i];
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("shape"))]
        }))
    }

    /// Slides a window of `len` samples with step `hop` over the last axis:
    /// `[..., L] -> [..., T, len]` with `T = 1 + (L - len) / hop`.
    pub fn frame(&self, len: usize, hop: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let n = *shape.last().ok_or_else(|| invalid("frame", "scalar input"))?;
        if len == 0 || hop == 0 || n < len {
            return Err(invalid(
                "frame",
                format!("frame {len} / hop {hop} does not fit a last axis of {n}"),
            ));
        }
        let frames = 1 + (n - len) / hop;
        let rows = a.len() / n;
        let mut data = Vec::with_capacity(rows * frames * len);
        for r in 0..rows {
            for t in 0..frames {
                let s = r * n + t * hop;
                data.extend_from_slice(&a.data()[s..s + len]);
            }
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend([frames, len]);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.graph.record("frame", out, &[*self], move |g, _| {
            let dx = overlap_add_data(g.data(), rows, frames, len, hop, n);
            vec![Some(Tensor::new(shape.clone(), dx).expect("shape"))]
        }))
    }

    /// Sums frames back onto a timeline: `[..., T, len] -> [..., (T-1)*hop + len]`.
    pub fn overlap_add(&self, hop: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if shape.len() < 2 || hop == 0 {
            return Err(invalid("overlap_add", format!("need [..., T, len] and hop > 0, got {shape:?}")));
        }
        let (frames, len) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if frames == 0 || len == 0 {
            return Err(invalid("overlap_add", format!("empty frames in {shape:?}")));
        }
        let rows = a.len() / (frames * len);
        let n = (frames - 1) * hop + len;
        let data = overlap_add_data(a.data(), rows, frames, len, hop, n);
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.push(n);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.graph.record("overlap_add", out, &[*self], move |g, _| {
            let mut dx = Vec::with_capacity(rows * frames * len);
            for r in 0..rows {
                for t in 0..frames {
                    let s = r * n + t * hop;
                    dx.extend_from_slice(&g.data()[s..s + len]);
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("shape"))]
        }))
    }
}

fn overlap_add_data(x: &[f64], rows: usize, frames: usize, len: usize, hop: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        for t in 0..frames {
            let src = &x[(r * frames + t) * len..(r * frames + t + 1) * len];
            let dst = &mut out[r * n + t * hop..r * n + t * hop + len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}
