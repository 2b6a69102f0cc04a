use crate::error::{invalid, mismatch, Result};
use crate::graph::Var;
use crate::kernels::{col2im, gemm, im2col, Patch};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Strides and zero padding are given as `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    /// Stride 1 with `pad` on both axes.
    pub fn same(pad: usize) -> Self {
        Self {
            padding: (pad, pad),
            ..Self::default()
        }
    }
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    groups: usize,
    patch: Patch,
}

impl ConvGeom {
    fn cig(&self) -> usize {
        self.c_in / self.groups
    }
    fn cog(&self) -> usize {
        self.c_out / self.groups
    }
    fn in_len(&self) -> usize {
        self.patch.height * self.patch.width
    }
}

fn check_bias(op: &'static str, bias: Option<&Var<'_>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = b.shape();
        if s != [c_out] {
            return Err(mismatch(op, &[c_out], &s));
        }
    }
    Ok(())
}

fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, geo: &ConvGeom) -> Vec<f64> {
    let p = geo.patch;
    let (rows, ncols) = (p.rows(), p.cols());
    let (cig, cog) = (geo.cig(), geo.cog());
    let mut out = vec![0.0; geo.batch * geo.c_out * ncols];
    let mut cols = vec![0.0; rows * ncols];
    for n in 0..geo.batch {
        for g in 0..geo.groups {
            let xs = (n * geo.c_in + g * cig) * geo.in_len();
            im2col(&x[xs..xs + cig * geo.in_len()], &p, &mut cols);
            let ys = (n * geo.c_out + g * cog) * ncols;
            let y = &mut out[ys..ys + cog * ncols];
            if let Some(b) = bias {
                for (o, row) in y.chunks_exact_mut(ncols).enumerate() {
                    row.fill(b[g * cog + o]);
                }
            }
            let wg = &w[g * cog * rows..(g + 1) * cog * rows];
            gemm(cog, rows, ncols, 1.0, wg, rows, 1, &cols, ncols, 1, 1.0, y, ncols, 1);
        }
    }
    out
}

/// Gradients of a grouped convolution; `dx`, `dw` and `db` are filled only
/// when requested.
fn conv_backward(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    geo: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = geo.patch;
    let (rows, ncols) = (p.rows(), p.cols());
    let (cig, cog) = (geo.cig(), geo.cog());
    let mut dx = need_x.then(|| vec![0.0; x.len()]);
    let mut dw = need_w.then(|| vec![0.0; w.len()]);
    let mut cols = vec![0.0; rows * ncols];
    for n in 0..geo.batch {
        for grp in 0..geo.groups {
            let xs = (n * geo.c_in + grp * cig) * geo.in_len();
            let gs = (n * geo.c_out + grp * cog) * ncols;
            let gy = &g[gs..gs + cog * ncols];
            let wr = grp * cog * rows..(grp + 1) * cog * rows;
            if let Some(dw) = dw.as_mut() {
                im2col(&x[xs..xs + cig * geo.in_len()], &p, &mut cols);
                gemm(cog, ncols, rows, 1.0, gy, ncols, 1, &cols, 1, ncols, 1.0, &mut dw[wr.clone()], rows, 1);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(rows, cog, ncols, 1.0, &w[wr], 1, rows, gy, ncols, 1, 0.0, &mut cols, ncols, 1);
                col2im(&cols, &p, &mut dx[xs..xs + cig * geo.in_len()]);
            }
        }
    }
    (dx, dw)
}

fn bias_grad(g: &[f64], batch: usize, c_out: usize) -> Tensor {
    let plane = g.len() / (batch * c_out);
    let mut db = vec![0.0; c_out];
    for (i, chunk) in g.chunks_exact(plane).enumerate() {
        db[i % c_out] += chunk.iter().sum::<f64>();
    }
    Tensor::new(vec![c_out], db).expect("shape")
}

fn out_len(op: &'static str, len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(invalid(op, "stride must be positive"));
    }
    if len + 2 * pad < k {
        return Err(invalid(
            op,
            format!("kernel {k} larger than padded input {}", len + 2 * pad),
        ));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

impl<'g> Var<'g> {
    /// Convolution (cross-correlation) of `[N, Cin, H, W]` with a
    /// `[Cout, Cin/groups, KH, KW]` kernel.
    pub fn conv2d(&self, weight: &Var<'g>, bias: Option<&Var<'g>>, spec: Conv2dSpec) -> Result<Var<'g>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || spec.groups == 0 {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        let groups = spec.groups;
        if xs[1] % groups != 0 || ws[0] % groups != 0 || ws[1] * groups != xs[1] {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        check_bias("conv2d", bias, ws[0])?;
        let out_h = out_len("conv2d", xs[2], ws[2], spec.stride.0, spec.padding.0)?;
        let out_w = out_len("conv2d", xs[3], ws[3], spec.stride.1, spec.padding.1)?;
        let geo = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            groups,
            patch: Patch {
                channels: ws[1],
                height: xs[2],
                width: xs[3],
                kh: ws[2],
                kw: ws[3],
                sh: spec.stride.0,
                sw: spec.stride.1,
                ph: spec.padding.0,
                pw: spec.padding.1,
                out_h,
                out_w,
            },
        };
        self.record_conv("conv2d", weight, bias, geo, vec![xs[0], ws[0], out_h, out_w])
    }

    /// Convolution of `[N, Cin, L]` with a `[Cout, Cin/groups, K]` kernel.
    pub fn conv1d(&self, weight: &Var<'g>, bias: Option<&Var<'g>>, spec: Conv1dSpec) -> Result<Var<'g>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 3 || spec.groups == 0 {
            return Err(mismatch("conv1d", &xs, &ws));
        }
        let groups = spec.groups;
        if xs[1] % groups != 0 || ws[0] % groups != 0 || ws[1] * groups != xs[1] {
            return Err(mismatch("conv1d", &xs, &ws));
        }
        check_bias("conv1d", bias, ws[0])?;
        let out_w = out_len("conv1d", xs[2], ws[2], spec.stride, spec.padding)?;
        let geo = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            groups,
            patch: Patch {
                channels: ws[1],
                height: 1,
                width: xs[2],
                kh: 1,
                kw: ws[2],
                sh: 1,
                sw: spec.stride,
                ph: 0,
                pw: spec.padding,
                out_h: 1,
                out_w,
            },
        };
        self.record_conv("conv1d", weight, bias, geo, vec![xs[0], ws[0], out_w])
    }

    fn record_conv(
        &self,
        op: &'static str,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        geo: ConvGeom,
        out_shape: Vec<usize>,
    ) -> Result<Var<'g>> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let y = conv_forward(x.data(), w.data(), b.as_ref().map(|b| b.data()), &geo);
        let out = Tensor::new(out_shape, y)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let has_bias = bias.is_some();
        Ok(self.graph.record(op, out, &parents, move |g, needs| {
            let (dx, dw) = conv_backward(g.data(), x.data(), w.data(), &geo, needs[0], needs[1]);
            let mut grads = vec![
                dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("shape")),
                dw.map(|d| Tensor::new(w.shape().to_vec(), d).expect("shape")),
            ];
            if has_bias {
                grads.push(needs[2].then(|| bias_grad(g.data(), geo.batch, geo.c_out)));
            }
            grads
        }))
    }

    /// Transposed convolution of `[N, Cin, H, W]` with a `[Cin, Cout, KH, KW]`
    /// kernel; the adjoint of [`Var::conv2d`] with the same stride and padding.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var<'g>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(mismatch("conv_transpose2d", &xs, &ws));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(invalid("conv_transpose2d", "stride must be positive"));
        }
        let (batch, c_in, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ws[1], ws[2], ws[3]);
        check_bias("conv_transpose2d", bias, c_out)?;
        let full_h = (h - 1) * stride.0 + kh;
        let full_w = (w_in - 1) * stride.1 + kw;
        if full_h <= 2 * padding.0 || full_w <= 2 * padding.1 {
            return Err(invalid("conv_transpose2d", format!("padding {padding:?} removes the whole output")));
        }
        let (oh, ow) = (full_h - 2 * padding.0, full_w - 2 * padding.1);
        let p = Patch {
            channels: c_out,
            height: oh,
            width: ow,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            out_h: h,
            out_w: w_in,
        };
        let (rows, hw, plane) = (p.rows(), h * w_in, oh * ow);
        let (x, wt) = (self.value(), weight.value());
        let mut y = vec![0.0; batch * c_out * plane];
        let mut cols = vec![0.0; rows * hw];
        for n in 0..batch {
            // cols = W^T x_n, with W viewed as [Cin, Cout*KH*KW].
            let xn = &x.data()[n * c_in * hw..(n + 1) * c_in * hw];
            gemm(rows, c_in, hw, 1.0, wt.data(), 1, rows, xn, hw, 1, 0.0, &mut cols, hw, 1);
            let yn = &mut y[n * c_out * plane..(n + 1) * c_out * plane];
            col2im(&cols, &p, yn);
            if let Some(b) = bias {
                let bv = b.value();
                for (o, ch) in yn.chunks_exact_mut(plane).enumerate() {
                    ch.iter_mut().for_each(|v| *v += bv.data()[o]);
                }
            }
        }
        let out = Tensor::new(vec![batch, c_out, oh, ow], y)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let has_bias = bias.is_some();
        Ok(self.graph.record("conv_transpose2d", out, &parents, move |g, needs| {
            let mut dx = needs[0].then(|| vec![0.0; x.len()]);
            let mut dw = needs[1].then(|| vec![0.0; wt.len()]);
            let mut cols = vec![0.0; rows * hw];
            for n in 0..batch {
                im2col(&g.data()[n * c_out * plane..(n + 1) * c_out * plane], &p, &mut cols);
                if let Some(dx) = dx.as_mut() {
                    let d = &mut dx[n * c_in * hw..(n + 1) * c_in * hw];
                    gemm(c_in, rows, hw, 1.0, wt.data(), rows, 1, &cols, hw, 1, 0.0, d, hw, 1);
                }
                if let Some(dw) = dw.as_mut() {
                    let xn = &x.data()[n * c_in * hw..(n + 1) * c_in * hw];
                    gemm(c_in, hw, rows, 1.0, xn, hw, 1, &cols, 1, hw, 1.0, dw, rows, 1);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("shape")),
                dw.map(|d| Tensor::new(wt.shape().to_vec(), d).expect("shape")),
            ];
            if has_bias {
                grads.push(needs[2].then(|| bias_grad(g.data(), batch, c_out)));
            }
            grads
        }))
    }
}
