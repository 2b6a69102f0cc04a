//! Raw numeric kernels shared by the operators.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// `C = alpha * A B + beta * C` for strided row/column layouts.
///
/// Each slice starts at the matrix's first element; strides are in
/// elements. Panics if a stride pattern would read or write out of bounds.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc, "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: A out of bounds");
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: B out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is an exclusive borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a 2-D sliding window over one `C x H x W` image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Valid output column range `[lo, hi)` for kernel offset `kx` along an
    /// axis of `len` samples.
    #[inline]
    fn span(out: usize, stride: usize, pad: usize, k: usize, len: usize) -> (usize, usize) {
        // o * stride + k - pad in [0, len)
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if len + pad > k {
            ((len + pad - k - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds `x` (`C x H x W`) into `cols` (`C*KH*KW x OH*OW`).
pub(crate) fn im2col(x: &[f64], p: &Patch, cols: &mut [f64]) {
    let ncols = p.cols();
    cols.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..p.channels {
        let img = &x[c * p.height * p.width..(c + 1) * p.height * p.width];
        for ky in 0..p.kh {
            let (oy0, oy1) = Patch::span(p.out_h, p.sh, p.ph, ky, p.height);
            for kx in 0..p.kw {
                let (ox0, ox1) = Patch::span(p.out_w, p.sw, p.pw, kx, p.width);
                let row = (c * p.kh + ky) * p.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in oy0..oy1 {
                    let iy = oy * p.sh + ky - p.ph;
                    let src = &img[iy * p.width..(iy + 1) * p.width];
                    let d = &mut dst[oy * p.out_w..(oy + 1) * p.out_w];
                    if p.sw == 1 {
                        let ix0 = ox0 + kx - p.pw;
                        d[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            d[ox] = src[ox * p.sw + kx - p.pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `x`.
pub(crate) fn col2im(cols: &[f64], p: &Patch, x: &mut [f64]) {
    let ncols = p.cols();
    for c in 0..p.channels {
        let img = &mut x[c * p.height * p.width..(c + 1) * p.height * p.width];
        for ky in 0..p.kh {
            let (oy0, oy1) = Patch::span(p.out_h, p.sh, p.ph, ky, p.height);
            for kx in 0..p.kw {
                let (ox0, ox1) = Patch::span(p.out_w, p.sw, p.pw, kx, p.width);
                let row = (c * p.kh + ky) * p.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in oy0..oy1 {
                    let iy = oy * p.sh + ky - p.ph;
                    let dst = &mut img[iy * p.width..(iy + 1) * p.width];
                    let s = &src[oy * p.out_w..(oy + 1) * p.out_w];
                    for ox in ox0..ox1 {
                        dst[ox * p.sw + kx - p.pw] += s[ox];
                    }
                }
            }
        }
    }
}

/// `exp` over a slice of non-positive arguments, as used by softmax after
/// the row maximum is subtracted. Cody-Waite reduction to `|r| <= ln2 / 2`
/// and a degree-13 Taylor polynomial; accurate to a couple of ulps and
/// free of branches and float-to-int casts so the loop vectorises.
pub(crate) fn exp_nonpositive(xs: &mut [f64]) {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const INV_FACT: [f64; 14] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
        1.0 / 6227020800.0,
    ];
    // Adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    for v in xs.iter_mut() {
        let x = v.max(-708.0);
        let t = x * std::f64::consts::LOG2_E + SHIFT;
        let k = t - SHIFT;
        let r = (x - k * LN2_HI) - k * LN2_LO;
        let mut p = INV_FACT[13];
        for c in INV_FACT[..13].iter().rev() {
            p = p * r + c;
        }
        let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
        *v = if *v < -708.0 { 0.0 } else { p * scale };
    }
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let (planner, cache) = &mut *p.borrow_mut();
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Rows of `x` (each `n` long) to one-sided spectra packed as
/// `[re_0..re_{F-1}, im_0..im_{F-1}]` per row.
pub(crate) fn rfft_rows(x: &[f64], n: usize) -> Vec<f64> {
    let f = n / 2 + 1;
    let rows = x.len() / n;
    let plan = fft_plan(n, false);
    let mut buf = vec![Complex64::default(); n];
    let mut out = vec![0.0; rows * 2 * f];
    for r in 0..rows {
        for (b, &v) in buf.iter_mut().zip(&x[r * n..(r + 1) * n]) {
            *b = Complex64::new(v, 0.0);
        }
        plan.process(&mut buf);
        let dst = &mut out[r * 2 * f..(r + 1) * 2 * f];
        for k in 0..f {
            dst[k] = buf[k].re;
            dst[f + k] = buf[k].im;
        }
    }
    out
}

/// Adjoint of [`rfft_rows`]: `x[n] = sum_k g_re[k] cos(2 pi k n/N) - g_im[k] sin(2 pi k n/N)`.
pub(crate) fn rfft_rows_adjoint(g: &[f64], n: usize) -> Vec<f64> {
    let f = n / 2 + 1;
    let rows = g.len() / (2 * f);
    let plan = fft_plan(n, true);
    let mut buf = vec![Complex64::default(); n];
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let src = &g[r * 2 * f..(r + 1) * 2 * f];
        buf.iter_mut().for_each(|b| *b = Complex64::default());
        for k in 0..f {
            buf[k] = Complex64::new(src[k], src[f + k]);
        }
        plan.process(&mut buf);
        for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(&buf) {
            *o = b.re;
        }
    }
    out
}

/// Packed one-sided spectra back to real rows of length `n` (scaled by 1/n).
/// Imaginary parts of the DC and Nyquist bins are ignored.
pub(crate) fn irfft_rows(spec: &[f64], n: usize) -> Vec<f64> {
    let f = n / 2 + 1;
    let half = n / 2;
    let rows = spec.len() / (2 * f);
    let plan = fft_plan(n, true);
    let mut buf = vec![Complex64::default(); n];
    let mut out = vec![0.0; rows * n];
    let scale = 1.0 / n as f64;
    for r in 0..rows {
        let src = &spec[r * 2 * f..(r + 1) * 2 * f];
        buf[0] = Complex64::new(src[0], 0.0);
        for k in 1..f {
            let c = Complex64::new(src[k], src[f + k]);
            buf[k] = c;
            buf[n - k] = c.conj();
        }
        if n % 2 == 0 {
            buf[half] = Complex64::new(src[half], 0.0);
        }
        plan.process(&mut buf);
        for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
    out
}

/// Adjoint of [`irfft_rows`].
pub(crate) fn irfft_rows_adjoint(g: &[f64], n: usize) -> Vec<f64> {
    let f = n / 2 + 1;
    let mut out = rfft_rows(g, n);
    let rows = out.len() / (2 * f);
    for r in 0..rows {
        let dst = &mut out[r * 2 * f..(r + 1) * 2 * f];
        for k in 0..f {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            let c = if edge { 1.0 } else { 2.0 } / n as f64;
            dst[k] *= c;
            dst[f + k] = if edge { 0.0 } else { dst[f + k] * c };
        }
    }
    out
}

/// Whole-sample symmetric reflection of index `i` into `0..n`.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}
