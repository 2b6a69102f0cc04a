use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

/// Cached forward (`inverse == false`) or unnormalised inverse FFT plan.
pub(crate) fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
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

/// One-sided spectrum of a real frame, written into `out` (len/2 + 1 bins).
pub(crate) fn rfft_into(frame: &[f64], buf: &mut Vec<Complex64>, out: &mut [Complex64]) {
    let n = frame.len();
    buf.clear();
    buf.extend(frame.iter().map(|&v| Complex64::new(v, 0.0)));
    plan(n, false).process(buf);
    out.copy_from_slice(&buf[..n / 2 + 1]);
}

/// Inverse of [`rfft_into`]: real frame from a one-sided spectrum, scaled by 1/n.
///
/// The imaginary parts of the DC and Nyquist bins are ignored.
pub(crate) fn irfft_into(spec: &[Complex64], n: usize, buf: &mut Vec<Complex64>, out: &mut [f64]) {
    let half = n / 2;
    buf.clear();
    buf.resize(n, Complex64::new(0.0, 0.0));
    buf[0] = Complex64::new(spec[0].re, 0.0);
    for k in 1..half {
        buf[k] = spec[k];
        buf[n - k] = spec[k].conj();
    }
    if n % 2 == 0 {
        buf[half] = Complex64::new(spec[half].re, 0.0);
    } else {
        buf[half] = spec[half];
        buf[n - half] = spec[half].conj();
    }
    plan(n, true).process(buf);
    let scale = 1.0 / n as f64;
    for (o, c) in out.iter_mut().zip(buf.iter()) {
        *o = c.re * scale;
    }
}
