use std::rc::Rc;

use crate::error::{invalid, mismatch, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

impl<'g> Var<'g> {
    fn same_shape(&self, other: &Var<'g>, op: &'static str) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(op, a.shape(), b.shape()));
        }
        Ok((a, b))
    }

    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(other, "add")?;
        let out = zip_map(&a, &b, |x, y| x + y);
        Ok(self.graph.record("add", out, &[*self, *other], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
        }))
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(other, "sub")?;
        let out = zip_map(&a, &b, |x, y| x - y);
        Ok(self.graph.record("sub", out, &[*self, *other], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))]
        }))
    }

    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(other, "mul")?;
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self.graph.record("mul", out, &[*self, *other], move |g, needs| {
            vec![
                needs[0].then(|| zip_map(g, &b, |g, y| g * y)),
                needs[1].then(|| zip_map(g, &a, |g, x| g * x)),
            ]
        }))
    }

    pub fn scale(&self, k: f64) -> Var<'g> {
        let out = self.value().map(|v| v * k);
        self.graph.record("scale", out, &[*self], move |g, _| vec![Some(g.map(|v| v * k))])
    }

    pub fn add_scalar(&self, k: f64) -> Var<'g> {
        let out = self.value().map(|v| v + k);
        self.graph.record("add_scalar", out, &[*self], |g, _| vec![Some(g.clone())])
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var<'g> {
        let a = self.value();
        let out = a.map(|v| v * v);
        self.graph.record("square", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &a, |g, x| 2.0 * g * x))]
        })
    }

    pub fn abs(&self) -> Var<'g> {
        let a = self.value();
        let out = a.map(f64::abs);
        self.graph.record("abs", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &a, |g, x| if x > 0.0 { g } else if x < 0.0 { -g } else { 0.0 }))]
        })
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&self) -> Result<Var<'g>> {
        let a = self.value();
        if let Some(v) = a.data().iter().find(|v| **v < 0.0) {
            return Err(invalid("sqrt", format!("negative input {v}")));
        }
        let out = Rc::new(a.map(f64::sqrt));
        let y = out.clone();
        Ok(self.graph.record("sqrt", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &y, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 }))]
        }))
    }

    /// Natural logarithm of a strictly positive tensor.
    pub fn log(&self) -> Result<Var<'g>> {
        let a = self.value();
        if let Some(v) = a.data().iter().find(|v| **v <= 0.0) {
            return Err(invalid("log", format!("non-positive input {v}")));
        }
        let out = a.map(f64::ln);
        Ok(self.graph.record("log", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &a, |g, x| g / x))]
        }))
    }

    pub fn exp(&self) -> Var<'g> {
        let out = Rc::new(self.value().map(f64::exp));
        let y = out.clone();
        self.graph.record("exp", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &y, |g, y| g * y))]
        })
    }

    /// `max(x, floor)`; values at or below the floor pass no gradient.
    pub fn clamp_min(&self, floor: f64) -> Var<'g> {
        let a = self.value();
        let out = a.map(|v| v.max(floor));
        self.graph.record("clamp_min", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &a, |g, x| if x > floor { g } else { 0.0 }))]
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        let a = self.value();
        let out = a.map(|v| if v >= 0.0 { v } else { slope * v });
        self.graph.record("leaky_relu", out, &[*self], move |g, _| {
            vec![Some(zip_map(g, &a, |g, x| if x >= 0.0 { g } else { slope * g }))]
        })
    }

    /// Leaky ReLU with a learnable slope shared over the whole tensor;
    /// `alpha` must hold exactly one value.
    pub fn prelu(&self, alpha: &Var<'g>) -> Result<Var<'g>> {
        let a = self.value();
        let al = alpha.value();
        if al.len() != 1 {
            return Err(mismatch("prelu", a.shape(), al.shape()));
        }
        let slope = al.data()[0];
        let out = a.map(|v| if v >= 0.0 { v } else { slope * v });
        let alpha_shape = al.shape().to_vec();
        Ok(self.graph.record("prelu", out, &[*self, *alpha], move |g, needs| {
            let dx = needs[0].then(|| zip_map(g, &a, |g, x| if x >= 0.0 { g } else { slope * g }));
            let da = needs[1].then(|| {
                let s: f64 = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .filter(|(_, &x)| x < 0.0)
                    .map(|(g, x)| g * x)
                    .sum();
                Tensor::full(alpha_shape.clone(), s)
            });
            vec![dx, da]
        }))
    }

    /// Treats `axis` (of size 2) as (real, imaginary) pairs and returns the
    /// modulus, dropping that axis. The gradient at a zero modulus is zero.
    pub fn complex_magnitude(&self, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() || shape[axis] != 2 {
            return Err(invalid(
                "complex_magnitude",
                format!("axis {axis} of shape {shape:?} must have size 2"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut mag = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let re = a.data()[o * 2 * inner + i];
                let im = a.data()[o * 2 * inner + inner + i];
                mag[o * inner + i] = re.hypot(im);
            }
        }
        let mag = Rc::new(Tensor::new(out_shape, mag)?);
        let m = mag.clone();
        Ok(self.graph.record("complex_magnitude", mag, &[*self], move |g, _| {
            let mut dx = vec![0.0; a.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let r = m.data()[o * inner + i];
                    if r > 0.0 {
                        let gi = g.data()[o * inner + i] / r;
                        dx[o * 2 * inner + i] = gi * a.data()[o * 2 * inner + i];
                        dx[o * 2 * inner + inner + i] = gi * a.data()[o * 2 * inner + inner + i];
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("shape"))]
        }))
    }
}
