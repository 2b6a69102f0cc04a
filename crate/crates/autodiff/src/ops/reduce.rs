use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::tensor::{strides, Tensor};

impl<'g> Var<'g> {
    pub fn sum(&self) -> Var<'g> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let s: f64 = a.data().iter().sum();
        self.graph.record("sum", Tensor::scalar(s), &[*self], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.data()[0]))]
        })
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.with_value(|t| t.len()) as f64;
        let s = self.sum();
        let out = s.value().map(|v| v / n);
        self.graph.record("mean", out, &[s], move |g, _| vec![Some(g.map(|v| v / n))])
    }

    /// `sum |x|`, the L1 norm.
    pub fn abs_sum(&self) -> Var<'g> {
        let a = self.value();
        let s: f64 = a.data().iter().map(|v| v.abs()).sum();
        self.graph.record("abs_sum", Tensor::scalar(s), &[*self], move |g, _| {
            let gv = g.data()[0];
            vec![Some(a.map(|x| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            }))]
        })
    }

    /// Broadcasts dimensions of size 1 up to `shape` (same rank).
    pub fn expand(&self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let src = a.shape().to_vec();
        if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &d)| s != d && s != 1) {
            return Err(invalid(
                "expand",
                format!("cannot expand {src:?} to {shape:?}"),
            ));
        }
        let out_strides = strides(shape);
        let src_strides = strides(&src);
        let total: usize = shape.iter().product();
        // Source offset for every output element.
        let map: Vec<usize> = (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut off = 0;
                for d in 0..shape.len() {
                    let idx = rem / out_strides[d];
                    rem %= out_strides[d];
                    if src[d] != 1 {
                        off += idx * src_strides[d];
                    }
                }
                off
            })
            .collect();
        let data = map.iter().map(|&i| a.data()[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        let n_src = a.len();
        Ok(self.graph.record("expand", out, &[*self], move |g, _| {
            let mut dx = vec![0.0; n_src];
            for (gv, &i) in g.data().iter().zip(&map) {
                dx[i] += gv;
            }
            vec![Some(Tensor::new(src.clone(), dx).expect("shape"))]
        }))
    }
}
