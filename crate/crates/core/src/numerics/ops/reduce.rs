//! Reductions, softmax, row normalization and losses.

use crate::error::{dim_err, Error, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<S: Scalar> Tensor<S> {
    pub fn sum_all(&self) -> Tensor<S> {
        let s: S = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum_all", vec![s], vec![], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<S> {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over one axis (the axis is removed).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(dim_err!("axis {axis} out of range for {:?}", self.shape()));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let mut out = vec![S::zero(); outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for a in 0..n {
                    let base = (o * n + a) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += d[base + i];
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op("sum_axis", out, shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); outer * n * inner];
            for o in 0..outer {
                for a in 0..n {
                    let base = (o * n + a) * inner;
                    gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(dim_err!("softmax axis {axis} out of range for {:?}", self.shape()));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let mut mx = S::neg_infinity();
                for a in 0..n {
                    mx = mx.max(out[at(a)]);
                }
                let mut z = S::zero();
                for a in 0..n {
                    let e = (out[at(a)] - mx).exp();
                    out[at(a)] = e;
                    z += e;
                }
                let inv = S::one() / z;
                for a in 0..n {
                    out[at(a)] *= inv;
                }
            }
        }
        let y = if self.requires_grad() && crate::numerics::grad_enabled() { out.clone() } else { Vec::new() };
        Ok(Tensor::from_op("softmax", out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * n + a) * inner + i;
                    let dot: S = (0..n).map(|a| g[at(a)] * y[at(a)]).sum();
                    for a in 0..n {
                        gx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Scales every row along the last axis to unit L2 norm (`eps` guards zero rows).
    pub fn l2_normalize(&self, eps: f64) -> Result<Tensor<S>> {
        if self.rank() == 0 {
            return Err(dim_err!("l2_normalize on a scalar"));
        }
        let d = *self.shape().last().unwrap();
        let rows = self.numel() / d.max(1);
        let x = self.to_vec();
        let eps = S::of(eps);
        let norms: Vec<S> = (0..rows)
            .map(|r| (x[r * d..(r + 1) * d].iter().map(|&v| v * v).sum::<S>() + eps).sqrt())
            .collect();
        let out: Vec<S> = x.iter().enumerate().map(|(i, &v)| v / norms[i / d]).collect();
        let y = out.clone();
        Ok(Tensor::from_op("l2_normalize", out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); y.len()];
            for r in 0..rows {
                let sl = r * d..(r + 1) * d;
                let dot: S = g[sl.clone()].iter().zip(&y[sl.clone()]).map(|(&a, &b)| a * b).sum();
                for i in sl {
                    gx[i] = (g[i] - y[i] * dot) / norms[r];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Mean cross-entropy of row-wise logits `[n, c]` against class targets.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor<S>> {
        if self.rank() != 2 || self.dim(0) != targets.len() {
            return Err(dim_err!("cross_entropy expects [n, c] logits with n targets"));
        }
        let (n, c) = (self.dim(0), self.dim(1));
        if targets.iter().any(|&t| t >= c) {
            return Err(Error::Range("cross_entropy target out of range".into()));
        }
        let p = self.detach().softmax(1)?.to_vec();
        let x = self.data();
        let mut loss = S::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln();
            loss += lse - row[t];
        }
        drop(x);
        let inv_n = S::one() / S::of(n as f64);
        let tg = targets.to_vec();
        Ok(Tensor::from_op("cross_entropy", vec![loss * inv_n], vec![], vec![self.clone()], move |g, _| {
            let mut gx: Vec<S> = p.iter().map(|&v| v * g[0] * inv_n).collect();
            for (r, &t) in tg.iter().enumerate() {
                gx[r * c + t] -= g[0] * inv_n;
            }
            vec![Some(gx)]
        }))
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, target: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != target.shape() {
            return Err(dim_err!("mse shape mismatch {:?} vs {:?}", self.shape(), target.shape()));
        }
        Ok(self.sub(target)?.square().mean_all())
    }
}
