//! Elementwise arithmetic with numpy-style broadcasting, scalar affine maps
//! and pointwise activations.

use crate::error::{dim_err, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::{numel, Tensor};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(dim_err!("cannot broadcast {:?} with {:?}", a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out` rank, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_offset, b_offset)` for every output element.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        // advance the outer multi-index
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * idx[ax];
            ob -= sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

/// Sums `g` (shaped `out`) down to `target`, which broadcasts to `out`.
pub(crate) fn reduce_to<S: Scalar>(g: &[S], out: &[usize], target: &[usize]) -> Vec<S> {
    if out == target {
        return g.to_vec();
    }
    let st = broadcast_strides(target, out);
    let zeros = vec![0; out.len()];
    let mut acc = vec![S::zero(); numel(target)];
    for_each_broadcast(out, &st, &zeros, |o, t, _| acc[t] += g[o]);
    acc
}

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: BinOp) -> Result<Tensor<S>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let n = numel(&out_shape);
    let mut out = vec![S::zero(); n];
    {
        let (da, db) = (a.data(), b.data());
        if a.shape() == b.shape() {
            for i in 0..n {
                out[i] = apply(op, da[i], db[i]);
            }
        } else {
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                out[o] = apply(op, da[ia], db[ib])
            });
        }
    }
    let (ac, bc) = (a.clone(), b.clone());
    let osh = out_shape.clone();
    let name = match op {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
        BinOp::Div => "div",
    };
    Ok(Tensor::from_op(
        name,
        out,
        out_shape,
        vec![a.clone(), b.clone()],
        move |g, mask| {
            let sa = broadcast_strides(ac.shape(), &osh);
            let sb = broadcast_strides(bc.shape(), &osh);
            let full_a = |f: &dyn Fn(usize, usize, usize) -> S| {
                let mut ga = vec![S::zero(); numel(&osh)];
                for_each_broadcast(&osh, &sa, &sb, |o, ia, ib| ga[o] = f(o, ia, ib));
                ga
            };
            let (da, db) = (ac.data(), bc.data());
            let grad_a = mask[0].then(|| {
                let full = match op {
                    BinOp::Add | BinOp::Sub => g.to_vec(),
                    BinOp::Mul => full_a(&|o, _, ib| g[o] * db[ib]),
                    BinOp::Div => full_a(&|o, _, ib| g[o] / db[ib]),
                };
                reduce_to(&full, &osh, ac.shape())
            });
            let grad_b = mask[1].then(|| {
                let full = match op {
                    BinOp::Add => g.to_vec(),
                    BinOp::Sub => g.iter().map(|&v| -v).collect(),
                    BinOp::Mul => full_a(&|o, ia, _| g[o] * da[ia]),
                    BinOp::Div => full_a(&|o, ia, ib| -g[o] * da[ia] / (db[ib] * db[ib])),
                };
                reduce_to(&full, &osh, bc.shape())
            });
            vec![grad_a, grad_b]
        },
    ))
}

#[inline]
fn apply<S: Scalar>(op: BinOp, x: S, y: S) -> S {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

/// Pointwise map with derivative `df(x, y)` expressed via input and output.
pub(crate) fn unary<S: Scalar>(
    x: &Tensor<S>,
    name: &'static str,
    f: impl Fn(S) -> S,
    df: impl Fn(S, S) -> S + 'static,
) -> Tensor<S> {
    let out: Vec<S> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    let saved = if x.requires_grad() && crate::numerics::grad_enabled() { out.clone() } else { Vec::new() };
    Tensor::from_op(name, out, x.shape().to_vec(), vec![x.clone()], move |g, _| {
        let dx = xc.data();
        let grad = g
            .iter()
            .zip(dx.iter())
            .zip(saved.iter())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(grad)]
    })
}

fn std_normal_cdf<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    half * (S::one() + (x * S::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn std_normal_pdf<S: Scalar>(x: S) -> S {
    S::of(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * S::of(0.5)).exp()
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinOp::Add)
    }

    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinOp::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinOp::Mul)
    }

    pub fn div(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinOp::Div)
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor<S> {
        let (a, b) = (S::of(scale), S::of(shift));
        let out: Vec<S> = self.data().iter().map(|&v| a * v + b).collect();
        Tensor::from_op("affine", out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|&v| v * a).collect())]
        })
    }

    pub fn scale(&self, s: f64) -> Tensor<S> {
        self.affine(s, 0.0)
    }

    pub fn neg(&self) -> Tensor<S> {
        self.affine(-1.0, 0.0)
    }

    pub fn square(&self) -> Tensor<S> {
        unary(self, "square", |x| x * x, |x, _| S::of(2.0) * x)
    }

    pub fn exp(&self) -> Tensor<S> {
        unary(self, "exp", |x| x.exp(), |_, y| y)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&self) -> Tensor<S> {
        unary(
            self,
            "gelu",
            |x| x * std_normal_cdf(x),
            |x, _| std_normal_cdf(x) + x * std_normal_pdf(x),
        )
    }

    pub fn silu(&self) -> Tensor<S> {
        unary(
            self,
            "silu",
            |x| x / (S::one() + (-x).exp()),
            |x, _| {
                let s = S::one() / (S::one() + (-x).exp());
                s * (S::one() + x * (S::one() - s))
            },
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        unary(self, "tanh", |x| x.tanh(), |_, y| S::one() - y * y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::from_f64(v, s).unwrap()
    }

    #[test]
    fn broadcast_add_row_and_column() {
        let a = t(&[1., 2., 3., 4., 5., 6.], &[2, 3]);
        let row = t(&[10., 20., 30.], &[3]);
        let col = t(&[100., 200.], &[2, 1]);
        assert_eq!(a.add(&row).unwrap().to_vec(), vec![11., 22., 33., 14., 25., 36.]);
        assert_eq!(
            a.add(&col).unwrap().to_vec(),
            vec![101., 102., 103., 204., 205., 206.]
        );
    }

    #[test]
    fn incompatible_broadcast_is_dimension_error() {
        let a = t(&[1., 2., 3.], &[3]);
        let b = t(&[1., 2.], &[2]);
        assert!(matches!(a.add(&b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn broadcast_grad_reduces_to_input_shape() {
        let a = Tensor::<f64>::param(vec![1., 2., 3., 4., 5., 6.], &[2, 3]).unwrap();
        let b = Tensor::<f64>::param(vec![1., 1., 1.], &[3]).unwrap();
        a.mul(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![5., 7., 9.]);
        assert_eq!(a.grad().unwrap(), vec![1.; 6]);
    }

    #[test]
    fn gelu_reference_points() {
        let x = t(&[0.0, 1.0, -10.0], &[3]);
        let y = x.gelu().to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!(y[2].abs() < 1e-8);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let a = t(&[1., -2.], &[2]);
        let _ = a.gelu();
        let _ = a.affine(3.0, 1.0);
        assert_eq!(a.to_vec(), vec![1., -2.]);
    }
}
