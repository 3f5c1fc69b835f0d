use crate::error::{dim_err, Result};
use crate::numerics::scalar::{gemm_into, MatRef, Scalar};
use crate::numerics::tensor::Tensor;

impl<S: Scalar> Tensor<S> {
    /// Matrix product. `self` may carry leading batch axes (`[.., m, k]`),
    /// which are folded into the row dimension; `rhs` must be `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() < 2 || rhs.rank() != 2 {
            return Err(dim_err!(
                "matmul expects [.., m, k] x [k, n], got {:?} x {:?}",
                self.shape(),
                rhs.shape()
            ));
        }
        let k = *self.shape().last().unwrap();
        if k != rhs.dim(0) {
            return Err(dim_err!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape(),
                rhs.shape()
            ));
        }
        let m = self.numel() / k.max(1);
        let n = rhs.dim(1);
        let mut out = vec![S::zero(); m * n];
        gemm_into(
            S::one(),
            MatRef::row_major(&self.data(), 0, m, k),
            MatRef::row_major(&rhs.data(), 0, k, n),
            S::zero(),
            &mut out,
            0,
            n,
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op("matmul", out, shape, vec![self.clone(), rhs.clone()], move |g, mask| {
            let ga = mask[0].then(|| {
                let mut ga = vec![S::zero(); m * k];
                gemm_into(
                    S::one(),
                    MatRef::row_major(g, 0, m, n),
                    MatRef::row_major(&b.data(), 0, k, n).t(),
                    S::zero(),
                    &mut ga,
                    0,
                    k,
                );
                ga
            });
            let gb = mask[1].then(|| {
                let mut gb = vec![S::zero(); k * n];
                gemm_into(
                    S::one(),
                    MatRef::row_major(&a.data(), 0, m, k).t(),
                    MatRef::row_major(g, 0, m, n),
                    S::zero(),
                    &mut gb,
                    0,
                    n,
                );
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Batched product `[B, m, k] x [B, k, n] -> [B, m, n]`; with
    /// `transpose_rhs` the right operand is read as `[B, n, k]`.
    pub fn bmm(&self, rhs: &Tensor<S>, transpose_rhs: bool) -> Result<Tensor<S>> {
        if self.rank() != 3 || rhs.rank() != 3 || self.dim(0) != rhs.dim(0) {
            return Err(dim_err!("bmm expects rank-3 operands with equal batch, got {:?} x {:?}", self.shape(), rhs.shape()));
        }
        let (bsz, m, k) = (self.dim(0), self.dim(1), self.dim(2));
        let (rk, n) = if transpose_rhs {
            (rhs.dim(2), rhs.dim(1))
        } else {
            (rhs.dim(1), rhs.dim(2))
        };
        if rk != k {
            return Err(dim_err!("bmm inner extents differ: {:?} x {:?}", self.shape(), rhs.shape()));
        }
        let mut out = vec![S::zero(); bsz * m * n];
        {
            let (da, db) = (self.data(), rhs.data());
            for i in 0..bsz {
                gemm_into(
                    S::one(),
                    MatRef::row_major(&da, i * m * k, m, k),
                    rhs_view(&db, i, k, n, transpose_rhs),
                    S::zero(),
                    &mut out,
                    i * m * n,
                    n,
                );
            }
        }
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op("bmm", out, vec![bsz, m, n], vec![self.clone(), rhs.clone()], move |g, mask| {
            let ga = mask[0].then(|| {
                let db = b.data();
                let mut ga = vec![S::zero(); bsz * m * k];
                for i in 0..bsz {
                    gemm_into(
                        S::one(),
                        MatRef::row_major(g, i * m * n, m, n),
                        rhs_view(&db, i, k, n, transpose_rhs).t(),
                        S::zero(),
                        &mut ga,
                        i * m * k,
                        k,
                    );
                }
                ga
            });
            let gb = mask[1].then(|| {
                let da = a.data();
                let mut gb = vec![S::zero(); bsz * k * n];
                for i in 0..bsz {
                    let av = MatRef::row_major(&da, i * m * k, m, k);
                    let gv = MatRef::row_major(g, i * m * n, m, n);
                    if transpose_rhs {
                        // d(B^T) = G^T A  -> stored as [n, k]
                        gemm_into(S::one(), gv.t(), av, S::zero(), &mut gb, i * k * n, k);
                    } else {
                        gemm_into(S::one(), av.t(), gv, S::zero(), &mut gb, i * k * n, n);
                    }
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}

fn rhs_view<S>(data: &[S], i: usize, k: usize, n: usize, transposed: bool) -> MatRef<'_, S> {
    let off = i * k * n;
    if transposed {
        MatRef::row_major(data, off, n, k).t()
    } else {
        MatRef::row_major(data, off, k, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_and_permutation() {
        let i2 = Tensor::<f32>::from_f64(&[1., 0., 0., 1.], &[2, 2]).unwrap();
        let a = Tensor::<f32>::from_f64(&[1., 2., 3., 4.], &[2, 2]).unwrap();
        let p = Tensor::<f32>::from_f64(&[0., 1., 1., 0.], &[2, 2]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap().to_vec(), vec![1., 2., 3., 4.]);
        assert_eq!(a.matmul(&p).unwrap().to_vec(), vec![2., 1., 4., 3.]);
    }

    #[test]
    fn random_7x5_by_5x3_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f32>::randn(&[7, 5], &mut rng);
        let b = Tensor::<f32>::randn(&[5, 3], &mut rng);
        let c = a.matmul(&b).unwrap().to_f64_vec();
        let want = naive(&a.to_f64_vec(), &b.to_f64_vec(), 7, 5, 3);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn inner_mismatch_is_dimension_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn bmm_transposed_matches_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::<f64>::randn(&[2, 3, 4], &mut rng);
        let b = Tensor::<f64>::randn(&[2, 5, 4], &mut rng);
        let via_t = a.bmm(&b, true).unwrap();
        let bt = b.permute(&[0, 2, 1]).unwrap();
        let direct = a.bmm(&bt, false).unwrap();
        for (x, y) in via_t.to_vec().iter().zip(direct.to_vec()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
