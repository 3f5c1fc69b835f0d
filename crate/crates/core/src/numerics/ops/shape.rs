//! Layout ops: reshape, permute, concat, narrow, row gather, nearest upsampling.

use crate::error::{dim_err, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::{numel, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves `src` (shaped `shape`) into the layout given by axis order `perm`.
fn permute_data<S: Scalar>(src: &[S], shape: &[usize], perm: &[usize]) -> Vec<S> {
    let rank = shape.len();
    let n = src.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    if rank == 0 {
        out.push(src[0]);
        return out;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&src[off..off + inner]);
        } else {
            out.extend((0..inner).map(|j| src[off + j * inner_stride]));
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel(shape) != self.numel() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(), shape));
        }
        let data = self.to_vec();
        Ok(Tensor::from_op("reshape", data, shape.to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {:?} for rank {}", perm, rank));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(&self.data(), &shape, perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let osh = out_shape.clone();
        Ok(Tensor::from_op("permute", data, out_shape, vec![self.clone()], move |g, _| {
            vec![Some(permute_data(g, &osh, &inverse))]
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(dim_err!("concat axis {} out of range for rank {}", axis, rank));
        }
        for p in parts {
            let ok = p.rank() == rank
                && (0..rank).all(|i| i == axis || p.dim(i) == first.dim(i));
            if !ok {
                return Err(dim_err!("concat shape mismatch {:?} vs {:?}", first.shape(), p.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (gd, &sz) in guards.iter().zip(&sizes) {
                    data.extend_from_slice(&gd[o * sz * inner..(o + 1) * sz * inner]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op("concat", data, shape, parts.to_vec(), move |g, mask| {
            let mut grads: Vec<Option<Vec<S>>> = sizes
                .iter()
                .zip(mask)
                .map(|(&sz, &m)| m.then(|| Vec::with_capacity(outer * sz * inner)))
                .collect();
            for o in 0..outer {
                let mut start = o * total * inner;
                for (slot, &sz) in grads.iter_mut().zip(&sizes) {
                    let len = sz * inner;
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[start..start + len]);
                    }
                    start += len;
                }
            }
            grads
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() || start + len > self.dim(axis) {
            return Err(dim_err!("narrow({axis}, {start}, {len}) out of range for {:?}", self.shape()));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.dim(axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                data.extend_from_slice(&d[base..base + len * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let in_numel = self.numel();
        Ok(Tensor::from_op("narrow", data, shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); in_numel];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Gathers rows along axis 0: `out[i] = self[indices[i]]`. Gradients
    /// scatter-add back, so repeated indices accumulate.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<S>> {
        if self.rank() == 0 {
            return Err(dim_err!("index_select on a scalar"));
        }
        let rows = self.dim(0);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(dim_err!("index {bad} out of range for {rows} rows"));
        }
        let row: usize = self.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        {
            let d = self.data();
            for &i in indices {
                data.extend_from_slice(&d[i * row..(i + 1) * row]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(Tensor::from_op("index_select", data, shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); rows * row];
            for (k, &i) in idx.iter().enumerate() {
                for (a, &b) in gx[i * row..(i + 1) * row].iter_mut().zip(&g[k * row..(k + 1) * row]) {
                    *a += b;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Nearest-neighbour upsampling of the two trailing axes by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor<S>> {
        if self.rank() < 2 || factor == 0 {
            return Err(dim_err!("upsample_nearest needs rank >= 2 and factor >= 1"));
        }
        let r = self.rank();
        let (h, w) = (self.dim(r - 2), self.dim(r - 1));
        let planes = self.numel() / (h * w).max(1);
        let (ho, wo) = (h * factor, w * factor);
        let mut data = vec![S::zero(); planes * ho * wo];
        {
            let d = self.data();
            for p in 0..planes {
                for y in 0..ho {
                    for x in 0..wo {
                        data[(p * ho + y) * wo + x] = d[(p * h + y / factor) * w + x / factor];
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Ok(Tensor::from_op("upsample_nearest", data, shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); planes * h * w];
            for p in 0..planes {
                for y in 0..ho {
                    for x in 0..wo {
                        gx[(p * h + y / factor) * w + x / factor] += g[(p * ho + y) * wo + x];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
