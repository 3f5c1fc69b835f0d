//! Convolutions: dense 2D (im2col + GEMM) and depthwise 3D (direct).

use crate::error::{dim_err, Error, Result};
use crate::numerics::scalar::{gemm_into, MatRef, Scalar};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn krows(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn pix(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `[cin, h, w]` into `[cin*kh*kw, ho*wo]`.
fn im2col<S: Scalar>(img: &[S], g: &Geom, cols: &mut [S]) {
    let pix = g.pix();
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * pix..(row + 1) * pix];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            S::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[cin, h, w]`.
fn col2im<S: Scalar>(cols: &[S], g: &Geom, img: &mut [S]) {
    let pix = g.pix();
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * pix..(row + 1) * pix];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// 2D convolution of `[N, Cin, H, W]` with weights `[Cout, Cin, kh, kw]`,
    /// optional bias `[Cout]`, symmetric zero padding.
    pub fn conv2d(&self, weight: &Tensor<S>, bias: Option<&Tensor<S>>, stride: usize, pad: usize) -> Result<Tensor<S>> {
        if self.rank() != 4 || weight.rank() != 4 || weight.dim(1) != self.dim(1) {
            return Err(dim_err!("conv2d: input {:?} incompatible with weight {:?}", self.shape(), weight.shape()));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (n, cin, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (cout, kh, kw) = (weight.dim(0), weight.dim(2), weight.dim(3));
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(dim_err!("conv2d kernel larger than padded input"));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(dim_err!("conv2d bias has {} entries, expected {cout}", b.numel()));
            }
        }
        let g = Geom {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let (krows, pix) = (g.krows(), g.pix());
        let mut out = vec![S::zero(); n * cout * pix];
        {
            let x = self.data();
            let wt = weight.data();
            let mut cols = vec![S::zero(); if g.is_pointwise() { 0 } else { krows * pix }];
            for i in 0..n {
                let img = &x[i * cin * h * w..(i + 1) * cin * h * w];
                let colref = if g.is_pointwise() {
                    MatRef::row_major(img, 0, krows, pix)
                } else {
                    im2col(img, &g, &mut cols);
                    MatRef::row_major(&cols, 0, krows, pix)
                };
                gemm_into(S::one(), MatRef::row_major(&wt, 0, cout, krows), colref, S::zero(), &mut out, i * cout * pix, pix);
            }
            if let Some(b) = bias {
                let bd = b.data();
                for i in 0..n {
                    for co in 0..cout {
                        let base = (i * cout + co) * pix;
                        out[base..base + pix].iter_mut().for_each(|v| *v += bd[co]);
                    }
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let (xc, wc) = (self.clone(), weight.clone());
        Ok(Tensor::from_op("conv2d", out, vec![n, cout, g.ho, g.wo], inputs, move |gr, mask| {
            let x = xc.data();
            let wt = wc.data();
            let mut gx = mask[0].then(|| vec![S::zero(); n * cin * h * w]);
            let mut gw = mask[1].then(|| vec![S::zero(); cout * krows]);
            let mut cols = vec![S::zero(); krows * pix];
            for i in 0..n {
                let gout = MatRef::row_major(gr, i * cout * pix, cout, pix);
                if let Some(gw) = gw.as_mut() {
                    let img = &x[i * cin * h * w..(i + 1) * cin * h * w];
                    let colref = if g.is_pointwise() {
                        MatRef::row_major(img, 0, krows, pix)
                    } else {
                        im2col(img, &g, &mut cols);
                        MatRef::row_major(&cols, 0, krows, pix)
                    };
                    gemm_into(S::one(), gout, colref.t(), S::one(), gw, 0, krows);
                }
                if let Some(gx) = gx.as_mut() {
                    let img = &mut gx[i * cin * h * w..(i + 1) * cin * h * w];
                    let wt_t = MatRef::row_major(&wt, 0, cout, krows).t();
                    if g.is_pointwise() {
                        gemm_into(S::one(), wt_t, gout, S::zero(), img, 0, pix);
                    } else {
                        gemm_into(S::one(), wt_t, gout, S::zero(), &mut cols, 0, pix);
                        col2im(&cols, &g, img);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| {
                    let mut gb = vec![S::zero(); cout];
                    for i in 0..n {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            let base = (i * cout + co) * pix;
                            *acc += gr[base..base + pix].iter().copied().sum::<S>();
                        }
                    }
                    gb
                }));
            }
            grads
        }))
    }

    /// Depthwise 3D convolution over `[B, T, C, H, W]` (or `[T, C, H, W]`)
    /// with per-channel kernels `[C, kT, kH, kW]`, zero padding on all axes.
    /// Output has the input's shape.
    pub fn depthwise_conv3d(&self, kernel: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, t, c, h, w) = match *self.shape() {
            [t, c, h, w] => (1, t, c, h, w),
            [b, t, c, h, w] => (b, t, c, h, w),
            _ => return Err(dim_err!("depthwise_conv3d expects [B,T,C,H,W] or [T,C,H,W], got {:?}", self.shape())),
        };
        if kernel.rank() != 4 || kernel.dim(0) != c {
            return Err(dim_err!("depthwise kernel {:?} does not match {c} channels", kernel.shape()));
        }
        let (kt, kh, kw) = (kernel.dim(1), kernel.dim(2), kernel.dim(3));
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("depthwise kernel extents must be odd, got {kt}x{kh}x{kw}")));
        }
        let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        // Visits (output index, input index, kernel index) for every in-bounds tap.
        let visit = move |f: &mut dyn FnMut(usize, usize, usize)| {
            for bi in 0..b {
                for ti in 0..t {
                    for ci in 0..c {
                        for yi in 0..h {
                            for xi in 0..w {
                                let o = (((bi * t + ti) * c + ci) * h + yi) * w + xi;
                                for dt in 0..kt {
                                    let st = ti as isize + dt as isize - pt;
                                    if st < 0 || st >= t as isize {
                                        continue;
                                    }
                                    for dy in 0..kh {
                                        let sy = yi as isize + dy as isize - ph;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        for dx in 0..kw {
                                            let sx = xi as isize + dx as isize - pw;
                                            if sx < 0 || sx >= w as isize {
                                                continue;
                                            }
                                            let src = (((bi * t + st as usize) * c + ci) * h + sy as usize) * w + sx as usize;
                                            let k = ((ci * kt + dt) * kh + dy) * kw + dx;
                                            f(o, src, k);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        let mut out = vec![S::zero(); self.numel()];
        {
            let (x, k) = (self.data(), kernel.data());
            visit(&mut |o, s, ki| out[o] += x[s] * k[ki]);
        }
        let (xc, kc) = (self.clone(), kernel.clone());
        let knumel = kernel.numel();
        let xnumel = self.numel();
        Ok(Tensor::from_op("depthwise_conv3d", out, self.shape().to_vec(), vec![self.clone(), kernel.clone()], move |g, mask| {
            let (x, k) = (xc.data(), kc.data());
            let mut gx = mask[0].then(|| vec![S::zero(); xnumel]);
            let mut gk = mask[1].then(|| vec![S::zero(); knumel]);
            visit(&mut |o, s, ki| {
                if let Some(gx) = gx.as_mut() {
                    gx[s] += g[o] * k[ki];
                }
                if let Some(gk) = gk.as_mut() {
                    gk[ki] += g[o] * x[s];
                }
            });
            vec![gx, gk]
        }))
    }
}
