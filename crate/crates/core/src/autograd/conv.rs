//! Direct 2-D cross-correlation with f64 accumulation.
//!
//! Every output element is summed in the fixed order bias, then
//! `(ci, ky, kx)` lexicographic, so results do not depend on the build.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(
        x: [usize; 4],
        w: [usize; 4],
        bias_len: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, cin, h, wd] = x;
        let [cout, wcin, kh, kw] = w;
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be >= 1"));
        }
        if wcin != cin {
            return Err(shape_err!(
                "conv2d: input has {} channels, weight expects {}",
                cin,
                wcin
            ));
        }
        if bias_len != cout {
            return Err(shape_err!(
                "conv2d: bias has {} entries for {} filters",
                bias_len,
                cout
            ));
        }
        if kh == 0 || kw == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err!(
                "conv2d: kernel {}x{} does not fit input {}x{} with pad {}",
                kh,
                kw,
                h,
                wd,
                pad
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    pub fn out_dims(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    /// Input row for output row `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < self.h).then_some(i as usize)
    }

    /// Output columns whose input column `ox*stride + k - pad` lies in `0..w`.
    #[inline]
    fn ox_range(&self, k: usize) -> (usize, usize) {
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        if self.w + self.pad < k + 1 {
            return (0, 0);
        }
        let hi = ((self.w - 1 + self.pad - k) / self.stride + 1).min(self.ow);
        (lo.min(hi), hi)
    }
}

/// Zero-padded f64 copy of every `(n, c)` plane of `x`.
fn padded_planes<T: Scalar>(x: &Tensor<T>, g: &ConvGeom) -> Vec<f64> {
    let (ph, pw) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
    let mut buf = vec![0f64; g.n * g.cin * ph * pw];
    for n in 0..g.n {
        for ci in 0..g.cin {
            let base = (n * g.cin + ci) * ph * pw;
            for (iy, row) in x.plane(n, ci).chunks_exact(g.w).enumerate() {
                let start = base + (iy + g.pad) * pw + g.pad;
                for (d, &v) in buf[start..start + g.w].iter_mut().zip(row) {
                    *d = v.widen();
                }
            }
        }
    }
    buf
}

/// Stride-1 path over a padded f64 copy. Padding contributes exact zeros, so
/// the per-element summation order matches the general kernel.
fn forward_unit<T: Scalar>(x: &Tensor<T>, wt: &Tensor<T>, bias: &[T], g: &ConvGeom) -> Tensor<T> {
    let (ph, pw) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
    let xp = padded_planes(x, g);
    let wv: Vec<f64> = wt.data().iter().map(|v| v.widen()).collect();
    let mut out = Vec::with_capacity(g.n * g.cout * g.oh * g.ow);
    let mut acc = vec![0f64; g.oh * g.ow];
    for n in 0..g.n {
        for co in 0..g.cout {
            acc.iter_mut().for_each(|a| *a = bias[co].widen());
            for ci in 0..g.cin {
                let plane = &xp[(n * g.cin + ci) * ph * pw..(n * g.cin + ci + 1) * ph * pw];
                let wk = &wv[(co * g.cin + ci) * g.kh * g.kw..(co * g.cin + ci + 1) * g.kh * g.kw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let w = wk[ky * g.kw + kx];
                        for (oy, dst) in acc.chunks_exact_mut(g.ow).enumerate() {
                            let src = &plane[(oy + ky) * pw + kx..(oy + ky) * pw + kx + g.ow];
                            for (a, &v) in dst.iter_mut().zip(src) {
                                *a += w * v;
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&a| T::narrow(a)));
        }
    }
    Tensor::new(g.out_dims(), out).expect("conv output dims")
}

#[allow(clippy::needless_range_loop)]
pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    bias: &[T],
    g: &ConvGeom,
) -> Tensor<T> {
    if g.stride == 1 {
        return forward_unit(x, wt, bias, g);
    }
    let mut out = Vec::with_capacity(g.n * g.cout * g.oh * g.ow);
    let mut acc = vec![0f64; g.oh * g.ow];
    for n in 0..g.n {
        for co in 0..g.cout {
            acc.iter_mut().for_each(|a| *a = bias[co].widen());
            for ci in 0..g.cin {
                let plane = x.plane(n, ci);
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wt.at(co, ci, ky, kx).widen();
                        let (lo, hi) = g.ox_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let row = &plane[iy * g.w..(iy + 1) * g.w];
                            let dst = &mut acc[oy * g.ow + lo..oy * g.ow + hi];
                            if g.stride == 1 {
                                let src = &row[lo + kx - g.pad..hi + kx - g.pad];
                                for (a, &v) in dst.iter_mut().zip(src) {
                                    *a += wv * v.widen();
                                }
                            } else {
                                for (j, a) in dst.iter_mut().enumerate() {
                                    let ix = (lo + j) * g.stride + kx - g.pad;
                                    *a += wv * row[ix].widen();
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&a| T::narrow(a)));
        }
    }
    Tensor::new(g.out_dims(), out).expect("conv output dims")
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    gout: &[T],
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    if g.stride == 1 {
        return backward_unit(x, wt, gout, g, want);
    }
    let oplane = g.oh * g.ow;
    let gplane =
        |n: usize, co: usize| &gout[(n * g.cout + co) * oplane..(n * g.cout + co + 1) * oplane];

    let input = want[0].then(|| {
        let mut out = Vec::with_capacity(x.len());
        let mut acc = vec![0f64; g.h * g.w];
        for n in 0..g.n {
            for ci in 0..g.cin {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for co in 0..g.cout {
                    let gp = gplane(n, co);
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let wv = wt.at(co, ci, ky, kx).widen();
                            let (lo, hi) = g.ox_range(kx);
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..g.oh {
                                let Some(iy) = g.in_row(oy, ky) else { continue };
                                let src = &gp[oy * g.ow + lo..oy * g.ow + hi];
                                if g.stride == 1 {
                                    let start = iy * g.w + lo + kx - g.pad;
                                    let dst = &mut acc[start..start + (hi - lo)];
                                    for (a, &v) in dst.iter_mut().zip(src) {
                                        *a += wv * v.widen();
                                    }
                                } else {
                                    for (j, &v) in src.iter().enumerate() {
                                        let ix = (lo + j) * g.stride + kx - g.pad;
                                        acc[iy * g.w + ix] += wv * v.widen();
                                    }
                                }
                            }
                        }
                    }
                }
                out.extend(acc.iter().map(|&a| T::narrow(a)));
            }
        }
        out
    });

    let weight = want[1].then(|| {
        let ksz = g.kh * g.kw;
        let mut acc = vec![0f64; g.cout * g.cin * ksz];
        for n in 0..g.n {
            for co in 0..g.cout {
                let gp = gplane(n, co);
                for ci in 0..g.cin {
                    let plane = x.plane(n, ci);
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let (lo, hi) = g.ox_range(kx);
                            let mut s = 0f64;
                            if lo < hi {
                                for oy in 0..g.oh {
                                    let Some(iy) = g.in_row(oy, ky) else { continue };
                                    let gs = &gp[oy * g.ow + lo..oy * g.ow + hi];
                                    let row = &plane[iy * g.w..(iy + 1) * g.w];
                                    if g.stride == 1 {
                                        let xs = &row[lo + kx - g.pad..hi + kx - g.pad];
                                        for (&a, &b) in gs.iter().zip(xs) {
                                            s += a.widen() * b.widen();
                                        }
                                    } else {
                                        for (j, &a) in gs.iter().enumerate() {
                                            s += a.widen()
                                                * row[(lo + j) * g.stride + kx - g.pad].widen();
                                        }
                                    }
                                }
                            }
                            acc[(co * g.cin + ci) * ksz + ky * g.kw + kx] += s;
                        }
                    }
                }
            }
        }
        acc.into_iter().map(T::narrow).collect()
    });

    let bias = want[2].then(|| {
        let mut acc = vec![0f64; g.cout];
        for n in 0..g.n {
            for (co, a) in acc.iter_mut().enumerate() {
                *a += gplane(n, co).iter().map(|v| v.widen()).sum::<f64>();
            }
        }
        acc.into_iter().map(T::narrow).collect()
    });

    ConvGrads {
        input,
        weight,
        bias,
    }
}

fn backward_unit<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    gout: &[T],
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    let (ph, pw) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
    let oplane = g.oh * g.ow;
    let ksz = g.kh * g.kw;
    let go: Vec<f64> = gout.iter().map(|v| v.widen()).collect();
    let gplane =
        |n: usize, co: usize| &go[(n * g.cout + co) * oplane..(n * g.cout + co + 1) * oplane];

    let input = want[0].then(|| {
        let wv: Vec<f64> = wt.data().iter().map(|v| v.widen()).collect();
        let mut out = Vec::with_capacity(x.len());
        let mut acc = vec![0f64; ph * pw];
        for n in 0..g.n {
            for ci in 0..g.cin {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for co in 0..g.cout {
                    let gp = gplane(n, co);
                    let wk = &wv[(co * g.cin + ci) * ksz..(co * g.cin + ci + 1) * ksz];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let w = wk[ky * g.kw + kx];
                            for (oy, src) in gp.chunks_exact(g.ow).enumerate() {
                                let start = (oy + ky) * pw + kx;
                                for (a, &v) in acc[start..start + g.ow].iter_mut().zip(src) {
                                    *a += w * v;
                                }
                            }
                        }
                    }
                }
                for iy in 0..g.h {
                    let start = (iy + g.pad) * pw + g.pad;
                    out.extend(acc[start..start + g.w].iter().map(|&a| T::narrow(a)));
                }
            }
        }
        out
    });

    let weight = want[1].then(|| {
        let xp = padded_planes(x, g);
        let mut acc = vec![0f64; g.cout * g.cin * ksz];
        for n in 0..g.n {
            for co in 0..g.cout {
                let gp = gplane(n, co);
                for ci in 0..g.cin {
                    let plane = &xp[(n * g.cin + ci) * ph * pw..(n * g.cin + ci + 1) * ph * pw];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let mut s = 0f64;
                            for (oy, gs) in gp.chunks_exact(g.ow).enumerate() {
                                let xs = &plane[(oy + ky) * pw + kx..(oy + ky) * pw + kx + g.ow];
                                for (&a, &b) in gs.iter().zip(xs) {
                                    s += a * b;
                                }
                            }
                            acc[(co * g.cin + ci) * ksz + ky * g.kw + kx] += s;
                        }
                    }
                }
            }
        }
        acc.into_iter().map(T::narrow).collect()
    });

    let bias = want[2].then(|| {
        let mut acc = vec![0f64; g.cout];
        for n in 0..g.n {
            for (co, a) in acc.iter_mut().enumerate() {
                *a += gplane(n, co).iter().sum::<f64>();
            }
        }
        acc.into_iter().map(T::narrow).collect()
    });

    ConvGrads {
        input,
        weight,
        bias,
    }
}
