use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max pooling with a `factor × factor` window and equal stride.
///
/// Returns the pooled tensor and, per output element, the flat input index
/// that won. Ties go to the lowest linear index.
pub(crate) fn max_pool<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!(
            "max_pool2d: {}x{} not divisible by {}",
            h,
            w,
            factor
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * factor * w + ox * factor;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let i = base + (oy * factor + dy) * w + ox * factor + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new([n, c, oh, ow], out)?, arg))
}

pub(crate) fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(shape_err!("upsample factor must be >= 1"));
    }
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Adjoint of [`upsample_nearest`]: sums each `factor × factor` block.
pub(crate) fn upsample_backward<T: Scalar>(
    gout: &[T],
    in_dims: [usize; 4],
    factor: usize,
) -> Vec<T> {
    let [n, c, h, w] = in_dims;
    let ow = w * factor;
    let mut acc = vec![0f64; n * c * h * w];
    for nc in 0..n * c {
        let g = &gout[nc * h * w * factor * factor..(nc + 1) * h * w * factor * factor];
        for (oy, grow) in g.chunks_exact(ow).enumerate() {
            let dst = &mut acc[nc * h * w + (oy / factor) * w..nc * h * w + (oy / factor + 1) * w];
            for (ox, &v) in grow.iter().enumerate() {
                dst[ox / factor] += v.widen();
            }
        }
    }
    acc.into_iter().map(T::narrow).collect()
}
