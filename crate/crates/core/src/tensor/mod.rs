//! Dense NCHW tensors and per-pixel label maps.

pub mod sfot;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Label value marking a pixel that carries no supervision.
pub const IGNORE: u8 = 255;

/// Rank-4 `[N, C, H, W]` array, row-major with N outermost, plus an optional
/// gradient buffer of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: [usize; 4],
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(shape_err!(
                "dims {:?} need {} values, got {}",
                dims,
                len,
                data.len()
            ));
        }
        Ok(Self {
            dims,
            data,
            grad: None,
        })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
            grad: None,
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Self {
            dims,
            data,
            grad: None,
        }
    }

    /// Single-element tensor of dims `[1, 1, 1, 1]`.
    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn batch(&self) -> usize {
        self.dims[0]
    }
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    pub fn height(&self) -> usize {
        self.dims[2]
    }
    pub fn width(&self) -> usize {
        self.dims[3]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The `H·W` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor with dims {:?}", self.dims));
        }
        Ok(self.data[0])
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Copy without the gradient buffer.
    pub fn detached(&self) -> Self {
        Self {
            dims: self.dims,
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::narrow(v.widen())).collect(),
            grad: None,
        }
    }

    pub fn reshape(mut self, dims: [usize; 4]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.dims, dims));
        }
        self.dims = dims;
        self.grad = None;
        Ok(self)
    }

    /// Samples `start..start+count` along the batch axis.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.dims[0] {
            return Err(shape_err!(
                "batch slice {}..{} out of range for {:?}",
                start,
                start + count,
                self.dims
            ));
        }
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        Self::new(
            [count, self.dims[1], self.dims[2], self.dims[3]],
            self.data[start * per..(start + count) * per].to_vec(),
        )
    }

    /// Concatenates along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("stack of zero tensors"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.dims[1..] != [c, h, w] {
                return Err(shape_err!("stack: {:?} vs {:?}", t.dims, first.dims));
            }
            n += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Self::new([n, c, h, w], data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.widen() - b.widen()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel class indices `[N, H, W]`; [`IGNORE`] marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(shape_err!(
                "label dims {:?} need {} values, got {}",
                dims,
                dims.iter().product::<usize>(),
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: u8) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.dims[0] {
            return Err(shape_err!("label slice out of range"));
        }
        let per = self.dims[1] * self.dims[2];
        Self::new(
            [count, self.dims[1], self.dims[2]],
            self.data[start * per..(start + count) * per].to_vec(),
        )
    }

    pub fn stack(items: &[&LabelMap]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("stack of zero label maps"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if m.dims[1..] != first.dims[1..] {
                return Err(shape_err!("label stack: {:?} vs {:?}", m.dims, first.dims));
            }
            n += m.dims[0];
            data.extend_from_slice(&m.data);
        }
        Self::new([n, first.dims[1], first.dims[2]], data)
    }
}

/// Per-pixel argmax over channels; ties go to the lowest channel index.
pub fn argmax_channels<T: Scalar>(t: &Tensor<T>) -> LabelMap {
    let [n, c, h, w] = t.dims();
    let plane = h * w;
    let mut out = vec![0u8; n * plane];
    for i in 0..n {
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = t.data()[(i * c) * plane + p];
            for k in 1..c {
                let v = t.data()[(i * c + k) * plane + p];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            out[i * plane + p] = best as u8;
        }
    }
    LabelMap {
        dims: [n, h, w],
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::<f32>::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(LabelMap::new([1, 2, 2], vec![0; 3]).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::<f32>::from_fn([2, 3, 4, 5], |[n, c, y, x]| {
            (n * 1000 + c * 100 + y * 10 + x) as f32
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.offset(1, 0, 2, 1)], 1021.0);
        assert_eq!(t.plane(1, 1)[0], 1100.0);
    }

    #[test]
    fn grad_allocates_lazily_and_matches_dims() {
        let mut t = Tensor::<f64>::zeros([1, 1, 2, 3]);
        assert!(t.grad().is_none());
        t.grad_mut()[4] = 2.0;
        assert_eq!(t.grad().unwrap().len(), t.len());
        t.zero_grad();
        assert!(t.grad().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let t = Tensor::<f32>::new([1, 3, 1, 2], vec![0.5, 0.1, 0.5, 0.7, 0.2, 0.7]).unwrap();
        assert_eq!(argmax_channels(&t).data(), &[0, 1]);
    }

    #[test]
    fn stack_and_slice_roundtrip() {
        let a = Tensor::<f32>::full([1, 2, 2, 2], 1.0);
        let b = Tensor::<f32>::full([2, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.dims(), [3, 2, 2, 2]);
        assert_eq!(s.slice_batch(1, 2).unwrap(), b);
    }
}
