//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] owns every value produced during one forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards is a valid
//! topological order. Only leaves keep gradients after [`Graph::backward`];
//! intermediate gradients live for the duration of one call, which makes
//! repeated calls accumulate exactly once per call.

mod conv;
mod pool;

use crate::error::{contract_err, data_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::style::grid::PatchGrid;
use crate::tensor::{LabelMap, Tensor, IGNORE};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: conv::ConvGeom,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleSamples {
        x: Var,
        factors: Vec<f64>,
    },
    Sum(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: LabelMap,
        count: usize,
    },
    PatchMean {
        x: Var,
        grid: PatchGrid,
    },
    PatchStd {
        x: Var,
        grid: PatchGrid,
        eps: f64,
    },
    PatchAffine {
        x: Var,
        grid: PatchGrid,
        stats: [Var; 4],
    },
    GatherSlots {
        x: Var,
        perm: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.dims()
    }

    /// Accumulated gradient of a leaf created with [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let bias_dims = self.dims(b);
        if bias_dims[0] != 1 || bias_dims[2] != 1 || bias_dims[3] != 1 {
            return Err(shape_err!(
                "conv2d bias must be [1, Cout, 1, 1], got {:?}",
                bias_dims
            ));
        }
        let geom = conv::ConvGeom::new(self.dims(x), self.dims(w), bias_dims[1], stride, pad)?;
        let out = conv::forward(self.value(x), self.value(w), self.value(b).data(), &geom);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn max_pool2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (out, argmax) = pool::max_pool(self.value(x), factor)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pool::upsample_nearest(self.value(x), factor)?;
        Ok(self.push(out, Op::Upsample { x, factor }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let out = Tensor::new(self.dims(a), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let out = Tensor::new(self.dims(a), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| T::narrow(v.widen() * c));
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Multiplies sample `k` of `x` by `factors[k]`.
    pub fn scale_samples(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let dims = self.dims(x);
        if factors.len() != dims[0] {
            return Err(shape_err!(
                "scale_samples: {} factors for batch {}",
                factors.len(),
                dims[0]
            ));
        }
        let per = dims[1] * dims[2] * dims[3];
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::narrow(v.widen() * factors[i / per]))
            .collect();
        let out = Tensor::new(dims, data)?;
        Ok(self.push(
            out,
            Op::ScaleSamples {
                x,
                factors: factors.to_vec(),
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.widen()).sum();
        self.push(Tensor::scalar(T::narrow(s)), Op::Sum(x), &[x])
    }

    /// Per-pixel softmax over the channel axis, stabilized by max subtraction.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = softmax_channels(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    /// Mean over non-ignored pixels of `-log softmax(logits)[label]`;
    /// zero when every pixel is ignored.
    pub fn cross_entropy(&mut self, logits: Var, labels: &LabelMap) -> Result<Var> {
        let [n, c, h, w] = self.dims(logits);
        if labels.dims() != [n, h, w] {
            return Err(shape_err!(
                "labels {:?} do not match logits {:?}",
                labels.dims(),
                [n, c, h, w]
            ));
        }
        let plane = h * w;
        let x = self.value(logits).data();
        let mut total = 0f64;
        let mut count = 0usize;
        for i in 0..n {
            for p in 0..plane {
                let y = labels.data()[i * plane + p];
                if y == IGNORE {
                    continue;
                }
                if y as usize >= c {
                    return Err(data_err!("label {} out of range for {} classes", y, c));
                }
                let (max, lse) = log_sum_exp(x, i * c * plane + p, c, plane);
                total += max + lse - x[(i * c + y as usize) * plane + p].widen();
                count += 1;
            }
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        Ok(self.push(
            Tensor::scalar(T::narrow(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.clone(),
                count,
            },
            &[logits],
        ))
    }

    /// Per-patch, per-channel mean: output dims `[N, C, rows, cols]`.
    pub fn patch_mean(&mut self, x: Var, grid: &PatchGrid) -> Result<Var> {
        self.check_grid(x, grid)?;
        let (mean, _) = patch_moments(self.value(x), grid, None);
        Ok(self.push(
            mean,
            Op::PatchMean {
                x,
                grid: grid.clone(),
            },
            &[x],
        ))
    }

    /// Per-patch, per-channel population standard deviation clamped below by `eps`.
    pub fn patch_std(&mut self, x: Var, grid: &PatchGrid, eps: f64) -> Result<Var> {
        self.check_grid(x, grid)?;
        let (_, std) = patch_moments(self.value(x), grid, Some(eps));
        Ok(self.push(
            std.expect("std requested"),
            Op::PatchStd {
                x,
                grid: grid.clone(),
                eps,
            },
            &[x],
        ))
    }

    /// `donor_std · (x − content_mean) / content_std + donor_mean`, with the
    /// four statistics broadcast over the pixels of each patch.
    pub fn patch_affine(
        &mut self,
        x: Var,
        grid: &PatchGrid,
        content_mean: Var,
        content_std: Var,
        donor_mean: Var,
        donor_std: Var,
    ) -> Result<Var> {
        self.check_grid(x, grid)?;
        let [n, c, _, _] = self.dims(x);
        let want = [n, c, grid.rows(), grid.cols()];
        for s in [content_mean, content_std, donor_mean, donor_std] {
            if self.dims(s) != want {
                return Err(shape_err!(
                    "patch statistics {:?}, expected {:?}",
                    self.dims(s),
                    want
                ));
            }
        }
        let stats = [content_mean, content_std, donor_mean, donor_std];
        let out = {
            let xv = self.value(x);
            let [mc, sc, md, sd] = stats.map(|s| self.value(s).data());
            let (h, w) = (grid.height(), grid.width());
            let np = grid.count();
            let mut out = Vec::with_capacity(xv.len());
            for nc in 0..n * c {
                let plane = &xv.data()[nc * h * w..(nc + 1) * h * w];
                let coef: Vec<(f64, f64, f64)> = (0..np)
                    .map(|p| {
                        let k = nc * np + p;
                        (mc[k].widen(), sd[k].widen() / sc[k].widen(), md[k].widen())
                    })
                    .collect();
                for y in 0..h {
                    let base = grid.row_owner()[y] * grid.cols();
                    for (x_, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                        let (m, r, d) = coef[base + grid.col_owner()[x_]];
                        out.push(T::narrow(r * (v.widen() - m) + d));
                    }
                }
            }
            Tensor::new(xv.dims(), out)?
        };
        Ok(self.push(
            out,
            Op::PatchAffine {
                x,
                grid: grid.clone(),
                stats,
            },
            &[x, content_mean, content_std, donor_mean, donor_std],
        ))
    }

    /// Reorders patch slots of a `[N, C, rows, cols]` statistics tensor.
    ///
    /// Slot `k·n + p` (sample `k`, patch `p`) of the output takes the value of
    /// slot `perm[k·n + p]` of the input, for every channel.
    pub fn gather_slots(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let [n, c, r, cl] = self.dims(x);
        let per = r * cl;
        check_permutation(perm, n * per)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (dst, &from) in perm.iter().enumerate() {
            let (dk, dp) = (dst / per, dst % per);
            let (sk, sp) = (from / per, from % per);
            for ch in 0..c {
                out[(dk * c + ch) * per + dp] = src[(sk * c + ch) * per + sp];
            }
        }
        let out = Tensor::new([n, c, r, cl], out)?;
        Ok(self.push(
            out,
            Op::GatherSlots {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    fn same_dims(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err!(
                "{}: {:?} vs {:?}",
                what,
                self.dims(a),
                self.dims(b)
            ));
        }
        Ok(())
    }

    fn check_grid(&self, x: Var, grid: &PatchGrid) -> Result<()> {
        let [_, _, h, w] = self.dims(x);
        if !grid.matches(h, w) {
            return Err(shape_err!(
                "grid fitted to {}x{} used on {}x{} features",
                grid.height(),
                grid.width(),
                h,
                w
            ));
        }
        Ok(())
    }

    /// Accumulates `∂loss/∂leaf` into every parameter leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward from non-scalar node with dims {:?}",
                self.dims(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                add_into(&mut self.nodes[i].grad, g);
                continue;
            }
            for (v, contribution) in self.vjp(i, &g) {
                if self.nodes[v.0].requires_grad {
                    add_into(&mut grads[v.0], contribution);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each of its inputs.
    fn vjp(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, geom } => {
                let r = conv::backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    geom,
                    [wants(*x), wants(*w), wants(*b)],
                );
                [(*x, r.input), (*w, r.weight), (*b, r.bias)]
                    .into_iter()
                    .filter_map(|(v, gr)| gr.map(|gr| (v, gr)))
                    .collect()
            }
            Op::Relu(x) => {
                let gx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, gx)]
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    gx[a as usize] += gv;
                }
                vec![(*x, gx)]
            }
            Op::Upsample { x, factor } => {
                vec![(*x, pool::upsample_backward(g, self.dims(*x), *factor))]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, g.iter().zip(vb).map(|(&gv, &q)| gv * q).collect()),
                    (*b, g.iter().zip(va).map(|(&gv, &p)| gv * p).collect()),
                ]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|&v| T::narrow(v.widen() * c)).collect())],
            Op::ScaleSamples { x, factors } => {
                let d = self.dims(*x);
                let per = d[1] * d[2] * d[3];
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| T::narrow(v.widen() * factors[j / per]))
                    .collect();
                vec![(*x, gx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::Softmax(x) => {
                let [n, c, h, w] = self.dims(*x);
                let plane = h * w;
                let p = node.value.data();
                let mut gx = vec![T::zero(); p.len()];
                for i in 0..n {
                    for px in 0..plane {
                        let at = |k: usize| (i * c + k) * plane + px;
                        let dot: f64 = (0..c).map(|k| g[at(k)].widen() * p[at(k)].widen()).sum();
                        for k in 0..c {
                            gx[at(k)] = T::narrow(p[at(k)].widen() * (g[at(k)].widen() - dot));
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::CrossEntropy {
                logits,
                labels,
                count,
            } => {
                let [n, c, h, w] = self.dims(*logits);
                let plane = h * w;
                let x = self.value(*logits).data();
                let mut gx = vec![T::zero(); x.len()];
                if *count > 0 {
                    let scale = g[0].widen() / *count as f64;
                    for i in 0..n {
                        for px in 0..plane {
                            let y = labels.data()[i * plane + px];
                            if y == IGNORE {
                                continue;
                            }
                            let base = i * c * plane + px;
                            let (max, lse) = log_sum_exp(x, base, c, plane);
                            for k in 0..c {
                                let prob = (x[base + k * plane].widen() - max - lse).exp();
                                let target = if k == y as usize { 1.0 } else { 0.0 };
                                gx[base + k * plane] = T::narrow(scale * (prob - target));
                            }
                        }
                    }
                }
                vec![(*logits, gx)]
            }
            Op::PatchMean { x, grid } => {
                let xv = self.value(*x);
                let np = grid.count();
                let gx = broadcast_patches(xv, grid, |nc, p, _| {
                    g[nc * np + p].widen() / grid.area(p) as f64
                });
                vec![(*x, gx)]
            }
            Op::PatchStd { x, grid, eps } => {
                let xv = self.value(*x);
                let np = grid.count();
                let (mean, _) = patch_moments(xv, grid, None);
                let std = node.value.data();
                let mean = mean.data();
                let gx = broadcast_patches(xv, grid, |nc, p, v| {
                    let k = nc * np + p;
                    let s = std[k].widen();
                    if s > *eps {
                        g[k].widen() * (v - mean[k].widen()) / (grid.area(p) as f64 * s)
                    } else {
                        0.0
                    }
                });
                vec![(*x, gx)]
            }
            Op::PatchAffine { x, grid, stats } => self.patch_affine_vjp(*x, grid, stats, g),
            Op::GatherSlots { x, perm } => {
                let [n, c, r, cl] = self.dims(*x);
                let per = r * cl;
                let mut gx = vec![T::zero(); n * c * per];
                for (dst, &from) in perm.iter().enumerate() {
                    let (dk, dp) = (dst / per, dst % per);
                    let (sk, sp) = (from / per, from % per);
                    for ch in 0..c {
                        gx[(sk * c + ch) * per + sp] += g[(dk * c + ch) * per + dp];
                    }
                }
                vec![(*x, gx)]
            }
        }
    }

    fn patch_affine_vjp(
        &self,
        x: Var,
        grid: &PatchGrid,
        stats: &[Var; 4],
        g: &[T],
    ) -> Vec<(Var, Vec<T>)> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims();
        let np = grid.count();
        let [mc, sc, _, sd] = stats.map(|s| self.value(s).data());
        let mut gx = Vec::with_capacity(xv.len());
        // Per slot: Σg, Σg·(x−mc)
        let mut sum_g = vec![0f64; n * c * np];
        let mut sum_gz = vec![0f64; n * c * np];
        for nc in 0..n * c {
            let plane = &xv.data()[nc * h * w..(nc + 1) * h * w];
            let gp = &g[nc * h * w..(nc + 1) * h * w];
            for y in 0..h {
                let base = grid.row_owner()[y] * grid.cols();
                for xi in 0..w {
                    let k = nc * np + base + grid.col_owner()[xi];
                    let gv = gp[y * w + xi].widen();
                    gx.push(T::narrow(gv * sd[k].widen() / sc[k].widen()));
                    sum_g[k] += gv;
                    sum_gz[k] += gv * (plane[y * w + xi].widen() - mc[k].widen());
                }
            }
        }
        let slot =
            |f: &dyn Fn(usize) -> f64| (0..n * c * np).map(|k| T::narrow(f(k))).collect::<Vec<T>>();
        let d_mc = slot(&|k| -sum_g[k] * sd[k].widen() / sc[k].widen());
        let d_sc = slot(&|k| -sum_gz[k] * sd[k].widen() / (sc[k].widen() * sc[k].widen()));
        let d_md = slot(&|k| sum_g[k]);
        let d_sd = slot(&|k| sum_gz[k] / sc[k].widen());
        vec![
            (x, gx),
            (stats[0], d_mc),
            (stats[1], d_sc),
            (stats[2], d_md),
            (stats[3], d_sd),
        ]
    }
}

/// `(max, ln Σ exp(x − max))` over the channel entries of one pixel.
fn log_sum_exp<T: Scalar>(x: &[T], base: usize, c: usize, plane: usize) -> (f64, f64) {
    let max = (0..c)
        .map(|k| x[base + k * plane].widen())
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = (0..c)
        .map(|k| (x[base + k * plane].widen() - max).exp())
        .sum();
    (max, s.ln())
}

pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if c == 0 {
        return Err(shape_err!("softmax over zero channels"));
    }
    let plane = h * w;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for i in 0..n {
        for p in 0..plane {
            let base = i * c * plane + p;
            let (max, lse) = log_sum_exp(d, base, c, plane);
            for k in 0..c {
                out[base + k * plane] = T::narrow((d[base + k * plane].widen() - max - lse).exp());
            }
        }
    }
    Tensor::new(x.dims(), out)
}

/// Per-patch mean and (optionally) `eps`-clamped population std, both
/// shaped `[N, C, rows, cols]`. Two-pass in f64.
pub(crate) fn patch_moments<T: Scalar>(
    x: &Tensor<T>,
    grid: &PatchGrid,
    eps: Option<f64>,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let [n, c, h, w] = x.dims();
    let np = grid.count();
    let mut sum = vec![0f64; n * c * np];
    for nc in 0..n * c {
        let plane = &x.data()[nc * h * w..(nc + 1) * h * w];
        for y in 0..h {
            let base = nc * np + grid.row_owner()[y] * grid.cols();
            for (xi, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                sum[base + grid.col_owner()[xi]] += v.widen();
            }
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .enumerate()
        .map(|(k, s)| s / grid.area(k % np) as f64)
        .collect();
    let std = eps.map(|eps| {
        let mut sq = vec![0f64; n * c * np];
        for nc in 0..n * c {
            let plane = &x.data()[nc * h * w..(nc + 1) * h * w];
            for y in 0..h {
                let base = nc * np + grid.row_owner()[y] * grid.cols();
                for (xi, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                    let k = base + grid.col_owner()[xi];
                    let d = v.widen() - mean[k];
                    sq[k] += d * d;
                }
            }
        }
        let data = sq
            .iter()
            .enumerate()
            .map(|(k, s)| T::narrow((s / grid.area(k % np) as f64).sqrt().max(eps)))
            .collect();
        Tensor::new([n, c, grid.rows(), grid.cols()], data).expect("std dims")
    });
    let mean = Tensor::new(
        [n, c, grid.rows(), grid.cols()],
        mean.into_iter().map(T::narrow).collect(),
    )
    .expect("mean dims");
    (mean, std)
}

/// Full-size buffer where each pixel gets `f(nc, patch, pixel value)`.
fn broadcast_patches<T: Scalar>(
    x: &Tensor<T>,
    grid: &PatchGrid,
    f: impl Fn(usize, usize, f64) -> f64,
) -> Vec<T> {
    let [n, c, h, w] = x.dims();
    let mut out = Vec::with_capacity(x.len());
    for nc in 0..n * c {
        let plane = &x.data()[nc * h * w..(nc + 1) * h * w];
        for y in 0..h {
            let base = grid.row_owner()[y] * grid.cols();
            for (xi, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                out.push(T::narrow(f(nc, base + grid.col_owner()[xi], v.widen())));
            }
        }
    }
    out
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(contract_err!(
            "permutation has {} entries, expected {}",
            perm.len(),
            n
        ));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(contract_err!("assignment is not a bijection on 0..{}", n));
        }
    }
    Ok(())
}
