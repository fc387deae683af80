//! Style-statistics operators: AdaIN, intra- and inter-image cross-patch
//! style swap (CPSS), and the MixStyle / CrossNorm baselines.
//!
//! A feature map's "style" is its per-channel mean and standard deviation.
//! Every operator here normalizes a region by its own statistics and
//! de-normalizes it with statistics taken from somewhere else:
//!
//! ```text
//! out = σ(donor) · (x − μ(x)) / σ(x) + μ(donor)
//! ```
//!
//! [`diff`] records the operators on a [`Graph`](crate::autograd::Graph) so
//! gradients flow through both the content and the donor statistics. The
//! free functions in this module are convenience wrappers over plain tensors.

pub mod diff;
pub mod grid;
mod inject;

use crate::autograd::{check_permutation, patch_moments, Graph};
use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use grid::{GridSize, PatchGrid};
pub use inject::{inject, inject_tensor, InjectionConfig, Variant};

/// Lower clamp on every standard deviation used for normalization.
pub const STYLE_EPS: f64 = 1e-5;

/// Per-(sample, patch, channel) mean and clamped standard deviation, each
/// shaped `[N, C, rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStyle<T> {
    pub mean: Tensor<T>,
    pub std: Tensor<T>,
}

impl<T: Scalar> PatchStyle<T> {
    /// `(mean, std)` of `patch` in `channel` of `sample`.
    pub fn get(&self, sample: usize, patch: usize, channel: usize) -> (T, T) {
        let [_, c, r, cols] = self.mean.dims();
        let k = (sample * c + channel) * r * cols + patch;
        (self.mean.data()[k], self.std.data()[k])
    }
}

/// Mean and `STYLE_EPS`-clamped population standard deviation of every patch.
pub fn compute_patch_style<T: Scalar>(feat: &Tensor<T>, grid: &PatchGrid) -> Result<PatchStyle<T>> {
    if !grid.matches(feat.height(), feat.width()) {
        return Err(shape_err!(
            "grid fitted to {}x{} used on {}x{} features",
            grid.height(),
            grid.width(),
            feat.height(),
            feat.width()
        ));
    }
    let (mean, std) = patch_moments(feat, grid, Some(STYLE_EPS));
    Ok(PatchStyle {
        mean,
        std: std.expect("std requested"),
    })
}

/// Whether donors are drawn within each sample or across the whole batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwapScope {
    Intra,
    Inter,
}

/// Donor assignment over the `batch · slots` patch slots of a batch.
///
/// Slot `k·slots + p` is patch `p` of sample `k`; it is re-styled with the
/// statistics of slot `assignment[k·slots + p]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwapPlan {
    assignment: Vec<usize>,
    scope: SwapScope,
    batch: usize,
    slots: usize,
}

impl SwapPlan {
    pub fn identity(batch: usize, slots: usize, scope: SwapScope) -> Self {
        Self {
            assignment: (0..batch * slots).collect(),
            scope,
            batch,
            slots,
        }
    }

    /// One permutation of `0..slots` per sample.
    pub fn intra(per_sample: &[Vec<usize>], slots: usize) -> Result<Self> {
        let mut assignment = Vec::with_capacity(per_sample.len() * slots);
        for (k, perm) in per_sample.iter().enumerate() {
            check_permutation(perm, slots)?;
            assignment.extend(perm.iter().map(|&p| k * slots + p));
        }
        Ok(Self {
            assignment,
            scope: SwapScope::Intra,
            batch: per_sample.len(),
            slots,
        })
    }

    /// One permutation over all `batch · slots` slots.
    pub fn inter(batch: usize, slots: usize, perm: Vec<usize>) -> Result<Self> {
        check_permutation(&perm, batch * slots)?;
        Ok(Self {
            assignment: perm,
            scope: SwapScope::Inter,
            batch,
            slots,
        })
    }

    /// Independent uniform permutation (or derangement) per sample.
    pub fn random_intra(batch: usize, slots: usize, rng: &mut Rng, derangement: bool) -> Self {
        let per: Vec<Vec<usize>> = (0..batch)
            .map(|_| {
                if derangement {
                    rng.derangement(slots)
                } else {
                    rng.permutation(slots)
                }
            })
            .collect();
        Self::intra(&per, slots).expect("drawn permutations are bijections")
    }

    /// Uniform permutation (or derangement) over all slots of the batch.
    pub fn random_inter(batch: usize, slots: usize, rng: &mut Rng, derangement: bool) -> Self {
        let perm = if derangement {
            rng.derangement(batch * slots)
        } else {
            rng.permutation(batch * slots)
        };
        Self {
            assignment: perm,
            scope: SwapScope::Inter,
            batch,
            slots,
        }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
    pub fn scope(&self) -> SwapScope {
        self.scope
    }
    pub fn batch(&self) -> usize {
        self.batch
    }
    pub fn slots(&self) -> usize {
        self.slots
    }

    /// `(sample, patch)` providing the style for patch `patch` of `sample`.
    pub fn donor(&self, sample: usize, patch: usize) -> (usize, usize) {
        let d = self.assignment[sample * self.slots + patch];
        (d / self.slots, d % self.slots)
    }

    pub fn is_identity(&self) -> bool {
        self.assignment.iter().enumerate().all(|(i, &d)| i == d)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.assignment.len()];
        for (i, &d) in self.assignment.iter().enumerate() {
            inv[d] = i;
        }
        Self {
            assignment: inv,
            ..self.clone()
        }
    }

    /// Re-checks that the assignment is a bijection (and stays within each
    /// sample for intra plans).
    pub fn validate(&self) -> Result<()> {
        check_permutation(&self.assignment, self.batch * self.slots)?;
        if self.scope == SwapScope::Intra
            && self
                .assignment
                .iter()
                .enumerate()
                .any(|(i, &d)| i / self.slots != d / self.slots)
        {
            return Err(crate::error::contract_err!("intra plan crosses samples"));
        }
        Ok(())
    }
}

fn eval<T: Scalar>(
    inputs: &[&Tensor<T>],
    f: impl FnOnce(&mut Graph<T>, &[crate::autograd::Var]) -> Result<crate::autograd::Var>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).clone())
}

/// Re-styles every patch of `feat` with its donor's statistics under `plan`.
pub fn cpss_with_plan<T: Scalar>(
    feat: &Tensor<T>,
    size: GridSize,
    plan: &SwapPlan,
) -> Result<Tensor<T>> {
    let grid = PatchGrid::fit(size, feat.height(), feat.width())?;
    eval(&[feat], |g, v| diff::cpss(g, v[0], &grid, plan))
}

/// Intra-image CPSS: each sample swaps styles among its own patches.
pub fn cpss_intra<T: Scalar>(feat: &Tensor<T>, size: GridSize, rng: &mut Rng) -> Result<Tensor<T>> {
    let plan = SwapPlan::random_intra(feat.batch(), size.count(), rng, false);
    cpss_with_plan(feat, size, &plan)
}

/// Inter-image CPSS: one permutation over all `B·n` patches of the batch.
pub fn cpss_inter<T: Scalar>(feat: &Tensor<T>, size: GridSize, rng: &mut Rng) -> Result<Tensor<T>> {
    let plan = SwapPlan::random_inter(feat.batch(), size.count(), rng, false);
    cpss_with_plan(feat, size, &plan)
}

/// Whole-map AdaIN of `content` with the statistics of `style`, per sample.
pub fn adain<T: Scalar>(content: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
    eval(&[content, style], |g, v| diff::adain(g, v[0], v[1]))
}

/// MixStyle with an explicit sample shuffle and per-sample mixing weights.
pub fn mixstyle_with<T: Scalar>(
    feat: &Tensor<T>,
    perm: &[usize],
    lambdas: &[f64],
) -> Result<Tensor<T>> {
    eval(&[feat], |g, v| diff::mixstyle(g, v[0], perm, lambdas))
}

/// MixStyle: whole-map statistics mixed with a shuffled partner's using
/// `λ ~ Beta(alpha, alpha)`, λ weighting the sample's own statistics.
pub fn mixstyle<T: Scalar>(feat: &Tensor<T>, rng: &mut Rng, alpha: f64) -> Result<Tensor<T>> {
    let (perm, lambdas) = diff::draw_mixstyle(feat.batch(), rng, alpha);
    mixstyle_with(feat, &perm, &lambdas)
}

/// CrossNorm: whole-map statistics exchanged along a random shuffle; the
/// same computation as [`cpss_inter`] on a 1×1 grid.
pub fn crossnorm<T: Scalar>(feat: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
    cpss_inter(feat, GridSize::SINGLE, rng)
}

#[cfg(test)]
mod tests;
