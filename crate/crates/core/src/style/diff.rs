//! Differentiable style operators recorded on a [`Graph`].

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::style::{GridSize, PatchGrid, SwapPlan, STYLE_EPS};

/// `(mean, std)` graph nodes of every patch of `x`.
pub fn patch_stats<T: Scalar>(g: &mut Graph<T>, x: Var, grid: &PatchGrid) -> Result<(Var, Var)> {
    Ok((g.patch_mean(x, grid)?, g.patch_std(x, grid, STYLE_EPS)?))
}

/// Cross-patch style swap under an explicit donor plan.
pub fn cpss<T: Scalar>(g: &mut Graph<T>, x: Var, grid: &PatchGrid, plan: &SwapPlan) -> Result<Var> {
    let [n, ..] = g.dims(x);
    if plan.batch() != n || plan.slots() != grid.count() {
        return Err(shape_err!(
            "swap plan for {}x{} slots applied to batch {} with {} patches",
            plan.batch(),
            plan.slots(),
            n,
            grid.count()
        ));
    }
    let (mean, std) = patch_stats(g, x, grid)?;
    let donor_mean = g.gather_slots(mean, plan.assignment())?;
    let donor_std = g.gather_slots(std, plan.assignment())?;
    g.patch_affine(x, grid, mean, std, donor_mean, donor_std)
}

pub fn cpss_intra<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    size: GridSize,
    rng: &mut Rng,
    derangement: bool,
) -> Result<(Var, SwapPlan)> {
    let [n, _, h, w] = g.dims(x);
    let grid = PatchGrid::fit(size, h, w)?;
    let plan = SwapPlan::random_intra(n, grid.count(), rng, derangement);
    Ok((cpss(g, x, &grid, &plan)?, plan))
}

pub fn cpss_inter<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    size: GridSize,
    rng: &mut Rng,
    derangement: bool,
) -> Result<(Var, SwapPlan)> {
    let [n, _, h, w] = g.dims(x);
    let grid = PatchGrid::fit(size, h, w)?;
    let plan = SwapPlan::random_inter(n, grid.count(), rng, derangement);
    Ok((cpss(g, x, &grid, &plan)?, plan))
}

/// AdaIN over whole maps: `content` normalized by its own statistics and
/// de-normalized with those of `style`, sample by sample.
pub fn adain<T: Scalar>(g: &mut Graph<T>, content: Var, style: Var) -> Result<Var> {
    let [n, c, h, w] = g.dims(content);
    let [sn, sc, sh, sw] = g.dims(style);
    if n != sn || c != sc {
        return Err(shape_err!(
            "adain: content {:?} vs style {:?}",
            g.dims(content),
            g.dims(style)
        ));
    }
    let cgrid = PatchGrid::fit(GridSize::SINGLE, h, w)?;
    let sgrid = PatchGrid::fit(GridSize::SINGLE, sh, sw)?;
    let (cm, cs) = patch_stats(g, content, &cgrid)?;
    let (sm, ss) = patch_stats(g, style, &sgrid)?;
    g.patch_affine(content, &cgrid, cm, cs, sm, ss)
}

/// Shuffle and `Beta(alpha, alpha)` weights for one MixStyle application.
pub fn draw_mixstyle(batch: usize, rng: &mut Rng, alpha: f64) -> (Vec<usize>, Vec<f64>) {
    let perm = rng.permutation(batch);
    let lambdas = (0..batch).map(|_| rng.beta(alpha)).collect();
    (perm, lambdas)
}

/// MixStyle with explicit partner `perm` and weights: mixed statistics are
/// `λ·own + (1 − λ)·partner` for both mean and std.
pub fn mixstyle<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    perm: &[usize],
    lambdas: &[f64],
) -> Result<Var> {
    let [n, _, h, w] = g.dims(x);
    if lambdas.len() != n {
        return Err(shape_err!(
            "mixstyle: {} weights for batch {}",
            lambdas.len(),
            n
        ));
    }
    let grid = PatchGrid::fit(GridSize::SINGLE, h, w)?;
    let (mean, std) = patch_stats(g, x, &grid)?;
    let other: Vec<f64> = lambdas.iter().map(|l| 1.0 - l).collect();
    let mix = |g: &mut Graph<T>, s: Var| -> Result<Var> {
        let partner = g.gather_slots(s, perm)?;
        let own = g.scale_samples(s, lambdas)?;
        let theirs = g.scale_samples(partner, &other)?;
        g.add(own, theirs)
    };
    let mixed_mean = mix(g, mean)?;
    let mixed_std = mix(g, std)?;
    g.patch_affine(x, &grid, mean, std, mixed_mean, mixed_std)
}

pub fn mixstyle_random<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    rng: &mut Rng,
    alpha: f64,
) -> Result<Var> {
    let (perm, lambdas) = draw_mixstyle(g.dims(x)[0], rng, alpha);
    mixstyle(g, x, &perm, &lambdas)
}

/// CrossNorm: inter-image CPSS on a 1×1 grid.
pub fn crossnorm<T: Scalar>(g: &mut Graph<T>, x: Var, rng: &mut Rng) -> Result<Var> {
    Ok(cpss_inter(g, x, GridSize::SINGLE, rng, false)?.0)
}
