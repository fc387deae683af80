use serde_json::{json, Value};

use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::style::{
    compute_patch_style, cpss_with_plan, crossnorm, mixstyle, GridSize, PatchGrid, SwapPlan,
    SwapScope, Variant,
};
use crate::tensor::Tensor;

pub struct StylizeOutput {
    pub images: Vec<Tensor<f32>>,
    /// Swap plan (CPSS variants) and per-patch `[mean, std]` per channel,
    /// before and after.
    pub stats: Value,
}

fn patch_stats_json(t: &Tensor<f32>, grid: &PatchGrid) -> Result<Value> {
    let style = compute_patch_style(t, grid)?;
    let [n, c, ..] = t.dims();
    Ok(Value::Array(
        (0..n)
            .map(|b| {
                Value::Array(
                    (0..grid.count())
                        .map(|p| {
                            Value::Array(
                                (0..c)
                                    .map(|ch| {
                                        let (m, s) = style.get(b, p, ch);
                                        json!([m, s])
                                    })
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            })
            .collect(),
    ))
}

/// Applies a style operator at image level. `identity` forces the identity
/// swap plan for the CPSS variants.
pub fn stylize(
    images: &[Tensor<f32>],
    size: GridSize,
    variant: Variant,
    seed: u64,
    identity: bool,
) -> Result<StylizeOutput> {
    if images.is_empty() {
        return Err(config_err!("stylize needs at least one image"));
    }
    if matches!(
        variant,
        Variant::Inter | Variant::MixStyle | Variant::CrossNorm
    ) && images.len() < 2
        && !identity
    {
        return Err(config_err!("variant {} needs at least two images", variant));
    }
    let batch = Tensor::stack(&images.iter().collect::<Vec<_>>())?;
    let [n, _, h, w] = batch.dims();
    let grid = PatchGrid::fit(size, h, w)?;
    let mut rng = Rng::new(seed, 0x7374);
    let mut plan_json = Value::Null;
    let out = match variant {
        Variant::Off => batch.clone(),
        Variant::Intra | Variant::Inter => {
            let scope = if variant == Variant::Intra {
                SwapScope::Intra
            } else {
                SwapScope::Inter
            };
            let plan = match (identity, scope) {
                (true, _) => SwapPlan::identity(n, grid.count(), scope),
                (false, SwapScope::Intra) => {
                    SwapPlan::random_intra(n, grid.count(), &mut rng, false)
                }
                (false, SwapScope::Inter) => {
                    SwapPlan::random_inter(n, grid.count(), &mut rng, false)
                }
            };
            plan_json = json!(plan.assignment());
            cpss_with_plan(&batch, size, &plan)?
        }
        Variant::MixStyle if identity => batch.clone(),
        Variant::MixStyle => mixstyle(&batch, &mut rng, 0.1)?,
        Variant::CrossNorm if identity => batch.clone(),
        Variant::CrossNorm => crossnorm(&batch, &mut rng)?,
    };
    let stats = json!({
        "grid": size.to_string(),
        "variant": variant.to_string(),
        "seed": seed,
        "plan": plan_json,
        "pre": patch_stats_json(&batch, &grid)?,
        "post": patch_stats_json(&out, &grid)?,
    });
    let images = (0..n)
        .map(|b| out.slice_batch(b, 1))
        .collect::<Result<_>>()?;
    Ok(StylizeOutput { images, stats })
}
