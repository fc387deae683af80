use proptest::prelude::*;

use super::*;
use crate::rng::Rng;

fn random(dims: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.range(-2.0, 2.0) + rng.range(0.0, 1.0))
}

/// Direct per-patch statistics straight from the definition.
fn brute_stats(x: &Tensor<f64>, grid: &PatchGrid, n: usize, c: usize, p: usize) -> (f64, f64) {
    let (r, cl) = (p / grid.cols(), p % grid.cols());
    let rb = grid.row_bounds();
    let cb = grid.col_bounds();
    let mut vals = Vec::new();
    for y in rb[r]..rb[r + 1] {
        for xx in cb[cl]..cb[cl + 1] {
            vals.push(x.at(n, c, y, xx));
        }
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let v = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
    (m, v.sqrt().max(STYLE_EPS))
}

#[test]
fn constant_patch_has_clamped_std() {
    let x = Tensor::<f64>::full([1, 2, 4, 4], 0.7);
    let grid = PatchGrid::fit(GridSize::new(2, 2).unwrap(), 4, 4).unwrap();
    let s = compute_patch_style(&x, &grid).unwrap();
    for p in 0..4 {
        let (m, sd) = s.get(0, p, 1);
        assert!((m - 0.7).abs() < 1e-15);
        assert_eq!(sd, STYLE_EPS);
    }
}

#[test]
fn single_patch_grid_gives_instance_statistics() {
    let mut rng = Rng::new(1, 0);
    let x = random([2, 3, 5, 6], &mut rng);
    let grid = PatchGrid::fit(GridSize::SINGLE, 5, 6).unwrap();
    let s = compute_patch_style(&x, &grid).unwrap();
    for n in 0..2 {
        for c in 0..3 {
            let vals = x.plane(n, c);
            let m = vals.iter().sum::<f64>() / 30.0;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 30.0).sqrt();
            let (gm, gs) = s.get(n, 0, c);
            assert!((gm - m).abs() < 1e-12 && (gs - sd).abs() < 1e-12);
        }
    }
}

#[test]
fn two_level_patch_has_unit_std() {
    let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
    let grid = PatchGrid::fit(GridSize::SINGLE, 2, 2).unwrap();
    let s = compute_patch_style(&x, &grid).unwrap();
    assert_eq!(s.get(0, 0, 0), (1.0, 1.0));
}

#[test]
fn stats_match_brute_force_on_uneven_grids() {
    let mut rng = Rng::new(2, 0);
    let x = random([2, 2, 7, 9], &mut rng);
    let grid = PatchGrid::fit(GridSize::new(3, 2).unwrap(), 7, 9).unwrap();
    let s = compute_patch_style(&x, &grid).unwrap();
    for n in 0..2 {
        for c in 0..2 {
            for p in 0..6 {
                let (m, sd) = brute_stats(&x, &grid, n, c, p);
                let (gm, gs) = s.get(n, p, c);
                assert!((gm - m).abs() < 1e-12 && (gs - sd).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn stats_reject_mismatched_grid() {
    let grid = PatchGrid::fit(GridSize::SINGLE, 4, 4).unwrap();
    assert!(compute_patch_style(&Tensor::<f32>::zeros([1, 1, 4, 5]), &grid).is_err());
}

#[test]
fn adain_identity_and_statistics() {
    let mut rng = Rng::new(3, 0);
    let x = random([2, 3, 6, 6], &mut rng);
    let y = random([2, 3, 4, 5], &mut rng).map(|v| 3.0 * v - 1.0);
    assert!(adain(&x, &x).unwrap().max_abs_diff(&x) < 1e-5);

    let out = adain(&x, &y).unwrap();
    let g6 = PatchGrid::fit(GridSize::SINGLE, 6, 6).unwrap();
    let g45 = PatchGrid::fit(GridSize::SINGLE, 4, 5).unwrap();
    let (so, sy) = (
        compute_patch_style(&out, &g6).unwrap(),
        compute_patch_style(&y, &g45).unwrap(),
    );
    assert!(so.mean.max_abs_diff(&sy.mean) < 1e-5);
    assert!(so.std.max_abs_diff(&sy.std) < 1e-5);
}

#[test]
fn adain_onto_constant_style_collapses_to_its_mean() {
    let mut rng = Rng::new(4, 0);
    let x = Tensor::<f64>::from_fn([1, 2, 8, 8], |_| rng.normal());
    let style = Tensor::<f64>::full([1, 2, 8, 8], 3.0);
    let out = adain(&x, &style).unwrap();
    // |x − μ| / σ stays O(1), multiplied by the clamped σ = 1e-5.
    assert!(out.data().iter().all(|v| (v - 3.0).abs() < 1e-4));
}

#[test]
fn cpss_identity_plan_is_identity() {
    let mut rng = Rng::new(5, 0);
    let x = random([3, 2, 8, 8], &mut rng);
    let size = GridSize::new(2, 4).unwrap();
    for scope in [SwapScope::Intra, SwapScope::Inter] {
        let out = cpss_with_plan(&x, size, &SwapPlan::identity(3, 8, scope)).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-12);
    }
}

#[test]
fn single_slot_intra_is_identity_for_any_seed() {
    let mut rng = Rng::new(6, 0);
    let x = random([2, 3, 5, 5], &mut rng);
    for seed in 0..10 {
        let out = cpss_intra(&x, GridSize::SINGLE, &mut Rng::new(seed, 0)).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-12);
    }
}

#[test]
fn swapping_two_constant_patches_exchanges_values_exactly() {
    let x = Tensor::<f32>::from_fn(
        [1, 1, 2, 4],
        |[_, _, _, xx]| if xx < 2 { 0.25 } else { 3.5 },
    );
    let plan = SwapPlan::intra(&[vec![1, 0]], 2).unwrap();
    let out = cpss_with_plan(&x, GridSize::new(1, 2).unwrap(), &plan).unwrap();
    let want = Tensor::<f32>::from_fn(
        [1, 1, 2, 4],
        |[_, _, _, xx]| if xx < 2 { 3.5 } else { 0.25 },
    );
    assert_eq!(out, want);
}

#[test]
fn single_image_inter_draws_like_intra() {
    for seed in 0..20 {
        let a = SwapPlan::random_intra(1, 6, &mut Rng::new(seed, 1), false);
        let b = SwapPlan::random_inter(1, 6, &mut Rng::new(seed, 1), false);
        assert_eq!(a.assignment(), b.assignment());
    }
}

#[test]
fn mixstyle_boundaries() {
    let mut rng = Rng::new(7, 0);
    let x = random([3, 2, 4, 4], &mut rng);
    let perm = [2, 0, 1];
    assert!(
        mixstyle_with(&x, &perm, &[1.0; 3])
            .unwrap()
            .max_abs_diff(&x)
            < 1e-12
    );

    let mixed = mixstyle_with(&x, &perm, &[0.0; 3]).unwrap();
    let cross = cpss_with_plan(
        &x,
        GridSize::SINGLE,
        &SwapPlan::inter(3, 1, perm.to_vec()).unwrap(),
    )
    .unwrap();
    assert_eq!(mixed, cross);
}

#[test]
fn mixstyle_half_weight_averages_means() {
    let x = Tensor::<f64>::from_fn([2, 1, 3, 3], |[n, _, y, xx]| {
        let base = if n == 0 { 0.0 } else { 4.0 };
        base + ((y * 3 + xx) as f64 - 4.0) * 0.1
    });
    let out = mixstyle_with(&x, &[1, 0], &[0.5, 0.5]).unwrap();
    let g = PatchGrid::fit(GridSize::SINGLE, 3, 3).unwrap();
    let s = compute_patch_style(&out, &g).unwrap();
    assert!((s.get(0, 0, 0).0 - 2.0).abs() < 1e-12);
    assert!((s.get(1, 0, 0).0 - 2.0).abs() < 1e-12);
}

#[test]
fn crossnorm_is_single_patch_inter_cpss() {
    let mut rng = Rng::new(8, 0);
    let x = random([4, 3, 6, 6], &mut rng);
    let a = crossnorm(&x, &mut Rng::new(99, 2)).unwrap();
    let b = cpss_inter(&x, GridSize::SINGLE, &mut Rng::new(99, 2)).unwrap();
    assert_eq!(a, b);

    let selfpair = cpss_with_plan(
        &x,
        GridSize::SINGLE,
        &SwapPlan::identity(4, 1, SwapScope::Inter),
    )
    .unwrap();
    assert!(selfpair.max_abs_diff(&x) < 1e-12);
}

#[test]
fn crossnorm_swaps_two_samples_statistics() {
    let mut rng = Rng::new(9, 0);
    let mut x = random([2, 2, 5, 5], &mut rng);
    x.data_mut()[50..]
        .iter_mut()
        .for_each(|v| *v = *v * 3.0 + 1.0);
    let plan = SwapPlan::inter(2, 1, vec![1, 0]).unwrap();
    let out = cpss_with_plan(&x, GridSize::SINGLE, &plan).unwrap();
    let g = PatchGrid::fit(GridSize::SINGLE, 5, 5).unwrap();
    let (si, so) = (
        compute_patch_style(&x, &g).unwrap(),
        compute_patch_style(&out, &g).unwrap(),
    );
    for c in 0..2 {
        let (a, b) = (si.get(0, 0, c), so.get(1, 0, c));
        assert!((a.0 - b.0).abs() < 1e-5 && (a.1 - b.1).abs() < 1e-5);
        let (a, b) = (si.get(1, 0, c), so.get(0, 0, c));
        assert!((a.0 - b.0).abs() < 1e-5 && (a.1 - b.1).abs() < 1e-5);
    }
}

#[test]
fn inject_respects_mode_and_beta() {
    let mut rng = Rng::new(10, 0);
    let x = random([2, 3, 8, 8], &mut rng);
    let always = InjectionConfig {
        beta: 1.0,
        ..InjectionConfig::default()
    };
    assert_eq!(
        inject_tensor(&x, &always, &mut Rng::new(1, 0), false).unwrap(),
        x
    );

    let never = InjectionConfig {
        beta: 0.0,
        ..InjectionConfig::default()
    };
    assert_eq!(
        inject_tensor(&x, &never, &mut Rng::new(1, 0), true).unwrap(),
        x
    );

    let a = inject_tensor(&x, &always, &mut Rng::new(77, 3), true).unwrap();
    let b = inject_tensor(&x, &always, &mut Rng::new(77, 3), true).unwrap();
    assert_eq!(a, b);
    assert!(a.max_abs_diff(&x) > 1e-3);
}

#[test]
fn unknown_variant_is_config_error() {
    assert!(matches!(
        "swirl".parse::<Variant>(),
        Err(crate::error::Error::Config(_))
    ));
    assert_eq!("Inter".parse::<Variant>().unwrap(), Variant::Inter);
}

#[test]
fn injection_validation() {
    let mut cfg = InjectionConfig::default();
    assert!(cfg.validate(3).is_ok());
    cfg.sites.insert(4);
    assert!(cfg.validate(3).is_err());
    cfg.sites.remove(&4);
    cfg.beta = 1.5;
    assert!(cfg.validate(3).is_err());
}

#[test]
fn plans_validate_and_invert() {
    let mut rng = Rng::new(11, 0);
    let p = SwapPlan::random_intra(3, 4, &mut rng, false);
    p.validate().unwrap();
    let inv = p.inverse();
    for (i, &d) in p.assignment().iter().enumerate() {
        assert_eq!(inv.assignment()[d], i);
    }
    let d = SwapPlan::random_intra(3, 4, &mut rng, true);
    assert!(d.assignment().iter().enumerate().all(|(i, &j)| i != j));
    assert!(SwapPlan::intra(&[vec![0, 0]], 2).is_err());
}

fn tensor_strategy() -> impl Strategy<Value = (Tensor<f64>, GridSize, u64)> {
    (
        1usize..=4,
        1usize..=4,
        1usize..=3,
        1usize..=3,
        0usize..5,
        0usize..5,
        any::<u64>(),
    )
        .prop_map(|(b, c, rows, cols, eh, ew, seed)| {
            let (h, w) = (rows * 2 + eh, cols * 2 + ew);
            let mut rng = Rng::new(seed, 0);
            let x = Tensor::from_fn([b, c, h, w], |_| rng.range(-3.0, 3.0));
            (x, GridSize::new(rows, cols).unwrap(), seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn donor_statistics_transfer((x, size, seed) in tensor_strategy()) {
        let grid = PatchGrid::fit(size, x.height(), x.width()).unwrap();
        let plan = SwapPlan::random_inter(x.batch(), size.count(), &mut Rng::new(seed, 7), false);
        plan.validate().unwrap();
        let out = cpss_with_plan(&x, size, &plan).unwrap();
        prop_assert_eq!(out.dims(), x.dims());
        let (si, so) = (compute_patch_style(&x, &grid).unwrap(), compute_patch_style(&out, &grid).unwrap());
        for k in 0..x.batch() {
            for p in 0..size.count() {
                let (dk, dp) = plan.donor(k, p);
                for c in 0..x.channels() {
                    let (own, donor, after) = (si.get(k, p, c), si.get(dk, dp, c), so.get(k, p, c));
                    if own.1 > 10.0 * STYLE_EPS {
                        prop_assert!((after.0 - donor.0).abs() < 1e-4);
                        prop_assert!((after.1 - donor.1).abs() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_plan_recovers_input((x, size, seed) in tensor_strategy()) {
        let plan = SwapPlan::random_intra(x.batch(), size.count(), &mut Rng::new(seed, 8), false);
        let there = cpss_with_plan(&x, size, &plan).unwrap();
        let back = cpss_with_plan(&there, size, &plan.inverse()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-4);
    }
}
