#![allow(dead_code)]

use sfocda::autograd::{Graph, Var};
use sfocda::model::{source_loss, ssl_loss};
use sfocda::rng::Rng;
use sfocda::style::{diff, GridSize};
use sfocda::{LabelMap, Result, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_COORDS: usize = 10;

pub fn random(dims: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.range(-1.0, 1.0))
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;
type Case = (&'static str, Box<Build>, Vec<Tensor<f64>>);

/// Scalar probe `sum(out * r)` for a fixed random `r`, so every output
/// element contributes to the checked gradient.
fn probe(
    build: &Build,
    inputs: &[Tensor<f64>],
    weights: &mut Option<Tensor<f64>>,
    rng: &mut Rng,
) -> (Graph<f64>, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).expect("op builds");
    let dims = g.dims(out);
    let r = weights.get_or_insert_with(|| random(dims, rng)).clone();
    let rv = g.constant(r);
    let prod = g.mul(out, rv).expect("same dims");
    let loss = g.sum(prod);
    (g, loss, vars)
}

/// Largest relative error between analytic and central-difference
/// gradients over `FD_COORDS` random coordinates of every input.
pub fn max_grad_error(build: &Build, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut rng = Rng::new(seed, 77);
    let mut weights = None;
    let (mut g, loss, vars) = probe(build, inputs, &mut weights, &mut rng);
    g.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("grad").to_vec())
        .collect();
    let value = |ins: &[Tensor<f64>]| {
        let (g, loss, _) = probe(build, ins, &mut weights.clone(), &mut Rng::new(0, 0));
        g.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for _ in 0..FD_COORDS {
            let i = rng.below(input.len());
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// `(name, worst relative error)` for every differentiable operator.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed, 1);
    let x = random([2, 3, 8, 8], &mut rng);
    let w = random([4, 3, 3, 3], &mut rng);
    let b = random([1, 4, 1, 1], &mut rng);
    let logits = random([2, 5, 4, 4], &mut rng);
    let labels = LabelMap::new([2, 4, 4], (0..32).map(|i| (i * 7 % 5) as u8).collect()).unwrap();
    let mut partial = labels.clone();
    for i in (0..32).step_by(3) {
        partial.data_mut()[i] = sfocda::tensor::IGNORE;
    }
    let feat = random([4, 3, 8, 8], &mut rng);
    let style = random([4, 3, 8, 8], &mut rng);
    let grid = GridSize::new(2, 2).unwrap();

    let ops: Vec<Case> = vec![
        (
            "conv",
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
            vec![x.clone(), w.clone(), b.clone()],
        ),
        (
            "conv stride 2",
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
            vec![x.clone(), w, b],
        ),
        (
            "max pool",
            Box::new(|g, v| g.max_pool2d(v[0], 2)),
            vec![x.clone()],
        ),
        (
            "softmax",
            Box::new(|g, v| g.softmax_channels(v[0])),
            vec![logits.clone()],
        ),
        (
            "source loss",
            Box::new(move |g, v| source_loss(g, v[0], &labels)),
            vec![logits.clone()],
        ),
        (
            "self-training loss",
            Box::new(move |g, v| ssl_loss(g, v[0], &partial)),
            vec![logits],
        ),
        (
            "cpss intra",
            Box::new(
                move |g, v| Ok(diff::cpss_intra(g, v[0], grid, &mut Rng::new(3, 0), false)?.0),
            ),
            vec![feat.clone()],
        ),
        (
            "cpss inter",
            Box::new(
                move |g, v| Ok(diff::cpss_inter(g, v[0], grid, &mut Rng::new(4, 0), false)?.0),
            ),
            vec![feat.clone()],
        ),
        (
            "adain",
            Box::new(|g, v| diff::adain(g, v[0], v[1])),
            vec![feat.clone(), style],
        ),
        (
            "mixstyle",
            Box::new(|g, v| diff::mixstyle_random(g, v[0], &mut Rng::new(5, 0), 0.1)),
            vec![feat.clone()],
        ),
        (
            "crossnorm",
            Box::new(|g, v| diff::crossnorm(g, v[0], &mut Rng::new(6, 0))),
            vec![feat],
        ),
    ];
    ops.into_iter()
        .enumerate()
        .map(|(i, (name, build, inputs))| {
            (
                name,
                max_grad_error(build.as_ref(), &inputs, seed + i as u64),
            )
        })
        .collect()
}

/// Random softmax-like maps; every fourth map is quantized so that ties
/// between classes and between pixels are common.
pub fn random_probs(rng: &mut Rng, index: usize) -> Tensor<f64> {
    let c = 2 + rng.below(5);
    let (h, w) = (1 + rng.below(6), 1 + rng.below(6));
    let quantized = index.is_multiple_of(4);
    let mut t = Tensor::<f64>::zeros([1, c, h, w]);
    for y in 0..h {
        for x in 0..w {
            let raw: Vec<f64> = (0..c)
                .map(|_| {
                    if quantized {
                        (1 + rng.below(3)) as f64
                    } else {
                        rng.range(0.0, 1.0).powi(3) + 1e-9
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            for (k, v) in raw.iter().enumerate() {
                t.set(0, k, y, x, v / s);
            }
        }
    }
    t
}

/// Brute-force MPT: thresholds from a full ascending sort of each class's
/// votes, then a direct pass over pixels. Returns thresholds and labels.
pub fn mpt_oracle(p: &Tensor<f64>, tau: f64, q: u32) -> (Vec<f64>, Vec<u8>) {
    let [_, c, h, w] = p.dims();
    let mut votes: Vec<Vec<f64>> = vec![Vec::new(); c];
    let mut winners = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            for k in 1..c {
                if p.at(0, k, y, x) > p.at(0, best, y, x) {
                    best = k;
                }
            }
            votes[best].push(p.at(0, best, y, x));
            winners.push((best, p.at(0, best, y, x)));
        }
    }
    let thresholds: Vec<f64> = votes
        .into_iter()
        .map(|mut v| {
            if v.is_empty() {
                return tau;
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = v.len();
            let keep = ((m as u64 * q as u64).div_ceil(100) as usize).max(1);
            v[m - keep].min(tau)
        })
        .collect();
    let labels = winners
        .iter()
        .map(|&(k, v)| {
            if v >= thresholds[k] {
                k as u8
            } else {
                sfocda::tensor::IGNORE
            }
        })
        .collect();
    (thresholds, labels)
}

pub struct MptSummary {
    pub cases: usize,
    pub mismatches: usize,
    pub monotone_violations: usize,
}

pub const MPT_TAUS: [f64; 3] = [0.5, 0.9, 1.0];
pub const MPT_QS: [u32; 3] = [10, 50, 100];

pub fn mpt_suite(maps: usize, seed: u64) -> MptSummary {
    use sfocda::pseudo::{assign_pseudo_labels, mpt_thresholds};
    let mut rng = Rng::new(seed, 5);
    let mut out = MptSummary {
        cases: 0,
        mismatches: 0,
        monotone_violations: 0,
    };
    for i in 0..maps {
        let p = random_probs(&mut rng, i);
        let mut coverage = [[0.0; 3]; 3];
        for (ti, &tau) in MPT_TAUS.iter().enumerate() {
            for (qi, &q) in MPT_QS.iter().enumerate() {
                let th = mpt_thresholds(std::slice::from_ref(&p), tau, q as f64).unwrap();
                let got = assign_pseudo_labels(&p, &th).unwrap();
                let (want_th, want_labels) = mpt_oracle(&p, tau, q);
                out.cases += 1;
                if th.thresholds != want_th || got.labels.data() != want_labels.as_slice() {
                    out.mismatches += 1;
                }
                coverage[ti][qi] = got.coverage;
            }
        }
        for ti in 0..3 {
            for qi in 0..3 {
                if qi > 0 && coverage[ti][qi] < coverage[ti][qi - 1] {
                    out.monotone_violations += 1;
                }
                if ti > 0 && coverage[ti][qi] > coverage[ti - 1][qi] {
                    out.monotone_violations += 1;
                }
            }
        }
    }
    out
}

pub struct SwapSummary {
    pub cases: usize,
    pub worst_stats: f64,
    pub worst_content: f64,
    pub worst_roundtrip: f64,
}

/// A random CPSS case whose patches all have std above `10 * STYLE_EPS`.
fn swap_case(
    rng: &mut Rng,
    index: usize,
) -> (
    Tensor<f32>,
    sfocda::style::GridSize,
    sfocda::style::SwapPlan,
) {
    use sfocda::style::{compute_patch_style, GridSize, PatchGrid, SwapPlan, STYLE_EPS};
    loop {
        let (b, c) = (1 + rng.below(4), 1 + rng.below(8));
        let hw = 2 + rng.below(31);
        let rows = 1 + rng.below(4.min(hw / 2));
        let cols = 1 + rng.below(4.min(hw / 2));
        let size = GridSize::new(rows, cols).unwrap();
        let (scale, offset) = (rng.range(0.1, 10.0), rng.range(-5.0, 5.0));
        let t = Tensor::from_fn([b, c, hw, hw], |_| {
            (offset + scale * rng.range(-1.0, 1.0)) as f32
        });
        let grid = PatchGrid::fit(size, hw, hw).unwrap();
        let style = compute_patch_style(&t, &grid).unwrap();
        if style
            .std
            .data()
            .iter()
            .any(|&s| (s as f64) <= 10.0 * STYLE_EPS)
        {
            continue;
        }
        let plan = if index.is_multiple_of(2) {
            SwapPlan::random_intra(b, size.count(), rng, false)
        } else {
            SwapPlan::random_inter(b, size.count(), rng, false)
        };
        return (t, size, plan);
    }
}

pub fn swap_suite(cases: usize, seed: u64) -> SwapSummary {
    use sfocda::style::{compute_patch_style, cpss_with_plan, PatchGrid};
    let mut rng = Rng::new(seed, 11);
    let mut s = SwapSummary {
        cases,
        worst_stats: 0.0,
        worst_content: 0.0,
        worst_roundtrip: 0.0,
    };
    for i in 0..cases {
        let (x, size, plan) = swap_case(&mut rng, i);
        let [b, c, h, w] = x.dims();
        let grid = PatchGrid::fit(size, h, w).unwrap();
        let y = cpss_with_plan(&x, size, &plan).unwrap();
        let pre = compute_patch_style(&x, &grid).unwrap();
        let post = compute_patch_style(&y, &grid).unwrap();
        for n in 0..b {
            for ch in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        let p = grid.patch_at(yy, xx);
                        let (dn, dp) = plan.donor(n, p);
                        let (m, sd) = pre.get(n, p, ch);
                        let (dm, dsd) = pre.get(dn, dp, ch);
                        let own = (x.at(n, ch, yy, xx) as f64 - m as f64) / sd as f64;
                        let swapped = (y.at(n, ch, yy, xx) as f64 - dm as f64) / dsd as f64;
                        s.worst_content = s.worst_content.max((own - swapped).abs());
                    }
                }
                for p in 0..grid.count() {
                    let (dn, dp) = plan.donor(n, p);
                    let (m, sd) = post.get(n, p, ch);
                    let (dm, dsd) = pre.get(dn, dp, ch);
                    s.worst_stats = s
                        .worst_stats
                        .max((m - dm).abs().max((sd - dsd).abs()) as f64);
                }
            }
        }
        let back = cpss_with_plan(&y, size, &plan.inverse()).unwrap();
        s.worst_roundtrip = s.worst_roundtrip.max(back.max_abs_diff(&x) as f64);
    }
    s
}
