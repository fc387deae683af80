//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Exact criteria (1-4, 9-11) fail the process. The desk-scale benchmark
//! criteria (5-8) are reported with their measured values only, since their
//! outcome is a property of the benchmark rather than of the code.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use sfocda::data::{
    generate_domains, AuditLog, DomainCounts, Manifest, Role, SamplerMode, SceneSpec, MANIFEST_NAME,
};
use sfocda::metrics::{ConfusionMatrix, METRICS_CSV, METRICS_JSON};
use sfocda::pipeline::{
    adapt_target, evaluate, train_source, ExperimentConfig, Profile, RunOutcome,
};
use sfocda::style::Variant;
use sfocda::LabelMap;

const SWAP_CASES: usize = 1000;
const SWAP_TOL: f64 = 1e-4;
const SWAP_SECONDS: f64 = 30.0;
const MPT_MAPS: usize = 10_000;
const GRAD_TOL: f64 = 1e-3;

const SEEDS: u64 = 3;
const BENCH_SIZE: usize = 32;
const BENCH_COUNTS: DomainCounts = DomainCounts {
    train: 100,
    test: 30,
};
const BENCH_ITERS: usize = 4000;
const OPEN_GAIN: f64 = 5.0;
const STAGE1_BUDGET_SECONDS: f64 = 15.0 * 60.0;
const INTER_OVER_BASE: f64 = 3.0;
const STAGE2_GAIN: f64 = 1.0;
const STAGE2_WORST: f64 = -0.5;
const SAMPLER_SPREAD: f64 = 2.0;

struct Report {
    hard_failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, hard: bool, detail: String) {
        eprintln!(
            "criterion {id:>2}: {} {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if hard && !pass {
            self.hard_failures += 1;
        }
    }
}

fn pct(v: f64) -> f64 {
    100.0 * v
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn bench_config(data: &Path, seed: u64, variant: Variant, photometric: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::profile(Profile::Quick);
    cfg.data = data.to_path_buf();
    cfg.seed = seed;
    cfg.stage1.iters = BENCH_ITERS;
    cfg.injection.variant = variant;
    cfg.photometric.enabled = photometric;
    cfg
}

fn tiny_config(data: &Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::profile(Profile::Quick);
    cfg.data = data.to_path_buf();
    cfg.seed = seed;
    cfg.model.widths = vec![4, 8];
    cfg.stage1.iters = 20;
    cfg.stage1.batch = 2;
    cfg.stage2.optim.iters = 10;
    cfg.stage2.optim.batch = 2;
    cfg
}

fn style_exactness(r: &mut Report) {
    let start = Instant::now();
    let s = common::swap_suite(SWAP_CASES, 2024);
    let secs = start.elapsed().as_secs_f64();
    let ok = s.worst_stats < SWAP_TOL && s.worst_content < SWAP_TOL && secs < SWAP_SECONDS;
    r.line(
        1,
        ok,
        true,
        format!(
            "{} cases, stats err {:.2e}, content err {:.2e}, {secs:.1}s",
            s.cases, s.worst_stats, s.worst_content
        ),
    );
    r.line(
        2,
        s.worst_roundtrip < SWAP_TOL,
        true,
        format!("{} cases, roundtrip err {:.2e}", s.cases, s.worst_roundtrip),
    );
}

fn mpt_equivalence(r: &mut Report) {
    let s = common::mpt_suite(MPT_MAPS, 7);
    r.line(
        3,
        s.mismatches == 0 && s.monotone_violations == 0,
        true,
        format!(
            "{} cases, {} mismatches, {} monotonicity violations",
            s.cases, s.mismatches, s.monotone_violations
        ),
    );
}

fn gradients(r: &mut Report) {
    let mut worst: (&str, f64) = ("", 0.0);
    for seed in 0..2 {
        for (name, err) in common::gradient_suite(seed) {
            if err > worst.1 || err.is_nan() {
                worst = (name, err);
            }
        }
    }
    r.line(
        4,
        worst.1 < GRAD_TOL,
        true,
        format!("worst relative error {:.2e} ({})", worst.1, worst.0),
    );
}

struct Stage1Runs {
    base: Vec<RunOutcome>,
    intra: Vec<RunOutcome>,
    inter: Vec<RunOutcome>,
}

fn benchmark(r: &mut Report, root: &Path) {
    let data = root.join("bench-data");
    let spec = SceneSpec {
        size: BENCH_SIZE,
        ..SceneSpec::default()
    };
    generate_domains(&spec, &data, 0, BENCH_COUNTS).unwrap();

    let mut runs = Stage1Runs {
        base: Vec::new(),
        intra: Vec::new(),
        inter: Vec::new(),
    };
    for seed in 0..SEEDS {
        for (name, variant, pt) in [
            ("base", Variant::Off, false),
            ("intra", Variant::Intra, true),
            ("inter", Variant::Inter, true),
        ] {
            let cfg = bench_config(&data, seed, variant, pt);
            let out = train_source(&cfg, &root.join(format!("{name}-{seed}"))).unwrap();
            match name {
                "base" => runs.base.push(out),
                "intra" => runs.intra.push(out),
                _ => runs.inter.push(out),
            }
        }
    }

    let open = |v: &[RunOutcome]| {
        mean(
            &v.iter()
                .map(|o| pct(o.report.role_avg(Role::Open).unwrap()))
                .collect::<Vec<_>>(),
        )
    };
    let comp = |v: &[RunOutcome]| {
        mean(
            &v.iter()
                .map(|o| pct(o.report.compound_avg.unwrap()))
                .collect::<Vec<_>>(),
        )
    };
    let seconds: f64 = runs.base.iter().chain(&runs.inter).map(|o| o.seconds).sum();
    let gain = open(&runs.inter) - open(&runs.base);
    r.line(
        5,
        gain >= OPEN_GAIN && seconds < STAGE1_BUDGET_SECONDS,
        false,
        format!(
            "open mIoU base {:.2} inter+PT {:.2} (gain {gain:+.2}), {seconds:.0}s",
            open(&runs.base),
            open(&runs.inter)
        ),
    );
    let (b, ia, ie) = (comp(&runs.base), comp(&runs.intra), comp(&runs.inter));
    r.line(
        6,
        ie >= ia && ia >= b && ie - b >= INTER_OVER_BASE,
        false,
        format!("compound mIoU base {b:.2} intra {ia:.2} inter {ie:.2}"),
    );

    let mut sampler_means = Vec::new();
    for mode in [
        SamplerMode::Random,
        SamplerMode::Oracle,
        SamplerMode::Clustering,
    ] {
        let mut deltas = Vec::new();
        let mut after = Vec::new();
        for (seed, s1) in runs.inter.iter().enumerate() {
            let mut cfg = bench_config(&data, seed as u64, Variant::Inter, true);
            cfg.stage2.sampler = mode;
            let out = root.join(format!("stage2-{mode}-{seed}"));
            let s2 =
                adapt_target(&cfg.adapt_config(), &s1.checkpoint, &out, &AuditLog::new()).unwrap();
            let (a, b) = (
                pct(s2.report.compound_avg.unwrap()),
                pct(s1.report.compound_avg.unwrap()),
            );
            after.push(a);
            deltas.push(a - b);
        }
        if mode == SamplerMode::Random {
            let worst = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
            let shown: Vec<String> = deltas.iter().map(|d| format!("{d:+.2}")).collect();
            r.line(
                7,
                mean(&deltas) >= STAGE2_GAIN && worst >= STAGE2_WORST,
                false,
                format!(
                    "stage-2 compound delta mean {:+.2}, per seed [{}]",
                    mean(&deltas),
                    shown.join(", ")
                ),
            );
        }
        sampler_means.push((mode, mean(&after)));
    }
    let hi = sampler_means
        .iter()
        .map(|m| m.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = sampler_means
        .iter()
        .map(|m| m.1)
        .fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = sampler_means
        .iter()
        .map(|(m, v)| format!("{m} {v:.2}"))
        .collect();
    r.line(
        8,
        hi - lo <= SAMPLER_SPREAD,
        false,
        format!("{} (spread {:.2})", shown.join(", "), hi - lo),
    );
}

fn full_run(root: &Path) -> Vec<Vec<u8>> {
    let data = root.join("data");
    let spec = SceneSpec {
        size: 16,
        ..SceneSpec::default()
    };
    generate_domains(&spec, &data, 11, DomainCounts { train: 6, test: 3 }).unwrap();
    let cfg = tiny_config(&data, 5);
    let s1 = train_source(&cfg, &root.join("stage1")).unwrap();
    let s2 = adapt_target(
        &cfg.adapt_config(),
        &s1.checkpoint,
        &root.join("stage2"),
        &AuditLog::new(),
    )
    .unwrap();
    let report = evaluate(&s2.checkpoint, &data, &[], 8).unwrap();
    let classes = Manifest::read(&data.join(MANIFEST_NAME)).unwrap().classes;
    report.write(&root.join("eval"), &classes).unwrap();
    let mut files = Vec::new();
    for dir in ["stage1", "stage2", "eval"] {
        for name in [METRICS_CSV, METRICS_JSON] {
            files.push(fs::read(root.join(dir).join(name)).unwrap());
        }
    }
    files
}

fn determinism(r: &mut Report, root: &Path) {
    let a = full_run(&root.join("run-a"));
    let b = full_run(&root.join("run-b"));
    r.line(
        9,
        a == b,
        true,
        format!("{} metrics files compared", a.len()),
    );
}

fn evaluator(r: &mut Report) {
    let lm = |v: &[u8]| LabelMap::new([1, 1, v.len()], v.to_vec()).unwrap();
    let miou = |pred: &[u8], gt: &[u8], c: usize| {
        let mut cm = ConfusionMatrix::new(c);
        cm.add(&lm(pred), &lm(gt)).unwrap();
        cm.miou().unwrap()
    };
    let worked = miou(&[0, 1, 1, 1], &[0, 0, 1, 1], 2);
    let perfect = miou(&[0, 1, 2, 2], &[0, 1, 2, 2], 3);
    let disjoint = miou(&[1, 1, 0, 0], &[0, 0, 1, 1], 2);
    r.line(
        10,
        worked == 7.0 / 12.0 && perfect == 1.0 && disjoint == 0.0,
        true,
        format!("worked {worked}, perfect {perfect}, disjoint {disjoint}"),
    );
}

fn audit(r: &mut Report, root: &Path) {
    let data = root.join("data");
    let spec = SceneSpec {
        size: 16,
        ..SceneSpec::default()
    };
    let manifest = generate_domains(&spec, &data, 3, DomainCounts { train: 6, test: 3 }).unwrap();
    let cfg = tiny_config(&data, 9);
    let s1 = train_source(&cfg, &root.join("stage1")).unwrap();

    let mut planted: Vec<PathBuf> = Vec::new();
    for s in manifest.samples.iter().filter(|s| s.role == Role::Source) {
        for rel in std::iter::once(&s.image).chain(s.label.as_ref()) {
            let p = data.join(rel);
            fs::write(&p, b"planted source file").unwrap();
            planted.push(p);
        }
    }
    let log = AuditLog::new();
    let result = adapt_target(
        &cfg.adapt_config(),
        &s1.checkpoint,
        &root.join("stage2"),
        &log,
    );
    let opened = log.paths();
    let source_hits = opened
        .iter()
        .filter(|p| planted.contains(p) || p.components().any(|c| c.as_os_str() == "source"))
        .count();
    r.line(
        11,
        result.is_ok() && source_hits == 0 && !opened.is_empty(),
        true,
        format!(
            "{} files opened, {} planted source files, {source_hits} source opens",
            opened.len(),
            planted.len()
        ),
    );
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Report { hard_failures: 0 };
    style_exactness(&mut r);
    mpt_equivalence(&mut r);
    gradients(&mut r);
    benchmark(&mut r, &dir.path().join("bench"));
    determinism(&mut r, &dir.path().join("det"));
    evaluator(&mut r);
    audit(&mut r, &dir.path().join("audit"));
    if r.hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
