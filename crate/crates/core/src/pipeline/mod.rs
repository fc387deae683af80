//! Stage-I source training, Stage-II source-free adaptation, evaluation,
//! image-level stylization and parameter sweeps.

mod config;
mod stylize;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autograd::Graph;
use crate::data::{
    extract_style_embedding, kmeans, AuditLog, BatchSampler, DomainDataset, Role, Sample,
    SamplerMode, Split,
};
use crate::error::{config_err, contract_err, data_err, Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport, SplitMetrics};
use crate::model::{
    load_checkpoint, save_checkpoint, source_loss, ssl_loss, Mode, OptimState, SegNet,
    CHECKPOINT_MANIFEST,
};
use crate::photometric::{photometric, PhotometricConfig};
use crate::pseudo::{assign_pseudo_labels, ClassThresholds, PseudoLabelMap, ThresholdEstimator};
use crate::rng::Rng;
use crate::style::InjectionConfig;
use crate::tensor::sfot::{read_labels, write_labels};
use crate::tensor::{argmax_channels, LabelMap, Tensor, IGNORE};

pub use config::{
    manifest_path, AdaptConfig, ExperimentConfig, OptimConfig, Profile, Stage2Config,
};
pub use stylize::{stylize, StylizeOutput};
pub use sweep::{sweep, SweepAxis, SweepRow, SWEEP_CSV};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TIMING_JSON: &str = "timing.json";
pub const PSEUDO_DIR: &str = "pseudo";

/// Result of a training stage.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub checkpoint: PathBuf,
    pub digest: String,
    pub seconds: f64,
    /// Pseudo-label coverage (Stage-II only).
    pub coverage: Option<f64>,
}

fn optimizer(o: &OptimConfig) -> OptimState<f32> {
    OptimState::new(o.base_lr, o.momentum, o.weight_decay, o.power, o.iters)
}

/// One SGD update on a batch. Batches without a single labeled pixel leave
/// the parameters untouched but still advance the schedule.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut SegNet<f32>,
    opt: &mut OptimState<f32>,
    images: &Tensor<f32>,
    labels: &LabelMap,
    injection: &InjectionConfig,
    photo: &PhotometricConfig,
    rng: &Rng,
    self_training: bool,
) -> Result<f64> {
    if labels.data().iter().all(|&l| l == IGNORE) {
        opt.iter += 1;
        return Ok(0.0);
    }
    let images = photometric(images, photo, &mut rng.derive(0))?;
    let mut g = Graph::new();
    let f = model.forward(&mut g, &images, Mode::Train, injection, &rng.derive(1))?;
    let loss = if self_training {
        ssl_loss(&mut g, f.logits, labels)?
    } else {
        source_loss(&mut g, f.logits, labels)?
    };
    let value = g.value(loss).item()? as f64;
    g.backward(loss)?;
    model.zero_grad();
    model.accumulate_grads(&g, &f.params);
    opt.step(model)?;
    Ok(value)
}

fn stack_images(samples: &[Sample], idx: &[usize]) -> Result<Tensor<f32>> {
    Tensor::stack(&idx.iter().map(|&i| &samples[i].image).collect::<Vec<_>>())
}

/// Labels of the drawn samples; samples past `labeled` are style donors
/// only and get [`IGNORE`] everywhere.
fn stack_labels(labels: &[LabelMap], idx: &[usize], labeled: usize) -> Result<LabelMap> {
    let mut out = LabelMap::stack(&idx.iter().map(|&i| &labels[i]).collect::<Vec<_>>())?;
    let [n, h, w] = out.dims();
    if labeled < n {
        out.data_mut()[labeled * h * w..].fill(IGNORE);
    }
    Ok(out)
}

/// Eval-mode softmax maps of `images`, `chunk` at a time.
fn predict_all(
    model: &SegNet<f32>,
    images: &[&Tensor<f32>],
    chunk: usize,
) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for part in images.chunks(chunk.max(1)) {
        let probs = model.predict_probs(&Tensor::stack(part)?)?;
        for b in 0..part.len() {
            out.push(probs.slice_batch(b, 1)?);
        }
    }
    Ok(out)
}

/// Domains to evaluate: the requested names, or every domain in the view
/// with labeled test samples.
fn resolve_splits(ds: &DomainDataset, requested: &[String]) -> Result<Vec<(String, Role)>> {
    if requested.is_empty() {
        return Ok(ds
            .domains()
            .into_iter()
            .filter(|(d, _)| {
                ds.domain_indices(d, Split::Test)
                    .iter()
                    .any(|&i| ds.entries()[i].label.is_some())
            })
            .collect());
    }
    requested
        .iter()
        .map(|name| {
            let role = ds
                .role_of(name)
                .ok_or_else(|| config_err!("unknown evaluation split {:?}", name))?;
            Ok((name.clone(), role))
        })
        .collect()
}

/// Per-domain test-split metrics of `model` (eval mode, no style injection).
pub fn evaluate_model(
    model: &SegNet<f32>,
    ds: &DomainDataset,
    splits: &[String],
    chunk: usize,
) -> Result<Vec<SplitMetrics>> {
    let mut out = Vec::new();
    for (name, role) in resolve_splits(ds, splits)? {
        let idx = ds.domain_indices(&name, Split::Test);
        if idx.is_empty() {
            return Err(contract_err!("split {:?} has no test samples", name));
        }
        let mut cm = ConfusionMatrix::new(model.config().num_classes);
        for part in idx.chunks(chunk.max(1)) {
            let samples = ds.load_many(part, true)?;
            let mut gts = Vec::with_capacity(samples.len());
            for s in &samples {
                gts.push(
                    s.label.as_ref().ok_or_else(|| {
                        contract_err!("split {:?} is unlabeled ({})", name, s.path)
                    })?,
                );
            }
            let images = Tensor::stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let pred = argmax_channels(&model.predict(&images)?);
            cm.add(&pred, &LabelMap::stack(&gts)?)?;
        }
        out.push(SplitMetrics::from_confusion(&name, role, &cm));
    }
    Ok(out)
}

fn check_classes(model: &SegNet<f32>, ds: &DomainDataset) -> Result<()> {
    if model.config().num_classes != ds.num_classes() {
        return Err(config_err!(
            "model predicts {} classes but the dataset has {}",
            model.config().num_classes,
            ds.num_classes()
        ));
    }
    Ok(())
}

fn write_timing(out: &Path, seconds: f64) -> Result<()> {
    let path = out.join(TIMING_JSON);
    let text =
        serde_json::to_string_pretty(&serde_json::json!({ "seconds": seconds })).expect("json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Stage-I: supervised training on the labeled source domain, then
/// evaluation on every requested test split. Writes `checkpoint/`,
/// `metrics.{csv,json}`, `config.txt` and `timing.json` into `out`.
pub fn train_source(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let ds = DomainDataset::open(&manifest_path(&cfg.data), AuditLog::new())?;
    let train_idx = ds.indices(Role::Source, Split::Train);
    if train_idx.is_empty() {
        return Err(data_err!("dataset has no source training samples"));
    }
    let samples = ds.load_many(&train_idx, true)?;
    let labels: Vec<LabelMap> = samples
        .iter()
        .map(|s| {
            s.label
                .clone()
                .ok_or_else(|| data_err!("source sample {} is unlabeled", s.path))
        })
        .collect::<Result<_>>()?;

    let root = Rng::new(cfg.seed, 0);
    let mut model = SegNet::<f32>::new(cfg.model.clone(), &mut root.derive(1))?;
    check_classes(&model, &ds)?;
    model.check_input(&samples[0].image)?;
    let mut opt = optimizer(&cfg.stage1);
    let mut sampler = BatchSampler::random(samples.len(), cfg.stage1.draw(), root.derive(2))?;
    let steps = root.derive(3);
    for it in 0..cfg.stage1.iters {
        let idx = sampler.next_batch();
        let images = stack_images(&samples, &idx)?;
        let batch_labels = stack_labels(&labels, &idx, cfg.stage1.batch)?;
        train_step(
            &mut model,
            &mut opt,
            &images,
            &batch_labels,
            &cfg.injection,
            &cfg.photometric,
            &steps.derive(it as u64),
            false,
        )?;
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint = out.join(CHECKPOINT_DIR);
    let digest = save_checkpoint(&model, &checkpoint)?;
    let splits = evaluate_model(&model, &ds, &cfg.eval_splits, cfg.eval_batch)?;
    let report = MetricsReport::new(cfg.hash(), splits);
    report.write(out, ds.classes())?;
    let cfg_path = out.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let seconds = start.elapsed().as_secs_f64();
    write_timing(out, seconds)?;
    Ok(RunOutcome {
        report,
        checkpoint,
        digest,
        seconds,
        coverage: None,
    })
}

fn format_key(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

/// Pseudo-labels for `images` from the frozen `model`, cached under the
/// dataset root keyed by (checkpoint digest, τ, q).
fn pseudo_labels(
    model: &SegNet<f32>,
    digest: &str,
    ds: &DomainDataset,
    images: &[&Tensor<f32>],
    paths: &[String],
    cfg: &AdaptConfig,
    audit: &AuditLog,
) -> Result<(PseudoLabelMap, ClassThresholds)> {
    let (tau, q) = (cfg.stage2.tau, cfg.stage2.q);
    let dir = ds.root().join(PSEUDO_DIR).join(format!(
        "{}-tau{}-q{}",
        &digest[..16],
        format_key(tau),
        format_key(q)
    ));
    let (labels_path, th_path, index_path) = (
        dir.join("labels.sfot"),
        dir.join("thresholds.json"),
        dir.join("samples.txt"),
    );
    let index = paths.join("\n") + "\n";
    if labels_path.exists()
        && th_path.exists()
        && fs::read_to_string(&index_path).ok().as_deref() == Some(&index)
    {
        for p in [&index_path, &th_path, &labels_path] {
            audit.record(p);
        }
        return Ok((
            PseudoLabelMap::new(read_labels(&labels_path)?),
            ClassThresholds::load(&th_path)?,
        ));
    }

    let probs = predict_all(model, images, cfg.eval_batch)?;
    let mut est = ThresholdEstimator::new(model.config().num_classes);
    for p in &probs {
        est.observe(p)?;
    }
    let th = est.finish(tau, q)?;
    let maps: Vec<LabelMap> = probs
        .iter()
        .map(|p| assign_pseudo_labels(p, &th).map(|m| m.labels))
        .collect::<Result<_>>()?;
    let labels = LabelMap::stack(&maps.iter().collect::<Vec<_>>())?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_labels(&labels_path, &labels)?;
    th.save(&th_path)?;
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    Ok((PseudoLabelMap::new(labels), th))
}

fn split_labels(all: &LabelMap) -> Result<Vec<LabelMap>> {
    (0..all.dims()[0]).map(|i| all.slice_batch(i, 1)).collect()
}

/// Group id per sample for balanced sampling.
fn sampler_groups(
    mode: SamplerMode,
    model: &SegNet<f32>,
    samples: &[Sample],
    cfg: &AdaptConfig,
    rng: &Rng,
) -> Result<Option<Vec<usize>>> {
    match mode {
        SamplerMode::Random => Ok(None),
        SamplerMode::Oracle => {
            let mut names: Vec<&str> = Vec::new();
            let groups = samples
                .iter()
                .map(|s| match names.iter().position(|n| *n == s.domain) {
                    Some(i) => i,
                    None => {
                        names.push(&s.domain);
                        names.len() - 1
                    }
                })
                .collect();
            Ok(Some(groups))
        }
        SamplerMode::Clustering => {
            let mut points = Vec::with_capacity(samples.len());
            for part in samples.chunks(cfg.eval_batch.max(1)) {
                let batch = Tensor::stack(&part.iter().map(|s| &s.image).collect::<Vec<_>>())?;
                points.extend(
                    extract_style_embedding(model, &batch)?
                        .into_iter()
                        .map(|e| e.0),
                );
            }
            Ok(Some(
                kmeans(&points, cfg.stage2.clusters, rng.clone().next_u64())?.assignments,
            ))
        }
    }
}

/// Stage-II: self-training of a clone of the source model on unlabeled
/// compound-domain images with fixed MPT pseudo-labels. The dataset is only
/// opened through its target view and every file read is logged in `audit`.
pub fn adapt_target(
    cfg: &AdaptConfig,
    checkpoint: &Path,
    out: &Path,
    audit: &AuditLog,
) -> Result<RunOutcome> {
    let start = Instant::now();
    crate::pseudo::validate_mpt(cfg.stage2.tau, cfg.stage2.q)?;
    audit.record(&checkpoint.join(CHECKPOINT_MANIFEST));
    let source: SegNet<f32> = load_checkpoint(checkpoint)?;
    cfg.injection.validate(source.config().num_blocks())?;
    cfg.photometric.validate()?;
    let digest = source.digest();
    let ds = DomainDataset::open_target(&manifest_path(&cfg.target_data), audit.clone())?;
    check_classes(&source, &ds)?;
    let train_idx = ds.indices(Role::Compound, Split::Train);
    if train_idx.is_empty() {
        return Err(data_err!("dataset has no compound training samples"));
    }
    let samples = ds.load_many(&train_idx, false)?;
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let paths: Vec<String> = samples.iter().map(|s| s.path.clone()).collect();
    let (pseudo, _th) = pseudo_labels(&source, &digest, &ds, &images, &paths, cfg, audit)?;
    let labels = split_labels(&pseudo.labels)?;

    let root = Rng::new(cfg.seed, 1);
    let mut model = source.clone();
    let o = &cfg.stage2.optim;
    let mut opt = optimizer(o);
    let mut sampler =
        match sampler_groups(cfg.stage2.sampler, &source, &samples, cfg, &root.derive(4))? {
            None => BatchSampler::random(samples.len(), o.draw(), root.derive(2))?,
            Some(groups) => BatchSampler::balanced(&groups, o.draw(), root.derive(2))?,
        };
    let steps = root.derive(3);
    for it in 0..o.iters {
        let idx = sampler.next_batch();
        let batch_images = stack_images(&samples, &idx)?;
        let batch_labels = stack_labels(&labels, &idx, o.batch)?;
        train_step(
            &mut model,
            &mut opt,
            &batch_images,
            &batch_labels,
            &cfg.injection,
            &cfg.photometric,
            &steps.derive(it as u64),
            true,
        )?;
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let new_digest = save_checkpoint(&model, &ckpt)?;
    let splits = evaluate_model(&model, &ds, &cfg.eval_splits, cfg.eval_batch)?;
    let report = MetricsReport::new(cfg.hash(), splits);
    report.write(out, ds.classes())?;
    let seconds = start.elapsed().as_secs_f64();
    write_timing(out, seconds)?;
    Ok(RunOutcome {
        report,
        checkpoint: ckpt,
        digest: new_digest,
        seconds,
        coverage: Some(pseudo.coverage),
    })
}

/// Evaluates a saved checkpoint on `splits` (every labeled test domain when
/// empty). The report's hash field is the checkpoint digest.
pub fn evaluate(
    checkpoint: &Path,
    data: &Path,
    splits: &[String],
    chunk: usize,
) -> Result<MetricsReport> {
    let model: SegNet<f32> = load_checkpoint(checkpoint)?;
    let ds = DomainDataset::open(&manifest_path(data), AuditLog::new())?;
    check_classes(&model, &ds)?;
    let metrics = evaluate_model(&model, &ds, splits, chunk)?;
    Ok(MetricsReport::new(model.digest(), metrics))
}

/// Style embeddings of every non-source sample, as CSV rows.
pub fn style_embeddings(checkpoint: &Path, data: &Path, out_csv: &Path) -> Result<usize> {
    let model: SegNet<f32> = load_checkpoint(checkpoint)?;
    let ds = DomainDataset::open_target(&manifest_path(data), AuditLog::new())?;
    let mut rows = Vec::new();
    let all: Vec<usize> = (0..ds.entries().len()).collect();
    for part in all.chunks(16) {
        let samples = ds.load_many(part, false)?;
        let batch = Tensor::stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        for (s, e) in samples.iter().zip(extract_style_embedding(&model, &batch)?) {
            rows.push((s.path.clone(), s.domain.clone(), e));
        }
    }
    crate::data::export_embeddings_csv(out_csv, &rows)?;
    Ok(rows.len())
}
