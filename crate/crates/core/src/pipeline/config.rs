//! Experiment configuration: named profiles plus `key=value` overrides with
//! dotted sections (`stage2.tau=0.9`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SamplerMode;
use crate::error::{config_err, Error, Result};
use crate::hash::sha256_hex;
use crate::model::SegNetConfig;
use crate::photometric::PhotometricConfig;
use crate::pseudo::validate_mpt;
use crate::style::{GridSize, InjectionConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub iters: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub batch: usize,
    /// Images drawn per step as the style pool; only the first `batch` of
    /// them are labeled for the loss, the rest only donate styles. 0 uses
    /// the whole batch for both.
    pub style_pool_size: usize,
}

impl OptimConfig {
    /// Images drawn per step.
    pub fn draw(&self) -> usize {
        self.batch.max(self.style_pool_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub optim: OptimConfig,
    pub tau: f64,
    pub q: f64,
    pub sampler: SamplerMode,
    /// k for the clustering sampler.
    pub clusters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Desk-scale defaults.
    Default,
    /// Reduced widths and schedules for the acceptance suite.
    Quick,
    /// The published schedule: batch 1, 150K iterations.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Self::Default),
            "quick" => Ok(Self::Quick),
            "paper" => Ok(Self::Paper),
            _ => Err(config_err!("unknown profile {:?} (default|quick|paper)", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Dataset manifest (or the directory holding it).
    pub data: PathBuf,
    pub model: SegNetConfig,
    pub injection: InjectionConfig,
    pub photometric: PhotometricConfig,
    pub stage1: OptimConfig,
    pub stage2: Stage2Config,
    /// Domain names to evaluate; empty means every labeled test domain.
    pub eval_splits: Vec<String>,
    pub eval_batch: usize,
}

/// Everything Stage-II needs. There is deliberately no source-data field;
/// the manifest is only ever opened through a target view.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub seed: u64,
    pub target_data: PathBuf,
    pub injection: InjectionConfig,
    pub photometric: PhotometricConfig,
    pub stage2: Stage2Config,
    pub eval_splits: Vec<String>,
    pub eval_batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Default)
    }
}

impl ExperimentConfig {
    pub fn profile(p: Profile) -> Self {
        let stage1 = OptimConfig {
            iters: 3000,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            power: 0.9,
            batch: 4,
            style_pool_size: 0,
        };
        let stage2 = Stage2Config {
            optim: OptimConfig {
                iters: 1500,
                base_lr: 0.004,
                ..stage1.clone()
            },
            tau: 0.9,
            q: 50.0,
            sampler: SamplerMode::Random,
            clusters: 3,
        };
        let mut cfg = Self {
            seed: 0,
            data: PathBuf::from("data"),
            model: SegNetConfig::default(),
            injection: InjectionConfig::default(),
            photometric: PhotometricConfig::default(),
            stage1,
            stage2,
            eval_splits: Vec::new(),
            eval_batch: 16,
        };
        match p {
            Profile::Default => {}
            Profile::Quick => {
                cfg.model.widths = vec![8, 16, 32];
                cfg.stage1.iters = 600;
                cfg.stage2.optim.iters = 300;
            }
            Profile::Paper => {
                cfg.stage1 = OptimConfig {
                    iters: 150_000,
                    base_lr: 2.5e-4,
                    batch: 1,
                    style_pool_size: 4,
                    ..cfg.stage1
                };
                cfg.stage2.optim = OptimConfig {
                    base_lr: 1e-4,
                    ..cfg.stage1.clone()
                };
            }
        }
        cfg
    }

    /// Parses `key=value` lines over the profile named by a `profile=` line
    /// (default profile if absent). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected key=value, got {:?}", n + 1, raw))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let profile = match pairs.iter().rev().find(|(k, _)| k == "profile") {
            Some((_, v)) => v.parse()?,
            None => Profile::Default,
        };
        let mut cfg = Self::profile(profile);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.data.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data = dir.join(&cfg.data);
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| config_err!("{}: cannot parse {:?}", key, v))
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        fn optim(o: &mut OptimConfig, field: &str, key: &str, v: &str) -> Result<bool> {
            match field {
                "iters" => o.iters = num(key, v)?,
                "lr" => o.base_lr = num(key, v)?,
                "momentum" => o.momentum = num(key, v)?,
                "weight_decay" => o.weight_decay = num(key, v)?,
                "power" => o.power = num(key, v)?,
                "batch" => o.batch = num(key, v)?,
                "style_pool_size" => o.style_pool_size = num(key, v)?,
                _ => return Ok(false),
            }
            Ok(true)
        }
        let p = &mut self.photometric;
        let known = match key {
            "seed" => {
                self.seed = num(key, value)?;
                true
            }
            "data" => {
                self.data = PathBuf::from(value);
                true
            }
            "model.in_channels" => {
                self.model.in_channels = num(key, value)?;
                true
            }
            "model.num_classes" => {
                self.model.num_classes = num(key, value)?;
                true
            }
            "model.widths" => {
                self.model.widths = list(key, value)?;
                true
            }
            "injection.beta" => {
                self.injection.beta = num(key, value)?;
                true
            }
            "injection.sites" => {
                self.injection.sites = list(key, value)?.into_iter().collect();
                true
            }
            "injection.variant" => {
                self.injection.variant = value.parse()?;
                true
            }
            "injection.grid" => {
                self.injection.grid = value.parse()?;
                true
            }
            "injection.patches" => {
                self.injection.grid = GridSize::from_count(num(key, value)?)?;
                true
            }
            "injection.mix_alpha" => {
                self.injection.mix_alpha = num(key, value)?;
                true
            }
            "injection.derangement" => {
                self.injection.derangement = num(key, value)?;
                true
            }
            "photometric.enabled" => {
                p.enabled = num(key, value)?;
                true
            }
            "photometric.brightness" => {
                p.brightness = num(key, value)?;
                true
            }
            "photometric.contrast" => {
                p.contrast = num(key, value)?;
                true
            }
            "photometric.saturation" => {
                p.saturation = num(key, value)?;
                true
            }
            "photometric.hue" => {
                p.hue = num(key, value)?;
                true
            }
            "photometric.jitter_prob" => {
                p.jitter_prob = num(key, value)?;
                true
            }
            "photometric.blur_prob" => {
                p.blur_prob = num(key, value)?;
                true
            }
            "photometric.blur_sigma" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| config_err!("{}: expected lo,hi", key))?;
                p.blur_sigma = (num(key, a.trim())?, num(key, b.trim())?);
                true
            }
            "photometric.grayscale_prob" => {
                p.grayscale_prob = num(key, value)?;
                true
            }
            "stage2.tau" => {
                self.stage2.tau = num(key, value)?;
                true
            }
            "stage2.q" => {
                self.stage2.q = num(key, value)?;
                true
            }
            "stage2.sampler" => {
                self.stage2.sampler = value.parse()?;
                true
            }
            "stage2.clusters" => {
                self.stage2.clusters = num(key, value)?;
                true
            }
            "eval.splits" => {
                self.eval_splits = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
                true
            }
            "eval.batch" => {
                self.eval_batch = num(key, value)?;
                true
            }
            _ => match key.split_once('.') {
                Some(("stage1", f)) => optim(&mut self.stage1, f, key, value)?,
                Some(("stage2", f)) => optim(&mut self.stage2.optim, f, key, value)?,
                _ => false,
            },
        };
        if known {
            Ok(())
        } else {
            Err(config_err!("unknown config key {:?}", key))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.injection.validate(self.model.num_blocks())?;
        self.photometric.validate()?;
        validate_mpt(self.stage2.tau, self.stage2.q)?;
        for (name, o) in [("stage1", &self.stage1), ("stage2", &self.stage2.optim)] {
            if o.batch == 0 {
                return Err(config_err!("{}.batch must be >= 1", name));
            }
            if !(o.base_lr >= 0.0 && o.momentum >= 0.0 && o.weight_decay >= 0.0 && o.power >= 0.0) {
                return Err(config_err!(
                    "{}: optimizer settings must be non-negative",
                    name
                ));
            }
        }
        if self.stage2.clusters == 0 {
            return Err(config_err!("stage2.clusters must be >= 1"));
        }
        if self.eval_batch == 0 {
            return Err(config_err!("eval.batch must be >= 1"));
        }
        Ok(())
    }

    /// Canonical `key=value` text of every setting except filesystem paths.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let inj = &self.injection;
        let p = &self.photometric;
        let mut line = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
        line("seed", self.seed.to_string());
        line("model.in_channels", self.model.in_channels.to_string());
        line("model.num_classes", self.model.num_classes.to_string());
        line("model.widths", join(&mut self.model.widths.iter().copied()));
        line("injection.beta", inj.beta.to_string());
        line("injection.sites", join(&mut inj.sites.iter().copied()));
        line("injection.variant", inj.variant.to_string());
        line("injection.grid", inj.grid.to_string());
        line("injection.mix_alpha", inj.mix_alpha.to_string());
        line("injection.derangement", inj.derangement.to_string());
        line("photometric.enabled", p.enabled.to_string());
        line("photometric.brightness", p.brightness.to_string());
        line("photometric.contrast", p.contrast.to_string());
        line("photometric.saturation", p.saturation.to_string());
        line("photometric.hue", p.hue.to_string());
        line("photometric.jitter_prob", p.jitter_prob.to_string());
        line("photometric.blur_prob", p.blur_prob.to_string());
        line(
            "photometric.blur_sigma",
            format!("{},{}", p.blur_sigma.0, p.blur_sigma.1),
        );
        line("photometric.grayscale_prob", p.grayscale_prob.to_string());
        for (name, o) in [("stage1", &self.stage1), ("stage2", &self.stage2.optim)] {
            line(&format!("{name}.iters"), o.iters.to_string());
            line(&format!("{name}.lr"), o.base_lr.to_string());
            line(&format!("{name}.momentum"), o.momentum.to_string());
            line(&format!("{name}.weight_decay"), o.weight_decay.to_string());
            line(&format!("{name}.power"), o.power.to_string());
            line(&format!("{name}.batch"), o.batch.to_string());
            line(
                &format!("{name}.style_pool_size"),
                o.style_pool_size.to_string(),
            );
        }
        line("stage2.tau", self.stage2.tau.to_string());
        line("stage2.q", self.stage2.q.to_string());
        line("stage2.sampler", self.stage2.sampler.to_string());
        line("stage2.clusters", self.stage2.clusters.to_string());
        line("eval.splits", self.eval_splits.join(","));
        line("eval.batch", self.eval_batch.to_string());
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            seed: self.seed,
            target_data: self.data.clone(),
            injection: self.injection.clone(),
            photometric: self.photometric.clone(),
            stage2: self.stage2.clone(),
            eval_splits: self.eval_splits.clone(),
            eval_batch: self.eval_batch,
        }
    }
}

impl AdaptConfig {
    pub fn hash(&self) -> String {
        let inj = &self.injection;
        let o = &self.stage2.optim;
        let text = format!(
            "seed={}\ninjection={} {:?} {} {} {} {}\nphotometric={:?}\nstage2={} {} {} {} {} {} {} {} {} {} {}\neval={} {}\n",
            self.seed,
            inj.beta,
            inj.sites,
            inj.variant,
            inj.grid,
            inj.mix_alpha,
            inj.derangement,
            self.photometric,
            o.iters,
            o.base_lr,
            o.momentum,
            o.weight_decay,
            o.power,
            o.batch,
            o.style_pool_size,
            self.stage2.tau,
            self.stage2.q,
            self.stage2.sampler,
            self.stage2.clusters,
            self.eval_splits.join(","),
            self.eval_batch
        );
        sha256_hex(text.as_bytes())
    }
}

/// `data` may name the manifest itself or the directory holding it.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.extension().is_some_and(|e| e == "json") {
        data.to_path_buf()
    } else {
        data.join(crate::data::MANIFEST_NAME)
    }
}
