//! Maximum-probability-threshold pseudo-labels.
//!
//! Each pixel votes for its argmax class with its max probability. Class `c`
//! keeps the top `q`% of its votes: with `m` votes sorted descending the
//! threshold is the value at index `ceil(m·q/100) − 1`, capped by `tau`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{config_err, contract_err, data_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Tensor, IGNORE};

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_Q: f64 = 50.0;
pub const RESERVOIR_CAP: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassThresholds {
    pub thresholds: Vec<f64>,
    pub tau: f64,
    pub q: f64,
}

impl ClassThresholds {
    pub fn uniform(num_classes: usize, t: f64) -> Self {
        Self {
            thresholds: vec![t; num_classes],
            tau: t,
            q: 100.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.thresholds.len()
    }

    /// `{"0": t_0, ..., "tau": τ, "q": q}`
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (c, t) in self.thresholds.iter().enumerate() {
            m.insert(c.to_string(), json!(t));
        }
        m.insert("tau".into(), json!(self.tau));
        m.insert("q".into(), json!(self.q));
        Value::Object(m)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| data_err!("thresholds must be a JSON object"))?;
        let num = |k: &str| {
            obj.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| data_err!("thresholds: missing number {:?}", k))
        };
        let mut by_class = BTreeMap::new();
        for (k, v) in obj {
            if let Ok(c) = k.parse::<usize>() {
                by_class.insert(
                    c,
                    v.as_f64()
                        .ok_or_else(|| data_err!("threshold {} is not a number", k))?,
                );
            }
        }
        if by_class.keys().copied().ne(0..by_class.len()) {
            return Err(data_err!("threshold class ids are not contiguous from 0"));
        }
        Ok(Self {
            thresholds: by_class.into_values().collect(),
            tau: num("tau")?,
            q: num("q")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("json value");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value =
            serde_json::from_str(&text).map_err(|e| data_err!("{}: {}", path.display(), e))?;
        Self::from_json(&v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelMap {
    pub labels: LabelMap,
    pub coverage: f64,
}

impl PseudoLabelMap {
    pub fn new(labels: LabelMap) -> Self {
        let assigned = labels.data().iter().filter(|&&l| l != IGNORE).count();
        let coverage = if labels.is_empty() {
            0.0
        } else {
            assigned as f64 / labels.len() as f64
        };
        Self { labels, coverage }
    }
}

pub fn validate_mpt(tau: f64, q: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(config_err!("tau {} must be in (0, 1]", tau));
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(config_err!("q {} must be in (0, 100]", q));
    }
    Ok(())
}

/// Index into the descending sort of `m` values that the `q`% cut lands on.
pub fn percentile_index(m: usize, q: f64) -> usize {
    let k = ((m as f64 * q) / 100.0).ceil() as usize;
    k.clamp(1, m) - 1
}

/// `(argmax class, max probability)` of pixel `(n, y, x)`, ties to the lower class.
fn pixel_vote<T: Scalar>(probs: &Tensor<T>, n: usize, i: usize) -> (usize, f64) {
    let [_, c, ..] = probs.dims();
    let plane = probs.plane_len();
    let base = n * c * plane + i;
    let data = probs.data();
    let mut best = (0, data[base].widen());
    for k in 1..c {
        let v = data[base + k * plane].widen();
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

fn check_distribution<T: Scalar>(probs: &Tensor<T>) -> Result<()> {
    let [n, c, ..] = probs.dims();
    let plane = probs.plane_len();
    for b in 0..n {
        for i in 0..plane {
            let mut s = 0.0;
            for k in 0..c {
                let v = probs.data()[(b * c + k) * plane + i].widen();
                if v.is_nan() || v < 0.0 {
                    return Err(contract_err!(
                        "probability {} at sample {} pixel {} is not >= 0",
                        v,
                        b,
                        i
                    ));
                }
                s += v;
            }
            if (s - 1.0).abs() > 1e-3 {
                return Err(contract_err!(
                    "probabilities at sample {} pixel {} sum to {}",
                    b,
                    i,
                    s
                ));
            }
        }
    }
    Ok(())
}

/// Streaming per-class collection of max-probability votes. Past `cap`
/// votes a class keeps a uniform reservoir sample.
#[derive(Clone, Debug)]
pub struct ThresholdEstimator {
    votes: Vec<Vec<f64>>,
    seen: Vec<u64>,
    cap: usize,
    rng: Rng,
}

impl ThresholdEstimator {
    pub fn new(num_classes: usize) -> Self {
        Self::with_cap(num_classes, RESERVOIR_CAP, Rng::new(0, 0x6d7074))
    }

    pub fn with_cap(num_classes: usize, cap: usize, rng: Rng) -> Self {
        Self {
            votes: vec![Vec::new(); num_classes],
            seen: vec![0; num_classes],
            cap: cap.max(1),
            rng,
        }
    }

    pub fn observe<T: Scalar>(&mut self, probs: &Tensor<T>) -> Result<()> {
        let [n, c, ..] = probs.dims();
        if c != self.votes.len() {
            return Err(contract_err!(
                "probability maps have {} classes, estimator {}",
                c,
                self.votes.len()
            ));
        }
        check_distribution(probs)?;
        for b in 0..n {
            for i in 0..probs.plane_len() {
                let (k, v) = pixel_vote(probs, b, i);
                self.seen[k] += 1;
                let bucket = &mut self.votes[k];
                if bucket.len() < self.cap {
                    bucket.push(v);
                } else {
                    let j = self.rng.below(self.seen[k] as usize);
                    if j < self.cap {
                        bucket[j] = v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.seen.iter().sum()
    }

    pub fn finish(&self, tau: f64, q: f64) -> Result<ClassThresholds> {
        validate_mpt(tau, q)?;
        if self.total() == 0 {
            return Err(contract_err!("no pixels observed for threshold estimation"));
        }
        let thresholds = self
            .votes
            .iter()
            .map(|v| {
                if v.is_empty() {
                    return tau;
                }
                let mut sorted = v.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                sorted[percentile_index(sorted.len(), q)].min(tau)
            })
            .collect();
        Ok(ClassThresholds { thresholds, tau, q })
    }
}

/// Thresholds over a whole set of softmax maps.
pub fn mpt_thresholds<T: Scalar>(probs: &[Tensor<T>], tau: f64, q: f64) -> Result<ClassThresholds> {
    validate_mpt(tau, q)?;
    let first = probs
        .first()
        .ok_or_else(|| contract_err!("empty probability set"))?;
    let mut est = ThresholdEstimator::new(first.channels());
    for p in probs {
        est.observe(p)?;
    }
    est.finish(tau, q)
}

pub fn assign_pseudo_labels<T: Scalar>(
    probs: &Tensor<T>,
    th: &ClassThresholds,
) -> Result<PseudoLabelMap> {
    let [n, c, h, w] = probs.dims();
    if c != th.num_classes() {
        return Err(contract_err!(
            "{} thresholds for {} classes",
            th.num_classes(),
            c
        ));
    }
    let mut labels = LabelMap::filled([n, h, w], IGNORE);
    for b in 0..n {
        for i in 0..h * w {
            let (k, v) = pixel_vote(probs, b, i);
            if v >= th.thresholds[k] {
                labels.data_mut()[b * h * w + i] = k as u8;
            }
        }
    }
    Ok(PseudoLabelMap::new(labels))
}
