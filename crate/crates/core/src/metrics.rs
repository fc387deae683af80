//! Confusion-matrix IoU and experiment reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Role;
use crate::error::{data_err, shape_err, Error, Result};
use crate::tensor::{LabelMap, IGNORE};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";

/// Rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Pixels whose ground truth is [`IGNORE`] are skipped.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(shape_err!(
                "prediction {:?} vs ground truth {:?}",
                pred.dims(),
                gt.dims()
            ));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if g >= self.classes || p >= self.classes {
                return Err(data_err!(
                    "label {} / prediction {} outside {} classes",
                    g,
                    p,
                    self.classes
                ));
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` for classes absent from both
    /// prediction and ground truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..self.classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.classes).map(|g| self.get(g, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean of the present IoUs, summed as exact fractions so the result is
    /// the correctly rounded value whenever the sums fit in `u128`.
    pub fn miou(&self) -> Option<f64> {
        let fractions = self.iou_fractions();
        if fractions.is_empty() {
            return None;
        }
        let exact = fractions
            .iter()
            .try_fold((0u128, 1u128), |(n, d), &(a, b)| {
                let (a, b) = (a as u128, b as u128);
                let num = n.checked_mul(b)?.checked_add(a.checked_mul(d)?)?;
                let den = d.checked_mul(b)?;
                let g = gcd(num, den);
                Some((num / g, den / g))
            });
        match exact.and_then(|(n, d)| Some((n, d.checked_mul(fractions.len() as u128)?))) {
            Some((n, d)) if n < 1 << 53 && d < 1 << 53 => Some(n as f64 / d as f64),
            _ => mean_present(&self.iou()),
        }
    }

    fn iou_fractions(&self) -> Vec<(u64, u64)> {
        (0..self.classes)
            .filter_map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..self.classes).map(|g| self.get(g, c)).sum();
                let denom = row + col - tp;
                (denom > 0).then_some((tp, denom))
            })
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub name: String,
    pub role: Role,
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub pixels: u64,
}

impl SplitMetrics {
    pub fn from_confusion(name: &str, role: Role, cm: &ConfusionMatrix) -> Self {
        Self {
            name: name.into(),
            role,
            per_class: cm.iou(),
            miou: cm.miou().unwrap_or(0.0),
            pixels: cm.total(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub splits: Vec<SplitMetrics>,
    /// Mean mIoU over compound domains (C).
    pub compound_avg: Option<f64>,
    /// Mean mIoU over compound and open domains, each weighted once (C+O).
    pub compound_open_avg: Option<f64>,
}

impl MetricsReport {
    pub fn new(config_hash: String, splits: Vec<SplitMetrics>) -> Self {
        let avg = |keep: &dyn Fn(Role) -> bool| {
            let v: Vec<Option<f64>> = splits
                .iter()
                .filter(|s| keep(s.role))
                .map(|s| Some(s.miou))
                .collect();
            mean_present(&v)
        };
        let compound_avg = avg(&|r| r == Role::Compound);
        let compound_open_avg = avg(&|r| r == Role::Compound || r == Role::Open);
        Self {
            config_hash,
            splits,
            compound_avg,
            compound_open_avg,
        }
    }

    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.splits.iter().find(|s| s.name == name)
    }

    pub fn role_avg(&self, role: Role) -> Option<f64> {
        let v: Vec<Option<f64>> = self
            .splits
            .iter()
            .filter(|s| s.role == role)
            .map(|s| Some(s.miou))
            .collect();
        mean_present(&v)
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("split,class,iou\n");
        for sp in &self.splits {
            for (c, iou) in sp.per_class.iter().enumerate() {
                let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
                match iou {
                    Some(v) => writeln!(s, "{},{},{}", sp.name, name, v),
                    None => writeln!(s, "{},{},nan", sp.name, name),
                }
                .expect("string write");
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| data_err!("metrics json: {}", e))
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path, class_names: &[String]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(METRICS_CSV);
        fs::write(&csv, self.to_csv(class_names)).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(METRICS_JSON);
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(METRICS_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}
