use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SegNet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel mean followed by per-channel std of encoder block 1's output.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleEmbedding(pub Vec<f64>);

impl StyleEmbedding {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One embedding per image of `img`, computed in eval mode.
pub fn extract_style_embedding<T: Scalar>(
    model: &SegNet<T>,
    img: &Tensor<T>,
) -> Result<Vec<StyleEmbedding>> {
    let feat = model.block1_features(img)?;
    let [n, c, ..] = feat.dims();
    let hw = feat.plane_len() as f64;
    Ok((0..n)
        .map(|b| {
            let mut means = Vec::with_capacity(c);
            let mut stds = Vec::with_capacity(c);
            for ch in 0..c {
                let plane = feat.plane(b, ch);
                let mean = plane.iter().map(|v| v.widen()).sum::<f64>() / hw;
                let var = plane
                    .iter()
                    .map(|v| (v.widen() - mean).powi(2))
                    .sum::<f64>()
                    / hw;
                means.push(mean);
                stds.push(var.sqrt());
            }
            means.extend(stds);
            StyleEmbedding(means)
        })
        .collect())
}

/// CSV `path,domain,e0..e{k-1}`.
pub fn export_embeddings_csv(path: &Path, rows: &[(String, String, StyleEmbedding)]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.2.len());
    let mut s = String::from("path,domain");
    for i in 0..width {
        let _ = write!(s, ",e{i}");
    }
    s.push('\n');
    for (p, d, e) in rows {
        let _ = write!(s, "{p},{d}");
        for v in &e.0 {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
