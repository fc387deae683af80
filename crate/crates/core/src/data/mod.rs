//! Synthetic multi-domain datasets, loading, style embeddings, latent-domain
//! clustering and batch sampling.

mod cluster;
mod embed;
mod sampler;
pub mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::sfot::{read_labels, read_tensor, write_labels, write_tensor};
use crate::tensor::{LabelMap, Tensor};

pub use cluster::{adjusted_rand_index, kmeans, KMeans};
pub use embed::{export_embeddings_csv, extract_style_embedding, StyleEmbedding};
pub use sampler::{BatchSampler, SamplerMode};
pub use synth::{apply_style, render, render_scene, DomainStyle, SceneSpec, CLASS_NAMES};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Compound,
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Source => "source",
            Role::Compound => "compound",
            Role::Open => "open",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(config_err!("unknown split {:?}", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub image: String,
    pub label: Option<String>,
    pub domain: String,
    pub role: Role,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| data_err!("{}: {}", path.display(), e))?;
        if m.version != MANIFEST_VERSION {
            return Err(data_err!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.version
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Shared record of every file a dataset (or caller) opened, in order.
#[derive(Clone, Debug, Default)]
pub struct AuditLog(Arc<Mutex<Vec<PathBuf>>>);

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, path: &Path) {
        self.0.lock().expect("audit lock").push(path.to_path_buf());
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.0.lock().expect("audit lock").clone()
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: Option<LabelMap>,
    pub domain: String,
    pub path: String,
}

/// A manifest plus the files it references. A target view drops every
/// source-role entry when it is opened, so no source file can be reached.
#[derive(Clone, Debug)]
pub struct DomainDataset {
    root: PathBuf,
    classes: Vec<String>,
    entries: Vec<SampleEntry>,
    audit: AuditLog,
}

impl DomainDataset {
    pub fn open(manifest: &Path, audit: AuditLog) -> Result<Self> {
        audit.record(manifest);
        let m = Manifest::read(manifest)?;
        let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self {
            root,
            classes: m.classes,
            entries: m.samples,
            audit,
        })
    }

    pub fn open_target(manifest: &Path, audit: AuditLog) -> Result<Self> {
        let mut ds = Self::open(manifest, audit)?;
        ds.entries.retain(|e| e.role != Role::Source);
        Ok(ds)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn indices(&self, role: Role, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].role == role && self.entries[i].split == split)
            .collect()
    }

    pub fn domain_indices(&self, domain: &str, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].domain == domain && self.entries[i].split == split)
            .collect()
    }

    /// Domain names in manifest order, each listed once.
    pub fn domains(&self) -> Vec<(String, Role)> {
        let mut out: Vec<(String, Role)> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|(d, _)| d == &e.domain) {
                out.push((e.domain.clone(), e.role));
            }
        }
        out
    }

    pub fn role_of(&self, domain: &str) -> Option<Role> {
        self.entries
            .iter()
            .find(|e| e.domain == domain)
            .map(|e| e.role)
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load(&self, i: usize, with_label: bool) -> Result<Sample> {
        let e = self
            .entries
            .get(i)
            .ok_or_else(|| data_err!("sample index {} out of range", i))?;
        let path = self.path_of(&e.image);
        self.audit.record(&path);
        let image = read_tensor::<f32>(&path)?;
        let label = match (&e.label, with_label) {
            (Some(l), true) => {
                let p = self.path_of(l);
                self.audit.record(&p);
                let label = read_labels(&p)?;
                let [n, _, h, w] = image.dims();
                if label.dims() != [n, h, w] {
                    return Err(data_err!(
                        "{}: label dims {:?} vs image {:?}",
                        l,
                        label.dims(),
                        image.dims()
                    ));
                }
                Some(label)
            }
            _ => None,
        };
        Ok(Sample {
            image,
            label,
            domain: e.domain.clone(),
            path: e.image.clone(),
        })
    }

    pub fn load_many(&self, indices: &[usize], with_label: bool) -> Result<Vec<Sample>> {
        indices.iter().map(|&i| self.load(i, with_label)).collect()
    }

    /// Every file the manifest references exists and labels match images.
    pub fn verify(&self) -> Result<()> {
        for i in 0..self.entries.len() {
            self.load(i, true)?;
        }
        Ok(())
    }
}

fn scene_seed(seed: u64, domain: usize, split: Split, idx: usize) -> u64 {
    let tag = ((domain as u64) << 40) | ((split as u64) << 32) | idx as u64;
    Rng::new(seed, 3).derive(tag).next_u64()
}

/// Per-split sample counts for [`generate_domains`]. Open domains only get
/// test samples; compound training samples are written without labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainCounts {
    pub train: usize,
    pub test: usize,
}

pub fn generate_domains(
    spec: &SceneSpec,
    out: &Path,
    seed: u64,
    counts: DomainCounts,
) -> Result<Manifest> {
    spec.validate()?;
    if counts.train == 0 || counts.test == 0 {
        return Err(config_err!("train and test counts must be >= 1"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut samples = Vec::new();
    for (di, style) in spec.domains.iter().enumerate() {
        for split in [Split::Train, Split::Test] {
            let n = match (style.role, split) {
                (Role::Open, Split::Train) => 0,
                (_, Split::Train) => counts.train,
                (_, Split::Test) => counts.test,
            };
            if n == 0 {
                continue;
            }
            let dir = format!("{}/{}", style.name, split);
            fs::create_dir_all(out.join(&dir)).map_err(|e| Error::io(out.join(&dir), e))?;
            for idx in 0..n {
                let (img, lab) = render(spec, style, scene_seed(seed, di, split, idx));
                let image = format!("{dir}/{idx:05}.image.sfot");
                write_tensor(&out.join(&image), &img)?;
                let labeled = !(style.role == Role::Compound && split == Split::Train);
                let label = if labeled {
                    let l = format!("{dir}/{idx:05}.label.sfot");
                    write_labels(&out.join(&l), &lab)?;
                    Some(l)
                } else {
                    None
                };
                samples.push(SampleEntry {
                    image,
                    label,
                    domain: style.name.clone(),
                    role: style.role,
                    split,
                });
            }
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        samples,
    };
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SceneSpec =
        serde_json::from_str(&text).map_err(|e| config_err!("{}: {}", path.display(), e))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests;
