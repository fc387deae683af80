//! Checkpoint directories: one SFOT file per parameter plus a text manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{data_err, Error, Result};
use crate::hash::Hasher;
use crate::model::{Param, SegNet, SegNetConfig};
use crate::scalar::Scalar;
use crate::tensor::sfot::{read_tensor, write_tensor};

pub const CHECKPOINT_MANIFEST: &str = "manifest.txt";
const HEADER: &str = "sfocda-checkpoint 1";

fn manifest_text<T: Scalar>(model: &SegNet<T>) -> String {
    let cfg = model.config();
    let widths: Vec<String> = cfg.widths.iter().map(|w| w.to_string()).collect();
    let mut s = format!(
        "{HEADER}\nin_channels {}\nnum_classes {}\nwidths {}\n",
        cfg.in_channels,
        cfg.num_classes,
        widths.join(",")
    );
    for p in model.params() {
        let dims: Vec<String> = p.value.dims().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "param {} {}", p.name, dims.join(","));
    }
    s
}

impl<T: Scalar> SegNet<T> {
    /// SHA-256 over the architecture and the f32 image of every parameter.
    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        h.update(manifest_text(self).as_bytes());
        for p in self.params() {
            for v in p.value.data() {
                h.update(&(v.widen() as f32).to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Writes `model` into `dir` (created if missing) and returns its digest.
pub fn save_checkpoint<T: Scalar>(model: &SegNet<T>, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in model.params() {
        write_tensor(&dir.join(format!("{}.sfot", p.name)), &p.value)?;
    }
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, manifest_text(model)).map_err(|e| Error::io(&path, e))?;
    Ok(model.digest())
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| data_err!("bad integer list {:?}", s))
        })
        .collect()
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<SegNet<T>> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(data_err!("{} is not a checkpoint manifest", path.display()));
    }
    let mut in_channels = None;
    let mut num_classes = None;
    let mut widths = None;
    let mut params = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let bad = || data_err!("malformed manifest line {:?}", line);
        match key {
            "in_channels" => {
                in_channels = Some(parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?)
            }
            "num_classes" => {
                num_classes = Some(parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?)
            }
            "widths" => widths = Some(parse_list(parts.next().ok_or_else(bad)?)?),
            "param" => {
                let name = parts.next().ok_or_else(bad)?.to_string();
                let dims = parse_list(parts.next().ok_or_else(bad)?)?;
                let value = read_tensor::<T>(&dir.join(format!("{name}.sfot")))?;
                if value.dims().as_slice() != dims.as_slice() {
                    return Err(data_err!(
                        "{}: file dims {:?} disagree with manifest {:?}",
                        name,
                        value.dims(),
                        dims
                    ));
                }
                params.push(Param { name, value });
            }
            _ => return Err(bad()),
        }
    }
    let missing = |what: &str| data_err!("manifest lacks {}", what);
    let config = SegNetConfig {
        in_channels: in_channels.ok_or_else(|| missing("in_channels"))?,
        num_classes: num_classes.ok_or_else(|| missing("num_classes"))?,
        widths: widths.ok_or_else(|| missing("widths"))?,
    };
    SegNet::from_params(config, params)
        .map_err(|e| data_err!("checkpoint {}: {}", dir.display(), e))
}
