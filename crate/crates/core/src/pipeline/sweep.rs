use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::Role;
use crate::error::{config_err, Error, Result};
use crate::pipeline::{train_source, ExperimentConfig};
use crate::style::{GridSize, Variant};

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Number of patches `n`; 0 disables style injection.
    Patches,
    Beta,
    /// Single injection site.
    Block,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "patches" => Ok(Self::Patches),
            "beta" => Ok(Self::Beta),
            "block" => Ok(Self::Block),
            _ => Err(config_err!("unknown sweep axis {:?} (n|beta|block)", s)),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Patches => "n",
            Self::Beta => "beta",
            Self::Block => "block",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seeds: usize,
    pub compound: (f64, f64),
    pub compound_open: (f64, f64),
    pub open: (f64, f64),
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(config_err!(
            "{} axis needs non-negative integers, got {}",
            axis,
            v
        ));
    }
    Ok(v as usize)
}

/// Applies one axis value to a copy of `base`.
pub fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, v: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Patches => match as_count(axis, v)? {
            0 => cfg.injection.variant = Variant::Off,
            n => cfg.injection.grid = GridSize::from_count(n)?,
        },
        SweepAxis::Beta => {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err!("beta {} outside [0, 1]", v));
            }
            cfg.injection.beta = v;
        }
        SweepAxis::Block => {
            let l = as_count(axis, v)?;
            if l > cfg.model.num_blocks() {
                return Err(config_err!(
                    "block {} exceeds the {} encoder blocks",
                    l,
                    cfg.model.num_blocks()
                ));
            }
            cfg.injection.sites = [l].into();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs Stage-I for every (value, seed) pair with seeds `base.seed + i` and
/// writes `sweep.csv` with mean and sample std per value.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: usize,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds == 0 {
        return Err(config_err!("sweep needs at least one value and one seed"));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| apply_axis(base, axis, v))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (&v, cfg) in values.iter().zip(&configs) {
        let (mut c, mut co, mut o) = (Vec::new(), Vec::new(), Vec::new());
        for s in 0..seeds {
            let mut run = cfg.clone();
            run.seed = base.seed + s as u64;
            let dir = out
                .join(format!("{axis}-{v}"))
                .join(format!("seed-{}", run.seed));
            let r = train_source(&run, &dir)?.report;
            c.push(r.compound_avg.unwrap_or(0.0));
            co.push(r.compound_open_avg.unwrap_or(0.0));
            o.push(r.role_avg(Role::Open).unwrap_or(0.0));
        }
        rows.push(SweepRow {
            value: v,
            seeds,
            compound: mean_std(&c),
            compound_open: mean_std(&co),
            open: mean_std(&o),
        });
    }
    let mut csv = String::from("axis,value,seeds,c_mean,c_std,co_mean,co_std,open_mean,open_std\n");
    for r in &rows {
        writeln!(
            csv,
            "{axis},{},{},{},{},{},{},{},{}",
            r.value,
            r.seeds,
            r.compound.0,
            r.compound.1,
            r.compound_open.0,
            r.compound_open.1,
            r.open.0,
            r.open.1
        )
        .expect("string write");
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(SWEEP_CSV);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
