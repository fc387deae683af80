use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sfocda::data::{generate_domains, read_scene_spec, AuditLog, DomainCounts, SceneSpec};
use sfocda::pipeline::{
    adapt_target, evaluate, style_embeddings, stylize, sweep, train_source, ExperimentConfig,
    RunOutcome, SweepAxis,
};
use sfocda::style::{GridSize, Variant};
use sfocda::tensor::sfot::{read_tensor, write_tensor};
use sfocda::{Error, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "sfocda",
    version,
    about = "Style-swap source training and source-free target adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic multi-domain benchmark.
    GenData {
        /// Scene spec JSON; the built-in benchmark when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        train_per_domain: usize,
        #[arg(long, default_value_t = 50)]
        test_per_domain: usize,
        /// Overrides the spec's image size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Stage I: supervised source training with style augmentation.
    TrainSource {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage II: source-free self-training on the compound target.
    AdaptTarget {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on labeled test splits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated domain names; every labeled test domain when omitted.
        #[arg(long, value_delimiter = ',')]
        splits: Vec<String>,
        /// Dataset directory or manifest.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Writes metrics.csv and metrics.json here instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Apply a style operator to images and dump per-patch statistics.
    Stylize {
        #[arg(long, default_value = "2x2")]
        grid: GridSize,
        #[arg(long, default_value = "inter")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the identity swap plan.
        #[arg(long)]
        identity: bool,
        #[arg(long)]
        out: PathBuf,
        /// Image tensors (.sfot).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Export per-image style embeddings of the target domains as CSV.
    StyleEmbed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage-I parameter sweep aggregated over seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn summary(name: &str, r: &RunOutcome) {
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
    println!(
        "{name}: C={} C+O={} digest={} ({:.1}s)",
        pct(r.report.compound_avg),
        pct(r.report.compound_open_avg),
        &r.digest[..16],
        r.seconds
    );
    if let Some(c) = r.coverage {
        println!("pseudo-label coverage {:.3}", c);
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            spec,
            out,
            seed,
            train_per_domain,
            test_per_domain,
            size,
        } => {
            let mut spec = match spec {
                Some(p) => read_scene_spec(&p)?,
                None => SceneSpec::default(),
            };
            if let Some(s) = size {
                spec.size = s;
            }
            let counts = DomainCounts {
                train: train_per_domain,
                test: test_per_domain,
            };
            let m = generate_domains(&spec, &out, seed, counts)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::TrainSource { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            summary("stage-1", &train_source(&cfg, &out)?);
        }
        Command::AdaptTarget {
            config,
            checkpoint,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?.adapt_config();
            summary(
                "stage-2",
                &adapt_target(&cfg, &checkpoint, &out, &AuditLog::new())?,
            );
        }
        Command::Evaluate {
            checkpoint,
            splits,
            data,
            out,
            batch,
        } => {
            let report = evaluate(&checkpoint, &data, &splits, batch)?;
            match out {
                Some(dir) => {
                    let ds = sfocda::data::Manifest::read(&sfocda::pipeline::manifest_path(&data))?;
                    report.write(&dir, &ds.classes)?;
                }
                None => print!("{}", report.to_json()),
            }
        }
        Command::Stylize {
            grid,
            variant,
            seed,
            identity,
            out,
            inputs,
        } => {
            let mut images = Vec::new();
            let mut names = Vec::new();
            for path in &inputs {
                let t: Tensor<f32> = read_tensor(path)?;
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image")
                    .to_string();
                for b in 0..t.batch() {
                    images.push(t.slice_batch(b, 1)?);
                    names.push(if t.batch() == 1 {
                        stem.clone()
                    } else {
                        format!("{stem}-{b}")
                    });
                }
            }
            let result = stylize(&images, grid, variant, seed, identity)?;
            fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            for (img, name) in result.images.iter().zip(&names) {
                write_tensor(&out.join(format!("{name}.sfot")), img)?;
            }
            let stats = out.join("stats.json");
            let text = serde_json::to_string_pretty(&result.stats).expect("stats serialize") + "\n";
            fs::write(&stats, text).map_err(|e| io_err(&stats, e))?;
            println!("stylized {} images into {}", names.len(), out.display());
        }
        Command::StyleEmbed {
            checkpoint,
            data,
            out,
        } => {
            let n = style_embeddings(&checkpoint, &data, &out)?;
            println!("wrote {n} embeddings to {}", out.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            for r in sweep(&cfg, axis, &values, seeds, &out)? {
                println!(
                    "{axis}={}: C={:.2}±{:.2} open={:.2}±{:.2}",
                    r.value,
                    100.0 * r.compound.0,
                    100.0 * r.compound.1,
                    100.0 * r.open.0,
                    100.0 * r.open.1
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
