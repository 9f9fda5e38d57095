//! Command-line front end: configuration, file formats, rendering and the
//! subcommands behind the `lmnet` binary.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod mapfile;
pub mod render;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use lmnet::tensor::ConvAlgo;

use crate::commands::{BenchOptions, InferOptions, OutputFormat};
use crate::config::{resolve, PipelineConfig};
pub use crate::error::{exit_code, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "lmnet", version, about = "LiDAR frontal-view 3D object detector")]
pub struct Cli {
    /// TOML pipeline configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Kitti,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Algo {
    Direct,
    Im2col,
}

impl From<Algo> for ConvAlgo {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Direct => ConvAlgo::Direct,
            Algo::Im2col => ConvAlgo::Im2col,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project a KITTI scan into a frontal-view map file.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write one PGM per channel into this directory.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Train on a KITTI-layout dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write the trained weights.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// CSV of the loss per epoch; row 0 is the starting loss.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect objects in one scan, a directory of scans or a dataset root.
    Infer {
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Output file for one scan, directory for several.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "kitti")]
        format: Format,
        /// Calibration for scans without their own.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Write a class-map PPM per scan into this directory.
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "im2col")]
        algo: Algo,
    },
    /// Generate a synthetic KITTI-layout dataset.
    Synth {
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace an existing dataset in a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Time the pipeline stages.
    Bench {
        #[arg(long)]
        weights: Option<PathBuf>,
        /// KITTI scan to time; a synthetic scene otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, value_enum, default_value = "im2col")]
        algo: Algo,
        /// Write the JSON report here as well as printing the table.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score detection files against dataset labels.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        /// Dataset root with label_2/ and optionally calib/.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Write the JSON report here as well as printing the table.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write one PGM per channel of a frontal-view map file.
    Render {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the effective configuration as TOML.
    DumpConfig,
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Parses arguments and runs the selected command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(e.to_string()),
    })?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A pool already built by an earlier call in this process stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Encode { input, output, render } => {
            commands::encode(&cfg, &input, &output, render.as_deref())?;
        }
        Command::Train {
            data,
            weights,
            resume,
            history,
            epochs,
            lr,
            batch_size,
            seed,
        } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.learning_rate = lr.unwrap_or(cfg.train.learning_rate);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            cfg.validate()?;
            let data = resolve(data, &cfg.paths.data, "training data (--data)")?;
            let weights = resolve(weights, &cfg.paths.weights, "output weights (--weights)")?;
            let out = commands::train(&cfg, &data, &weights, history.as_deref(), resume.as_deref())?;
            println!("loss {:.6} -> {:.6}", out.history[0], out.history.last().unwrap());
        }
        Command::Infer {
            input,
            weights,
            output,
            format,
            calib,
            render,
            algo,
        } => {
            let weights = resolve(weights, &cfg.paths.weights, "weights (--weights)")?;
            let output = resolve(output, &cfg.paths.output, "output (--output)")?;
            let format = match format {
                Format::Kitti => OutputFormat::Kitti,
                Format::Json => OutputFormat::Json,
            };
            let opts = InferOptions {
                weights: &weights,
                input: &input,
                output: &output,
                format,
                render: render.as_deref(),
                calib: calib.as_deref(),
                algo: algo.into(),
            };
            for (stem, dets) in commands::infer_files(&cfg, &opts)? {
                println!("{stem}: {} detections", dets.len());
            }
        }
        Command::Synth {
            output,
            count,
            seed,
            force,
        } => {
            cfg.synth.seed = seed.unwrap_or(cfg.synth.seed);
            let output = resolve(output, &cfg.paths.data, "output directory (--output)")?;
            commands::synth(&cfg, &output, count, force)?;
        }
        Command::Bench {
            weights,
            input,
            repetitions,
            warmup,
            algo,
            report,
        } => {
            let opts = BenchOptions {
                weights: weights.as_deref(),
                input: input.as_deref(),
                repetitions,
                warmup,
                algo: algo.into(),
            };
            let r = commands::bench(&cfg, &opts)?;
            print!("{}", r.table());
            if let Some(p) = report {
                std::fs::write(p, to_json(&r))?;
            }
        }
        Command::Eval {
            detections,
            labels,
            iou,
            report,
        } => {
            let labels = resolve(labels, &cfg.paths.data, "labels (--labels)")?;
            let r = commands::eval(&detections, &labels, iou)?;
            print!("{}", r.table());
            if let Some(p) = report {
                std::fs::write(p, to_json(&r))?;
            }
        }
        Command::Render { input, output } => {
            for p in commands::render(&input, &output)? {
                println!("{}", p.display());
            }
        }
        Command::DumpConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}
