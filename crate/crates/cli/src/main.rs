use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protoseg::geom::{load_cloud, synth_scene, write_cloud_csv, CloudFormat, SynthParams};
use protoseg::pipeline::{
    evaluate, load_dataset, predict, prepare_scene, read_matrix_csv, report_plots, train, write_predictions, Config,
    TrainLog, TrainOptions, CHECKPOINT_FILE, LOG_FILE, SIMILARITY_FILE,
};
use protoseg::{Checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "protoseg", version, about = "Unsupervised point-cloud segmentation with prototype libraries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override any config key, e.g. `--set train.tau=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set train.epochs=N`
    #[arg(long)]
    epochs: Option<usize>,
    /// Sets both `model.seed` and `train.seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set train.lr=X`
    #[arg(long)]
    lr: Option<f64>,
    /// Shorthand for `--set train.tau=X`
    #[arg(long)]
    tau: Option<f64>,
    /// Shorthand for `--set model.primitives=C`
    #[arg(long)]
    primitives: Option<usize>,
    /// Shorthand for `--set model.categories=K`
    #[arg(long)]
    categories: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut overrides = Vec::new();
        let mut flag = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push(format!("{key}={v}"));
            }
        };
        flag("train.epochs", self.epochs.map(|v| v.to_string()));
        if let Some(s) = self.seed {
            flag("train.seed", Some(s.to_string()));
            flag("model.seed", Some(s.to_string()));
        }
        flag("train.lr", self.lr.map(|v| format!("{v:?}")));
        flag("train.tau", self.tau.map(|v| format!("{v:?}")));
        flag("model.primitives", self.primitives.map(|v| v.to_string()));
        flag("model.categories", self.categories.map(|v| v.to_string()));
        overrides.extend(self.set.iter().cloned());
        Config::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and similarity sidecar.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "run")]
        outdir: PathBuf,
    },
    /// Score a checkpoint on the configured test scenes.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics CSV destination.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Directory for per-scene prediction CSVs.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Predict categories for one cloud file.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input cloud (.csv or .ply).
        #[arg(long)]
        input: PathBuf,
        /// Output CSV of `index,label`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic Gaussian-blob scene as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 400)]
        points_per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render SVG plots from a training log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
        /// Similarity matrix CSV; defaults to the sidecar next to the log.
        #[arg(long)]
        similarity: Option<PathBuf>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, outdir } => {
            let config = config.load()?;
            std::fs::create_dir_all(&outdir).map_err(io_err(&outdir))?;
            let cfg_path = outdir.join("config.toml");
            std::fs::write(&cfg_path, config.to_toml_string()).map_err(io_err(&cfg_path))?;
            let data = load_dataset(&config)?;
            let outcome = train(
                &config,
                data.train,
                &TrainOptions {
                    outdir: Some(outdir.clone()),
                },
            )?;
            if let Some(last) = outcome.log.records.last() {
                println!(
                    "trained {} epochs: total {:.5}, consistent fraction {:.3}",
                    outcome.log.len(),
                    last.total,
                    last.consistent_fraction
                );
            }
            println!("wrote {}", outdir.join(CHECKPOINT_FILE).display());
            println!("wrote {}", outdir.join(LOG_FILE).display());
            if !data.test.is_empty() {
                if let Some(report) = evaluate(&config, &outcome.checkpoint, &data.test)?.report {
                    println!("{report}");
                }
            }
        }
        Command::Eval {
            config,
            checkpoint,
            metrics,
            predictions,
        } => {
            let config = config.load()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let data = load_dataset(&config)?;
            let ev = evaluate(&config, &ck, &data.test)?;
            if let Some(dir) = &predictions {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                for (i, labels) in ev.predictions.iter().enumerate() {
                    write_predictions(&dir.join(format!("scene{i:03}.csv")), labels)?;
                }
            }
            match ev.report {
                Some(report) => {
                    println!("{report}");
                    if let Some(path) = &metrics {
                        std::fs::write(path, report.to_csv()).map_err(io_err(path))?;
                    }
                }
                None => println!("no ground truth in the test scenes; predictions only"),
            }
        }
        Command::Predict {
            config,
            checkpoint,
            input,
            out,
        } => {
            let config = config.load()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let cloud = load_cloud(&input, CloudFormat::from_path(&input)?)?;
            let scene = prepare_scene(input.display().to_string(), &cloud, config.data.voxel_size, &ck.input_spec)?;
            let labels = predict(&config, &ck, std::slice::from_ref(&scene))?.remove(0);
            write_predictions(&out, &labels)?;
            println!("wrote {} predictions to {}", labels.len(), out.display());
        }
        Command::Synth {
            out,
            classes,
            points_per_class,
            separation,
            noise,
            seed,
        } => {
            let cloud = synth_scene(&SynthParams {
                n_classes: classes,
                points_per_class,
                separation,
                noise,
                seed,
            })?;
            write_cloud_csv(&out, &cloud)?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::Report {
            log,
            outdir,
            similarity,
        } => {
            let train_log = TrainLog::read(&log)?;
            let sidecar = similarity.or_else(|| {
                let p = log.with_file_name(SIMILARITY_FILE);
                p.exists().then_some(p)
            });
            let matrix = sidecar.as_deref().map(read_matrix_csv).transpose()?;
            for path in report_plots(&train_log, matrix.as_ref(), &outdir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
