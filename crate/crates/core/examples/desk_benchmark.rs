//! Trains on the synthetic desk benchmark and compares against raw-input
//! k-means. Usage: `desk_benchmark [config.toml] [section.key=value ...]`.

use std::path::PathBuf;
use std::time::Instant;

use protoseg::pipeline::{evaluate, load_dataset, raw_kmeans_oracle, train, Config, TrainOptions};

fn main() -> protoseg::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "configs/desk_benchmark.toml".into()));
    let overrides: Vec<String> = args.collect();
    let config = Config::load(&path, &overrides)?;
    let start = Instant::now();
    let data = load_dataset(&config)?;
    let k = config.model.categories;
    let oracle = raw_kmeans_oracle(&data.test, k, config.eval.seed, config.eval.kmeans_restarts)?;
    let outcome = train(&config, data.train, &TrainOptions::default())?;
    let ev = evaluate(&config, &outcome.checkpoint, &data.test)?;
    let report = ev.report.expect("synthetic scenes carry labels");
    let f = outcome.log.consistent_fractions();
    println!(
        "oracle miou {:.4} | model miou {:.4} oa {:.4} | fraction first {:.3} last {:.3} | {:.1}s",
        oracle.scores.miou,
        report.scores.miou,
        report.scores.oa,
        f[0],
        f[f.len() - 1],
        start.elapsed().as_secs_f64()
    );
    println!("{report}");
    Ok(())
}
