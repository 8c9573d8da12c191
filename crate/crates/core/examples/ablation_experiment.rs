//! Baseline vs. constrained translation on a synthetic world, with the full
//! M x mode ablation grid.
//!
//! ```text
//! cargo run --release --example ablation_experiment -- [seed] [workdir] [config.json]
//! ```

use std::path::PathBuf;

use qtcand::evaluation::{run_experiment, ExperimentConfig};

fn main() -> qtcand::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(1);
    let workdir = args.next().map(PathBuf::from).filter(|p| p.as_os_str() != "-");
    let mut config: ExperimentConfig = match args.next() {
        Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
        None => ExperimentConfig::default(),
    };
    config.seed = seed;

    let report = run_experiment(&config, workdir.as_deref())?;
    print!("{}", report.to_text());
    Ok(())
}
