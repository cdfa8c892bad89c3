//! Command-line entry point: `mtc-regions <stage> --config <path>`.
//!
//! Exit code 0 on success. On failure, a single machine-parsable JSON
//! line goes to stderr (`{"error": <kind>, "message": ...}`) and the
//! exit code is nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mtc_regions::pipeline::{load_config, run_stage, Overrides, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "mtc-regions",
    version,
    about = "Urban region embeddings from service-level mobile traffic",
    long_about = "Runs one pipeline stage (or `all`): synthetic-city generation, \
traffic preprocessing, autoencoder training, cell/region embedding, and the \
evaluation suite (label harnesses, Ward clustering, AMI, k selection)."
)]
struct Cli {
    /// Pipeline stage: synth, preprocess, train-ae, embed-cells,
    /// train-agg, embed-regions, eval-landuse, eval-density, cluster,
    /// ami, choose-k, report, or all.
    stage: String,

    /// Path to the run's TOML config file.
    #[arg(long)]
    config: PathBuf,

    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Restrict the run to one time slot (night, morning, afternoon, full).
    #[arg(long)]
    slot: Option<String>,

    /// Override the positive-sampling hop radius.
    #[arg(long)]
    hops: Option<usize>,

    /// Override the triplet margin.
    #[arg(long)]
    margin: Option<f64>,

    /// Override the number of clusters for the cluster/ami stages.
    #[arg(long)]
    k: Option<usize>,
}

fn run(cli: &Cli) -> mtc_regions::Result<()> {
    let stage = Stage::parse(&cli.stage)?;
    let overrides = Overrides {
        seed: cli.seed,
        slot: cli.slot.clone(),
        hops: cli.hops,
        margin: cli.margin,
        k: cli.k,
    };
    let cfg = load_config(&cli.config, &overrides)?;
    run_stage(stage, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "error": err.kind(),
                "message": err.to_string(),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
