//! Thin pipeline driver: `sag <stage> --config <file>`.

use clap::Parser;

use sag::pipeline::{run_stage, PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "sag",
    about = "Run one stage of the style-aligned generation pipeline",
    after_help = "Stages: ingest, train-filter, filter, invgen, sft, build-prefs, dpo, eval, report"
)]
struct Args {
    /// Stage name (see the stage list below).
    stage: String,
    /// Pipeline config (TOML).
    #[arg(long)]
    config: std::path::PathBuf,
    /// Re-run even when the stage manifest is still valid.
    #[arg(long)]
    force: bool,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate with cross-user style references (ablation).
    #[arg(long)]
    shuffle_refs: bool,
}

fn main() {
    let args = Args::parse();
    let stage = match Stage::parse(&args.stage) {
        Some(stage) => stage,
        None => {
            eprintln!(
                "unknown stage {:?}; expected one of: {}",
                args.stage,
                Stage::ALL.map(Stage::name).join(", ")
            );
            std::process::exit(1);
        }
    };
    let mut config = match PipelineConfig::load(&args.config) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("{message}");
            std::process::exit(1);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.shuffle_refs {
        config.eval.shuffle_references = true;
    }

    match run_stage(stage, &config, args.force) {
        Ok(outcome) if outcome.skipped => {
            println!("{stage}: no-op (inputs and config unchanged)");
        }
        Ok(outcome) => {
            println!(
                "{stage}: ok in {:.2}s ({} outputs)",
                outcome.manifest.wall_time_secs,
                outcome.manifest.outputs.len()
            );
        }
        Err(error) => {
            eprintln!("{stage}: {error}");
            std::process::exit(error.exit_code());
        }
    }
}
