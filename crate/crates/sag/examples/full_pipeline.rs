//! End-to-end run on a synthetic corpus with the mock gateway: all nine
//! stages, then the stage-comparison table.
//!
//! ```bash
//! cargo run --example full_pipeline
//! ```

use anyhow::Result;

use sag::pipeline::{presets, run_stage, Stage};

fn main() -> Result<()> {
    let root = std::env::temp_dir().join("sag-full-pipeline");
    std::fs::create_dir_all(&root)?;
    let config = presets::desk_toy(&root, 7);
    presets::write_synthetic_fixtures(&config, 7)?;
    config.save(root.join("pipeline.toml"))?;
    println!("workspace: {}", root.display());
    println!("config:    {}", root.join("pipeline.toml").display());
    println!();

    for stage in Stage::ALL {
        let t0 = std::time::Instant::now();
        let outcome = run_stage(stage, &config, false)?;
        println!(
            "{:<13} {} ({:.2}s)",
            stage.name(),
            if outcome.skipped { "no-op" } else { "ok" },
            t0.elapsed().as_secs_f64()
        );
    }

    println!();
    println!("{}", std::fs::read_to_string(config.paths.work_dir.join("report.txt"))?);
    println!("rerun any stage in isolation, e.g.:");
    println!("  sag eval --config {}", root.join("pipeline.toml").display());
    Ok(())
}
