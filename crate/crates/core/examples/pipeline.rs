//! The whole toolkit end to end on a reduced synthetic cohort: generate,
//! impute, train both models, and write the comparison report.
//!
//! cargo run --release --example pipeline -- [OUT_DIR]

use chgrl::cli::run_pipeline;
use chgrl::synth::GenConfig;
use chgrl::train::TrainConfig;

fn main() -> chgrl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/pipeline".into());
    let gen = GenConfig {
        patients: 200,
        case_count: 80,
        control_count: 120,
        pp_edges: 1500,
        diseases: 120,
        dd_edges: 800,
        ..GenConfig::default()
    };
    let train = TrainConfig { epochs: 150, runs: 3, ..TrainConfig::default() };
    run_pipeline(&gen, &train, out.as_ref())?;
    println!("{}", std::fs::read_to_string(std::path::Path::new(&out).join("results.md")).unwrap_or_default());
    Ok(())
}
