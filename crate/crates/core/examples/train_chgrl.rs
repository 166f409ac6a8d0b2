//! Train the full model on a graph directory (as written by `chgrl generate`
//! and `chgrl impute`), checkpointing every run, then print the loss trace
//! of the first run.
//!
//! cargo run --release --example train_chgrl -- DATA_DIR OUT_DIR [EPOCHS]

use chgrl::cli::load_training_data;
use chgrl::model::ModelKind;
use chgrl::train::{train, TrainConfig, TrainOptions};

fn main() -> chgrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(data_dir), Some(out)) = (args.next(), args.next()) else {
        eprintln!("usage: train_chgrl DATA_DIR OUT_DIR [EPOCHS]");
        std::process::exit(1);
    };
    let mut config = TrainConfig { runs: 2, ..TrainConfig::default() };
    if let Some(e) = args.next() {
        config.epochs = e.parse().expect("EPOCHS must be an integer");
    }
    let (_, data) = load_training_data(data_dir.as_ref())?;
    let results = train(&data, &config, ModelKind::Chgrl, &TrainOptions::in_dir(&out))?;

    let first = &results[0];
    for r in first.trace.iter().step_by((first.trace.len() / 10).max(1)) {
        println!(
            "epoch {:>4}  L_t {:.5}  L_m {:.5}  L_cf {:.5}  L_cr {:.5}  val AUC {:.4}",
            r.epoch, r.total, r.main, r.counterfactual, r.causal_reg, r.val_auc
        );
    }
    for r in &results {
        match r.scores {
            Some(s) => println!("run {}: best epoch {}, test AUC {:.4}", r.run_index, r.best_epoch, s.auc),
            None => println!("run {}: failed ({})", r.run_index, r.failure.as_deref().unwrap_or("?")),
        }
    }
    println!("checkpoints and logs under {out}");
    Ok(())
}
