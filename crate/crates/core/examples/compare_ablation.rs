//! Train the full model and the relational-GCN ablation on the default
//! synthetic cohort and compare test metrics and learned causal strengths.
//!
//! cargo run --release --example compare_ablation -- [RUNS] [EPOCHS] [gd|adam]

use chgrl::csinlf::{fit, impute, FitConfig, KnownEntries};
use chgrl::graph::DIAGNOSIS;
use chgrl::metrics::aggregate;
use chgrl::model::ModelKind;
use chgrl::synth::{generate, label_recoverability_check, GenConfig};
use chgrl::train::{Trainer, TrainConfig, TrainData, TrainOptions};

fn main() -> chgrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = TrainConfig::default();
    if let Some(r) = args.next() {
        config.runs = r.parse().expect("RUNS must be an integer");
    }
    if let Some(e) = args.next() {
        config.epochs = e.parse().expect("EPOCHS must be an integer");
    }
    if let Some(o) = args.next() {
        config.optimizer = serde_json::from_value(serde_json::Value::String(o)).expect("gd or adam");
    }

    let (g, truth) = generate(&GenConfig::default())?;
    println!("label recoverability AUC {:.4}", label_recoverability_check(&g, &truth)?);

    let known = KnownEntries::from_features(g.features())?;
    let factors = fit(&known, &FitConfig::default(), Vec::new())?;
    let filled = impute(&factors, g.features())?;
    let data = TrainData::with_features(&g, filled.values().clone())?;
    let diag = g.relation_index(DIAGNOSIS)?;

    for kind in [ModelKind::Chgrl, ModelKind::Rgcn] {
        let trainer = Trainer::new(&data, &config, kind)?;
        let mut scores = Vec::new();
        for k in 0..config.runs {
            let (state, result) = trainer.run(k, &TrainOptions::default())?;
            let result = result.expect("uninterrupted");
            let Some(s) = result.scores else {
                println!("{kind} run {k}: failed: {}", result.failure.unwrap_or_default());
                continue;
            };
            scores.push(s);
            let mut line = format!(
                "{kind} run {k}: best epoch {:>3}/{:>3}  test AUC {:.4} ACC {:.4} F1 {:.4}",
                result.best_epoch, result.epochs_run, s.auc, s.acc, s.f1
            );
            if kind == ModelKind::Chgrl {
                let fwd = trainer.model.forward(&data.input, &state.best_params)?;
                let edge = fwd.scores.as_ref().expect("causal branch");
                let cs = &edge.cs.as_slice().unwrap()[edge.relation_range(diag)];
                let m = truth.mean_by_role(&g, cs)?;
                line += &format!(
                    "  cs causal {:.4} spurious {:.4} noise {:.4}",
                    m.causal, m.spurious, m.noise
                );
            }
            println!("{line}");
        }
        let row = aggregate(kind.as_str(), &scores, config.runs - scores.len())?;
        println!(
            "{kind}: AUC {:.4} ± {:.4}  ACC {:.4} ± {:.4}  F1 {:.4} ± {:.4}",
            row.auc.mean, row.auc.std, row.acc.mean, row.acc.std, row.f1.mean, row.f1.std
        );
    }
    Ok(())
}
