//! Metrics on a hand-made prediction set: AUC with ties, accuracy and
//! weighted F1 at two thresholds, ROC points, and aggregation over runs.
//!
//! cargo run --example evaluate_metrics

use chgrl::metrics::{aggregate, roc_points, PredictionSet, Scores};

fn main() -> chgrl::Result<()> {
    let p = PredictionSet::new(
        vec![0, 0, 1, 0, 1, 1, 0, 1],
        vec![0.10, 0.35, 0.35, 0.40, 0.62, 0.80, 0.85, 0.90],
    )?;
    for t in [0.5, 0.7] {
        let s = Scores::compute(&p, t)?;
        println!("threshold {t}: AUC {:.4}  ACC {:.4}  F1-weighted {:.4}", s.auc, s.acc, s.f1);
    }
    println!("ROC (fpr, tpr):");
    for (f, t) in roc_points(&p)? {
        println!("  {f:.2} {t:.2}");
    }
    let runs = [
        Scores { auc: 0.84, acc: 0.78, f1: 0.77 },
        Scores { auc: 0.79, acc: 0.74, f1: 0.73 },
        Scores { auc: 0.88, acc: 0.80, f1: 0.80 },
    ];
    let row = aggregate("chgrl", &runs, 0)?;
    println!("over {} runs: AUC {:.4} ± {:.4}", row.completed, row.auc.mean, row.auc.std);
    Ok(())
}
