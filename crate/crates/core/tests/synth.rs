use std::fs;
use std::path::Path;

use chgrl::graph::{load_graph_dir, save_graph, DIAGNOSIS, DISEASE_DISEASE, PATIENT_PATIENT};
use chgrl::synth::{generate, label_recoverability_check, GenConfig, GroundTruth};

fn small() -> GenConfig {
    GenConfig {
        patients: 120,
        case_count: 50,
        control_count: 70,
        pp_edges: 600,
        diseases: 60,
        dd_edges: 200,
        feature_dim: 12,
        shifted_features: 3,
        ..GenConfig::default()
    }
}

#[test]
fn default_instance_has_the_configured_counts() {
    let cfg = GenConfig::default();
    let (g, truth) = generate(&cfg).unwrap();
    assert_eq!(g.patients(), 516);
    assert_eq!(g.diseases(), 386);
    let labels = g.labels();
    assert_eq!(labels.iter().filter(|l| **l == Some(1)).count(), 201);
    assert_eq!(labels.iter().filter(|l| **l == Some(0)).count(), 315);
    assert_eq!(g.edges_named(PATIENT_PATIENT).unwrap().len(), 2 * 9256);
    assert_eq!(g.edges_named(DISEASE_DISEASE).unwrap().len(), 2 * 5299);
    assert_eq!(g.features().cols(), 68);
    assert!((g.features().missing_fraction() - 0.2).abs() < 0.01);
    assert_eq!(truth.diagnosis_edges, g.edges_named(DIAGNOSIS).unwrap().len());
    assert_eq!(
        truth.diagnosis_edges,
        truth.causal_diagnosis_edges + truth.spurious_diagnosis_edges + truth.noise_diagnosis_edges
    );

    let counts = truth.causal_counts(&g).unwrap();
    for (i, l) in labels.iter().enumerate() {
        if *l == Some(1) {
            assert!(counts[i] >= cfg.case_causal_min, "case patient {i} has {} causal diagnoses", counts[i]);
        }
    }
    let controls: Vec<usize> = (0..516).filter(|&i| labels[i] == Some(0)).collect();
    let control_rate = controls.iter().map(|&i| counts[i]).sum::<usize>() as f64 / (controls.len() * 10) as f64;
    assert!(control_rate <= 0.05, "control causal-edge rate {control_rate}");
}

#[test]
fn default_signal_is_recoverable() {
    let (g, truth) = generate(&GenConfig::default()).unwrap();
    assert!(label_recoverability_check(&g, &truth).unwrap() > 0.9);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let (g, truth) = generate(&small()).unwrap();
        save_graph(&g, d.path()).unwrap();
        truth.save(&d.path().join("ground_truth.json")).unwrap();
    }
    assert_eq!(read_all(dirs[0].path()), read_all(dirs[1].path()));

    let other = GenConfig { seed: 8, ..small() };
    assert_ne!(generate(&other).unwrap().0, generate(&small()).unwrap().0);
}

#[test]
fn generated_graph_and_truth_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (g, truth) = generate(&small()).unwrap();
    save_graph(&g, dir.path()).unwrap();
    let path = dir.path().join("ground_truth.json");
    truth.save(&path).unwrap();
    assert_eq!(load_graph_dir(dir.path()).unwrap(), g);
    assert_eq!(GroundTruth::load(&path).unwrap(), truth);
}

#[test]
fn zero_missing_rate_leaves_no_empty_cells() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = generate(&GenConfig { missing_rate: 0.0, ..small() }).unwrap();
    assert!(g.features().is_complete());
    save_graph(&g, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("features.csv")).unwrap();
    assert!(!text.contains(",,") && !text.lines().any(|l| l.ends_with(',')));
}

#[test]
fn recoverability_does_not_drop_as_control_leakage_shrinks() {
    let aucs: Vec<f64> = [0.05, 0.02, 0.0]
        .iter()
        .map(|&p| {
            let (g, t) = generate(&GenConfig { control_causal_prob: p, ..GenConfig::default() }).unwrap();
            label_recoverability_check(&g, &t).unwrap()
        })
        .collect();
    assert!(aucs[0] <= aucs[1] && aucs[1] <= aucs[2], "{aucs:?}");
    assert_eq!(aucs[2], 1.0);
}

#[test]
fn null_instance_is_at_chance() {
    let cfg = GenConfig {
        causal_disease_count: 0,
        case_causal_min: 0,
        case_causal_max: 0,
        ..GenConfig::default()
    };
    let (g, t) = generate(&cfg).unwrap();
    let auc = label_recoverability_check(&g, &t).unwrap();
    assert!((auc - 0.5).abs() <= 0.1, "{auc}");
}

#[test]
fn unsatisfiable_counts_are_rejected() {
    let cfg = GenConfig { dd_edges: 60 * 59 / 2 + 1, ..small() };
    assert!(generate(&cfg).is_err());
    let cfg = GenConfig { case_count: 10, ..small() };
    assert!(generate(&cfg).is_err());
}
