use chgrl::metrics::{aggregate, MetricTable, PredictionSet, Scores};
use chgrl::report::{emit_report, pca_2d, write_tables, Embeddings, ReportInputs};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: &Array2<f64>, i: usize, j: usize) -> f64 {
    a.row(i).iter().zip(a.row(j).iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn two_dimensional_input_keeps_pairwise_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_simple_fn((30, 2), || rng.gen_range(-3.0..3.0));
    let p = pca_2d(&x);
    for i in 0..30 {
        for j in 0..30 {
            assert!((dist(&x, i, j) - dist(&p, i, j)).abs() < 1e-9);
        }
    }
}

#[test]
fn components_are_uncorrelated_and_ordered_by_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((200, 5), |(_, j)| rng.gen_range(-1.0..1.0) * (5 - j) as f64);
    let p = pca_2d(&x);
    let (a, b) = (p.column(0), p.column(1));
    let cov = a.iter().zip(b.iter()).map(|(u, v)| u * v).sum::<f64>() / 200.0;
    assert!(cov.abs() < 1e-9);
    assert!(a.mapv(|v| v * v).sum() >= b.mapv(|v| v * v).sum());
    assert!(a.sum().abs() < 1e-9 && b.sum().abs() < 1e-9);
}

#[test]
fn empty_table_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    write_tables(&MetricTable::default(), dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv, "method,metric,mean,std\n");
    let md = std::fs::read_to_string(dir.path().join("results.md")).unwrap();
    assert_eq!(md.lines().count(), 2);
}

#[test]
fn markdown_shows_mean_and_std_to_four_places() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [Scores { auc: 0.8, acc: 0.7, f1: 0.6 }, Scores { auc: 0.9, acc: 0.7, f1: 0.6 }];
    let table = MetricTable { rows: vec![aggregate("chgrl", &runs, 1).unwrap()] };
    write_tables(&table, dir.path()).unwrap();
    let md = std::fs::read_to_string(dir.path().join("results.md")).unwrap();
    assert!(md.contains("| chgrl | 0.8500 ± 0.0707 | 0.7000 ± 0.0000 | 0.6000 ± 0.0000 | 2 (1 failed) |"), "{md}");
}

#[test]
fn embeddings_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let e = Embeddings {
        patients: vec![0, 1, 2],
        labels: vec![Some(1), None, Some(0)],
        values: Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 0.1 - j as f64 / 3.0),
    };
    let path = dir.path().join("e.csv");
    e.write(&path).unwrap();
    assert_eq!(Embeddings::read(&path).unwrap(), e);
}

#[test]
fn full_report_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let preds = PredictionSet::new(vec![0, 1, 0, 1], vec![0.1, 0.7, 0.4, 0.9]).unwrap();
    let inputs = ReportInputs {
        table: MetricTable { rows: vec![aggregate("chgrl", &[Scores::compute(&preds, 0.5).unwrap()], 0).unwrap()] },
        predictions: vec![("chgrl".into(), preds)],
        embeddings: Some(Embeddings {
            patients: vec![0, 1, 2],
            labels: vec![Some(0), Some(1), None],
            values: Array2::from_shape_fn((3, 3), |(i, j)| (i * j) as f64),
        }),
    };
    emit_report(&inputs, dir.path()).unwrap();
    let pcs = std::fs::read_to_string(dir.path().join("embeddings_2d.csv")).unwrap();
    assert!(pcs.starts_with("patient_index,label,pc1,pc2\n"));
    assert_eq!(pcs.lines().count(), 4);
    let roc = std::fs::read_to_string(dir.path().join("roc_chgrl.csv")).unwrap();
    assert_eq!(roc.lines().next(), Some("fpr,tpr"));
}
