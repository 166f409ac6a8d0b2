//! Mask a known low-rank nonnegative matrix, impute it with the latent
//! factorization and report how well the hidden cells come back.
//!
//! cargo run --example impute_features -- [KNOWN_FRACTION]

use chgrl::csinlf::{delta, fit, impute, FitConfig, KnownEntries};
use chgrl::graph::FeatureMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> chgrl::Result<()> {
    let known_frac: f64 = std::env::args().nth(1).map_or(0.3, |s| s.parse().expect("a fraction"));
    let (rows, cols, rank) = (60, 25, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Array2::from_shape_simple_fn((rows, rank), || rng.gen_range(0.3..1.2));
    let b = Array2::from_shape_simple_fn((cols, rank), || rng.gen_range(0.3..1.2));
    let truth = Array2::from_shape_fn((rows, cols), |(u, v)| {
        (0..rank).map(|k| delta(a[[u, k]]) * delta(b[[v, k]])).sum::<f64>()
    });
    let observed = Array2::from_shape_simple_fn((rows, cols), || rng.gen_bool(known_frac));
    let features = FeatureMatrix::new(truth.clone(), observed.clone())?;

    let known = KnownEntries::from_features(&features)?;
    let cfg = FitConfig { dim: 4, epochs: 4000, ..FitConfig::default() };
    let model = fit(&known, &cfg, Vec::new())?;
    let filled = impute(&model, &features)?;

    let (mut err, mut mag, mut n) = (0.0, 0.0, 0);
    for ((u, v), &seen) in observed.indexed_iter() {
        if !seen {
            err += (filled.values()[[u, v]] - truth[[u, v]]).abs();
            mag += truth[[u, v]];
            n += 1;
        }
    }
    println!("{} known cells, {n} imputed", known.len());
    println!("objective {:.4} -> {:.4}", model.trace[0], model.trace[model.trace.len() - 1]);
    println!("held-out MAE {:.4} (mean magnitude {:.4})", err / n as f64, mag / n as f64);
    println!("all imputed values nonnegative: {}", filled.values().iter().all(|v| *v >= 0.0));
    Ok(())
}
