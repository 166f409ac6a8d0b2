//! Independent reference implementations shared by the test targets.

use chgrl::csinlf::{self, FactorModel, KnownEntries};
use chgrl::metrics::PredictionSet;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Twice the Mann–Whitney U by explicit pair enumeration, and the pair count.
pub fn auc_pairs(p: &PredictionSet) -> (u64, u64) {
    let (mut doubled, mut pairs) = (0u64, 0u64);
    for i in 0..p.len() {
        for j in 0..p.len() {
            if p.labels[i] == 1 && p.labels[j] == 0 {
                pairs += 1;
                doubled += match p.scores[i].partial_cmp(&p.scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (doubled, pairs)
}

pub fn brute_accuracy(p: &PredictionSet, t: f64) -> f64 {
    let hits = (0..p.len()).filter(|&i| (p.scores[i] >= t) == (p.labels[i] == 1)).count();
    hits as f64 / p.len() as f64
}

pub fn brute_f1_weighted(p: &PredictionSet, t: f64) -> f64 {
    let pred: Vec<u8> = p.scores.iter().map(|&s| u8::from(s >= t)).collect();
    let mut weighted = 0.0;
    for class in [0u8, 1] {
        let tp = (0..p.len()).filter(|&i| pred[i] == class && p.labels[i] == class).count() as f64;
        let predicted = pred.iter().filter(|&&y| y == class).count() as f64;
        let actual = p.labels.iter().filter(|&&y| y == class).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        weighted += f1 * actual;
    }
    weighted / p.len() as f64
}

/// Random instance with both classes present and deliberate score ties.
pub fn random_set(rng: &mut ChaCha8Rng) -> PredictionSet {
    let n = rng.gen_range(2..=50);
    let levels = rng.gen_range(2..=20) as f64;
    let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n).map(|_| (rng.gen_range(0.0..1.0f64) * levels).floor() / levels).collect();
    PredictionSet::new(labels, scores).unwrap()
}

/// Objective evaluated directly from its definition over plain slices.
pub fn objective_oracle(u: &Array2<f64>, v: &Array2<f64>, entries: &[(usize, usize, f64)], mu: f64, gamma: f64, pairs: &[(usize, usize)]) -> f64 {
    let sq = |x: f64| x * x;
    let mut total = 0.0;
    for &(r, c, s) in entries {
        let mut pred = 0.0;
        for k in 0..u.ncols() {
            pred += sq(u[[r, k]]) * sq(v[[c, k]]);
        }
        total += 0.5 * sq(s - pred);
        for k in 0..u.ncols() {
            total += mu * (sq(sq(u[[r, k]])) + sq(sq(v[[c, k]])));
        }
    }
    for &(r, c) in pairs {
        for k in 0..u.ncols() {
            total += gamma * sq(sq(u[[r, k]]) - sq(v[[c, k]]));
        }
    }
    total
}

pub struct Instance {
    pub model: FactorModel,
    pub known: KnownEntries,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(2..=8);
    let cols = rng.gen_range(2..=8);
    let d = rng.gen_range(1..=4);
    let mut entries = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.gen_bool(0.6) {
                entries.push((r, c, rng.gen_range(0.0..3.0)));
            }
        }
    }
    if entries.is_empty() {
        entries.push((0, 0, 1.0));
    }
    let pairs: Vec<(usize, usize)> = (0..3).map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols))).collect();
    let u = Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-1.2..1.2));
    let v = Array2::from_shape_simple_fn((cols, d), || rng.gen_range(-1.2..1.2));
    let model = FactorModel::new(u, v, 0.01, 0.1, pairs).unwrap();
    let known = KnownEntries::new(rows, cols, entries).unwrap();
    Instance { model, known }
}

/// Rank-1 matrix `δ(a_u) δ(b_v)`, with the requested fraction of cells known.
pub fn rank_one_split(seed: u64, rows: usize, cols: usize, known_frac: f64) -> (KnownEntries, Vec<(usize, usize, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.6..1.4)).collect();
    let b: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.6..1.4)).collect();
    let (mut known, mut held) = (Vec::new(), Vec::new());
    for r in 0..rows {
        for c in 0..cols {
            let x = csinlf::delta(a[r]) * csinlf::delta(b[c]);
            if rng.gen_bool(known_frac) {
                known.push((r, c, x));
            } else {
                held.push((r, c, x));
            }
        }
    }
    (KnownEntries::new(rows, cols, known).unwrap(), held)
}

