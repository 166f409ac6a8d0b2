//! Binary classification metrics and their aggregation over repeated runs.
//!
//! AUC is the Mann–Whitney statistic (ties score ½). ACC and F1 turn
//! probabilities into hard predictions with `prob >= threshold ⇒ 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Labels and class-1 probabilities, one pair per patient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

impl PredictionSet {
    pub fn new(labels: Vec<u8>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} scores",
                labels.len(),
                scores.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l > 1) {
            return Err(Error::Invalid(format!("label {l} is not 0 or 1")));
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan()) {
            return Err(Error::Invalid(format!("score {s} is not a number")));
        }
        Ok(PredictionSet { labels, scores })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l == 1).count()
    }
}

/// Probability that a random positive outranks a random negative.
///
/// Computed from average ranks in `O(n log n)`; the result is the exact
/// ratio of (wins + ½ ties) to the number of positive/negative pairs.
pub fn auc(p: &PredictionSet) -> Result<f64> {
    let pos = p.positives();
    let neg = p.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.scores[a].total_cmp(&p.scores[b]));
    // twice the positive rank sum, kept integral so ties stay exact
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && p.scores[order[j]] == p.scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the average (i+1+j)/2
        let tied_pos = order[i..j].iter().filter(|&&k| p.labels[k] == 1).count() as u64;
        rank_sum2 += tied_pos * (i + 1 + j) as u64;
        i = j;
    }
    let (pos, neg) = (pos as u64, neg as u64);
    // U = R - pos(pos+1)/2, doubled
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

fn confusion(p: &PredictionSet, threshold: f64) -> [[usize; 2]; 2] {
    // [actual][predicted]
    let mut m = [[0usize; 2]; 2];
    for (&y, &s) in p.labels.iter().zip(&p.scores) {
        let pred = usize::from(s >= threshold);
        m[y as usize][pred] += 1;
    }
    m
}

pub fn accuracy(p: &PredictionSet, threshold: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Invalid("accuracy of an empty prediction set".into()));
    }
    let m = confusion(p, threshold);
    Ok((m[0][0] + m[1][1]) as f64 / p.len() as f64)
}

/// Support-weighted mean of the per-class F1 scores. A class whose F1 is
/// undefined (no predicted and no actual members) scores 0.
pub fn f1_weighted(p: &PredictionSet, threshold: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Invalid("F1 of an empty prediction set".into()));
    }
    let m = confusion(p, threshold);
    let mut total = 0.0;
    for c in 0..2 {
        let tp = m[c][c];
        let fp = m[1 - c][c];
        let fn_ = m[c][1 - c];
        let support = tp + fn_;
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        total += f1 * support as f64;
    }
    Ok(total / p.len() as f64)
}

/// ROC curve points `(fpr, tpr)` from `(0,0)` to `(1,1)`, one point per
/// distinct score threshold.
pub fn roc_points(p: &PredictionSet) -> Result<Vec<(f64, f64)>> {
    let pos = p.positives();
    let neg = p.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("ROC curve needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.scores[b].total_cmp(&p.scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = p.scores[order[i]];
        while i < order.len() && p.scores[order[i]] == s {
            if p.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// The three reported metrics for one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
}

impl Scores {
    pub fn compute(p: &PredictionSet, threshold: f64) -> Result<Self> {
        Ok(Scores {
            auc: auc(p)?,
            acc: accuracy(p, threshold)?,
            f1: f1_weighted(p, threshold)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (`n − 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Invalid("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MeanStd { mean, std })
}

/// One table row: a method's metrics over its completed runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub auc: MeanStd,
    pub acc: MeanStd,
    pub f1: MeanStd,
    pub completed: usize,
    pub failed: usize,
}

pub fn aggregate(method: &str, runs: &[Scores], failed: usize) -> Result<MethodRow> {
    if runs.is_empty() {
        return Err(Error::Invalid(format!("`{method}` has no completed runs ({failed} failed)")));
    }
    let col = |f: fn(&Scores) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    Ok(MethodRow {
        method: method.to_string(),
        auc: mean_std(&col(|s| s.auc))?,
        acc: mean_std(&col(|s| s.acc))?,
        f1: mean_std(&col(|s| s.f1))?,
        completed: runs.len(),
        failed,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MethodRow>,
}
