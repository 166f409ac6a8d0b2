//! Causal-regularized, inherently nonnegative latent factorization.
//!
//! Each row `u` and column `v` of a partially observed matrix gets an
//! unconstrained latent vector. The reconstruction of cell `(u, v)` is
//! `Σ_k δ(y_uk) δ(y_vk)` with `δ(x) = x²`, so every reconstruction is
//! nonnegative whatever the parameter values. The objective over the
//! observed set Γ is
//!
//! ```text
//! ½ Σ_Γ (s_uv − Σ_k δ(y_uk)δ(y_vk))²
//!   + μ Σ_Γ Σ_k (δ(y_uk)² + δ(y_vk)²)
//!   + γ Σ_{(u,v) ∈ priors} Σ_k (δ(y_uk) − δ(y_vk))²
//! ```
//!
//! The last term pulls the latent profiles of a-priori linked row/column
//! pairs together. Fitting is plain full-batch gradient descent.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;

/// The inherent-nonnegativity mapping.
#[inline]
pub fn delta(x: f64) -> f64 {
    x * x
}

#[inline]
fn delta_prime(x: f64) -> f64 {
    2.0 * x
}

/// Observed cells Γ of a `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct KnownEntries {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl KnownEntries {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("known-entry set is empty".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for &(u, v, s) in &entries {
            if u >= rows || v >= cols {
                return Err(Error::Invalid(format!(
                    "known entry ({u},{v}) outside a {rows}x{cols} matrix"
                )));
            }
            if !s.is_finite() {
                return Err(Error::Invalid(format!("known entry ({u},{v}) is not finite")));
            }
            if !seen.insert((u, v)) {
                return Err(Error::Invalid(format!("duplicate known entry ({u},{v})")));
            }
        }
        Ok(KnownEntries { rows, cols, entries })
    }

    pub fn from_features(f: &FeatureMatrix) -> Result<Self> {
        Self::new(f.rows(), f.cols(), f.known_entries())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The three terms of the objective, unweighted except where noted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParts {
    /// ½ Σ_Γ residual².
    pub fit: f64,
    /// Σ_Γ Σ_k (δ² + δ²), before multiplying by μ.
    pub magnitude: f64,
    /// Prior-pair alignment penalty, before multiplying by γ.
    pub causal: f64,
    pub mu: f64,
    pub gamma: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.fit + self.mu * self.magnitude + self.gamma * self.causal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    /// Row-side latent factors (`U`), `rows × d`.
    pub row_factors: Array2<f64>,
    /// Column-side latent factors (`V`), `cols × d`.
    pub col_factors: Array2<f64>,
    pub mu: f64,
    pub gamma: f64,
    /// Row/column pairs whose latent profiles should agree.
    pub prior_pairs: Vec<(usize, usize)>,
    /// Objective before the first update, then after each epoch.
    pub trace: Vec<f64>,
}

impl FactorModel {
    pub fn new(
        row_factors: Array2<f64>,
        col_factors: Array2<f64>,
        mu: f64,
        gamma: f64,
        prior_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let d = row_factors.ncols();
        if d == 0 || col_factors.ncols() != d {
            return Err(Error::Shape(format!(
                "latent dimensions {} and {} must agree and be at least 1",
                d,
                col_factors.ncols()
            )));
        }
        if !(mu >= 0.0 && gamma >= 0.0) {
            return Err(Error::Invalid(format!("mu={mu} and gamma={gamma} must be >= 0")));
        }
        for &(u, v) in &prior_pairs {
            if u >= row_factors.nrows() || v >= col_factors.nrows() {
                return Err(Error::Invalid(format!("prior pair ({u},{v}) out of range")));
            }
        }
        Ok(FactorModel {
            row_factors,
            col_factors,
            mu,
            gamma,
            prior_pairs,
            trace: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.row_factors.ncols()
    }

    pub fn rows(&self) -> usize {
        self.row_factors.nrows()
    }

    pub fn cols(&self) -> usize {
        self.col_factors.nrows()
    }

    /// `Σ_k δ(y_uk) δ(y_vk)`; nonnegative for any factors.
    pub fn reconstruct(&self, u: usize, v: usize) -> f64 {
        dot_delta(self.row_factors.row(u), self.col_factors.row(v))
    }

    fn check(&self, known: &KnownEntries) -> Result<()> {
        if known.rows() != self.rows() || known.cols() != self.cols() {
            return Err(Error::Shape(format!(
                "model is {}x{} but known entries index a {}x{} matrix",
                self.rows(),
                self.cols(),
                known.rows(),
                known.cols()
            )));
        }
        Ok(())
    }

    pub fn objective_parts(&self, known: &KnownEntries) -> Result<ObjectiveParts> {
        self.check(known)?;
        let mut fit = 0.0;
        let mut magnitude = 0.0;
        for &(u, v, s) in known.entries() {
            let yu = self.row_factors.row(u);
            let yv = self.col_factors.row(v);
            let r = s - dot_delta(yu, yv);
            fit += 0.5 * r * r;
            for (a, b) in yu.iter().zip(yv.iter()) {
                magnitude += delta(*a).powi(2) + delta(*b).powi(2);
            }
        }
        let mut causal = 0.0;
        for &(u, v) in &self.prior_pairs {
            let yu = self.row_factors.row(u);
            let yv = self.col_factors.row(v);
            for (a, b) in yu.iter().zip(yv.iter()) {
                let gap = delta(*a) - delta(*b);
                causal += gap * gap;
            }
        }
        Ok(ObjectiveParts {
            fit,
            magnitude,
            causal,
            mu: self.mu,
            gamma: self.gamma,
        })
    }

    pub fn objective(&self, known: &KnownEntries) -> Result<f64> {
        Ok(self.objective_parts(known)?.total())
    }

    /// Analytic gradient of [`objective`](Self::objective) with respect to
    /// the row and column factors.
    pub fn gradient(&self, known: &KnownEntries) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check(known)?;
        let d = self.dim();
        let mut gu = Array2::zeros(self.row_factors.dim());
        let mut gv = Array2::zeros(self.col_factors.dim());
        for &(u, v, s) in known.entries() {
            let yu = self.row_factors.row(u);
            let yv = self.col_factors.row(v);
            let r = s - dot_delta(yu, yv);
            for k in 0..d {
                let (a, b) = (yu[k], yv[k]);
                // fit term: −r · δ(b) · δ'(a);  magnitude term: μ · 2δ(a) · δ'(a)
                gu[[u, k]] += -r * delta(b) * delta_prime(a) + self.mu * 2.0 * delta(a) * delta_prime(a);
                gv[[v, k]] += -r * delta(a) * delta_prime(b) + self.mu * 2.0 * delta(b) * delta_prime(b);
            }
        }
        if self.gamma != 0.0 {
            for &(u, v) in &self.prior_pairs {
                for k in 0..d {
                    let (a, b) = (self.row_factors[[u, k]], self.col_factors[[v, k]]);
                    let gap = delta(a) - delta(b);
                    gu[[u, k]] += self.gamma * 2.0 * gap * delta_prime(a);
                    gv[[v, k]] -= self.gamma * 2.0 * gap * delta_prime(b);
                }
            }
        }
        Ok((gu, gv))
    }
}

fn dot_delta(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| delta(*x) * delta(*y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub dim: usize,
    pub mu: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            dim: 8,
            mu: 0.01,
            gamma: 0.1,
            epochs: 2000,
            lr: 0.01,
            seed: 7,
        }
    }
}

/// Fits latent factors to `known` by gradient descent from a uniform
/// `[0.01, 0.1]` initialization.
pub fn fit(
    known: &KnownEntries,
    config: &FitConfig,
    prior_pairs: Vec<(usize, usize)>,
) -> Result<FactorModel> {
    if config.epochs == 0 {
        return Err(Error::Precondition("epochs must be at least 1".into()));
    }
    if !(config.lr > 0.0) {
        return Err(Error::Precondition(format!("lr must be > 0, got {}", config.lr)));
    }
    if config.dim == 0 {
        return Err(Error::Precondition("latent dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = |n: usize| {
        Array2::from_shape_simple_fn((n, config.dim), || rng.gen_range(0.01..0.1))
    };
    let rows = init(known.rows());
    let cols = init(known.cols());
    let mut model = FactorModel::new(rows, cols, config.mu, config.gamma, prior_pairs)?;

    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut obj = model.objective(known)?;
    trace.push(obj);
    for epoch in 0..config.epochs {
        let (gu, gv) = model.gradient(known)?;
        model.row_factors.scaled_add(-config.lr, &gu);
        model.col_factors.scaled_add(-config.lr, &gv);
        obj = model.objective(known)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite(format!(
                "factorization objective became {obj} at epoch {}; try a smaller lr than {}",
                epoch + 1,
                config.lr
            )));
        }
        trace.push(obj);
    }
    model.trace = trace;
    Ok(model)
}

/// Fills every missing cell of `features` with the model's reconstruction;
/// observed cells are copied unchanged.
pub fn impute(model: &FactorModel, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.rows() != model.rows() || features.cols() != model.cols() {
        return Err(Error::Shape(format!(
            "model is {}x{} but features are {}x{}",
            model.rows(),
            model.cols(),
            features.rows(),
            features.cols()
        )));
    }
    let mut out = features.values().clone();
    for ((u, v), x) in out.indexed_iter_mut() {
        if !features.observed()[[u, v]] {
            *x = model.reconstruct(u, v);
        }
    }
    FeatureMatrix::dense(out)
}

/// Reads a `row_index,col_index` prior-pair file.
pub fn load_prior_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["row_index", "col_index"] {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            column: String::new(),
            message: "expected header `row_index,col_index`".into(),
        });
    }
    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut idx = [0usize; 2];
        for (k, col) in ["row_index", "col_index"].iter().enumerate() {
            let s = rec.get(k).unwrap_or("");
            idx[k] = s.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line,
                column: col.to_string(),
                message: format!("`{s}` is not a nonnegative integer"),
            })?;
        }
        pairs.push((idx[0], idx[1]));
    }
    Ok(pairs)
}

/// Writes the per-epoch objective trace as `epoch,objective`.
pub fn write_trace(trace: &[f64], path: &Path) -> Result<()> {
    crate::graph::io_write(path, |w| {
        use std::io::Write;
        writeln!(w, "epoch,objective")?;
        for (e, v) in trace.iter().enumerate() {
            writeln!(w, "{e},{v}")?;
        }
        Ok(())
    })
}

/// Row sums of the reconstruction; handy for quick sanity checks.
pub fn reconstruction(model: &FactorModel) -> Array2<f64> {
    let ru = model.row_factors.mapv(delta);
    let rv = model.col_factors.mapv(delta);
    ru.dot(&rv.t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Straight-line evaluation of the objective, written independently of
    /// `objective_parts`.
    fn oracle_objective(
        yu: &Array2<f64>,
        yv: &Array2<f64>,
        known: &[(usize, usize, f64)],
        mu: f64,
        gamma: f64,
        priors: &[(usize, usize)],
    ) -> f64 {
        let d = yu.ncols();
        let mut total = 0.0;
        for &(u, v, s) in known {
            let mut pred = 0.0;
            for k in 0..d {
                pred += yu[[u, k]].powi(2) * yv[[v, k]].powi(2);
            }
            total += 0.5 * (s - pred).powi(2);
            for k in 0..d {
                total += mu * (yu[[u, k]].powi(4) + yv[[v, k]].powi(4));
            }
        }
        for &(u, v) in priors {
            for k in 0..d {
                total += gamma * (yu[[u, k]].powi(2) - yv[[v, k]].powi(2)).powi(2);
            }
        }
        total
    }

    fn random_instance(
        seed: u64,
        rows: usize,
        cols: usize,
        d: usize,
        n_known: usize,
        n_priors: usize,
    ) -> (Array2<f64>, Array2<f64>, Vec<(usize, usize, f64)>, Vec<(usize, usize)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let yu = Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-1.0..1.0));
        let yv = Array2::from_shape_simple_fn((cols, d), || rng.gen_range(-1.0..1.0));
        let mut cells: Vec<(usize, usize)> =
            (0..rows).flat_map(|u| (0..cols).map(move |v| (u, v))).collect();
        let mut known = Vec::new();
        for _ in 0..n_known.min(cells.len()) {
            let i = rng.gen_range(0..cells.len());
            let (u, v) = cells.swap_remove(i);
            known.push((u, v, rng.gen_range(0.0..2.0)));
        }
        let priors = (0..n_priors)
            .map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols)))
            .collect();
        (yu, yv, known, priors)
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(0.0), 0.0);
        assert_eq!(delta(-3.0), 9.0);
        assert_eq!(delta(1.5), 2.25);
    }

    #[test]
    fn single_entry_by_hand() {
        let known = KnownEntries::new(1, 1, vec![(0, 0, 2.0)]).unwrap();
        let m = FactorModel::new(array![[1.0]], array![[1.0]], 0.0, 0.0, vec![]).unwrap();
        assert_eq!(m.objective(&known).unwrap(), 0.5);
        let (gu, gv) = m.gradient(&known).unwrap();
        assert_eq!(gu[[0, 0]], -2.0);
        assert_eq!(gv[[0, 0]], -2.0);
    }

    #[test]
    fn perfect_fit_has_zero_objective() {
        let yu = array![[1.0, 0.5], [0.3, -2.0]];
        let yv = array![[0.7, 1.1], [-1.2, 0.4], [0.0, 1.0]];
        let m = FactorModel::new(yu, yv, 0.0, 0.0, vec![]).unwrap();
        let entries = vec![(0, 0, m.reconstruct(0, 0)), (1, 2, m.reconstruct(1, 2))];
        let known = KnownEntries::new(2, 3, entries).unwrap();
        assert_eq!(m.objective(&known).unwrap(), 0.0);
    }

    #[test]
    fn zero_factors_are_stationary() {
        let known = KnownEntries::new(2, 2, vec![(0, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let m = FactorModel::new(Array2::zeros((2, 3)), Array2::zeros((2, 3)), 0.0, 0.0, vec![])
            .unwrap();
        let (gu, gv) = m.gradient(&known).unwrap();
        assert!(gu.iter().chain(gv.iter()).all(|g| *g == 0.0));
    }

    #[test]
    fn objective_matches_oracle() {
        let (yu, yv, known, _) = random_instance(11, 4, 3, 2, 6, 0);
        let expect = oracle_objective(&yu, &yv, &known, 0.01, 0.0, &[]);
        let m = FactorModel::new(yu, yv, 0.01, 0.0, vec![]).unwrap();
        let got = m.objective(&KnownEntries::new(4, 3, known).unwrap()).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..25u64 {
            let rows = 2 + (seed as usize % 7);
            let cols = 2 + (seed as usize * 3 % 7);
            let d = 1 + (seed as usize % 4);
            let (yu, yv, known, priors) =
                random_instance(seed, rows, cols, d, rows * cols / 2 + 1, 3);
            let known = KnownEntries::new(rows, cols, known).unwrap();
            let m = FactorModel::new(yu, yv, 0.01, 0.1, priors).unwrap();
            let (gu, gv) = m.gradient(&known).unwrap();
            let h = 1e-5;
            for side in 0..2 {
                let dims = if side == 0 { m.row_factors.dim() } else { m.col_factors.dim() };
                for i in 0..dims.0 {
                    for k in 0..dims.1 {
                        let bump = |delta_: f64| {
                            let mut p = m.clone();
                            let t = if side == 0 { &mut p.row_factors } else { &mut p.col_factors };
                            t[[i, k]] += delta_;
                            oracle_objective(
                                &p.row_factors,
                                &p.col_factors,
                                known.entries(),
                                p.mu,
                                p.gamma,
                                &p.prior_pairs,
                            )
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        let an = if side == 0 { gu[[i, k]] } else { gv[[i, k]] };
                        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        assert!(err < 1e-5, "seed {seed} side {side} ({i},{k}): {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn reconstruction_is_nonnegative_for_arbitrary_factors() {
        let (yu, yv, _, _) = random_instance(3, 6, 5, 3, 0, 0);
        let m = FactorModel::new(yu, yv, 0.0, 0.0, vec![]).unwrap();
        assert!(reconstruction(&m).iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn zero_epochs_rejected() {
        let known = KnownEntries::new(1, 1, vec![(0, 0, 1.0)]).unwrap();
        let cfg = FitConfig {
            epochs: 0,
            ..FitConfig::default()
        };
        assert!(matches!(fit(&known, &cfg, vec![]), Err(Error::Precondition(_))));
    }

    #[test]
    fn divergence_reports_lr() {
        let known = KnownEntries::new(2, 2, vec![(0, 0, 1e3), (1, 1, 1e3)]).unwrap();
        let cfg = FitConfig {
            dim: 2,
            mu: 0.0,
            gamma: 0.0,
            epochs: 200,
            lr: 10.0,
            seed: 1,
        };
        let err = fit(&known, &cfg, vec![]).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("lr"));
    }

    #[test]
    fn fit_is_deterministic() {
        let (_, _, known, _) = random_instance(5, 5, 4, 2, 12, 0);
        let known = KnownEntries::new(5, 4, known).unwrap();
        let cfg = FitConfig {
            dim: 2,
            epochs: 50,
            lr: 0.01,
            ..FitConfig::default()
        };
        assert_eq!(fit(&known, &cfg, vec![]).unwrap(), fit(&known, &cfg, vec![]).unwrap());
    }

    #[test]
    fn impute_without_missing_cells_is_identity() {
        let f = FeatureMatrix::dense(array![[1.0, 2.0], [3.0, 4.5]]).unwrap();
        let m = FactorModel::new(Array2::ones((2, 1)), Array2::ones((2, 1)), 0.0, 0.0, vec![])
            .unwrap();
        assert_eq!(impute(&m, &f).unwrap(), f);
    }

    #[test]
    fn zero_factors_impute_zero() {
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 4.0]], array![[true, false], [false, true]])
            .unwrap();
        let m = FactorModel::new(Array2::zeros((2, 2)), Array2::zeros((2, 2)), 0.0, 0.0, vec![])
            .unwrap();
        let out = impute(&m, &f).unwrap();
        assert!(out.is_complete());
        assert_eq!(out.values(), &array![[1.0, 0.0], [0.0, 4.0]]);
    }

    #[test]
    fn bad_known_entries_rejected() {
        assert!(KnownEntries::new(2, 2, vec![]).is_err());
        assert!(KnownEntries::new(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(KnownEntries::new(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
    }
}
