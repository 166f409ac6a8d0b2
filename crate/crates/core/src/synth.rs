//! Synthetic comorbidity networks with planted causal structure.
//!
//! Defaults match a 516-patient cohort (201 cases, 315 controls) with 9256
//! patient pairs, 386 diseases, 5299 disease pairs and 68 lab features.
//!
//! The label mechanism lives in diagnosis edges. Every case is diagnosed
//! with at least two *causal* diseases, controls only by chance. A hidden
//! confounder, more common among cases, raises the rate of *spurious*
//! diagnoses. All other diseases are noise. Lab features carry a weaker
//! class signal on a few columns.
//!
//! Each ingredient draws from its own RNG stream, so changing one knob
//! (say the control causal-edge probability) leaves every other draw intact.

use std::path::Path;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, HeteroGraph, DIAGNOSIS, DISEASE_DISEASE, PATIENT_PATIENT};
use crate::metrics::{auc, PredictionSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub patients: usize,
    pub case_count: usize,
    pub control_count: usize,
    /// Undirected patient–patient pairs.
    pub pp_edges: usize,
    pub diseases: usize,
    /// Undirected disease–disease pairs.
    pub dd_edges: usize,
    pub feature_dim: usize,
    pub missing_rate: f64,
    pub causal_disease_count: usize,
    pub spurious_disease_count: usize,
    /// Expected noise-disease diagnoses per patient.
    pub noise_edge_rate: f64,
    /// Fraction of patient–patient pairs joining two patients of the same class.
    pub homophily: f64,
    /// Causal diagnoses drawn per case, inclusive range.
    pub case_causal_min: usize,
    pub case_causal_max: usize,
    /// Chance that a control is diagnosed with any given causal disease.
    pub control_causal_prob: f64,
    /// Confounder prevalence among cases and controls.
    pub confounder_case_rate: f64,
    pub confounder_control_rate: f64,
    /// Spurious-disease diagnosis probability with and without the confounder.
    pub spurious_prob_exposed: f64,
    pub spurious_prob_unexposed: f64,
    pub feature_rank: usize,
    /// Columns whose mean is shifted for cases.
    pub shifted_features: usize,
    pub feature_shift: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            patients: 516,
            case_count: 201,
            control_count: 315,
            pp_edges: 9256,
            diseases: 386,
            dd_edges: 5299,
            feature_dim: 68,
            missing_rate: 0.2,
            causal_disease_count: 10,
            spurious_disease_count: 10,
            noise_edge_rate: 6.0,
            homophily: 0.6,
            case_causal_min: 2,
            case_causal_max: 4,
            control_causal_prob: 0.02,
            confounder_case_rate: 0.6,
            confounder_control_rate: 0.3,
            spurious_prob_exposed: 0.2,
            spurious_prob_unexposed: 0.05,
            feature_rank: 4,
            shifted_features: 8,
            feature_shift: 0.15,
            feature_noise: 0.05,
            seed: 7,
        }
    }
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl GenConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }

    fn same_class_pairs(&self) -> usize {
        pairs(self.case_count) + pairs(self.control_count)
    }

    fn within_edges(&self) -> usize {
        (self.homophily * self.pp_edges as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.case_count + self.control_count != self.patients {
            return bad(format!(
                "case_count {} + control_count {} != patients {}",
                self.case_count, self.control_count, self.patients
            ));
        }
        if self.pp_edges > pairs(self.patients) {
            return bad(format!("pp_edges {} exceeds {} possible pairs", self.pp_edges, pairs(self.patients)));
        }
        if self.dd_edges > pairs(self.diseases) {
            return bad(format!("dd_edges {} exceeds {} possible pairs", self.dd_edges, pairs(self.diseases)));
        }
        if self.causal_disease_count + self.spurious_disease_count > self.diseases {
            return bad("causal_disease_count + spurious_disease_count exceeds diseases".into());
        }
        for (name, p) in [
            ("missing_rate", self.missing_rate),
            ("homophily", self.homophily),
            ("control_causal_prob", self.control_causal_prob),
            ("confounder_case_rate", self.confounder_case_rate),
            ("confounder_control_rate", self.confounder_control_rate),
            ("spurious_prob_exposed", self.spurious_prob_exposed),
            ("spurious_prob_unexposed", self.spurious_prob_unexposed),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if self.case_causal_min > self.case_causal_max {
            return bad("case_causal_min exceeds case_causal_max".into());
        }
        if self.noise_edge_rate < 0.0 || self.feature_shift < 0.0 || self.feature_noise < 0.0 {
            return bad("noise_edge_rate, feature_shift and feature_noise must be nonnegative".into());
        }
        if self.shifted_features > self.feature_dim {
            return bad("shifted_features exceeds feature_dim".into());
        }
        if self.feature_dim > 0 && self.feature_rank == 0 {
            return bad("feature_rank must be positive".into());
        }
        let within = self.within_edges();
        let cross = self.pp_edges - within;
        if within > self.same_class_pairs() || cross > self.case_count * self.control_count {
            return bad(format!(
                "homophily {} needs {within} same-class and {cross} cross-class pairs; only {} and {} exist",
                self.homophily,
                self.same_class_pairs(),
                self.case_count * self.control_count
            ));
        }
        Ok(())
    }
}

/// Role a disease plays in the label mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiseaseRole {
    Causal,
    Spurious,
    Noise,
}

/// Per-role means of an edge quantity; `NaN` for a role with no edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleMeans {
    pub causal: f64,
    pub spurious: f64,
    pub noise: f64,
    /// Edge counts in causal, spurious, noise order.
    pub counts: [usize; 3],
}

/// What the generator planted; enough to score causal-strength recovery
/// from files alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub causal_diseases: Vec<usize>,
    pub spurious_diseases: Vec<usize>,
    pub homophily: f64,
    pub seed: u64,
    pub shifted_features: Vec<usize>,
    /// Hidden confounder per patient.
    pub confounder: Vec<bool>,
    pub diagnosis_edges: usize,
    pub causal_diagnosis_edges: usize,
    pub spurious_diagnosis_edges: usize,
    pub noise_diagnosis_edges: usize,
    pub config: GenConfig,
}

impl GroundTruth {
    pub fn role(&self, disease: usize) -> DiseaseRole {
        if self.causal_diseases.contains(&disease) {
            DiseaseRole::Causal
        } else if self.spurious_diseases.contains(&disease) {
            DiseaseRole::Spurious
        } else {
            DiseaseRole::Noise
        }
    }

    /// Number of causal-disease diagnoses per patient.
    pub fn causal_counts(&self, g: &HeteroGraph) -> Result<Vec<usize>> {
        let mut counts = vec![0; g.patients()];
        for &(d, p) in g.edges_named(DIAGNOSIS)? {
            if self.causal_diseases.contains(&d) {
                counts[p] += 1;
            }
        }
        Ok(counts)
    }

    /// Mean of a per-diagnosis-edge quantity (aligned with the graph's
    /// diagnosis edge list) grouped by the role of the edge's disease.
    pub fn mean_by_role(&self, g: &HeteroGraph, per_edge: &[f64]) -> Result<RoleMeans> {
        let edges = g.edges_named(DIAGNOSIS)?;
        if edges.len() != per_edge.len() {
            return Err(Error::Shape(format!(
                "{} values for {} diagnosis edges",
                per_edge.len(),
                edges.len()
            )));
        }
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for (&(d, _), &v) in edges.iter().zip(per_edge) {
            let k = self.role(d) as usize;
            sums[k] += v;
            counts[k] += 1;
        }
        let mean = |k: usize| if counts[k] == 0 { f64::NAN } else { sums[k] / counts[k] as f64 };
        Ok(RoleMeans {
            causal: mean(0),
            spurious: mean(1),
            noise: mean(2),
            counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `k`-th pair `(i, j)`, `i < j`, in row-major order over `n` items.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

pub fn generate(cfg: &GenConfig) -> Result<(HeteroGraph, GroundTruth)> {
    cfg.validate()?;
    let (np, nd) = (cfg.patients, cfg.diseases);

    // labels and disease roles
    let mut rng = stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..np).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0u8; np];
    for &p in &order[..cfg.case_count] {
        labels[p] = 1;
    }
    let mut diseases: Vec<usize> = (0..nd).collect();
    diseases.shuffle(&mut rng);
    let mut causal = diseases[..cfg.causal_disease_count].to_vec();
    let mut spurious =
        diseases[cfg.causal_disease_count..cfg.causal_disease_count + cfg.spurious_disease_count].to_vec();
    let noise: Vec<usize> = {
        let mut v = diseases[cfg.causal_disease_count + cfg.spurious_disease_count..].to_vec();
        v.sort_unstable();
        v
    };
    causal.sort_unstable();
    spurious.sort_unstable();

    let mut diag: Vec<(usize, usize)> = Vec::new();
    let (mut n_causal, mut n_spurious, mut n_noise) = (0, 0, 0);

    // causal diagnoses: cases draw a fixed number, controls one coin per pair
    let mut rng = stream(cfg.seed, 2);
    for p in 0..np {
        let k = rng.gen_range(cfg.case_causal_min..=cfg.case_causal_max).min(causal.len());
        let picks = index::sample(&mut rng, causal.len(), k);
        let coins: Vec<f64> = (0..causal.len()).map(|_| rng.gen()).collect();
        if labels[p] == 1 {
            for i in picks.iter() {
                diag.push((causal[i], p));
            }
            n_causal += k;
        } else {
            for (i, c) in coins.iter().enumerate() {
                if *c < cfg.control_causal_prob {
                    diag.push((causal[i], p));
                    n_causal += 1;
                }
            }
        }
    }

    // confounded diagnoses
    let mut rng = stream(cfg.seed, 3);
    let mut confounder = vec![false; np];
    for p in 0..np {
        let rate = if labels[p] == 1 {
            cfg.confounder_case_rate
        } else {
            cfg.confounder_control_rate
        };
        confounder[p] = rng.gen::<f64>() < rate;
        let prob = if confounder[p] {
            cfg.spurious_prob_exposed
        } else {
            cfg.spurious_prob_unexposed
        };
        for &d in &spurious {
            if rng.gen::<f64>() < prob {
                diag.push((d, p));
                n_spurious += 1;
            }
        }
    }

    // background diagnoses
    let mut rng = stream(cfg.seed, 4);
    let noise_prob = if noise.is_empty() {
        0.0
    } else {
        (cfg.noise_edge_rate / noise.len() as f64).min(1.0)
    };
    for p in 0..np {
        for &d in &noise {
            if rng.gen::<f64>() < noise_prob {
                diag.push((d, p));
                n_noise += 1;
            }
        }
    }

    // patient–patient pairs, split by class agreement, exact counts
    let mut rng = stream(cfg.seed, 5);
    let cases: Vec<usize> = (0..np).filter(|&p| labels[p] == 1).collect();
    let controls: Vec<usize> = (0..np).filter(|&p| labels[p] == 0).collect();
    let within = cfg.within_edges();
    let cross = cfg.pp_edges - within;
    let mut pp: Vec<(usize, usize)> = Vec::with_capacity(cfg.pp_edges);
    let (pc, pn) = (pairs(cases.len()), pairs(controls.len()));
    for k in index::sample(&mut rng, pc + pn, within).iter() {
        let (group, k) = if k < pc { (&cases, k) } else { (&controls, k - pc) };
        let (a, b) = unrank_pair(k, group.len());
        pp.push((group[a], group[b]));
    }
    for k in index::sample(&mut rng, cases.len() * controls.len(), cross).iter() {
        pp.push((cases[k / controls.len()], controls[k % controls.len()]));
    }

    // disease–disease pairs
    let mut rng = stream(cfg.seed, 6);
    let dd: Vec<(usize, usize)> = index::sample(&mut rng, pairs(nd), cfg.dd_edges)
        .iter()
        .map(|k| unrank_pair(k, nd))
        .collect();

    // lab features: rank-r nonnegative signal, class shift, noise, masking
    let mut rng = stream(cfg.seed, 7);
    let kdim = cfg.feature_dim;
    let rank = cfg.feature_rank.max(1);
    let a = Array2::from_shape_simple_fn((np, rank), || rng.gen::<f64>());
    let b = Array2::from_shape_simple_fn((rank, kdim), || rng.gen::<f64>());
    let mut values = a.dot(&b) / rank as f64;
    let mut cols: Vec<usize> = (0..kdim).collect();
    cols.shuffle(&mut rng);
    let mut shifted = cols[..cfg.shifted_features].to_vec();
    shifted.sort_unstable();
    let normal = Normal::new(0.0, cfg.feature_noise).map_err(|e| Error::Config(e.to_string()))?;
    for p in 0..np {
        for k in 0..kdim {
            let mut v = values[[p, k]] + normal.sample(&mut rng);
            if labels[p] == 1 && shifted.binary_search(&k).is_ok() {
                v += cfg.feature_shift;
            }
            values[[p, k]] = v.max(0.0);
        }
    }
    let mut observed = Array2::from_elem((np, kdim), true);
    let cells = np * kdim;
    let masked = (cfg.missing_rate * cells as f64).round() as usize;
    for c in index::sample(&mut rng, cells, masked.min(cells)).iter() {
        observed[[c / kdim.max(1), c % kdim.max(1)]] = false;
    }
    let features = FeatureMatrix::new(values, observed)?;

    let mut builder = HeteroGraph::builder(np, nd)
        .features(features)
        .labels(labels.iter().map(|&l| Some(l)).collect());
    for &(s, d) in &pp {
        builder = builder.edge(PATIENT_PATIENT, s, d)?;
    }
    for &(d, p) in &diag {
        builder = builder.edge(DIAGNOSIS, d, p)?;
    }
    for &(s, d) in &dd {
        builder = builder.edge(DISEASE_DISEASE, s, d)?;
    }
    let graph = builder.build()?;

    let truth = GroundTruth {
        causal_diseases: causal,
        spurious_diseases: spurious,
        homophily: cfg.homophily,
        seed: cfg.seed,
        shifted_features: shifted,
        confounder,
        diagnosis_edges: diag.len(),
        causal_diagnosis_edges: n_causal,
        spurious_diagnosis_edges: n_spurious,
        noise_diagnosis_edges: n_noise,
        config: cfg.clone(),
    };
    Ok((graph, truth))
}

/// Held-out AUC of a one-feature logistic regression on each patient's
/// causal-diagnosis count. Patients are split in half at random (seeded by
/// the ground truth); the model is fit on one half by Newton steps with a
/// small ridge and scored on the other.
pub fn label_recoverability_check(g: &HeteroGraph, gt: &GroundTruth) -> Result<f64> {
    let counts = gt.causal_counts(g)?;
    let mut labeled = g.labeled_patients();
    labeled.shuffle(&mut stream(gt.seed, 8));
    let half = labeled.len() / 2;
    let (fit_set, eval_set) = labeled.split_at(half);

    let (mut w, mut b) = (0.0f64, 0.0f64);
    let ridge = 1e-3;
    for _ in 0..50 {
        let (mut gw, mut gb) = (ridge * w, 0.0);
        let (mut hww, mut hwb, mut hbb) = (ridge, 0.0, 1e-9);
        for &(p, y) in fit_set {
            let x = counts[p] as f64;
            let s = crate::model::sigmoid(w * x + b);
            let r = s - y as f64;
            gw += r * x;
            gb += r;
            let v = s * (1.0 - s);
            hww += v * x * x;
            hwb += v * x;
            hbb += v;
        }
        let det = hww * hbb - hwb * hwb;
        if det.abs() < 1e-300 {
            break;
        }
        let dw = (hbb * gw - hwb * gb) / det;
        let db = (hww * gb - hwb * gw) / det;
        w -= dw;
        b -= db;
        if dw.abs().max(db.abs()) < 1e-12 {
            break;
        }
    }
    let preds = PredictionSet::new(
        eval_set.iter().map(|&(_, y)| y).collect(),
        eval_set
            .iter()
            .map(|&(p, _)| crate::model::sigmoid(w * counts[p] as f64 + b))
            .collect(),
    )?;
    auc(&preds)
}
