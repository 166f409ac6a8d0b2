#![allow(dead_code)]

pub mod oracles;

use chgrl::graph::{default_relations, NodeType};
use chgrl::model::{ChgrlParams, Model, ModelInput, ModelKind, ModelSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random small heterogeneous instance: dense random features, random
/// edges for all three default relations (symmetric ones closed).
pub fn random_input(seed: u64, patients: usize, diseases: usize, feat: usize, disease_feat: usize) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rels = default_relations();
    let mut edges = Vec::new();
    for rel in &rels {
        let ns = if rel.src_type == NodeType::Patient { patients } else { diseases };
        let nd = if rel.dst_type == NodeType::Patient { patients } else { diseases };
        let mut list = Vec::new();
        for s in 0..ns {
            for d in 0..nd {
                if rel.is_symmetric() && s >= d {
                    continue;
                }
                if rng.gen_bool(0.45) {
                    list.push((s, d));
                    if rel.is_symmetric() {
                        list.push((d, s));
                    }
                }
            }
        }
        list.sort_unstable();
        edges.push(list);
    }
    let pf = Array2::from_shape_simple_fn((patients, feat), || rng.gen_range(-1.0..1.5));
    let df = Array2::from_shape_simple_fn((diseases, disease_feat), || rng.gen_range(-1.0..1.5));
    ModelInput::new(rels, edges, [pf, df]).unwrap()
}

pub fn random_labels(seed: u64, patients: usize) -> Vec<(usize, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    (0..patients).map(|i| (i, rng.gen_range(0..2u8))).collect()
}

/// Parameters with every tensor (biases too) drawn from U(-scale, scale).
pub fn random_params(spec: &ModelSpec, seed: u64, scale: f64) -> ChgrlParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(5));
    let mut p = ChgrlParams::zeros(spec);
    p.for_each_mut(|_, d, _| {
        for x in d.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    });
    p
}

pub fn small_model(input: &ModelInput, hidden: usize, kind: ModelKind, lambda: f64) -> Model {
    Model::new(ModelSpec::for_input(input, hidden, 1, false), kind, lambda)
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences of the total loss, over every parameter entry.
/// Entries where both magnitudes are below `floor` are compared absolutely
/// against `floor`.
pub fn max_fd_error(
    model: &Model,
    input: &ModelInput,
    params: &ChgrlParams,
    labeled: &[(usize, u8)],
    step: f64,
    floor: f64,
) -> (f64, String) {
    let (_, grads, _) = model.loss_and_grad(input, params, labeled).unwrap();
    let analytic = grads.flatten();
    let base = params.flatten();
    let mut names = Vec::new();
    params.for_each(|name, d, _| names.extend(std::iter::repeat_n(name.to_string(), d.len())));
    let loss_at = |flat: &[f64]| {
        let mut p = params.clone();
        let mut off = 0;
        p.for_each_mut(|_, d, _| {
            let n = d.len();
            d.copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        let fwd = model.forward(input, &p).unwrap();
        model.loss(&fwd, labeled).unwrap().total
    };
    let mut worst = (0.0f64, String::new());
    let mut flat = base.clone();
    for k in 0..base.len() {
        flat[k] = base[k] + step;
        let up = loss_at(&flat);
        flat[k] = base[k] - step;
        let down = loss_at(&flat);
        flat[k] = base[k];
        let fd = (up - down) / (2.0 * step);
        let a = analytic[k];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        if err > worst.0 {
            worst = (err, format!("{}[{}]: analytic {a:e} vs fd {fd:e}", names[k], k));
        }
    }
    worst
}
