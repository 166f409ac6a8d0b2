//! Compare the analytic gradient of the full training loss with central
//! finite differences on a small random heterogeneous graph.
//!
//! cargo run --example gradient_check -- [SEED]

use chgrl::graph::{default_relations, NodeType};
use chgrl::model::{Model, ModelInput, ModelKind, ModelSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> chgrl::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(1, |s| s.parse().expect("an integer seed"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (patients, diseases) = (5, 3);
    let relations = default_relations();
    let edges = relations
        .iter()
        .map(|rel| {
            let count = |t: NodeType| if t == NodeType::Patient { patients } else { diseases };
            let mut list = Vec::new();
            for s in 0..count(rel.src_type) {
                for d in 0..count(rel.dst_type) {
                    if (!rel.is_symmetric() || s != d) && rng.gen_bool(0.5) {
                        list.push((s, d));
                    }
                }
            }
            list
        })
        .collect();
    let features = [
        Array2::from_shape_simple_fn((patients, 3), || rng.gen_range(-1.0..1.0)),
        Array2::eye(diseases),
    ];
    let input = ModelInput::new(relations, edges, features)?;
    let model = Model::new(ModelSpec::for_input(&input, 4, 1, true), ModelKind::Chgrl, 0.005);
    let mut params = model.init_params(seed);
    // zero biases put isolated nodes exactly on a ReLU kink, where central
    // differences average the two one-sided slopes
    params.for_each_mut(|_, d, shape| {
        if shape.len() == 1 {
            d.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    });
    let labeled: Vec<(usize, u8)> = (0..patients).map(|i| (i, (i % 2) as u8)).collect();

    let (loss, grads, _) = model.loss_and_grad(&input, &params, &labeled)?;
    println!("L_t {:.6}  L_m {:.6}  L_cf {:.6}  L_cr {:.6}", loss.total, loss.main, loss.counterfactual, loss.causal_reg);

    let analytic = grads.flatten();
    let base = params.flatten();
    let loss_at = |flat: &[f64]| -> chgrl::Result<f64> {
        let mut p = params.clone();
        let mut off = 0;
        p.for_each_mut(|_, d, _| {
            d.copy_from_slice(&flat[off..off + d.len()]);
            off += d.len();
        });
        model.loss(&model.forward(&input, &p)?, &labeled).map(|l| l.total)
    };
    let h = 1e-5;
    let mut names = Vec::new();
    params.for_each(|name, d, _| names.extend((0..d.len()).map(|i| format!("{name}[{i}]"))));
    let (mut worst, mut at) = (0.0f64, String::new());
    let mut flat = base.clone();
    for k in 0..base.len() {
        flat[k] = base[k] + h;
        let up = loss_at(&flat)?;
        flat[k] = base[k] - h;
        let down = loss_at(&flat)?;
        flat[k] = base[k];
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-6);
        if err > worst {
            (worst, at) = (err, format!("{}: analytic {:e}, fd {fd:e}", names[k], analytic[k]));
        }
    }
    println!("{} parameters, max relative error {worst:.2e} at {at}", base.len());
    Ok(())
}
