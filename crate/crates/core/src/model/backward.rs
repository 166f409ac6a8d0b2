//! Reverse-mode gradients of the total loss, written out by hand.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{check_labeled, log_softmax, relu, row, ForwardPass, Projections};
use super::{ChgrlParams, ModelInput, ModelSpec};
use crate::error::{Error, Result};
use crate::graph::NodeType;

const PROB_FLOOR: f64 = 1e-12;

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn row_mut(a: &mut Array2<f64>, i: usize) -> &mut [f64] {
    let n = a.ncols();
    &mut a.as_slice_mut().expect("standard layout")[i * n..(i + 1) * n]
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (x, y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

pub(super) fn backward(
    spec: &ModelSpec,
    input: &ModelInput,
    params: &ChgrlParams,
    fwd: &ForwardPass,
    labeled: &[(usize, u8)],
    lambda: f64,
) -> Result<ChgrlParams> {
    let n_patients = fwd.probs.nrows();
    check_labeled(labeled, n_patients)?;
    let hl = spec.hidden;
    let n = labeled.len() as f64;
    let mut g = ChgrlParams::zeros(spec);

    // head: cross-entropy on the factual branch, KL-to-uniform on the intervened one
    let mut d_logits = Array2::<f64>::zeros((n_patients, 2));
    let mut d_logits_in = Array2::<f64>::zeros((n_patients, 2));
    for &(i, y) in labeled {
        let y = y as usize;
        if fwd.probs[[i, y]] >= PROB_FLOOR {
            for c in 0..2 {
                let target = if c == y { 1.0 } else { 0.0 };
                d_logits[[i, c]] += (fwd.probs[[i, c]] - target) / n;
            }
        }
        if let Some(iv) = &fwd.intervention {
            let lq = log_softmax(iv.logits.row(i));
            let q = lq.mapv(f64::exp);
            let mean_lq: f64 = q.iter().zip(lq.iter()).map(|(a, b)| a * b).sum();
            for c in 0..2 {
                d_logits_in[[i, c]] += q[c] * (lq[c] - mean_lq) / n;
            }
        }
    }

    g.wc = d_logits.t().dot(&fwd.h_f[0]);
    g.bc = d_logits.sum_axis(Axis(0));
    let d_hf = d_logits.dot(&params.wc);

    let h = fwd.h();
    let mut d_h = [d_hf.clone(), Array2::<f64>::zeros((h[1].nrows(), hl))];

    if let (Some(iv), Some(scores)) = (&fwd.intervention, &fwd.scores) {
        g.wc += &d_logits_in.t().dot(&iv.h_f_in);
        g.bc += &d_logits_in.sum_axis(Axis(0));
        let d_hf_in = d_logits_in.dot(&params.wc);

        // intervention stack
        let r1 = iv.pre1.mapv(relu);
        let r2 = iv.pre2.mapv(relu);
        g.m3 = d_hf_in.t().dot(&r2);
        g.b6 = d_hf_in.sum_axis(Axis(0));
        let d_pre2 = d_hf_in.dot(&params.m3) * iv.pre2.mapv(step);
        g.m2 = d_pre2.t().dot(&r1);
        g.b5 = d_pre2.sum_axis(Axis(0));
        let d_pre1 = d_pre2.dot(&params.m2) * iv.pre1.mapv(step);
        g.m1 = d_pre1.t().dot(&h[0]);
        d_h[0] += &d_pre1.dot(&params.m1);

        // h_cs feeds both fusions on patient rows; diseases are never classified
        let d_hcs = if fwd.zeroed_causal {
            [Array2::zeros((n_patients, hl)), Array2::zeros((h[1].nrows(), hl))]
        } else {
            [&d_hf + &d_hf_in, Array2::zeros((h[1].nrows(), hl))]
        };

        let w2 = params.w2.as_slice().expect("standard layout");
        let w4 = params.w4.as_slice().expect("standard layout");
        let w3c = params.w3.column(2 * hl).to_vec();
        let zeros = || NodeType::ALL.map(|t| Array2::<f64>::zeros((input.node_count(t), hl)));
        let (mut d_p1, mut d_q1, mut d_p3, mut d_q3) = (zeros(), zeros(), zeros(), zeros());
        let mut g_w2 = Array1::<f64>::zeros(hl);
        let mut g_w4 = Array1::<f64>::zeros(hl);
        let mut g_w3c = Array1::<f64>::zeros(hl);
        let (mut g_b1, mut g_b3) = (vec![0.0; hl], vec![0.0; hl]);
        let (mut g_b2, mut g_b4) = (0.0, 0.0);
        let reg = if scores.is_empty() {
            0.0
        } else {
            lambda / scores.len() as f64
        };
        let mut dv = vec![0.0; hl];
        let mut du = vec![0.0; hl];
        let proj = Projections::new(h, params);
        let (mut u, mut v) = (vec![0.0; hl], vec![0.0; hl]);

        for (r, rel) in input.relations.iter().enumerate() {
            let (ts, td) = (rel.src_type.slot(), rel.dst_type.slot());
            for &(s, d) in &input.edges[r] {
                let scale = if spec.mean_aggregation {
                    1.0 / input.total_in_degree(rel.dst_type, d) as f64
                } else {
                    1.0
                };
                let (cs, alpha) = proj.edge(params, &w3c, (ts, s), (td, d), &mut u, &mut v);
                let grad_in = row(&d_hcs[td], d);
                let h_src = row(&h[ts], s);

                // message alpha * h_src
                let d_alpha = scale * grad_in.iter().zip(h_src).map(|(a, b)| a * b).sum::<f64>();
                if !fwd.zeroed_causal {
                    for (x, g) in row_mut(&mut d_h[ts], s).iter_mut().zip(grad_in) {
                        *x += scale * alpha * g;
                    }
                }

                // attention MLP
                let d_a = d_alpha * alpha * (1.0 - alpha);
                g_b4 += d_a;
                let mut d_cs = reg;
                for m in 0..hl {
                    g_w4[m] += d_a * relu(v[m]);
                    dv[m] = d_a * w4[m] * step(v[m]);
                    g_w3c[m] += dv[m] * cs;
                    d_cs += dv[m] * w3c[m];
                }

                // causal-strength MLP
                let d_k = d_cs * cs * (1.0 - cs);
                g_b2 += d_k;
                for m in 0..hl {
                    g_w2[m] += d_k * relu(u[m]);
                    du[m] = d_k * w2[m] * step(u[m]);
                }

                add_into(row_mut(&mut d_p3[ts], s), &dv);
                add_into(row_mut(&mut d_q3[td], d), &dv);
                add_into(row_mut(&mut d_p1[ts], s), &du);
                add_into(row_mut(&mut d_q1[td], d), &du);
                add_into(&mut g_b3, &dv);
                add_into(&mut g_b1, &du);
            }
        }
        g.b1 = Array1::from(g_b1);
        g.b3 = Array1::from(g_b3);
        g.w2.row_mut(0).assign(&g_w2);
        g.w4.row_mut(0).assign(&g_w4);
        g.b2[0] = g_b2;
        g.b4[0] = g_b4;
        g.w3.column_mut(2 * hl).assign(&g_w3c);

        let w1a = params.w1.slice(s![.., ..hl]);
        let w1b = params.w1.slice(s![.., hl..]);
        let w3a = params.w3.slice(s![.., ..hl]);
        let w3b = params.w3.slice(s![.., hl..2 * hl]);
        for t in 0..2 {
            let mut a = g.w1.slice_mut(s![.., ..hl]);
            a += &d_p1[t].t().dot(&h[t]);
            let mut b = g.w1.slice_mut(s![.., hl..]);
            b += &d_q1[t].t().dot(&h[t]);
            let mut a = g.w3.slice_mut(s![.., ..hl]);
            a += &d_p3[t].t().dot(&h[t]);
            let mut b = g.w3.slice_mut(s![.., hl..2 * hl]);
            b += &d_q3[t].t().dot(&h[t]);
            d_h[t] += &d_p1[t].dot(&w1a);
            d_h[t] += &d_q1[t].dot(&w1b);
            d_h[t] += &d_p3[t].dot(&w3a);
            d_h[t] += &d_q3[t].dot(&w3b);
        }
    }

    // convolution layers, last to first
    let mut d_out = d_h;
    for l in (0..spec.layers).rev() {
        let d_z = [
            &d_out[0] * &fwd.conv_pre[l][0].mapv(step),
            &d_out[1] * &fwd.conv_pre[l][1].mapv(step),
        ];
        let prev: [&Array2<f64>; 2] = if l == 0 {
            [&input.features[0], &input.features[1]]
        } else {
            [&fwd.conv_out[l - 1][0], &fwd.conv_out[l - 1][1]]
        };
        let mut d_prev = NodeType::ALL.map(|t| Array2::<f64>::zeros(prev[t.slot()].dim()));
        for (r, rel) in input.relations.iter().enumerate() {
            let (ts, td) = (rel.src_type.slot(), rel.dst_type.slot());
            let mut back = Array2::<f64>::zeros((prev[ts].nrows(), hl));
            for &(s, d) in &input.edges[r] {
                let scale = if spec.mean_aggregation {
                    1.0 / input.in_degree(r, d) as f64
                } else {
                    1.0
                };
                back.row_mut(s).scaled_add(scale, &d_z[td].row(d));
            }
            g.conv[l][r] = back.t().dot(prev[ts]);
            if l > 0 {
                d_prev[ts] += &back.dot(&params.conv[l][r]);
            }
        }
        d_out = d_prev;
    }

    if let Some(name) = g.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    Ok(g)
}
