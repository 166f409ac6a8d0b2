use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{ChgrlParams, ModelInput, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::graph::NodeType;

const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(super) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Per-edge quantities of the causal branch, for every directed edge in
/// relation order (edges of relation `r` occupy `relation_range(r)`).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScores {
    offsets: Vec<usize>,
    pub cs: Array1<f64>,
    pub alpha: Array1<f64>,
}

impl EdgeScores {
    pub fn relation_range(&self, rel: usize) -> Range<usize> {
        self.offsets[rel]..self.offsets[rel + 1]
    }

    pub fn len(&self) -> usize {
        self.cs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cs.is_empty()
    }
}

/// Intermediate states of the intervention stack on patient rows.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionCache {
    pub pre1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub h_in: Array2<f64>,
    pub h_f_in: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Everything the backward pass needs, plus the node states themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub kind: ModelKind,
    pub zeroed_causal: bool,
    /// Per layer, per node type: pre-activation sums.
    pub conv_pre: Vec<[Array2<f64>; 2]>,
    /// Per layer, per node type: post-ReLU states. The last entry is `h`.
    pub conv_out: Vec<[Array2<f64>; 2]>,
    pub scores: Option<EdgeScores>,
    pub h_cs: [Array2<f64>; 2],
    pub h_f: [Array2<f64>; 2],
    pub intervention: Option<InterventionCache>,
    /// Patient logits and probabilities of the factual branch.
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardPass {
    pub fn h(&self) -> &[Array2<f64>; 2] {
        self.conv_out.last().expect("at least one layer")
    }

    pub fn positive_probs(&self) -> Vec<f64> {
        self.probs.column(1).to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub main: f64,
    pub counterfactual: f64,
    pub causal_reg: f64,
    pub lambda: f64,
}

fn conv_layers(
    spec: &ModelSpec,
    input: &ModelInput,
    params: &ChgrlParams,
) -> Result<(Vec<[Array2<f64>; 2]>, Vec<[Array2<f64>; 2]>)> {
    let hl = spec.hidden;
    if params.conv.len() != spec.layers {
        return Err(Error::Shape(format!(
            "{} convolution layers in params, {} in spec",
            params.conv.len(),
            spec.layers
        )));
    }
    let mut pre = Vec::with_capacity(spec.layers);
    let mut out: Vec<[Array2<f64>; 2]> = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        let prev: [&Array2<f64>; 2] = match out.last() {
            None => [&input.features[0], &input.features[1]],
            Some(h) => [&h[0], &h[1]],
        };
        let mut z = NodeType::ALL.map(|t| Array2::<f64>::zeros((input.node_count(t), hl)));
        for (r, rel) in input.relations.iter().enumerate() {
            let w = params.conv[l].get(r).ok_or_else(|| {
                Error::Shape(format!("no layer-{l} weight for relation `{}`", rel.name))
            })?;
            let x = prev[rel.src_type.slot()];
            if w.ncols() != x.ncols() || w.nrows() != hl {
                return Err(Error::Shape(format!(
                    "relation `{}` layer {l}: weight is {}x{}, inputs are {} wide, hidden {hl}",
                    rel.name,
                    w.nrows(),
                    w.ncols(),
                    x.ncols()
                )));
            }
            let xw = x.dot(&w.t());
            let zt = &mut z[rel.dst_type.slot()];
            for &(s, d) in &input.edges[r] {
                let scale = if spec.mean_aggregation {
                    1.0 / input.in_degree(r, d) as f64
                } else {
                    1.0
                };
                zt.row_mut(d).scaled_add(scale, &xw.row(s));
            }
        }
        let h = [z[0].mapv(relu), z[1].mapv(relu)];
        pre.push(z);
        out.push(h);
    }
    Ok((pre, out))
}

/// Relation-wise convolution; returns the final-layer states per node type.
pub fn hetero_conv(spec: &ModelSpec, input: &ModelInput, params: &ChgrlParams) -> Result<[Array2<f64>; 2]> {
    let (_, mut out) = conv_layers(spec, input, params)?;
    Ok(out.pop().expect("at least one layer"))
}

/// Causal strength of one edge from its endpoint states.
pub fn causal_strength(h_i: ArrayView1<'_, f64>, h_j: ArrayView1<'_, f64>, params: &ChgrlParams) -> f64 {
    let x = concatenate(Axis(0), &[h_i.view(), h_j.view()]).expect("1-d concat");
    let hidden = (params.w1.dot(&x) + &params.b1).mapv(relu);
    sigmoid(params.w2.row(0).dot(&hidden) + params.b2[0])
}

/// Attention weight of one edge from its endpoint states and causal strength.
pub fn causal_attention(h_i: ArrayView1<f64>, h_j: ArrayView1<f64>, cs: f64, params: &ChgrlParams) -> f64 {
    let cs = Array1::from_elem(1, cs);
    let x = concatenate(Axis(0), &[h_i.view(), h_j.view(), cs.view()]).expect("1-d concat");
    let hidden = (params.w3.dot(&x) + &params.b3).mapv(relu);
    sigmoid(params.w4.row(0).dot(&hidden) + params.b4[0])
}

/// Intervened state `M3 ReLU(M2 ReLU(M1 h) + b5) + b6`.
pub fn intervene(h: ArrayView1<f64>, params: &ChgrlParams) -> Array1<f64> {
    let r1 = params.m1.dot(&h).mapv(relu);
    let r2 = (params.m2.dot(&r1) + &params.b5).mapv(relu);
    params.m3.dot(&r2) + &params.b6
}

/// Sums `alpha[e] · h[src]` into each edge's destination (averages over all
/// incoming edges when `mean` is set). `alpha` follows the flattened
/// relation-major edge order of `input`.
pub fn propagate_and_aggregate(
    input: &ModelInput,
    h: &[Array2<f64>; 2],
    alpha: &[f64],
    mean: bool,
) -> Result<[Array2<f64>; 2]> {
    if alpha.len() != input.edge_count() {
        return Err(Error::Shape(format!(
            "{} attention weights for {} edges",
            alpha.len(),
            input.edge_count()
        )));
    }
    let hl = h[0].ncols();
    let mut out = NodeType::ALL.map(|t| Array2::<f64>::zeros((input.node_count(t), hl)));
    let mut e = 0;
    for (r, rel) in input.relations.iter().enumerate() {
        let (ts, td) = (rel.src_type.slot(), rel.dst_type.slot());
        for &(s, d) in &input.edges[r] {
            let scale = if mean { 1.0 / input.total_in_degree(rel.dst_type, d) as f64 } else { 1.0 };
            out[td].row_mut(d).scaled_add(scale * alpha[e], &h[ts].row(s));
            e += 1;
        }
    }
    Ok(out)
}

/// `h + h_cs`.
pub fn fuse(h: &Array2<f64>, h_cs: &Array2<f64>) -> Result<Array2<f64>> {
    if h.dim() != h_cs.dim() {
        return Err(Error::Shape(format!("fuse {:?} with {:?}", h.dim(), h_cs.dim())));
    }
    Ok(h + h_cs)
}

fn logits(h_f: &Array2<f64>, params: &ChgrlParams) -> Array2<f64> {
    h_f.dot(&params.wc.t()) + &params.bc
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        row.mapv_inplace(|x| (x - m).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

pub(super) fn log_softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.mapv(|x| x - lse)
}

/// Two-class probabilities `softmax(W_c h_f + b_c)` per row.
pub fn classify(h_f: &Array2<f64>, params: &ChgrlParams) -> Array2<f64> {
    softmax_rows(&logits(h_f, params))
}

/// Row `i` of a standard-layout matrix as a slice.
pub(super) fn row(a: &Array2<f64>, i: usize) -> &[f64] {
    let n = a.ncols();
    &a.as_slice().expect("standard layout")[i * n..(i + 1) * n]
}

/// `W1 [h_i ‖ h_j]` and `W3 [h_i ‖ h_j]` split per endpoint, one row per
/// node: `p` multiplies the source half, `q` the destination half.
pub(super) struct Projections {
    pub p1: [Array2<f64>; 2],
    pub q1: [Array2<f64>; 2],
    pub p3: [Array2<f64>; 2],
    pub q3: [Array2<f64>; 2],
}

impl Projections {
    pub fn new(h: &[Array2<f64>; 2], params: &ChgrlParams) -> Self {
        let hl = params.hidden();
        let each = |w: ArrayView2<f64>| [h[0].dot(&w.t()), h[1].dot(&w.t())];
        Projections {
            p1: each(params.w1.slice(s![.., ..hl])),
            q1: each(params.w1.slice(s![.., hl..])),
            p3: each(params.w3.slice(s![.., ..hl])),
            q3: each(params.w3.slice(s![.., hl..2 * hl])),
        }
    }

    /// Hidden pre-activations of both edge MLPs for edge `(s → d)`; returns
    /// `(cs, alpha)` and leaves the pre-activations in `u` and `v`.
    #[allow(clippy::too_many_arguments)]
    pub fn edge(
        &self,
        params: &ChgrlParams,
        w3c: &[f64],
        (ts, s): (usize, usize),
        (td, d): (usize, usize),
        u: &mut [f64],
        v: &mut [f64],
    ) -> (f64, f64) {
        let w2 = params.w2.as_slice().expect("standard layout");
        let w4 = params.w4.as_slice().expect("standard layout");
        let b1 = params.b1.as_slice().expect("standard layout");
        let b3 = params.b3.as_slice().expect("standard layout");
        let mut k = params.b2[0];
        for ((((u, p), q), b), w) in u.iter_mut().zip(row(&self.p1[ts], s)).zip(row(&self.q1[td], d)).zip(b1).zip(w2) {
            *u = p + q + b;
            k += w * relu(*u);
        }
        let c = sigmoid(k);
        let mut a = params.b4[0];
        for (((((v, p), q), wc), b), w) in v
            .iter_mut()
            .zip(row(&self.p3[ts], s))
            .zip(row(&self.q3[td], d))
            .zip(w3c)
            .zip(b3)
            .zip(w4)
        {
            *v = p + q + wc * c + b;
            a += w * relu(*v);
        }
        (c, sigmoid(a))
    }
}

fn edge_scores(input: &ModelInput, h: &[Array2<f64>; 2], params: &ChgrlParams) -> EdgeScores {
    let hl = params.hidden();
    let proj = Projections::new(h, params);
    let w3c = params.w3.column(2 * hl).to_vec();
    let n_edges = input.edge_count();
    let mut offsets = Vec::with_capacity(input.relations.len() + 1);
    let mut cs = Array1::zeros(n_edges);
    let mut alpha = Array1::zeros(n_edges);
    let (mut u, mut v) = (vec![0.0; hl], vec![0.0; hl]);
    let mut e = 0;
    for (r, rel) in input.relations.iter().enumerate() {
        offsets.push(e);
        let (ts, td) = (rel.src_type.slot(), rel.dst_type.slot());
        for &(s, d) in &input.edges[r] {
            (cs[e], alpha[e]) = proj.edge(params, &w3c, (ts, s), (td, d), &mut u, &mut v);
            e += 1;
        }
    }
    offsets.push(e);
    EdgeScores { offsets, cs, alpha }
}

pub(super) fn forward(
    spec: &ModelSpec,
    input: &ModelInput,
    params: &ChgrlParams,
    kind: ModelKind,
    zeroed_causal: bool,
) -> Result<ForwardPass> {
    if params.hidden() != spec.hidden {
        return Err(Error::Shape(format!(
            "params have hidden width {}, spec {}",
            params.hidden(),
            spec.hidden
        )));
    }
    let (conv_pre, conv_out) = conv_layers(spec, input, params)?;
    let h = conv_out.last().expect("at least one layer");
    let zeros = || NodeType::ALL.map(|t| Array2::<f64>::zeros((input.node_count(t), spec.hidden)));

    let (scores, h_cs, h_f, intervention) = match kind {
        ModelKind::Rgcn => (None, zeros(), h.clone(), None),
        ModelKind::Chgrl => {
            let scores = edge_scores(input, h, params);
            let h_cs = if zeroed_causal {
                zeros()
            } else {
                propagate_and_aggregate(
                    input,
                    h,
                    scores.alpha.as_slice().expect("contiguous"),
                    spec.mean_aggregation,
                )?
            };
            let h_f = [fuse(&h[0], &h_cs[0])?, fuse(&h[1], &h_cs[1])?];

            let pre1 = h[0].dot(&params.m1.t());
            let pre2 = pre1.mapv(relu).dot(&params.m2.t()) + &params.b5;
            let h_in = pre2.mapv(relu).dot(&params.m3.t()) + &params.b6;
            let h_f_in = fuse(&h_in, &h_cs[0])?;
            let z_in = logits(&h_f_in, params);
            let probs_in = softmax_rows(&z_in);
            let cache = InterventionCache {
                pre1,
                pre2,
                h_in,
                h_f_in,
                logits: z_in,
                probs: probs_in,
            };
            (Some(scores), h_cs, h_f, Some(cache))
        }
    };
    let z = logits(&h_f[0], params);
    let probs = softmax_rows(&z);
    Ok(ForwardPass {
        kind,
        zeroed_causal,
        conv_pre,
        conv_out,
        scores,
        h_cs,
        h_f,
        intervention,
        logits: z,
        probs,
    })
}

pub(super) fn check_labeled(labeled: &[(usize, u8)], patients: usize) -> Result<()> {
    if labeled.is_empty() {
        return Err(Error::Precondition("labeled set is empty".into()));
    }
    if let Some(&(i, y)) = labeled.iter().find(|(i, y)| *i >= patients || *y > 1) {
        return Err(Error::Invalid(format!("bad labeled entry (patient {i}, label {y})")));
    }
    Ok(())
}

pub(super) fn total_loss(fwd: &ForwardPass, labeled: &[(usize, u8)], lambda: f64) -> Result<LossBreakdown> {
    check_labeled(labeled, fwd.probs.nrows())?;
    let n = labeled.len() as f64;
    let main = labeled
        .iter()
        .map(|&(i, y)| -fwd.probs[[i, y as usize]].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / n;
    let counterfactual = match &fwd.intervention {
        None => 0.0,
        Some(c) => {
            labeled
                .iter()
                .map(|&(i, _)| {
                    let lq = log_softmax(c.logits.row(i));
                    let kl: f64 = lq
                        .iter()
                        .map(|l| l.exp() * (l + std::f64::consts::LN_2))
                        .sum();
                    kl.max(0.0)
                })
                .sum::<f64>()
                / n
        }
    };
    let causal_reg = match &fwd.scores {
        Some(s) if !s.is_empty() => s.cs.sum() / s.len() as f64,
        _ => 0.0,
    };
    Ok(LossBreakdown {
        total: main + counterfactual + lambda * causal_reg,
        main,
        counterfactual,
        causal_reg,
        lambda,
    })
}
