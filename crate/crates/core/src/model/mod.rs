//! The differentiable causal heterogeneous graph model.
//!
//! One forward pass runs, in order:
//!
//! 1. relation-wise convolution `h_i = ReLU(Σ_r Σ_{j∈N_r(i)} W_r x_j)`;
//! 2. per directed edge `(i → j)`, causal strength
//!    `cs = σ(W2 ReLU(W1 [h_i ‖ h_j] + b1) + b2)`;
//! 3. causal attention `α = σ(W4 ReLU(W3 [h_i ‖ h_j ‖ cs] + b3) + b4)`;
//! 4. messages `α · h_i` summed into `h_cs` at each destination;
//! 5. fusion `h_f = h + h_cs`;
//! 6. an intervened branch `h_in = M3 ReLU(M2 ReLU(M1 h) + b5) + b6`,
//!    fused the same way and passed through the shared classifier;
//! 7. a two-class linear + softmax head on patient rows.
//!
//! The loss is `L_m + L_cf + λ L_cr`: cross-entropy on the factual branch,
//! KL from the intervened prediction to uniform, and mean causal strength
//! over all edges. [`ModelKind::Rgcn`] drops steps 2–4 and 6, which makes it
//! a plain relational GCN baseline.

mod backward;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeType, Relation};

pub use forward::{
    causal_attention, causal_strength, classify, fuse, hetero_conv, intervene,
    propagate_and_aggregate, sigmoid, EdgeScores, ForwardPass, LossBreakdown,
};
pub use params::{ChgrlParams, NamedTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Full model with the causal branch.
    Chgrl,
    /// Convolution + classifier only.
    Rgcn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Chgrl => "chgrl",
            ModelKind::Rgcn => "rgcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chgrl" => Ok(ModelKind::Chgrl),
            "rgcn" => Ok(ModelKind::Rgcn),
            other => Err(Error::Invalid(format!("unknown model `{other}` (chgrl|rgcn)"))),
        }
    }
}

/// Architecture: everything parameter shapes depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub hidden: usize,
    pub layers: usize,
    /// Input width per node type, indexed by [`NodeType::slot`].
    pub in_dims: [usize; 2],
    pub relations: Vec<Relation>,
    /// Divide each relation's neighbor sum by the in-degree.
    pub mean_aggregation: bool,
}

impl ModelSpec {
    pub fn for_input(input: &ModelInput, hidden: usize, layers: usize, mean_aggregation: bool) -> Self {
        ModelSpec {
            hidden,
            layers: layers.max(1),
            in_dims: [input.features[0].ncols(), input.features[1].ncols()],
            relations: input.relations.clone(),
            mean_aggregation,
        }
    }
}

/// Graph tensors consumed by the model: per-type input features and
/// per-relation edge lists.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[patients × feature_dim, diseases × disease_dim]`.
    pub features: [Array2<f64>; 2],
    pub relations: Vec<Relation>,
    /// Per relation, `(src, dst)` pairs.
    pub edges: Vec<Vec<(usize, usize)>>,
    in_degree: Vec<Vec<usize>>,
    /// Incoming edges over all relations, per node type.
    total_in_degree: [Vec<usize>; 2],
}

impl ModelInput {
    pub fn new(
        relations: Vec<Relation>,
        edges: Vec<Vec<(usize, usize)>>,
        features: [Array2<f64>; 2],
    ) -> Result<Self> {
        if relations.len() != edges.len() {
            return Err(Error::Shape(format!(
                "{} relations but {} edge lists",
                relations.len(),
                edges.len()
            )));
        }
        let mut in_degree = Vec::with_capacity(relations.len());
        let mut total_in_degree = [vec![0usize; features[0].nrows()], vec![0usize; features[1].nrows()]];
        for (rel, list) in relations.iter().zip(&edges) {
            let ns = features[rel.src_type.slot()].nrows();
            let nd = features[rel.dst_type.slot()].nrows();
            let mut deg = vec![0usize; nd];
            for &(s, d) in list {
                if s >= ns || d >= nd {
                    return Err(Error::Invalid(format!(
                        "edge ({s} -> {d}) of relation `{}` is out of range",
                        rel.name
                    )));
                }
                deg[d] += 1;
                total_in_degree[rel.dst_type.slot()][d] += 1;
            }
            in_degree.push(deg);
        }
        Ok(ModelInput {
            features,
            relations,
            edges,
            in_degree,
            total_in_degree,
        })
    }

    /// Patients use `patient_features`; each disease gets a one-hot
    /// identity row, so disease-side weights act as learned embeddings.
    pub fn from_graph(g: &HeteroGraph, patient_features: Array2<f64>) -> Result<Self> {
        if patient_features.nrows() != g.patients() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} patients",
                patient_features.nrows(),
                g.patients()
            )));
        }
        let diseases = Array2::eye(g.diseases());
        let edges = (0..g.relations().len()).map(|r| g.edges(r).to_vec()).collect();
        Self::new(g.relations().to_vec(), edges, [patient_features, diseases])
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        self.features[t.slot()].nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub(crate) fn in_degree(&self, rel: usize, dst: usize) -> usize {
        self.in_degree[rel][dst]
    }

    pub(crate) fn total_in_degree(&self, t: NodeType, node: usize) -> usize {
        self.total_in_degree[t.slot()][node]
    }
}

/// A model architecture plus the loss weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub kind: ModelKind,
    pub lambda: f64,
}

impl Model {
    pub fn new(spec: ModelSpec, kind: ModelKind, lambda: f64) -> Self {
        Model { spec, kind, lambda }
    }

    pub fn init_params(&self, seed: u64) -> ChgrlParams {
        ChgrlParams::init(&self.spec, seed)
    }

    pub fn forward(&self, input: &ModelInput, params: &ChgrlParams) -> Result<ForwardPass> {
        forward::forward(&self.spec, input, params, self.kind, false)
    }

    /// Full-model forward with the aggregated causal states forced to zero.
    pub fn forward_zeroed_causal(&self, input: &ModelInput, params: &ChgrlParams) -> Result<ForwardPass> {
        forward::forward(&self.spec, input, params, self.kind, true)
    }

    pub fn loss(&self, fwd: &ForwardPass, labeled: &[(usize, u8)]) -> Result<LossBreakdown> {
        forward::total_loss(fwd, labeled, self.lambda)
    }

    /// Exact gradient of the total loss with respect to every parameter.
    pub fn gradients(
        &self,
        input: &ModelInput,
        params: &ChgrlParams,
        fwd: &ForwardPass,
        labeled: &[(usize, u8)],
    ) -> Result<ChgrlParams> {
        backward::backward(&self.spec, input, params, fwd, labeled, self.lambda)
    }

    pub fn loss_and_grad(
        &self,
        input: &ModelInput,
        params: &ChgrlParams,
        labeled: &[(usize, u8)],
    ) -> Result<(LossBreakdown, ChgrlParams, ForwardPass)> {
        let fwd = self.forward(input, params)?;
        let loss = self.loss(&fwd, labeled)?;
        let grads = self.gradients(input, params, &fwd, labeled)?;
        Ok((loss, grads, fwd))
    }

    /// Class-1 probability for every patient.
    pub fn predict(&self, input: &ModelInput, params: &ChgrlParams) -> Result<Vec<f64>> {
        Ok(self.forward(input, params)?.positive_probs())
    }
}
