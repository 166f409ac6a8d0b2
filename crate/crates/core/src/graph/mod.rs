//! Typed heterogeneous graph: patient and disease node sets joined by
//! relation-keyed edge lists, plus a patient feature matrix with an explicit
//! missing-mask and optional binary labels.
//!
//! Nodes are indexed densely per type (`0..patients`, `0..diseases`).
//! Relations whose endpoints share a type are stored in both directions, so a
//! neighbor sum over incoming edges never needs to special-case orientation.
//! The diagnosis relation is stored disease → patient.

mod io;

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_graph, load_graph_dir, save_graph, GraphFiles};
pub(crate) use io::{read_features, write_features, write_with as io_write};

pub const PATIENT_PATIENT: &str = "patient_patient";
pub const DIAGNOSIS: &str = "diagnosis";
pub const DISEASE_DISEASE: &str = "disease_disease";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Patient,
    Disease,
}

impl NodeType {
    pub const ALL: [NodeType; 2] = [NodeType::Patient, NodeType::Disease];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Patient => "patient",
            NodeType::Disease => "disease",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "patient" => Some(NodeType::Patient),
            "disease" => Some(NodeType::Disease),
            _ => None,
        }
    }

    /// Position of this type in per-type arrays.
    pub fn slot(self) -> usize {
        match self {
            NodeType::Patient => 0,
            NodeType::Disease => 1,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub index: usize,
}

impl NodeRef {
    pub fn patient(index: usize) -> Self {
        NodeRef {
            node_type: NodeType::Patient,
            index,
        }
    }

    pub fn disease(index: usize) -> Self {
        NodeRef {
            node_type: NodeType::Disease,
            index,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node_type, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub src_type: NodeType,
    pub dst_type: NodeType,
}

impl Relation {
    pub fn new(name: impl Into<String>, src_type: NodeType, dst_type: NodeType) -> Self {
        Relation {
            name: name.into(),
            src_type,
            dst_type,
        }
    }

    /// Same-type relations are stored as both directed edges.
    pub fn is_symmetric(&self) -> bool {
        self.src_type == self.dst_type
    }
}

/// patient–patient, diagnosis (disease → patient), disease–disease.
pub fn default_relations() -> Vec<Relation> {
    vec![
        Relation::new(PATIENT_PATIENT, NodeType::Patient, NodeType::Patient),
        Relation::new(DIAGNOSIS, NodeType::Disease, NodeType::Patient),
        Relation::new(DISEASE_DISEASE, NodeType::Disease, NodeType::Disease),
    ]
}

/// Dense value matrix plus observation mask. Missing cells hold `0.0` in
/// `values` so that equality is structural.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    observed: Array2<bool>,
}

impl FeatureMatrix {
    pub fn new(mut values: Array2<f64>, observed: Array2<bool>) -> Result<Self> {
        if values.dim() != observed.dim() {
            return Err(Error::Shape(format!(
                "feature values {:?} vs mask {:?}",
                values.dim(),
                observed.dim()
            )));
        }
        for ((r, c), v) in values.indexed_iter_mut() {
            if !observed[[r, c]] {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Invalid(format!("feature ({r},{c}) is not finite")));
            }
        }
        Ok(FeatureMatrix { values, observed })
    }

    pub fn dense(values: Array2<f64>) -> Result<Self> {
        let observed = Array2::from_elem(values.dim(), true);
        Self::new(values, observed)
    }

    pub fn missing(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            values: Array2::zeros((rows, cols)),
            observed: Array2::from_elem((rows, cols), false),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.observed[[row, col]].then(|| self.values[[row, col]])
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        let n = self.observed.len();
        if n == 0 {
            0.0
        } else {
            self.missing_count() as f64 / n as f64
        }
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|o| *o)
    }

    /// Observed cells as `(row, col, value)` in row-major order.
    pub fn known_entries(&self) -> Vec<(usize, usize, f64)> {
        self.values
            .indexed_iter()
            .filter(|((r, c), _)| self.observed[[*r, *c]])
            .map(|((r, c), v)| (r, c, *v))
            .collect()
    }
}

/// Immutable heterogeneous graph. See the module docs for conventions.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    patients: usize,
    diseases: usize,
    relations: Vec<Relation>,
    /// Per relation, sorted `(src_index, dst_index)` pairs.
    edges: Vec<Vec<(usize, usize)>>,
    /// Per relation, per destination node, sorted source indices.
    incoming: Vec<Vec<Vec<usize>>>,
    features: FeatureMatrix,
    labels: Vec<Option<u8>>,
}

impl HeteroGraph {
    /// Validates and builds a graph. For symmetric relations the reverse of
    /// every edge is added when absent.
    pub fn new(
        patients: usize,
        diseases: usize,
        relations: Vec<Relation>,
        edges: Vec<Vec<(usize, usize)>>,
        features: FeatureMatrix,
        labels: Vec<Option<u8>>,
    ) -> Result<Self> {
        if edges.len() != relations.len() {
            return Err(Error::Shape(format!(
                "{} edge lists for {} relations",
                edges.len(),
                relations.len()
            )));
        }
        let mut names = HashSet::new();
        for r in &relations {
            if !names.insert(r.name.as_str()) {
                return Err(Error::Invalid(format!("relation `{}` declared twice", r.name)));
            }
        }
        if features.rows() != patients {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} patients",
                features.rows(),
                patients
            )));
        }
        if labels.len() != patients {
            return Err(Error::Shape(format!(
                "{} labels for {} patients",
                labels.len(),
                patients
            )));
        }
        if let Some((i, l)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|v| *v > 1).map(|v| (i, v)))
        {
            return Err(Error::Invalid(format!("patient {i} has label {l}, expected 0 or 1")));
        }

        let count = |t: NodeType| match t {
            NodeType::Patient => patients,
            NodeType::Disease => diseases,
        };

        let mut stored = Vec::with_capacity(relations.len());
        for (rel, list) in relations.iter().zip(edges) {
            let (ns, nd) = (count(rel.src_type), count(rel.dst_type));
            let mut seen = HashSet::with_capacity(list.len() * 2);
            for &(s, d) in &list {
                if s >= ns || d >= nd {
                    return Err(Error::Invalid(format!(
                        "edge {}:{s} -> {}:{d} in `{}` is out of range",
                        rel.src_type, rel.dst_type, rel.name
                    )));
                }
                if !seen.insert((s, d)) {
                    return Err(Error::DuplicateEdge {
                        relation: rel.name.clone(),
                        edge: format!("{}:{s} -> {}:{d}", rel.src_type, rel.dst_type),
                    });
                }
            }
            let mut all = list;
            if rel.is_symmetric() {
                let reversed: Vec<_> = all
                    .iter()
                    .map(|&(s, d)| (d, s))
                    .filter(|e| !seen.contains(e))
                    .collect();
                for e in reversed {
                    if seen.insert(e) {
                        all.push(e);
                    }
                }
            }
            all.sort_unstable();
            stored.push(all);
        }

        let incoming = relations
            .iter()
            .zip(&stored)
            .map(|(rel, list)| {
                let mut inc = vec![Vec::new(); count(rel.dst_type)];
                for &(s, d) in list {
                    inc[d].push(s);
                }
                for v in &mut inc {
                    v.sort_unstable();
                }
                inc
            })
            .collect();

        Ok(HeteroGraph {
            patients,
            diseases,
            relations,
            edges: stored,
            incoming,
            features,
            labels,
        })
    }

    pub fn builder(patients: usize, diseases: usize) -> GraphBuilder {
        GraphBuilder::new(patients, diseases)
    }

    pub fn patients(&self) -> usize {
        self.patients
    }

    pub fn diseases(&self) -> usize {
        self.diseases
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        match t {
            NodeType::Patient => self.patients,
            NodeType::Disease => self.diseases,
        }
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_index(&self, name: &str) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    /// Stored directed edges of relation `rel` (by position), sorted.
    pub fn edges(&self, rel: usize) -> &[(usize, usize)] {
        &self.edges[rel]
    }

    pub fn edges_named(&self, name: &str) -> Result<&[(usize, usize)]> {
        Ok(self.edges(self.relation_index(name)?))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Sources `j` of every stored edge `(j -> i)` under relation `rel`.
    pub fn incoming(&self, rel: usize, dst: usize) -> &[usize] {
        &self.incoming[rel][dst]
    }

    /// Message sources of `node` under the named relation, ascending.
    pub fn neighbors(&self, relation: &str, node: NodeRef) -> Result<Vec<NodeRef>> {
        let r = self.relation_index(relation)?;
        let rel = &self.relations[r];
        if node.node_type != rel.dst_type {
            return Err(Error::TypeMismatch {
                relation: rel.name.clone(),
                edge: format!("? -> {node}"),
            });
        }
        if node.index >= self.node_count(node.node_type) {
            return Err(Error::Invalid(format!("node {node} does not exist")));
        }
        Ok(self.incoming[r][node.index]
            .iter()
            .map(|&j| NodeRef {
                node_type: rel.src_type,
                index: j,
            })
            .collect())
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    /// `(patient_index, label)` for every labeled patient, ascending.
    pub fn labeled_patients(&self) -> Vec<(usize, u8)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l)))
            .collect()
    }

    /// Same graph with the feature matrix replaced (e.g. after imputation).
    pub fn with_features(mut self, features: FeatureMatrix) -> Result<Self> {
        if features.rows() != self.patients {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} patients",
                features.rows(),
                self.patients
            )));
        }
        self.features = features;
        Ok(self)
    }
}

/// Incremental construction with the default three-relation schema.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    patients: usize,
    diseases: usize,
    relations: Vec<Relation>,
    edges: Vec<Vec<(usize, usize)>>,
    features: Option<FeatureMatrix>,
    labels: Vec<Option<u8>>,
}

impl GraphBuilder {
    pub fn new(patients: usize, diseases: usize) -> Self {
        let relations = default_relations();
        GraphBuilder {
            patients,
            diseases,
            edges: vec![Vec::new(); relations.len()],
            relations,
            features: None,
            labels: vec![None; patients],
        }
    }

    pub fn edge(mut self, relation: &str, src: usize, dst: usize) -> Result<Self> {
        let r = self
            .relations
            .iter()
            .position(|r| r.name == relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))?;
        self.edges[r].push((src, dst));
        Ok(self)
    }

    pub fn features(mut self, features: FeatureMatrix) -> Self {
        self.features = Some(features);
        self
    }

    pub fn label(mut self, patient: usize, label: u8) -> Self {
        if patient < self.labels.len() {
            self.labels[patient] = Some(label);
        }
        self
    }

    pub fn labels(mut self, labels: Vec<Option<u8>>) -> Self {
        self.labels = labels;
        self
    }

    pub fn build(self) -> Result<HeteroGraph> {
        let features = self
            .features
            .unwrap_or_else(|| FeatureMatrix::missing(self.patients, 0));
        HeteroGraph::new(
            self.patients,
            self.diseases,
            self.relations,
            self.edges,
            features,
            self.labels,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_closure_stores_both_directions() {
        let g = HeteroGraph::builder(2, 1)
            .edge(PATIENT_PATIENT, 0, 1)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(g.edges_named(PATIENT_PATIENT).unwrap(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn diagnosis_edges_stay_directed() {
        let g = HeteroGraph::builder(2, 2)
            .edge(DIAGNOSIS, 1, 0)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(g.edges_named(DIAGNOSIS).unwrap(), &[(1, 0)]);
        assert_eq!(
            g.neighbors(DIAGNOSIS, NodeRef::patient(0)).unwrap(),
            vec![NodeRef::disease(1)]
        );
        assert!(g.neighbors(DIAGNOSIS, NodeRef::disease(1)).is_err());
    }

    #[test]
    fn duplicate_edges_rejected() {
        let err = HeteroGraph::builder(3, 0)
            .edge(PATIENT_PATIENT, 0, 1)
            .unwrap()
            .edge(PATIENT_PATIENT, 0, 1)
            .unwrap()
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge { .. }));
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let err = HeteroGraph::builder(10, 0)
            .edge(PATIENT_PATIENT, 0, 99)
            .unwrap()
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn empty_relation_has_no_neighbors() {
        let g = HeteroGraph::builder(3, 2).build().unwrap();
        assert!(g.neighbors(DISEASE_DISEASE, NodeRef::disease(1)).unwrap().is_empty());
    }

    #[test]
    fn unknown_relation_is_an_error() {
        let g = HeteroGraph::builder(3, 2).build().unwrap();
        assert!(matches!(
            g.neighbors("treats", NodeRef::patient(0)),
            Err(Error::UnknownRelation(_))
        ));
    }

    #[test]
    fn missing_cells_are_zeroed() {
        let values = ndarray::array![[1.0, 7.0], [3.0, 4.0]];
        let mask = ndarray::array![[true, false], [true, true]];
        let f = FeatureMatrix::new(values, mask).unwrap();
        assert_eq!(f.get(0, 1), None);
        assert_eq!(f.values()[[0, 1]], 0.0);
        assert_eq!(f.known_entries().len(), 3);
    }

    proptest! {
        #[test]
        fn neighbors_match_brute_force_scan(
            n in 1usize..60,
            raw in prop::collection::vec((0usize..60, 0usize..60), 0..150),
        ) {
            let mut pairs: Vec<(usize, usize)> = raw
                .into_iter()
                .map(|(a, b)| (a % n, b % n))
                .collect();
            pairs.sort_unstable();
            pairs.dedup();
            let mut b = HeteroGraph::builder(n, 0);
            for &(s, d) in &pairs {
                b = b.edge(PATIENT_PATIENT, s, d).unwrap();
            }
            let g = b.build().unwrap();
            let stored = g.edges_named(PATIENT_PATIENT).unwrap();
            // involution under reversal
            for &(s, d) in stored {
                prop_assert!(stored.binary_search(&(d, s)).is_ok());
            }
            for i in 0..n {
                let got: Vec<usize> = g
                    .neighbors(PATIENT_PATIENT, NodeRef::patient(i))
                    .unwrap()
                    .into_iter()
                    .map(|r| r.index)
                    .collect();
                let mut expect: Vec<usize> = pairs
                    .iter()
                    .flat_map(|&(s, d)| [(s, d), (d, s)])
                    .filter(|&(_, d)| d == i)
                    .map(|(s, _)| s)
                    .collect();
                expect.sort_unstable();
                expect.dedup();
                prop_assert_eq!(got, expect);
            }
        }
    }
}
