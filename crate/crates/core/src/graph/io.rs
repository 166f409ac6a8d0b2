//! CSV persistence for [`HeteroGraph`].
//!
//! ```text
//! nodes.csv     type,index
//! edges.csv     relation,src_type,src_index,dst_type,dst_index
//! features.csv  patient_index,f0,...,f{K-1}      (empty field = missing)
//! labels.csv    patient_index,label              (absent row = unlabeled)
//! ```

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{default_relations, FeatureMatrix, HeteroGraph, NodeType};
use crate::error::{Error, Result};

/// Paths of the four files that make up a graph on disk.
#[derive(Clone, Debug)]
pub struct GraphFiles {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl GraphFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        GraphFiles {
            nodes: dir.join("nodes.csv"),
            edges: dir.join("edges.csv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.csv"),
        }
    }
}

struct Csv<'a> {
    path: &'a Path,
    reader: csv::Reader<File>,
}

impl<'a> Csv<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        Ok(Csv { path, reader })
    }

    fn headers(&mut self) -> Result<Vec<String>> {
        let path = self.path;
        let h = self.reader.headers().map_err(|e| csv_error(path, e))?;
        Ok(h.iter().map(str::to_string).collect())
    }

    fn expect_headers(&mut self, expected: &[&str]) -> Result<()> {
        let got = self.headers()?;
        if got != expected {
            return Err(Error::Parse {
                file: self.path.to_path_buf(),
                line: 1,
                column: got.join(","),
                message: format!("expected header `{}`", expected.join(",")),
            });
        }
        Ok(())
    }

    fn records(&mut self) -> Result<Vec<(u64, csv::StringRecord)>> {
        let path = self.path;
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            out.push((line, rec));
        }
        Ok(out)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        file: path.to_path_buf(),
        line,
        column: String::new(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn field(rec: &csv::StringRecord, i: usize) -> &str {
    rec.get(i).unwrap_or("")
}

fn parse_index(path: &Path, line: u64, column: &str, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| parse_err(path, line, column, format!("`{s}` is not a nonnegative integer")))
}

fn parse_type(path: &Path, line: u64, column: &str, s: &str) -> Result<NodeType> {
    NodeType::parse(s).ok_or_else(|| {
        parse_err(path, line, column, format!("`{s}` is not a node type (patient|disease)"))
    })
}

/// Reads and validates a graph from its four CSV files.
pub fn load_graph(files: &GraphFiles) -> Result<HeteroGraph> {
    let (patients, diseases) = load_nodes(&files.nodes)?;
    let relations = default_relations();
    let edges = load_edges(&files.edges, &relations, patients, diseases)?;
    let features = load_features(&files.features, patients)?;
    let labels = load_labels(&files.labels, patients)?;
    HeteroGraph::new(patients, diseases, relations, edges, features, labels)
}

pub fn load_graph_dir(dir: impl AsRef<Path>) -> Result<HeteroGraph> {
    load_graph(&GraphFiles::in_dir(dir))
}

fn load_nodes(path: &Path) -> Result<(usize, usize)> {
    let mut csv = Csv::open(path)?;
    csv.expect_headers(&["type", "index"])?;
    let mut seen: [Vec<(usize, u64)>; 2] = [Vec::new(), Vec::new()];
    for (line, rec) in csv.records()? {
        let t = parse_type(path, line, "type", field(&rec, 0))?;
        let i = parse_index(path, line, "index", field(&rec, 1))?;
        seen[t.slot()].push((i, line));
    }
    let mut counts = [0usize; 2];
    for t in NodeType::ALL {
        let list = &mut seen[t.slot()];
        list.sort_unstable();
        for (expect, &(i, line)) in list.iter().enumerate() {
            if i != expect {
                let msg = if i < expect {
                    format!("duplicate {t} index {i}")
                } else {
                    format!("{t} indices must be dense; index {expect} is missing")
                };
                return Err(parse_err(path, line, "index", msg));
            }
        }
        counts[t.slot()] = list.len();
    }
    Ok((counts[0], counts[1]))
}

fn load_edges(
    path: &Path,
    relations: &[super::Relation],
    patients: usize,
    diseases: usize,
) -> Result<Vec<Vec<(usize, usize)>>> {
    let mut csv = Csv::open(path)?;
    csv.expect_headers(&["relation", "src_type", "src_index", "dst_type", "dst_index"])?;
    let count = |t: NodeType| match t {
        NodeType::Patient => patients,
        NodeType::Disease => diseases,
    };
    let mut edges = vec![Vec::new(); relations.len()];
    let mut seen: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); relations.len()];
    for (line, rec) in csv.records()? {
        let name = field(&rec, 0);
        let r = relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| parse_err(path, line, "relation", format!("unknown relation `{name}`")))?;
        let st = parse_type(path, line, "src_type", field(&rec, 1))?;
        let si = parse_index(path, line, "src_index", field(&rec, 2))?;
        let dt = parse_type(path, line, "dst_type", field(&rec, 3))?;
        let di = parse_index(path, line, "dst_index", field(&rec, 4))?;
        let edge = format!("{st}:{si} -> {dt}:{di}");
        let rel = &relations[r];
        if st != rel.src_type || dt != rel.dst_type {
            return Err(Error::TypeMismatch {
                relation: rel.name.clone(),
                edge: format!("{edge} ({}:{line})", path.display()),
            });
        }
        for (t, i) in [(st, si), (dt, di)] {
            if i >= count(t) {
                return Err(Error::DanglingNode {
                    file: path.to_path_buf(),
                    line,
                    edge,
                    node: format!("{t}:{i}"),
                });
            }
        }
        if !seen[r].insert((si, di)) {
            return Err(Error::DuplicateEdge {
                relation: rel.name.clone(),
                edge: format!("{edge} ({}:{line})", path.display()),
            });
        }
        edges[r].push((si, di));
    }
    Ok(edges)
}

fn load_features(path: &Path, patients: usize) -> Result<FeatureMatrix> {
    let mut csv = Csv::open(path)?;
    let headers = csv.headers()?;
    if headers.first().map(String::as_str) != Some("patient_index") {
        return Err(parse_err(path, 1, "patient_index", "first column must be `patient_index`"));
    }
    for (k, h) in headers.iter().enumerate().skip(1) {
        if *h != format!("f{}", k - 1) {
            return Err(parse_err(path, 1, h, format!("expected column name `f{}`", k - 1)));
        }
    }
    let dim = headers.len() - 1;
    let mut values = Array2::zeros((patients, dim));
    let mut observed = Array2::from_elem((patients, dim), false);
    let mut seen = vec![false; patients];
    for (line, rec) in csv.records()? {
        let p = parse_index(path, line, "patient_index", field(&rec, 0))?;
        if p >= patients {
            return Err(parse_err(path, line, "patient_index", format!("patient {p} does not exist")));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(parse_err(path, line, "patient_index", format!("duplicate row for patient {p}")));
        }
        for k in 0..dim {
            let s = field(&rec, k + 1);
            if s.is_empty() {
                continue;
            }
            let col = &headers[k + 1];
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(path, line, col, format!("`{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, col, "value is not finite"));
            }
            values[[p, k]] = v;
            observed[[p, k]] = true;
        }
    }
    FeatureMatrix::new(values, observed)
}

fn load_labels(path: &Path, patients: usize) -> Result<Vec<Option<u8>>> {
    let mut csv = Csv::open(path)?;
    csv.expect_headers(&["patient_index", "label"])?;
    let mut labels = vec![None; patients];
    for (line, rec) in csv.records()? {
        let p = parse_index(path, line, "patient_index", field(&rec, 0))?;
        if p >= patients {
            return Err(parse_err(path, line, "patient_index", format!("patient {p} does not exist")));
        }
        let l = match field(&rec, 1) {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(parse_err(path, line, "label", format!("`{other}` is not 0 or 1"))),
        };
        if labels[p].replace(l).is_some() {
            return Err(parse_err(path, line, "patient_index", format!("duplicate label for patient {p}")));
        }
    }
    Ok(labels)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `nodes.csv`, `edges.csv`, `features.csv` and `labels.csv` into `dir`.
pub fn save_graph(g: &HeteroGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = GraphFiles::in_dir(dir);

    write_with(&files.nodes, |w| {
        writeln!(w, "type,index")?;
        for t in NodeType::ALL {
            for i in 0..g.node_count(t) {
                writeln!(w, "{t},{i}")?;
            }
        }
        Ok(())
    })?;

    write_with(&files.edges, |w| {
        writeln!(w, "relation,src_type,src_index,dst_type,dst_index")?;
        for (r, rel) in g.relations().iter().enumerate() {
            for &(s, d) in g.edges(r) {
                writeln!(w, "{},{},{s},{},{d}", rel.name, rel.src_type, rel.dst_type)?;
            }
        }
        Ok(())
    })?;

    write_features(g.features(), &files.features)?;

    write_with(&files.labels, |w| {
        writeln!(w, "patient_index,label")?;
        for (p, l) in g.labeled_patients() {
            writeln!(w, "{p},{l}")?;
        }
        Ok(())
    })
}

/// Writes a feature matrix in the `features.csv` schema.
pub(crate) fn write_features(f: &FeatureMatrix, path: &Path) -> Result<()> {
    write_with(path, |w| {
        write!(w, "patient_index")?;
        for k in 0..f.cols() {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for p in 0..f.rows() {
            write!(w, "{p}")?;
            for k in 0..f.cols() {
                match f.get(p, k) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

pub(crate) fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a `features.csv`-shaped file for a known patient count.
pub(crate) fn read_features(path: &Path, patients: usize) -> Result<FeatureMatrix> {
    load_features(path, patients)
}
