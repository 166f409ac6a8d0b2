//! Result tables, ROC points and embedding dumps.
//!
//! Files written by [`emit_report`]:
//!
//! - `results.csv`: `method,metric,mean,std`
//! - `results.md`: one row per method, `mean ± std` to four decimals
//! - `roc_<method>.csv`: `fpr,tpr`
//! - `embeddings.csv`: `patient_index,label,h_f_0,...`
//! - `embeddings_2d.csv`: `patient_index,label,pc1,pc2`

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::io_write;
use crate::metrics::{roc_points, MetricTable, PredictionSet};

/// Patient embeddings with optional labels, one row per patient.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub patients: Vec<usize>,
    pub labels: Vec<Option<u8>>,
    pub values: Array2<f64>,
}

impl Embeddings {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_rows(path, "h_f_", self.values.ncols(), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        let (mut patients, mut labels, mut flat) = (Vec::new(), Vec::new(), Vec::new());
        let mut width = None;
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let bad = |message: String| Error::Format {
                path: path.into(),
                message: format!("line {line}: {message}"),
            };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() < 2 {
                return Err(bad("expected patient_index,label,...".into()));
            }
            let w = rec.len() - 2;
            if *width.get_or_insert(w) != w {
                return Err(bad(format!("{} values, expected {}", w, width.unwrap_or(0))));
            }
            patients.push(rec[0].parse().map_err(|_| bad(format!("bad patient index `{}`", &rec[0])))?);
            labels.push(match &rec[1] {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => return Err(bad(format!("bad label `{other}`"))),
            });
            for f in rec.iter().skip(2) {
                flat.push(f.parse::<f64>().map_err(|_| bad(format!("bad value `{f}`")))?);
            }
        }
        let values = Array2::from_shape_vec((patients.len(), width.unwrap_or(0)), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Embeddings {
            patients,
            labels,
            values,
        })
    }
}

fn write_rows(path: &Path, prefix: &str, width: usize, e: &Embeddings) -> Result<()> {
    io_write(path, |w| {
        write!(w, "patient_index,label")?;
        for k in 0..width {
            write!(w, ",{prefix}{k}")?;
        }
        writeln!(w)?;
        for (r, (&p, l)) in e.patients.iter().zip(&e.labels).enumerate() {
            write!(w, "{p},")?;
            if let Some(l) = l {
                write!(w, "{l}")?;
            }
            for v in e.values.row(r) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Projection of the rows of `x` onto its top two principal components.
/// Each component's sign is fixed so that its largest-magnitude loading is
/// positive. Inputs narrower than two columns are padded with zeros.
pub fn pca_2d(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, 2));
    if n == 0 || d == 0 {
        return out;
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            out[[i, c]] = centered.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn fmt_cell(m: &crate::metrics::MeanStd) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

/// `results.csv` and `results.md` for `table`.
pub fn write_tables(table: &MetricTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io_write(&dir.join("results.csv"), |w| {
        writeln!(w, "method,metric,mean,std")?;
        for row in &table.rows {
            for (name, m) in [("auc", &row.auc), ("acc", &row.acc), ("f1_weighted", &row.f1)] {
                writeln!(w, "{},{name},{},{}", row.method, m.mean, m.std)?;
            }
        }
        Ok(())
    })?;
    io_write(&dir.join("results.md"), |w| {
        writeln!(w, "| Method | AUC | ACC | F1-weighted | Runs |")?;
        writeln!(w, "|---|---|---|---|---|")?;
        for row in &table.rows {
            let runs = if row.failed == 0 {
                row.completed.to_string()
            } else {
                format!("{} ({} failed)", row.completed, row.failed)
            };
            writeln!(
                w,
                "| {} | {} | {} | {} | {runs} |",
                row.method,
                fmt_cell(&row.auc),
                fmt_cell(&row.acc),
                fmt_cell(&row.f1)
            )?;
        }
        Ok(())
    })
}

pub fn write_roc(p: &PredictionSet, path: &Path) -> Result<()> {
    let points = roc_points(p)?;
    io_write(path, |w| {
        writeln!(w, "fpr,tpr")?;
        for (f, t) in points {
            writeln!(w, "{f},{t}")?;
        }
        Ok(())
    })
}

/// Everything a report can contain.
#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub table: MetricTable,
    /// Pooled test predictions per method, for ROC curves.
    pub predictions: Vec<(String, PredictionSet)>,
    pub embeddings: Option<Embeddings>,
}

pub fn emit_report(inputs: &ReportInputs, dir: &Path) -> Result<()> {
    write_tables(&inputs.table, dir)?;
    for (method, p) in &inputs.predictions {
        write_roc(p, &dir.join(format!("roc_{method}.csv")))?;
    }
    if let Some(e) = &inputs.embeddings {
        e.write(&dir.join("embeddings.csv"))?;
        let projected = Embeddings {
            patients: e.patients.clone(),
            labels: e.labels.clone(),
            values: pca_2d(&e.values),
        };
        write_pcs(&projected, &dir.join("embeddings_2d.csv"))?;
    }
    Ok(())
}

fn write_pcs(e: &Embeddings, path: &Path) -> Result<()> {
    io_write(path, |w| {
        writeln!(w, "patient_index,label,pc1,pc2")?;
        for (r, (&p, l)) in e.patients.iter().zip(&e.labels).enumerate() {
            let l = l.map(|l| l.to_string()).unwrap_or_default();
            writeln!(w, "{p},{l},{},{}", e.values[[r, 0]], e.values[[r, 1]])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pca_of_a_line_puts_everything_on_the_first_axis() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let p = pca_2d(&x);
        for r in 0..4 {
            assert!(p[[r, 1]].abs() < 1e-12);
        }
        assert!((p[[3, 0]] - p[[0, 0]] - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pca_pads_narrow_inputs() {
        let p = pca_2d(&array![[1.0], [3.0]]);
        assert_eq!(p.dim(), (2, 2));
        assert_eq!(p[[0, 1]], 0.0);
        assert_eq!(p[[0, 0]].abs(), 1.0);
    }
}
