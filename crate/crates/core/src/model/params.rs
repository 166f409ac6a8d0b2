use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};

/// Every trainable tensor of the model.
///
/// `conv[l][r]` is the relation weight of layer `l` for relation `r`
/// (`hidden × in_dim`). The causal-strength MLP is `w1, b1, w2, b2`, the
/// attention MLP `w3, b3, w4, b4` (the last column of `w3` weights the
/// causal-strength input), the intervention stack `m1, m2, m3, b5, b6`, and
/// the two-class head `wc, bc`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChgrlParams {
    pub conv: Vec<Vec<Array2<f64>>>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub w4: Array2<f64>,
    pub b4: Array1<f64>,
    pub m1: Array2<f64>,
    pub m2: Array2<f64>,
    pub m3: Array2<f64>,
    pub b5: Array1<f64>,
    pub b6: Array1<f64>,
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

/// One named tensor in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ChgrlParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let hl = spec.hidden;
        let conv = (0..spec.layers)
            .map(|l| {
                spec.relations
                    .iter()
                    .map(|rel| {
                        let in_dim = if l == 0 { spec.in_dims[rel.src_type.slot()] } else { hl };
                        Array2::zeros((hl, in_dim))
                    })
                    .collect()
            })
            .collect();
        ChgrlParams {
            conv,
            w1: Array2::zeros((hl, 2 * hl)),
            b1: Array1::zeros(hl),
            w2: Array2::zeros((1, hl)),
            b2: Array1::zeros(1),
            w3: Array2::zeros((hl, 2 * hl + 1)),
            b3: Array1::zeros(hl),
            w4: Array2::zeros((1, hl)),
            b4: Array1::zeros(1),
            m1: Array2::zeros((hl, hl)),
            m2: Array2::zeros((hl, hl)),
            m3: Array2::zeros((hl, hl)),
            b5: Array1::zeros(hl),
            b6: Array1::zeros(hl),
            wc: Array2::zeros((2, hl)),
            bc: Array1::zeros(2),
        }
    }

    /// Glorot-uniform matrices, zero biases. Deterministic in `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut p = Self::zeros(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.for_each_mut(|_, data, shape| {
            if let [fan_out, fan_in] = *shape {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for x in data.iter_mut() {
                    *x = rng.gen_range(-a..=a);
                }
            }
        });
        p
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn matrices(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.conv.iter().enumerate() {
            for (r, w) in layer.iter().enumerate() {
                out.push((format!("conv.{l}.{r}"), w));
            }
        }
        out
    }

    /// Calls `f(name, data, shape)` on every tensor in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &[f64], &[usize])) {
        for (name, w) in self.matrices() {
            f(&name, slice(w), w.shape());
        }
        macro_rules! visit {
            ($($field:ident => $name:literal),* $(,)?) => {
                $( f($name, self.$field.as_slice().expect("standard layout"), self.$field.shape()); )*
            };
        }
        visit!(
            w1 => "causal.w1", b1 => "causal.b1", w2 => "causal.w2", b2 => "causal.b2",
            w3 => "attention.w3", b3 => "attention.b3", w4 => "attention.w4", b4 => "attention.b4",
            m1 => "intervention.m1", m2 => "intervention.m2", m3 => "intervention.m3",
            b5 => "intervention.b5", b6 => "intervention.b6",
            wc => "classifier.w", bc => "classifier.b",
        );
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64], &[usize])) {
        for (l, layer) in self.conv.iter_mut().enumerate() {
            for (r, w) in layer.iter_mut().enumerate() {
                let shape = w.shape().to_vec();
                f(&format!("conv.{l}.{r}"), w.as_slice_mut().expect("standard layout"), &shape);
            }
        }
        macro_rules! visit {
            ($($field:ident => $name:literal),* $(,)?) => {
                $(
                    let shape = self.$field.shape().to_vec();
                    f($name, self.$field.as_slice_mut().expect("standard layout"), &shape);
                )*
            };
        }
        visit!(
            w1 => "causal.w1", b1 => "causal.b1", w2 => "causal.w2", b2 => "causal.b2",
            w3 => "attention.w3", b3 => "attention.b3", w4 => "attention.w4", b4 => "attention.b4",
            m1 => "intervention.m1", m2 => "intervention.m2", m3 => "intervention.m3",
            b5 => "intervention.b5", b6 => "intervention.b6",
            wc => "classifier.w", bc => "classifier.b",
        );
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, d, _| n += d.len());
        n
    }

    /// Flattened parameter vector in `for_each` order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.for_each(|_, d, _| v.extend_from_slice(d));
        v
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &ChgrlParams) {
        let src = other.flatten();
        let mut off = 0;
        self.for_each_mut(|_, d, _| {
            let len = d.len();
            for (x, g) in d.iter_mut().zip(&src[off..off + len]) {
                *x += alpha * g;
            }
            off += len;
        });
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.for_each(|name, d, _| {
            if bad.is_none() && d.iter().any(|x| !x.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        bad
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.for_each(|name, data, shape| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        out
    }

    /// Rebuilds parameters for `spec` from named tensors. Every mismatch is
    /// reported in one error.
    pub fn from_tensors(spec: &ModelSpec, tensors: &[NamedTensor]) -> Result<Self> {
        let mut p = Self::zeros(spec);
        let mut problems = Vec::new();
        let mut used = vec![false; tensors.len()];
        p.for_each_mut(|name, data, shape| match tensors.iter().position(|t| t.name == name) {
            None => problems.push(format!("{name}: missing")),
            Some(i) => {
                used[i] = true;
                let t = &tensors[i];
                if t.shape != shape || t.data.len() != data.len() {
                    problems.push(format!("{name}: stored {:?}, expected {:?}", t.shape, shape));
                } else {
                    data.copy_from_slice(&t.data);
                }
            }
        });
        for (t, u) in tensors.iter().zip(used) {
            if !u {
                problems.push(format!("{}: unexpected tensor", t.name));
            }
        }
        if problems.is_empty() {
            Ok(p)
        } else {
            Err(Error::Shape(problems.join("; ")))
        }
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
