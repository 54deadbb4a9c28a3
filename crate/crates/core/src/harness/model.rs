use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::collectives::partition_range;
use crate::error::{Error, Result};
use crate::tensor::FlatTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `1/2 |x - a|^2` averaged over target rows `a`, with `x` split into
    /// `layers` tensors.
    Quadratic {
        d: usize,
        #[serde(default)]
        layers: Option<usize>,
    },
    /// Logistic regression with weight `w` and bias `b`.
    Logistic { d: usize },
    /// One tanh hidden layer and a logistic output.
    Mlp { d: usize, hidden: usize },
}

impl ModelSpec {
    /// Input dimension.
    pub fn dim(&self) -> usize {
        match *self {
            Self::Quadratic { d, .. } | Self::Logistic { d } | Self::Mlp { d, .. } => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss and per-layer gradients (forward layer order) of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub grads: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerSpec>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let layers = match spec {
            ModelSpec::Quadratic { d, layers } => {
                let k = layers.unwrap_or(if d > 1 { 2 } else { 1 });
                if d == 0 || k == 0 || k > d {
                    return Err(Error::InvalidSize(format!(
                        "quadratic model needs 1 <= layers <= d, got d={d}, layers={k}"
                    )));
                }
                (0..k)
                    .map(|i| LayerSpec::new(format!("x{i}"), vec![partition_range(d, k, i).len()]))
                    .collect()
            }
            ModelSpec::Logistic { d } => {
                if d == 0 {
                    return Err(Error::InvalidSize("logistic model needs d > 0".into()));
                }
                vec![LayerSpec::new("w", vec![d]), LayerSpec::new("b", vec![1])]
            }
            ModelSpec::Mlp { d, hidden } => {
                if d == 0 || hidden == 0 {
                    return Err(Error::InvalidSize("mlp needs d > 0 and hidden > 0".into()));
                }
                vec![
                    LayerSpec::new("w1", vec![hidden, d]),
                    LayerSpec::new("b1", vec![hidden]),
                    LayerSpec::new("w2", vec![1, hidden]),
                    LayerSpec::new("b2", vec![1]),
                ]
            }
        };
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::len).sum()
    }

    /// Initial parameters. Quadratic and logistic models start at zero; MLP
    /// weights are drawn uniformly from `+-1/sqrt(fan_in)`.
    pub fn init(&self, seed: u64) -> Vec<FlatTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.layers
            .iter()
            .map(|l| {
                let data = match (self.spec, l.name.as_str()) {
                    (ModelSpec::Mlp { d, .. }, "w1") => uniform(&mut rng, l.len(), d),
                    (ModelSpec::Mlp { hidden, .. }, "w2") => uniform(&mut rng, l.len(), hidden),
                    _ => vec![0.0; l.len()],
                };
                FlatTensor::new(l.name.clone(), l.shape.clone(), data).expect("layer shape")
            })
            .collect()
    }

    fn check(&self, params: &[&[f32]], data: &Dataset, rows: &[usize]) -> Result<()> {
        if params.len() != self.layers.len() {
            return Err(Error::ShapeMismatch {
                shape: vec![self.layers.len()],
                len: params.len(),
            });
        }
        for (p, l) in params.iter().zip(&self.layers) {
            if p.len() != l.len() {
                return Err(Error::ShapeMismatch {
                    shape: l.shape.clone(),
                    len: p.len(),
                });
            }
        }
        if data.dim() != self.dim() {
            return Err(Error::ShapeMismatch {
                shape: vec![self.dim()],
                len: data.dim(),
            });
        }
        if rows.is_empty() {
            return Err(Error::InvalidSize("empty batch".into()));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= data.len()) {
            return Err(Error::InvalidSize(format!("row {r} out of range")));
        }
        Ok(())
    }

    /// Mean loss over `rows` of `data`.
    pub fn loss(&self, params: &[&[f32]], data: &Dataset, rows: &[usize]) -> Result<f64> {
        Ok(self.evaluate(params, data, rows, false)?.loss)
    }

    /// Mean loss and its exact gradient over `rows` of `data`.
    pub fn gradient(&self, params: &[&[f32]], data: &Dataset, rows: &[usize]) -> Result<Gradients> {
        self.evaluate(params, data, rows, true)
    }

    fn evaluate(&self, params: &[&[f32]], data: &Dataset, rows: &[usize], grad: bool) -> Result<Gradients> {
        self.check(params, data, rows)?;
        let m = rows.len() as f64;
        let (loss, grads) = match self.spec {
            ModelSpec::Quadratic { .. } => {
                let x: Vec<f32> = params.concat();
                let mut mean = vec![0.0f64; x.len()];
                let mut loss = 0.0;
                for &r in rows {
                    let a = data.row(r);
                    for (j, (&xj, &aj)) in x.iter().zip(a).enumerate() {
                        let diff = xj as f64 - aj as f64;
                        loss += 0.5 * diff * diff;
                        mean[j] += aj as f64;
                    }
                }
                let g: Vec<f32> = x
                    .iter()
                    .zip(&mean)
                    .map(|(&xj, &s)| (xj as f64 - s / m) as f32)
                    .collect();
                (loss / m, split_like(&g, &self.layers))
            }
            ModelSpec::Logistic { .. } => {
                let (w, b) = (params[0], params[1][0] as f64);
                let mut gw = vec![0.0f64; w.len()];
                let mut gb = 0.0;
                let mut loss = 0.0;
                for &r in rows {
                    let x = data.row(r);
                    let y = data.label(r) as f64;
                    let z = dot(w, x) + b;
                    loss += softplus(-y * z);
                    if grad {
                        let dz = -y * sigmoid(-y * z);
                        for (g, &xj) in gw.iter_mut().zip(x) {
                            *g += dz * xj as f64;
                        }
                        gb += dz;
                    }
                }
                (loss / m, vec![scaled(&gw, m), vec![(gb / m) as f32]])
            }
            ModelSpec::Mlp { d, hidden } => {
                let (w1, b1, w2, b2) = (params[0], params[1], params[2], params[3][0] as f64);
                let mut g1 = vec![0.0f64; hidden * d];
                let mut gb1 = vec![0.0f64; hidden];
                let mut g2 = vec![0.0f64; hidden];
                let mut gb2 = 0.0;
                let mut h = vec![0.0f64; hidden];
                let mut loss = 0.0;
                for &r in rows {
                    let x = data.row(r);
                    let y = data.label(r) as f64;
                    for (k, hk) in h.iter_mut().enumerate() {
                        *hk = (dot(&w1[k * d..(k + 1) * d], x) + b1[k] as f64).tanh();
                    }
                    let z = h.iter().zip(w2).map(|(&hk, &v)| hk * v as f64).sum::<f64>() + b2;
                    loss += softplus(-y * z);
                    if grad {
                        let dz = -y * sigmoid(-y * z);
                        gb2 += dz;
                        for k in 0..hidden {
                            g2[k] += dz * h[k];
                            let da = dz * w2[k] as f64 * (1.0 - h[k] * h[k]);
                            gb1[k] += da;
                            for (g, &xj) in g1[k * d..(k + 1) * d].iter_mut().zip(x) {
                                *g += da * xj as f64;
                            }
                        }
                    }
                }
                let grads = vec![scaled(&g1, m), scaled(&gb1, m), scaled(&g2, m), vec![(gb2 / m) as f32]];
                (loss / m, grads)
            }
        };
        Ok(Gradients { loss, grads })
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn dot(w: &[f32], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn scaled(v: &[f64], m: f64) -> Vec<f32> {
    v.iter().map(|&g| (g / m) as f32).collect()
}

fn split_like(flat: &[f32], layers: &[LayerSpec]) -> Vec<Vec<f32>> {
    let mut at = 0;
    layers
        .iter()
        .map(|l| {
            at += l.len();
            flat[at - l.len()..at].to_vec()
        })
        .collect()
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
