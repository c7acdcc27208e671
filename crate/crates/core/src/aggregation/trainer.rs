//! Desk-scale local trainers and their synthetic datasets.
//!
//! Two objectives are available: a separable quadratic bowl per satellite and
//! binary logistic regression on seeded Gaussian data. Both train with
//! mini-batch gradient descent, one full pass over the local data per epoch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AggregationError, ModelVector};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("loss became non-finite in epoch {epoch}")]
    NonFinite { epoch: u32 },
    #[error("model has {got} parameters, objective expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("learning rate must be positive and batch size at least 1")]
    Hyper,
    #[error(transparent)]
    Model(#[from] AggregationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataPartition {
    Iid,
    /// Each satellite holds `dominant_fraction` of its samples from one class
    /// (alternating by satellite index).
    LabelSkew { dominant_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub kind: TrainerKind,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to the logit before
    /// thresholding (logistic) or to each satellite's target (quadratic).
    pub noise: f64,
    pub partition: DataPartition,
    pub test_samples: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TrainerKind::Logistic,
            feature_dim: 8,
            noise: 0.5,
            partition: DataPartition::Iid,
            test_samples: 2000,
            learning_rate: 0.05,
            batch_size: 10,
        }
    }
}

/// Row-major feature matrix with 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    pub dim: usize,
    pub features: Vec<S>,
    pub labels: Vec<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, i: usize) -> &[S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset<S>>, dim: usize) -> Dataset<S> {
        let mut out = Dataset {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        };
        for p in parts {
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalObjective<S: Scalar> {
    /// `1/2 sum_j a_j (w_j - t_j)^2`, visited in `n_samples` sample slots per epoch.
    Quadratic {
        target: Vec<S>,
        curvature: Vec<S>,
        n_samples: usize,
    },
    /// Mean logistic loss; the model's last entry is the bias.
    Logistic(Dataset<S>),
}

impl<S: Scalar> LocalObjective<S> {
    pub fn model_dim(&self) -> usize {
        match self {
            LocalObjective::Quadratic { target, .. } => target.len(),
            LocalObjective::Logistic(d) => d.dim + 1,
        }
    }

    fn sample_count(&self) -> usize {
        match self {
            LocalObjective::Quadratic { n_samples, .. } => *n_samples,
            LocalObjective::Logistic(d) => d.len(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainerSpec<'a, S: Scalar> {
    pub objective: &'a LocalObjective<S>,
    pub learning_rate: S,
    pub batch_size: usize,
    pub seed: u64,
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus<S: Scalar>(z: S) -> S {
    if z > S::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logit<S: Scalar>(w: &[S], x: &[S]) -> S {
    let d = x.len();
    x.iter().zip(&w[..d]).map(|(a, b)| *a * *b).sum::<S>() + w[d]
}

/// Objective value at `model`.
pub fn objective_loss<S: Scalar>(model: &ModelVector<S>, objective: &LocalObjective<S>) -> S {
    let w = model.weights();
    match objective {
        LocalObjective::Quadratic {
            target, curvature, ..
        } => {
            let half = S::of(0.5);
            w.iter()
                .zip(target)
                .zip(curvature)
                .map(|((w, t), a)| half * *a * (*w - *t) * (*w - *t))
                .sum()
        }
        LocalObjective::Logistic(data) => {
            if data.is_empty() {
                return S::zero();
            }
            let total: S = (0..data.len())
                .map(|i| {
                    let z = logit(w, data.row(i));
                    softplus(z) - data.labels[i] * z
                })
                .sum();
            total / S::of_usize(data.len())
        }
    }
}

/// Fraction of samples whose thresholded prediction matches the label.
pub fn accuracy<S: Scalar>(model: &ModelVector<S>, data: &Dataset<S>) -> S {
    if data.is_empty() {
        return S::zero();
    }
    let hits = (0..data.len())
        .filter(|&i| {
            let positive = logit(model.weights(), data.row(i)) >= S::zero();
            positive == (data.labels[i] > S::of(0.5))
        })
        .count();
    S::of_usize(hits) / S::of_usize(data.len())
}

/// `epochs` full passes of mini-batch gradient descent from `model`.
pub fn local_train<S: Scalar>(
    model: &ModelVector<S>,
    spec: &TrainerSpec<'_, S>,
    epochs: u32,
) -> Result<ModelVector<S>, TrainError> {
    if !(spec.learning_rate > S::zero()) || spec.batch_size == 0 {
        return Err(TrainError::Hyper);
    }
    let expected = spec.objective.model_dim();
    if model.dim() != expected {
        return Err(TrainError::Dimension {
            expected,
            got: model.dim(),
        });
    }
    if epochs == 0 {
        return Ok(model.clone());
    }
    let mut w = model.weights().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.objective.sample_count();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![S::zero(); w.len()];
    for epoch in 0..epochs {
        match spec.objective {
            LocalObjective::Quadratic {
                target, curvature, ..
            } => {
                for _ in 0..n.div_ceil(spec.batch_size) {
                    for ((w, t), a) in w.iter_mut().zip(target).zip(curvature) {
                        *w = *w - spec.learning_rate * *a * (*w - *t);
                    }
                }
            }
            LocalObjective::Logistic(data) => {
                order.shuffle(&mut rng);
                for batch in order.chunks(spec.batch_size) {
                    grad.iter_mut().for_each(|g| *g = S::zero());
                    for &i in batch {
                        let x = data.row(i);
                        let err = sigmoid(logit(&w, x)) - data.labels[i];
                        for (g, xj) in grad.iter_mut().zip(x) {
                            *g = *g + err * *xj;
                        }
                        grad[data.dim] = grad[data.dim] + err;
                    }
                    let step = spec.learning_rate / S::of_usize(batch.len());
                    for (wj, g) in w.iter_mut().zip(&grad) {
                        *wj = *wj - step * *g;
                    }
                }
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { epoch: epoch + 1 });
        }
    }
    let out = ModelVector::with_wire_bits(w, model.wire_bits())?;
    if !objective_loss(&out, spec.objective).is_finite() {
        return Err(TrainError::NonFinite { epoch: epochs });
    }
    Ok(out)
}

/// Seeded federated task: one local objective per satellite plus a held-out
/// test set drawn from the pooled distribution.
#[derive(Debug, Clone)]
pub struct SyntheticTask<S: Scalar> {
    pub spec: TaskSpec,
    pub objectives: Vec<LocalObjective<S>>,
    pub test: Dataset<S>,
    /// Generating parameters (logistic separator or quadratic centre).
    pub truth: Vec<f64>,
}

impl<S: Scalar> SyntheticTask<S> {
    pub fn generate(spec: &TaskSpec, sample_counts: &[u64], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = spec.feature_dim;
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        match spec.kind {
            TrainerKind::Logistic => {
                let mut truth: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                truth.iter_mut().for_each(|v| *v *= 3.0 / norm);
                truth.push(0.0);
                let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, bool) {
                    let x: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
                    let z: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>()
                        + truth[dim]
                        + spec.noise * normal(rng);
                    (x, z > 0.0)
                };
                let make = |rows: Vec<(Vec<f64>, bool)>| Dataset {
                    dim,
                    features: rows.iter().flat_map(|(x, _)| x.iter().map(|v| S::of(*v))).collect(),
                    labels: rows
                        .iter()
                        .map(|(_, y)| if *y { S::one() } else { S::zero() })
                        .collect(),
                };
                let objectives = sample_counts
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        let n = n as usize;
                        let rows = match spec.partition {
                            DataPartition::Iid => (0..n).map(|_| draw(&mut rng)).collect(),
                            DataPartition::LabelSkew { dominant_fraction } => {
                                let want = (n as f64 * dominant_fraction.clamp(0.0, 1.0)).round() as usize;
                                let mut quota = [want, n - want];
                                if i % 2 == 1 {
                                    quota.swap(0, 1);
                                }
                                let mut rows = Vec::with_capacity(n);
                                while rows.len() < n {
                                    let (x, y) = draw(&mut rng);
                                    let slot = &mut quota[y as usize];
                                    if *slot > 0 {
                                        *slot -= 1;
                                        rows.push((x, y));
                                    }
                                }
                                rows
                            }
                        };
                        LocalObjective::Logistic(make(rows))
                    })
                    .collect();
                let test = make((0..spec.test_samples).map(|_| draw(&mut rng)).collect());
                Self {
                    spec: spec.clone(),
                    objectives,
                    test,
                    truth,
                }
            }
            TrainerKind::Quadratic => {
                let truth: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let objectives = sample_counts
                    .iter()
                    .map(|&n| {
                        let target = truth
                            .iter()
                            .map(|c| S::of(c + spec.noise * normal(&mut rng)))
                            .collect();
                        let curvature = (0..dim).map(|_| S::of(rng.random_range(0.5..1.5))).collect();
                        LocalObjective::Quadratic {
                            target,
                            curvature,
                            n_samples: n as usize,
                        }
                    })
                    .collect();
                Self {
                    spec: spec.clone(),
                    objectives,
                    test: Dataset {
                        dim,
                        features: Vec::new(),
                        labels: Vec::new(),
                    },
                    truth,
                }
            }
        }
    }

    pub fn model_dim(&self) -> usize {
        match self.spec.kind {
            TrainerKind::Logistic => self.spec.feature_dim + 1,
            TrainerKind::Quadratic => self.spec.feature_dim,
        }
    }

    pub fn trainer(&self, satellite: usize, seed: u64) -> TrainerSpec<'_, S> {
        TrainerSpec {
            objective: &self.objectives[satellite],
            learning_rate: S::of(self.spec.learning_rate),
            batch_size: self.spec.batch_size,
            seed,
        }
    }

    /// Test accuracy (logistic) or pooled sample-weighted objective (quadratic).
    pub fn evaluate(&self, model: &ModelVector<S>) -> S {
        match self.spec.kind {
            TrainerKind::Logistic => accuracy(model, &self.test),
            TrainerKind::Quadratic => {
                let mut total = S::zero();
                let mut count = S::zero();
                for o in &self.objectives {
                    let n = S::of_usize(o.sample_count());
                    total = total + n * objective_loss(model, o);
                    count = count + n;
                }
                if count > S::zero() {
                    total / count
                } else {
                    S::zero()
                }
            }
        }
    }

    /// All local datasets concatenated (logistic only).
    pub fn pooled(&self) -> Option<Dataset<S>> {
        let parts: Vec<&Dataset<S>> = self
            .objectives
            .iter()
            .filter_map(|o| match o {
                LocalObjective::Logistic(d) => Some(d),
                LocalObjective::Quadratic { .. } => None,
            })
            .collect();
        if parts.is_empty() {
            None
        } else {
            Some(Dataset::concat(parts, self.spec.feature_dim))
        }
    }
}

/// Centralised solution on the pooled data.
///
/// Logistic: Newton iterations on the mean log-loss with a tiny ridge term.
/// Quadratic: closed-form minimiser of the sample-weighted sum.
pub fn centralized_reference<S: Scalar>(task: &SyntheticTask<S>, bits_per_param: u32) -> ModelVector<f64> {
    let dim = task.model_dim();
    let weights = match task.spec.kind {
        TrainerKind::Quadratic => {
            let mut num = vec![0.0; dim];
            let mut den = vec![0.0; dim];
            for o in &task.objectives {
                if let LocalObjective::Quadratic {
                    target,
                    curvature,
                    n_samples,
                } = o
                {
                    for j in 0..dim {
                        let a = curvature[j].as_f64() * *n_samples as f64;
                        num[j] += a * target[j].as_f64();
                        den[j] += a;
                    }
                }
            }
            num.iter()
                .zip(&den)
                .map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 })
                .collect()
        }
        TrainerKind::Logistic => {
            let data = task.pooled().expect("logistic task has data");
            newton_logistic(&data, 30, 1e-6)
        }
    };
    ModelVector::new(weights, bits_per_param).expect("finite reference model")
}

fn newton_logistic<S: Scalar>(data: &Dataset<S>, iterations: usize, ridge: f64) -> Vec<f64> {
    let d = data.dim + 1;
    let n = data.len().max(1) as f64;
    let mut w = vec![0.0; d];
    let mut x = vec![0.0; d];
    for _ in 0..iterations {
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        for i in 0..data.len() {
            for (xj, v) in x.iter_mut().zip(data.row(i)) {
                *xj = v.as_f64();
            }
            x[d - 1] = 1.0;
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = sigmoid(z);
            let err = p - data.labels[i].as_f64();
            let s = p * (1.0 - p);
            for a in 0..d {
                g[a] += err * x[a];
                for b in 0..d {
                    h[a * d + b] += s * x[a] * x[b];
                }
            }
        }
        for a in 0..d {
            g[a] = g[a] / n + ridge * w[a];
            for b in 0..d {
                h[a * d + b] /= n;
            }
            h[a * d + a] += ridge;
        }
        let step = solve(&mut h, &mut g, d);
        for (wa, s) in w.iter_mut().zip(step) {
            *wa -= s;
        }
    }
    w
}

/// Gaussian elimination with partial pivoting; `a` is overwritten.
fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        if p.abs() < 1e-300 {
            continue;
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row * n + k] * x[k]).sum();
        let p = a[row * n + row];
        x[row] = if p.abs() < 1e-300 { 0.0 } else { (b[row] - s) / p };
    }
    x
}
