use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AssignmentState, ClusterSummary, Constraints, RewardWeights, TrainHyper};

pub const SAT_FEATURES: usize = 6;
pub const CLUSTER_FEATURES: usize = 9;
pub const GLOBAL_FEATURES: usize = 3;

const MAGIC: &[u8; 8] = b"SMPOLICY";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub k_max: usize,
    pub attn: usize,
    pub hidden: usize,
}

impl PolicyDims {
    pub fn for_constraints(c: &Constraints) -> Self {
        Self {
            k_max: c.k_max,
            attn: 8,
            hidden: 16,
        }
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    wq: usize,
    wk: usize,
    wv: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    w5: usize,
    b5: usize,
    w6: usize,
    b6: usize,
    len: usize,
}

impl Layout {
    fn new(d: &PolicyDims) -> Self {
        let (a, h) = (d.attn, d.hidden);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let wq = take(a * SAT_FEATURES);
        let wk = take(a * CLUSTER_FEATURES);
        let wv = take(a * CLUSTER_FEATURES);
        let w1 = take(h * slot_in(d));
        let b1 = take(h);
        let w2 = take(h);
        let b2 = take(1);
        let w3 = take(h * open_in(d));
        let b3 = take(h);
        let w4 = take(h);
        let b4 = take(1);
        let w5 = take(h * critic_in(d));
        let b5 = take(h);
        let w6 = take(h);
        let b6 = take(1);
        Self {
            wq,
            wk,
            wv,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            w5,
            b5,
            w6,
            b6,
            len: at,
        }
    }
}

fn slot_in(d: &PolicyDims) -> usize {
    SAT_FEATURES + CLUSTER_FEATURES + d.attn
}

fn open_in(d: &PolicyDims) -> usize {
    SAT_FEATURES + d.attn
}

fn critic_in(d: &PolicyDims) -> usize {
    SAT_FEATURES + d.attn + GLOBAL_FEATURES
}

fn matvec(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `y = tanh(W u + b)`.
fn dense_tanh(w: &[f64], b: &[f64], u: &[f64]) -> Vec<f64> {
    let mut y = matvec(w, u, b.len());
    for (v, bi) in y.iter_mut().zip(b) {
        *v = (*v + bi).tanh();
    }
    y
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sat_features(s: &AssignmentState) -> [f64; SAT_FEATURES] {
    let c = &s.current;
    [
        c.share * s.n as f64,
        if c.hardware.index() == 1 { 1.0 } else { 0.0 },
        c.t_comp / s.t_scale,
        c.e_epoch / s.e_scale,
        c.capacity as f64 / 10.0,
        s.step as f64 / s.n as f64,
    ]
}

pub(crate) fn cluster_features(c: &ClusterSummary, s: &AssignmentState) -> [f64; CLUSTER_FEATURES] {
    if !c.active {
        return [0.0; CLUSTER_FEATURES];
    }
    let size = c.size as f64;
    let same = c.hw_counts[s.current.hardware.index()] as f64 / size;
    [
        1.0,
        size / 10.0,
        c.t_min_s / s.t_scale,
        c.t_max_s / s.t_scale,
        c.energy_sum_j / (s.e_scale * 10.0),
        c.share_sum * s.n as f64 / 10.0,
        same,
        1.0 - same,
        c.remaining_capacity as f64 / 10.0,
    ]
}

pub(crate) fn global_features(s: &AssignmentState, k_max: usize) -> [f64; GLOBAL_FEATURES] {
    [
        s.k_open as f64 / k_max as f64,
        s.step as f64 / s.n as f64,
        s.unassigned_share,
    ]
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    x: Vec<f64>,
    phi: Vec<Vec<f64>>,
    active: Vec<usize>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    vals: Vec<Vec<f64>>,
    attn: Vec<f64>,
    slot: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    open: (Vec<f64>, Vec<f64>),
    critic: (Vec<f64>, Vec<f64>),
    /// Raw logits, `NEG_INFINITY` for inactive slots.
    pub logits: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum PolicyFileError {
    #[error("not a policy file")]
    BadMagic,
    #[error("unsupported policy file version {0}")]
    Version(u32),
    #[error("policy file is truncated")]
    Truncated,
    #[error("policy header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("parameter count {got} does not match dimensions ({want})")]
    Shape { got: usize, want: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Metadata stored ahead of the parameters in a policy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub dims: PolicyDims,
    pub seed: u64,
    pub episodes: usize,
    pub hyper: Option<TrainHyper>,
    /// Reward weights, including the normalisation ranges used in training.
    #[serde(default)]
    pub reward: Option<RewardWeights>,
}

/// Attention scorer over cluster summaries, per-slot and open-new actor
/// heads, and a critic. Fully described by its dimensions and flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPolicy {
    dims: PolicyDims,
    params: Vec<f64>,
}

impl MaskedPolicy {
    pub fn new(dims: PolicyDims, seed: u64) -> Self {
        let l = Layout::new(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; l.len];
        let mut fill = |from: usize, n: usize, fan_in: usize, scale: f64| {
            let a = scale / (fan_in as f64).sqrt();
            for p in &mut params[from..from + n] {
                *p = rng.random_range(-a..a);
            }
        };
        let (a, h) = (dims.attn, dims.hidden);
        fill(l.wq, a * SAT_FEATURES, SAT_FEATURES, 1.0);
        fill(l.wk, a * CLUSTER_FEATURES, CLUSTER_FEATURES, 1.0);
        fill(l.wv, a * CLUSTER_FEATURES, CLUSTER_FEATURES, 1.0);
        fill(l.w1, h * slot_in(&dims), slot_in(&dims), 1.0);
        fill(l.w2, h, h, 0.1);
        fill(l.w3, h * open_in(&dims), open_in(&dims), 1.0);
        fill(l.w4, h, h, 0.1);
        fill(l.w5, h * critic_in(&dims), critic_in(&dims), 1.0);
        fill(l.w6, h, h, 0.1);
        Self { dims, params }
    }

    /// All-zero parameters: uniform over feasible actions.
    pub fn uniform(dims: PolicyDims) -> Self {
        Self {
            dims,
            params: vec![0.0; Layout::new(&dims).len],
        }
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn forward(&self, s: &AssignmentState) -> Forward {
        let d = &self.dims;
        let l = Layout::new(d);
        let p = &self.params;
        let a = d.attn;
        let x = sat_features(s).to_vec();
        let phi: Vec<Vec<f64>> = (0..d.k_max)
            .map(|j| {
                s.summaries
                    .get(j)
                    .map_or([0.0; CLUSTER_FEATURES], |c| cluster_features(c, s))
                    .to_vec()
            })
            .collect();
        let active: Vec<usize> = (0..d.k_max)
            .filter(|&j| s.summaries.get(j).is_some_and(|c| c.active))
            .collect();

        let q = matvec(&p[l.wq..l.wk], &x, a);
        let keys: Vec<Vec<f64>> = active.iter().map(|&j| matvec(&p[l.wk..l.wv], &phi[j], a)).collect();
        let vals: Vec<Vec<f64>> = active.iter().map(|&j| matvec(&p[l.wv..l.w1], &phi[j], a)).collect();
        let scale = (a as f64).sqrt();
        let scores: Vec<f64> = keys.iter().map(|k| dot(&q, k) / scale).collect();
        let attn = softmax(&scores);
        let mut z = vec![0.0; a];
        for (w, v) in attn.iter().zip(&vals) {
            for (zi, vi) in z.iter_mut().zip(v) {
                *zi += w * vi;
            }
        }

        let mut logits = vec![f64::NEG_INFINITY; d.k_max + 1];
        let mut slot = vec![None; d.k_max];
        for &j in &active {
            let u: Vec<f64> = x.iter().chain(&phi[j]).chain(&z).copied().collect();
            let hid = dense_tanh(&p[l.w1..l.b1], &p[l.b1..l.w2], &u);
            logits[j] = dot(&p[l.w2..l.b2], &hid) + p[l.b2];
            slot[j] = Some((u, hid));
        }
        let u: Vec<f64> = x.iter().chain(&z).copied().collect();
        let hid = dense_tanh(&p[l.w3..l.b3], &p[l.b3..l.w4], &u);
        logits[d.k_max] = dot(&p[l.w4..l.b4], &hid) + p[l.b4];
        let open = (u, hid);

        let g = global_features(s, d.k_max);
        let u: Vec<f64> = x.iter().chain(&z).chain(&g).copied().collect();
        let hid = dense_tanh(&p[l.w5..l.b5], &p[l.b5..l.w6], &u);
        let value = dot(&p[l.w6..l.b6], &hid) + p[l.b6];

        Forward {
            x,
            phi,
            active,
            q,
            keys,
            vals,
            attn,
            slot,
            open,
            critic: (u, hid),
            logits,
            value,
        }
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dlogits` and `dL/dV`. The
    /// critic does not backpropagate into the attention block.
    pub(crate) fn backward(&self, f: &Forward, dlogits: &[f64], dvalue: f64, grad: &mut [f64]) {
        let d = &self.dims;
        let l = Layout::new(d);
        let p = &self.params;
        let a = d.attn;
        let mut dz = vec![0.0; a];

        let head = |u: &[f64], hid: &[f64], g: f64, w: usize, b: usize, wo: usize, bo: usize,
                        grad: &mut [f64], dz: Option<(&mut [f64], usize)>| {
            if g == 0.0 {
                return;
            }
            grad[bo] += g;
            let cols = u.len();
            let mut du = vec![0.0; cols];
            for r in 0..hid.len() {
                grad[wo + r] += g * hid[r];
                let dpre = g * p[wo + r] * (1.0 - hid[r] * hid[r]);
                grad[b + r] += dpre;
                let row = w + r * cols;
                for c in 0..cols {
                    grad[row + c] += dpre * u[c];
                    du[c] += dpre * p[row + c];
                }
            }
            if let Some((dz, from)) = dz {
                for (k, v) in dz.iter_mut().enumerate() {
                    *v += du[from + k];
                }
            }
        };

        for &j in &f.active {
            let (u, hid) = f.slot[j].as_ref().expect("active slot has cache");
            head(u, hid, dlogits[j], l.w1, l.b1, l.w2, l.b2, grad,
                 Some((&mut dz, SAT_FEATURES + CLUSTER_FEATURES)));
        }
        head(&f.open.0, &f.open.1, dlogits[d.k_max], l.w3, l.b3, l.w4, l.b4, grad,
             Some((&mut dz, SAT_FEATURES)));
        head(&f.critic.0, &f.critic.1, dvalue, l.w5, l.b5, l.w6, l.b6, grad, None);

        if f.active.is_empty() {
            return;
        }
        let scale = (a as f64).sqrt();
        let da: Vec<f64> = f.vals.iter().map(|v| dot(&dz, v)).collect();
        let mean = dot(&f.attn, &da);
        let mut dq = vec![0.0; a];
        for (n, &j) in f.active.iter().enumerate() {
            let ds = f.attn[n] * (da[n] - mean);
            let phi = &f.phi[j];
            for r in 0..a {
                dq[r] += ds * f.keys[n][r] / scale;
                let dk = ds * f.q[r] / scale;
                let dv = f.attn[n] * dz[r];
                for c in 0..CLUSTER_FEATURES {
                    grad[l.wk + r * CLUSTER_FEATURES + c] += dk * phi[c];
                    grad[l.wv + r * CLUSTER_FEATURES + c] += dv * phi[c];
                }
            }
        }
        for r in 0..a {
            for c in 0..SAT_FEATURES {
                grad[l.wq + r * SAT_FEATURES + c] += dq[r] * f.x[c];
            }
        }
    }

    /// Masked softmax over the `k_max + 1` actions; zero outside the mask.
    pub fn action_probs(&self, state: &AssignmentState, mask: &[bool]) -> Vec<f64> {
        masked_softmax(&self.forward(state).logits, mask)
    }

    pub fn value(&self, state: &AssignmentState) -> f64 {
        self.forward(state).value
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_bytes(
        &self,
        seed: u64,
        episodes: usize,
        hyper: Option<TrainHyper>,
        reward: Option<RewardWeights>,
    ) -> Vec<u8> {
        let header = PolicyHeader {
            dims: self.dims,
            seed,
            episodes,
            hyper,
            reward,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + json.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, PolicyHeader), PolicyFileError> {
        let mut rest = bytes;
        let mut take = |n: usize| -> Result<&[u8], PolicyFileError> {
            if rest.len() < n {
                return Err(PolicyFileError::Truncated);
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(PolicyFileError::BadMagic);
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(PolicyFileError::Version(version));
        }
        let hlen = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let header: PolicyHeader = serde_json::from_slice(take(hlen)?)?;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let want = Layout::new(&header.dims).len;
        if count != want {
            return Err(PolicyFileError::Shape { got: count, want });
        }
        let raw = take(count.checked_mul(8).ok_or(PolicyFileError::Truncated)?)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((
            Self {
                dims: header.dims,
                params,
            },
            header,
        ))
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub(crate) fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, &ok)| if ok { (l - m).exp() } else { 0.0 })
        .collect();
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        for v in &mut out {
            *v /= s;
        }
    }
    out
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}
