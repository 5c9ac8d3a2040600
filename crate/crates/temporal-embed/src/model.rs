//! The frame embedding function: affine map, ReLU, local response
//! normalization, and inverted dropout during training.
//!
//! Parameters live on the f32 grid (every mutation rounds through f32) so
//! checkpoints — which store 32-bit values — round-trip bit-exactly. All
//! arithmetic widens to f64, which is what lets analytic gradients survive
//! tight finite-difference checks.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Local response normalization: `out_i = v_i / (k + alpha * s_i)^beta` where
/// `s_i` sums `v_j^2` over the window of indices within `size/2` of `i`,
/// clipped to the vector bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams { size: 5, k: 1.0, alpha: 1e-4, beta: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn lrn_denominators(v: &[f64], p: &LrnParams) -> Vec<f64> {
    let half = p.size / 2;
    let n = v.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let s: f64 = v[lo..=hi].iter().map(|a| a * a).sum();
            p.k + p.alpha * s
        })
        .collect()
}

/// Forward pass of the normalization alone.
pub fn lrn_forward(v: &[f64], p: &LrnParams) -> Vec<f64> {
    let denom = lrn_denominators(v, p);
    v.iter().zip(&denom).map(|(a, d)| a * d.powf(-p.beta)).collect()
}

fn lrn_backward_with(
    v: &[f64],
    denom: &[f64],
    denom_pow: &[f64],
    d_out: &[f64],
    p: &LrnParams,
) -> Vec<f64> {
    let half = p.size / 2;
    let n = v.len();
    // t_i = d_out_i * v_i * denom_i^(-beta-1); the window relation is
    // symmetric, so the cross-terms for input j sum t over j's own window.
    let t: Vec<f64> = (0..n)
        .map(|i| d_out[i] * v[i] * denom_pow[i] / denom[i])
        .collect();
    let c = 2.0 * p.alpha * p.beta;
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(n - 1);
            let s: f64 = t[lo..=hi].iter().sum();
            d_out[j] * denom_pow[j] - c * v[j] * s
        })
        .collect()
}

/// Gradient of [`lrn_forward`] with respect to its input, including the
/// cross-terms between window neighbors.
pub fn lrn_backward(v: &[f64], d_out: &[f64], p: &LrnParams) -> Vec<f64> {
    let denom = lrn_denominators(v, p);
    let denom_pow: Vec<f64> = denom.iter().map(|d| d.powf(-p.beta)).collect();
    lrn_backward_with(v, &denom, &denom_pow, d_out, p)
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    relu: Vec<f64>,
    denom: Vec<f64>,
    denom_pow: Vec<f64>,
    mask: Option<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Accumulated parameter gradients, row-major like the weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(in_dim: usize, emb_dim: usize) -> Self {
        ParamGrads { dw: vec![0.0; in_dim * emb_dim], db: vec![0.0; emb_dim] }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.dw {
            *a *= s;
        }
        for a in &mut self.db {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dw.iter().chain(&self.db).all(|v| v.is_finite())
    }
}

fn snap(x: f64) -> f64 {
    x as f32 as f64
}

/// The embedding function with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    in_dim: usize,
    emb_dim: usize,
    w: Vec<f64>, // emb_dim x in_dim, row-major, f32-representable values
    b: Vec<f64>, // emb_dim, f32-representable values
    pub lrn: LrnParams,
    pub dropout_rate: f64,
}

impl EmbeddingModel {
    /// Weights drawn from U[-a, a] with `a = sqrt(6 / (in_dim + emb_dim))`,
    /// zero bias, default normalization, dropout rate 0.5.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, emb_dim: usize, rng: &mut R) -> Self {
        assert!(in_dim > 0 && emb_dim > 0);
        let a = (6.0 / (in_dim + emb_dim) as f64).sqrt();
        let w = (0..in_dim * emb_dim).map(|_| snap(rng.gen_range(-a..=a))).collect();
        EmbeddingModel {
            in_dim,
            emb_dim,
            w,
            b: vec![0.0; emb_dim],
            lrn: LrnParams::default(),
            dropout_rate: 0.5,
        }
    }

    /// Canonical fresh model for a seed: initialization draws come from a
    /// dedicated stream, so the same seed yields the same model no matter
    /// what else the caller has sampled.
    pub fn init_seeded(in_dim: usize, emb_dim: usize, seed: u64) -> Self {
        Self::init(in_dim, emb_dim, &mut crate::rng::derive(seed, crate::rng::DOMAIN_INIT))
    }

    /// Builds a model from raw parameter values (not snapped to the f32
    /// grid; checkpoints of such a model quantize on save).
    pub fn from_parts(
        in_dim: usize,
        emb_dim: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        lrn: LrnParams,
        dropout_rate: f64,
    ) -> Result<Self> {
        if in_dim == 0 || emb_dim == 0 {
            return Err(Error::InvalidConfig("model dims must be positive".into()));
        }
        if w.len() != in_dim * emb_dim {
            return Err(Error::DimMismatch { expected: in_dim * emb_dim, got: w.len() });
        }
        if b.len() != emb_dim {
            return Err(Error::DimMismatch { expected: emb_dim, got: b.len() });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        if lrn.size == 0 || lrn.k <= 0.0 || lrn.alpha < 0.0 || lrn.beta <= 0.0 {
            return Err(Error::InvalidConfig("bad normalization parameters".into()));
        }
        let model = EmbeddingModel { in_dim, emb_dim, w, b, lrn, dropout_rate };
        if !model.params_finite() {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn params_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    fn forward_inner(&self, x: &[f32], mask: Option<Vec<f64>>) -> ForwardTrace {
        assert_eq!(x.len(), self.in_dim, "feature dim mismatch");
        let input: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut pre = self.b.clone();
        for i in 0..self.emb_dim {
            let row = &self.w[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(&input) {
                acc += w * v;
            }
            pre[i] += acc;
        }
        let relu: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let denom = lrn_denominators(&relu, &self.lrn);
        let denom_pow: Vec<f64> = denom.iter().map(|d| d.powf(-self.lrn.beta)).collect();
        let normed: Vec<f64> = relu.iter().zip(&denom_pow).map(|(a, d)| a * d).collect();
        let output = match &mask {
            Some(m) => normed.iter().zip(m).map(|(v, s)| v * s).collect(),
            None => normed,
        };
        ForwardTrace { input, pre, relu, denom, denom_pow, mask, output }
    }

    /// Forward pass without dropout.
    pub fn forward_eval(&self, x: &[f32]) -> ForwardTrace {
        self.forward_inner(x, None)
    }

    /// Forward pass with a fresh inverted-dropout mask: each unit is kept
    /// with probability `1 - dropout_rate` and scaled by `1/(1 - rate)`.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &[f32], rng: &mut R) -> ForwardTrace {
        let mask = if self.dropout_rate > 0.0 {
            let keep = 1.0 - self.dropout_rate;
            Some(
                (0..self.emb_dim)
                    .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        } else {
            None
        };
        self.forward_inner(x, mask)
    }

    /// Embeds one frame; `Train` draws a dropout mask from `rng`.
    pub fn embed<R: Rng + ?Sized>(&self, x: &[f32], mode: Mode, rng: &mut R) -> Vec<f64> {
        match mode {
            Mode::Train => self.forward_train(x, rng).output,
            Mode::Eval => self.forward_eval(x).output,
        }
    }

    pub fn embed_eval(&self, x: &[f32]) -> Vec<f64> {
        self.forward_eval(x).output
    }

    /// Accumulates parameter gradients for one forward pass given the
    /// gradient at its output.
    pub fn backward(&self, t: &ForwardTrace, d_out: &[f64], g: &mut ParamGrads) {
        assert_eq!(d_out.len(), self.emb_dim);
        let d_lrn: Vec<f64> = match &t.mask {
            Some(m) => d_out.iter().zip(m).map(|(d, s)| d * s).collect(),
            None => d_out.to_vec(),
        };
        let d_relu = lrn_backward_with(&t.relu, &t.denom, &t.denom_pow, &d_lrn, &self.lrn);
        for i in 0..self.emb_dim {
            // Units that did not fire pass no gradient.
            if t.pre[i] > 0.0 {
                let dp = d_relu[i];
                g.db[i] += dp;
                let row = &mut g.dw[i * self.in_dim..(i + 1) * self.in_dim];
                for (w, x) in row.iter_mut().zip(&t.input) {
                    *w += dp * x;
                }
            }
        }
    }

    /// One vanilla SGD step; results land back on the f32 grid.
    pub fn sgd_step(&mut self, g: &ParamGrads, lr: f64) {
        assert_eq!(g.dw.len(), self.w.len());
        assert_eq!(g.db.len(), self.b.len());
        for (w, d) in self.w.iter_mut().zip(&g.dw) {
            *w = snap(*w - lr * d);
        }
        for (b, d) in self.b.iter_mut().zip(&g.db) {
            *b = snap(*b - lr * d);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    in_dim: usize,
    emb_dim: usize,
    lrn: LrnParams,
    dropout_rate: f64,
    iteration: u64,
    config_digest: String,
}

/// Writes a single-line JSON header followed by W then b as little-endian
/// 32-bit values.
pub fn save_checkpoint(
    model: &EmbeddingModel,
    path: &Path,
    iteration: u64,
    config_digest: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        in_dim: model.in_dim,
        emb_dim: model.emb_dim,
        lrn: model.lrn,
        dropout_rate: model.dropout_rate,
        iteration,
        config_digest: config_digest.to_string(),
    };
    let mut bytes = serde_json::to_string(&header)
        .expect("checkpoint header serialization cannot fail")
        .into_bytes();
    bytes.push(b'\n');
    bytes.reserve((model.w.len() + model.b.len()) * 4);
    for v in model.w.iter().chain(&model.b) {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbeddingModel, u64, String)> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let bad = |reason: &str| Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| bad(&format!("bad header: {e}")))?;
    let body = &bytes[nl + 1..];
    let expected = (header.in_dim * header.emb_dim + header.emb_dim) * 4;
    if body.len() != expected {
        return Err(bad(&format!(
            "parameter payload holds {} bytes, expected {expected}",
            body.len()
        )));
    }
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if !vals.iter().all(|v| v.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    let split = header.in_dim * header.emb_dim;
    let model = EmbeddingModel::from_parts(
        header.in_dim,
        header.emb_dim,
        vals[..split].to_vec(),
        vals[split..].to_vec(),
        header.lrn,
        header.dropout_rate,
    )?;
    Ok((model, header.iteration, header.config_digest))
}
