//! CSI-aware decision head: a two-layer MLP over `[h_D; h_T; c]` producing a
//! per-token rejection probability, trained from scratch with weighted BCE.
//!
//! Parameters live in one flat vector laid out as `W1` (row-major,
//! `d_j x d_in`), `b1`, `w2`, `b2`. The same layout is used on disk.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiFeatures, CSI_FEATURE_DIM};
use crate::dataset::{read_f32s, u32_of, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

const MAGIC: &[u8; 4] = b"WSVH";
const VERSION: u32 = 1;

/// Head input `[h_D; h_T; c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec(pub Vec<f64>);

impl FeatureVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Input width for the given hidden dims.
pub fn input_dim(d_h_draft: usize, d_h_target: usize) -> usize {
    d_h_draft + d_h_target + CSI_FEATURE_DIM
}

pub fn assemble(
    h_draft: &[f64],
    h_target: &[f64],
    csi: &CsiFeatures,
    dims: (usize, usize),
) -> Result<FeatureVec> {
    let mut z = Vec::with_capacity(input_dim(dims.0, dims.1));
    assemble_into(&mut z, h_draft, h_target, csi, dims)?;
    Ok(FeatureVec(z))
}

pub(crate) fn assemble_into(
    out: &mut Vec<f64>,
    h_draft: &[f64],
    h_target: &[f64],
    csi: &CsiFeatures,
    (d_draft, d_target): (usize, usize),
) -> Result<()> {
    if h_draft.len() != d_draft {
        return Err(Error::DimensionMismatch {
            what: "drafter hidden",
            expected: d_draft,
            got: h_draft.len(),
        });
    }
    if h_target.len() != d_target {
        return Err(Error::DimensionMismatch {
            what: "target hidden",
            expected: d_target,
            got: h_target.len(),
        });
    }
    out.clear();
    out.extend_from_slice(h_draft);
    out.extend_from_slice(h_target);
    out.extend_from_slice(csi.as_slice());
    Ok(())
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a label in [0,1].
pub fn bce_with_logit(s: f64, y: f64) -> f64 {
    softplus(s) - y * s
}

/// Binary cross-entropy of a probability, evaluated through its logit.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    bce_with_logit(p.ln() - (-p).ln_1p(), y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Rejection decision: reject iff `p >= tau`.
pub fn decide_prob(p: f64, tau: f64) -> Decision {
    if p >= tau {
        Decision::Reject
    } else {
        Decision::Accept
    }
}

/// Logit-scale equivalent of a probability threshold.
pub fn tau_to_logit(tau: f64) -> f64 {
    tau.ln() - (-tau).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub logit: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub d_in: usize,
    pub d_j: usize,
    pub dropout: f64,
    theta: Vec<f64>,
}

fn param_count(d_in: usize, d_j: usize) -> usize {
    d_j * d_in + 2 * d_j + 1
}

impl HeadParams {
    pub fn zeros(d_in: usize, d_j: usize) -> Self {
        Self {
            d_in,
            d_j,
            dropout: 0.0,
            theta: vec![0.0; param_count(d_in, d_j)],
        }
    }

    pub fn from_parts(w1: &[f64], b1: &[f64], w2: &[f64], b2: f64, dropout: f64) -> Result<Self> {
        let d_j = b1.len();
        if w2.len() != d_j || d_j == 0 || !w1.len().is_multiple_of(d_j) {
            return Err(Error::InvalidArgument("inconsistent head parameter shapes".into()));
        }
        let d_in = w1.len() / d_j;
        let mut theta = Vec::with_capacity(param_count(d_in, d_j));
        theta.extend_from_slice(w1);
        theta.extend_from_slice(b1);
        theta.extend_from_slice(w2);
        theta.push(b2);
        let params = Self {
            d_in,
            d_j,
            dropout,
            theta,
        };
        params.validate()?;
        Ok(params)
    }

    /// `W1 ~ U(-1/sqrt(d_in), 1/sqrt(d_in))`, `w2 ~ U(-1/sqrt(d_j), 1/sqrt(d_j))`, zero biases.
    pub fn init(d_in: usize, d_j: usize, dropout: f64, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(d_in, d_j);
        p.dropout = dropout;
        let a1 = 1.0 / (d_in as f64).sqrt();
        let a2 = 1.0 / (d_j as f64).sqrt();
        for w in p.theta[..d_j * d_in].iter_mut() {
            *w = rng.random_range(-a1..a1);
        }
        let w2_at = d_j * d_in + d_j;
        for w in p.theta[w2_at..w2_at + d_j].iter_mut() {
            *w = rng.random_range(-a2..a2);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_j == 0 || self.theta.len() != param_count(self.d_in, self.d_j) {
            return Err(Error::InvalidArgument("inconsistent head dimensions".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameters"));
        }
        Ok(())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[..self.d_j * self.d_in]
    }

    pub fn b1(&self) -> &[f64] {
        let at = self.d_j * self.d_in;
        &self.theta[at..at + self.d_j]
    }

    pub fn w2(&self) -> &[f64] {
        let at = self.d_j * self.d_in + self.d_j;
        &self.theta[at..at + self.d_j]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                what: "head input",
                expected: self.d_in,
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head input"));
        }
        Ok(())
    }

    fn pre_activation(&self, z: &[f64], j: usize) -> f64 {
        let row = &self.theta[j * self.d_in..(j + 1) * self.d_in];
        row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.b1()[j]
    }

    /// Inference pass; dropout is the identity.
    pub fn forward(&self, z: &[f64]) -> Result<HeadOutput> {
        self.check_input(z)?;
        let w2 = self.w2();
        let logit = (0..self.d_j)
            .map(|j| w2[j] * self.pre_activation(z, j).max(0.0))
            .sum::<f64>()
            + self.b2();
        Ok(HeadOutput {
            logit,
            prob: sigmoid(logit),
        })
    }

    /// Training pass with inverted dropout on the hidden layer.
    pub fn forward_train(&self, z: &[f64], rng: &mut SimRng) -> Result<HeadOutput> {
        self.check_input(z)?;
        let mask = dropout_mask(self.d_j, self.dropout, rng);
        let w2 = self.w2();
        let logit = (0..self.d_j)
            .map(|j| w2[j] * mask[j] * self.pre_activation(z, j).max(0.0))
            .sum::<f64>()
            + self.b2();
        Ok(HeadOutput {
            logit,
            prob: sigmoid(logit),
        })
    }

    pub fn decide(&self, z: &[f64], tau: f64) -> Result<Decision> {
        Ok(decide_prob(self.forward(z)?.prob, tau))
    }

    /// Adds the gradient of `weight * bce(s(z), y)` to `grad` and returns the
    /// loss term. `mask` holds per-unit dropout multipliers (already scaled).
    fn accumulate(&self, z: &[f64], y: f64, weight: f64, mask: Option<&[f64]>, grad: &mut [f64], hidden: &mut [f64]) -> f64 {
        let (d_in, d_j) = (self.d_in, self.d_j);
        let w2 = self.w2();
        let mut logit = self.b2();
        for j in 0..d_j {
            let a = self.pre_activation(z, j);
            let m = mask.map_or(1.0, |m| m[j]);
            hidden[j] = a;
            logit += w2[j] * m * a.max(0.0);
        }
        let g = weight * (sigmoid(logit) - y);
        let (g_w1, rest) = grad.split_at_mut(d_j * d_in);
        let (g_b1, rest) = rest.split_at_mut(d_j);
        let (g_w2, g_b2) = rest.split_at_mut(d_j);
        g_b2[0] += g;
        for j in 0..d_j {
            let a = hidden[j];
            let m = mask.map_or(1.0, |m| m[j]);
            g_w2[j] += g * m * a.max(0.0);
            if a > 0.0 && m != 0.0 {
                let da = g * w2[j] * m;
                g_b1[j] += da;
                for (gw, x) in g_w1[j * d_in..(j + 1) * d_in].iter_mut().zip(z) {
                    *gw += da * x;
                }
            }
        }
        weight * bce_with_logit(logit, y)
    }
}

fn dropout_mask(d_j: usize, rate: f64, rng: &mut SimRng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; d_j];
    }
    let keep = 1.0 - rate;
    (0..d_j)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub dropout: f64,
    /// Hidden width `d_J` of the trained head.
    pub hidden: usize,
    /// Positive-class weight; `None` uses `#neg / #pos` of the training set.
    pub pos_weight: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            batch_size: 256,
            weight_decay: 1e-4,
            momentum: 0.9,
            dropout: 0.1,
            hidden: 256,
            pos_weight: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("epochs, batch_size and hidden must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("dropout and momentum must lie in [0,1)".into()));
        }
        if self.weight_decay < 0.0 || self.pos_weight.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::Config("weight_decay must be >= 0 and pos_weight > 0".into()));
        }
        Ok(())
    }
}

/// Full-dataset evaluation after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Class-weighted mean BCE in inference mode, without the decay term.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub params: HeadParams,
    pub pos_weight: f64,
    pub initial_loss: f64,
    pub curve: Vec<EpochStats>,
}

/// Class-weighted mean BCE plus `weight_decay / 2 * (|W1|^2 + |w2|^2)`, and its
/// exact gradient. Dropout is not applied.
pub fn objective_and_gradient(
    params: &HeadParams,
    data: &Dataset,
    pos_weight: f64,
    weight_decay: f64,
) -> Result<(f64, Vec<f64>)> {
    check_dataset_shape(params, data)?;
    let mut grad = vec![0.0; params.theta.len()];
    let mut hidden = vec![0.0; params.d_j];
    let n = data.len() as f64;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let y = data.labels[i];
        let w = class_weight(y, pos_weight) / n;
        loss += params.accumulate(data.row(i), y, w, None, &mut grad, &mut hidden);
    }
    loss += add_decay(params, weight_decay, &mut grad);
    Ok((loss, grad))
}

/// Objective without the gradient, used by finite-difference checks.
pub fn objective(params: &HeadParams, data: &Dataset, pos_weight: f64, weight_decay: f64) -> Result<f64> {
    check_dataset_shape(params, data)?;
    let n = data.len() as f64;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let y = data.labels[i];
        let s = params.forward(data.row(i))?.logit;
        loss += class_weight(y, pos_weight) * bce_with_logit(s, y) / n;
    }
    let decay: f64 = params.w1().iter().chain(params.w2()).map(|w| w * w).sum();
    Ok(loss + 0.5 * weight_decay * decay)
}

fn class_weight(y: f64, pos_weight: f64) -> f64 {
    if y >= 0.5 {
        pos_weight
    } else {
        1.0
    }
}

fn add_decay(params: &HeadParams, weight_decay: f64, grad: &mut [f64]) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    let (d_in, d_j) = (params.d_in, params.d_j);
    let mut penalty = 0.0;
    let w2_at = d_j * d_in + d_j;
    for i in (0..d_j * d_in).chain(w2_at..w2_at + d_j) {
        let w = params.theta[i];
        penalty += w * w;
        grad[i] += weight_decay * w;
    }
    0.5 * weight_decay * penalty
}

fn check_dataset_shape(params: &HeadParams, data: &Dataset) -> Result<()> {
    if data.cols != params.d_in {
        return Err(Error::DimensionMismatch {
            what: "dataset columns",
            expected: params.d_in,
            got: data.cols,
        });
    }
    Ok(())
}

/// Weighted mean BCE and 0.5-threshold accuracy in inference mode.
pub fn evaluate(params: &HeadParams, data: &Dataset, pos_weight: f64) -> Result<(f64, f64)> {
    check_dataset_shape(params, data)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let y = data.labels[i];
        let out = params.forward(data.row(i))?;
        loss += class_weight(y, pos_weight) * bce_with_logit(out.logit, y);
        correct += usize::from((out.prob >= 0.5) == (y >= 0.5));
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch SGD with momentum on class-weighted BCE plus L2 weight decay.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedHead> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if data.labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(Error::Dataset("labels must be 0 or 1".into()));
    }
    let pos = data.positives();
    let neg = data.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Dataset(format!(
            "training set needs both classes (positives={pos}, negatives={neg})"
        )));
    }
    let pos_weight = cfg.pos_weight.unwrap_or(neg as f64 / pos as f64);

    let mut rng = rng::rng_for(cfg.seed, &[rng::stream::TRAIN]);
    let mut params = HeadParams::init(data.cols, cfg.hidden, cfg.dropout, &mut rng);
    let (initial_loss, _) = evaluate(&params, data, pos_weight)?;
    let mut velocity = vec![0.0; params.theta.len()];
    let mut grad = vec![0.0; params.theta.len()];
    let mut hidden = vec![0.0; params.d_j];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let y = data.labels[i];
                let mask = dropout_mask(params.d_j, params.dropout, &mut rng);
                params.accumulate(data.row(i), y, class_weight(y, pos_weight) * scale, Some(&mask), &mut grad, &mut hidden);
            }
            add_decay(&params, cfg.weight_decay, &mut grad);
            for ((theta, v), g) in params.theta.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *theta -= cfg.lr * *v;
            }
        }
        if params.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameters during training"));
        }
        let (loss, accuracy) = evaluate(&params, data, pos_weight)?;
        curve.push(EpochStats {
            epoch: epoch + 1,
            loss,
            accuracy,
        });
    }
    Ok(TrainedHead {
        params,
        pos_weight,
        initial_loss,
        curve,
    })
}

/// Area under the ROC curve (Mann-Whitney statistic, ties counted half).
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] >= 0.5 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|y| **y >= 0.5).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

impl HeadParams {
    /// Writes `WSVH`, version, `d_in`, `d_j` (all `u32` LE) then the flat
    /// parameters as `f32` LE.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        emit(MAGIC)?;
        emit(&VERSION.to_le_bytes())?;
        emit(&u32_of(self.d_in, path)?.to_le_bytes())?;
        emit(&u32_of(self.d_j, path)?.to_le_bytes())?;
        for v in &self.theta {
            emit(&(*v as f32).to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a params file; dropout is not stored there and comes back as 0.
    pub fn read(path: &Path) -> Result<HeadParams> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<HeadParams, String> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err("missing head header".into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        if word(4) != VERSION as usize {
            return Err("unsupported head version".into());
        }
        let (d_in, d_j) = (word(8), word(12));
        let theta = read_f32s(&bytes[16..]).ok_or("truncated parameter payload")?;
        if d_in == 0 || d_j == 0 || theta.len() != param_count(d_in, d_j) {
            return Err("parameter count does not match header".into());
        }
        let params = HeadParams {
            d_in,
            d_j,
            dropout: 0.0,
            theta,
        };
        params.validate().map_err(|e| e.to_string())?;
        Ok(params)
    }

    /// Rounds every parameter through `f32`, matching what `write`/`read` preserve.
    pub fn quantized(&self) -> HeadParams {
        let mut out = self.clone();
        for v in out.theta.iter_mut() {
            *v = f64::from(*v as f32);
        }
        out
    }
}
