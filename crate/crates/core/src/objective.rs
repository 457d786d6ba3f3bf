//! Batch objective: information-content weighted similarity loss plus a
//! quantization penalty.
//!
//! For a batch of relaxed codes `z` with pairwise cosines `s` and signed
//! targets `w`, the loss is
//!
//! ```text
//! L = sum_ij a_ij (s_ij - w_ij)^2 + lambda * ||z - sign(z)||_F^2
//! ```
//!
//! with `a_ij = -log p_ij` and `p = softmax(s / tau)` taken over all `b^2`
//! entries of the batch, diagonal included. `sign(z)` is held constant when
//! differentiating; `a` is held constant unless [`PicGrad::Through`] is
//! requested.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::RelaxedCodes;
use crate::simgraph::NORM_EPS;

/// How pair weights are derived from the batch similarity distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PicMode {
    /// `a = -log p`
    #[default]
    Pic,
    /// `a = 1`: unweighted squared loss.
    Pic0,
    /// `a = -log(1 - p)`: weights increase with similarity.
    PicMinus,
}

impl PicMode {
    pub const ALL: [PicMode; 3] = [PicMode::Pic0, PicMode::Pic, PicMode::PicMinus];

    pub fn as_str(self) -> &'static str {
        match self {
            PicMode::Pic => "pic",
            PicMode::Pic0 => "pic0",
            PicMode::PicMinus => "picminus",
        }
    }
}

impl fmt::Display for PicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pic" => Ok(PicMode::Pic),
            "pic0" => Ok(PicMode::Pic0),
            "picminus" | "pic_minus" | "pic-" => Ok(PicMode::PicMinus),
            other => Err(Error::InvalidArgument(format!(
                "unknown pic mode {other:?} (expected pic, pic0 or picminus)"
            ))),
        }
    }
}

/// Whether gradients flow through the pair weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PicGrad {
    #[default]
    Frozen,
    Through,
}

impl PicGrad {
    pub fn as_str(self) -> &'static str {
        match self {
            PicGrad::Frozen => "frozen",
            PicGrad::Through => "through",
        }
    }
}

impl FromStr for PicGrad {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(PicGrad::Frozen),
            "through" => Ok(PicGrad::Through),
            other => Err(Error::InvalidArgument(format!(
                "unknown pic_grad {other:?} (expected frozen or through)"
            ))),
        }
    }
}

/// Codes and signed targets for one mini-batch.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub ids: Vec<usize>,
    pub z: RelaxedCodes,
    /// `b x b` row-major entries in `{-1, +1}`.
    pub w: Vec<i8>,
}

impl PairBatch {
    pub fn new(ids: Vec<usize>, z: RelaxedCodes, w: Vec<i8>) -> Result<Self> {
        let b = z.rows();
        if ids.len() != b || w.len() != b * b {
            return Err(Error::Shape(format!(
                "batch of {b} codes with {} ids and {} targets",
                ids.len(),
                w.len()
            )));
        }
        if w.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument("targets must be +1 or -1".into()));
        }
        Ok(Self { ids, z, w })
    }

    pub fn size(&self) -> usize {
        self.z.rows()
    }
}

/// Pair weights with the softmax probabilities they were derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct PicWeights {
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub tau: f64,
    pub mode: PicMode,
}

fn row_norms(z: &RelaxedCodes) -> Vec<f64> {
    (0..z.rows())
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// `b x b` cosine matrix of the code rows. Zero rows have similarity 0 with everything.
pub fn pairwise_cosine(z: &RelaxedCodes) -> Vec<f64> {
    let b = z.rows();
    let norms = row_norms(z);
    let mut s = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let denom = norms[i] * norms[j];
            let v = if denom < NORM_EPS {
                0.0
            } else {
                let dot: f64 = z.row(i).iter().zip(z.row(j)).map(|(x, y)| x * y).sum();
                (dot / denom).clamp(-1.0, 1.0)
            };
            s[i * b + j] = v;
            s[j * b + i] = v;
        }
    }
    s
}

/// Softmax over every entry of `s / tau` (log-sum-exp stabilized) and the
/// resulting pair weights.
pub fn pic_weights(s: &[f64], tau: f64, mode: PicMode) -> Result<PicWeights> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if s.is_empty() {
        return Err(Error::Shape("empty similarity matrix".into()));
    }
    let max = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
    let lse = max + s.iter().map(|&v| (v / tau - max).exp()).sum::<f64>().ln();
    let neg_log_p: Vec<f64> = s.iter().map(|&v| lse - v / tau).collect();
    let p: Vec<f64> = neg_log_p.iter().map(|&a| (-a).exp()).collect();
    let a = match mode {
        PicMode::Pic => neg_log_p,
        PicMode::Pic0 => vec![1.0; s.len()],
        PicMode::PicMinus => p.iter().map(|&pi| -(-pi).ln_1p()).collect(),
    };
    Ok(PicWeights { a, p, tau, mode })
}

/// `sum a_ij (s_ij - w_ij)^2`.
pub fn weighted_pair_loss(s: &[f64], w: &[i8], a: &[f64]) -> f64 {
    s.iter()
        .zip(w)
        .zip(a)
        .map(|((&s, &w), &a)| a * (s - w as f64).powi(2))
        .sum()
}

pub fn loss_l1(pb: &PairBatch, weights: &PicWeights) -> Result<f64> {
    let s = pairwise_cosine(&pb.z);
    if weights.a.len() != s.len() {
        return Err(Error::Shape(format!(
            "{} weights for a batch of {}",
            weights.a.len(),
            pb.size()
        )));
    }
    Ok(weighted_pair_loss(&s, &pb.w, &weights.a))
}

/// `||z - sign(z)||_F^2` with `sign(0) = +1`.
pub fn loss_l2_quant(z: &RelaxedCodes) -> f64 {
    z.as_slice()
        .iter()
        .map(|&v| (v - if v >= 0.0 { 1.0 } else { -1.0 }).powi(2))
        .sum()
}

/// Full evaluation of one batch.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    /// `dL/dz`, `b x l` row-major.
    pub grad: Vec<f64>,
    pub s: Vec<f64>,
    pub weights: PicWeights,
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveConfig {
    pub tau: f64,
    pub lambda: f64,
    pub mode: PicMode,
    pub pic_grad: PicGrad,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            lambda: 10.0,
            mode: PicMode::Pic,
            pic_grad: PicGrad::Frozen,
        }
    }
}

pub fn total_loss_and_grad(pb: &PairBatch, cfg: &ObjectiveConfig) -> Result<LossEval> {
    if cfg.lambda.is_nan() || cfg.lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let b = pb.size();
    let l = pb.z.l();
    let s = pairwise_cosine(&pb.z);
    let weights = pic_weights(&s, cfg.tau, cfg.mode)?;
    let l1 = weighted_pair_loss(&s, &pb.w, &weights.a);
    let l2 = loss_l2_quant(&pb.z);

    // dL/ds_ij
    let mut g: Vec<f64> = s
        .iter()
        .zip(&pb.w)
        .zip(&weights.a)
        .map(|((&s, &w), &a)| 2.0 * a * (s - w as f64))
        .collect();
    if cfg.pic_grad == PicGrad::Through {
        let r: Vec<f64> = s.iter().zip(&pb.w).map(|(&s, &w)| (s - w as f64).powi(2)).collect();
        let p = &weights.p;
        match cfg.mode {
            PicMode::Pic0 => {}
            PicMode::Pic => {
                let total: f64 = r.iter().sum();
                for k in 0..g.len() {
                    g[k] += (p[k] * total - r[k]) / cfg.tau;
                }
            }
            PicMode::PicMinus => {
                let q: Vec<f64> = p.iter().map(|&pi| pi / (1.0 - pi)).collect();
                let total: f64 = r.iter().zip(&q).map(|(r, q)| r * q).sum();
                for k in 0..g.len() {
                    g[k] += (r[k] * q[k] - p[k] * total) / cfg.tau;
                }
            }
        }
    }

    let norms = row_norms(&pb.z);
    let mut grad = vec![0.0; b * l];
    for i in 0..b {
        if norms[i] < NORM_EPS {
            continue;
        }
        let zi = pb.z.row(i);
        let gi = &mut grad[i * l..(i + 1) * l];
        for j in 0..b {
            // s_ii is identically 1, and rows with vanishing norm contribute a constant 0
            if j == i || norms[i] * norms[j] < NORM_EPS {
                continue;
            }
            let coef = g[i * b + j] + g[j * b + i];
            if coef == 0.0 {
                continue;
            }
            let sij = s[i * b + j];
            let zj = pb.z.row(j);
            // d s_ij / d z_i = (z_j / |z_j| - s_ij z_i / |z_i|) / |z_i|
            for k in 0..l {
                gi[k] += coef * (zj[k] / norms[j] - sij * zi[k] / norms[i]) / norms[i];
            }
        }
        for k in 0..l {
            let bk = if zi[k] >= 0.0 { 1.0 } else { -1.0 };
            gi[k] += 2.0 * cfg.lambda * (zi[k] - bk);
        }
    }

    Ok(LossEval {
        loss: l1 + cfg.lambda * l2,
        l1,
        l2,
        grad,
        s,
        weights,
    })
}
