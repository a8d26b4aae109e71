//! Training objective: symmetric InfoNCE over the batch similarity matrix,
//! plus ℓ₂ alignment and sparse-similarity penalties in the concept space.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{col_softmax, log_sum_exp, norm2, row_softmax, Matrix};

/// Below this norm the unsquared ℓ₂ penalty has zero gradient.
pub(crate) const NORM_GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.02,
            beta: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Trainable temperature, stored as `log(scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitScale {
    pub log_scale: f64,
}

impl LogitScale {
    pub const MAX_SCALE: f64 = 100.0;

    /// `exp(log_scale) = 100`, the value a pretrained CLIP checkpoint carries.
    pub fn clip_init() -> Self {
        LogitScale {
            log_scale: Self::MAX_SCALE.ln(),
        }
    }

    pub fn from_scale(scale: f64) -> Self {
        LogitScale {
            log_scale: scale.ln(),
        }
    }

    /// `exp(log_scale)`, capped so rounding in `exp(ln 100)` cannot exceed the bound.
    pub fn scale(&self) -> f64 {
        self.log_scale.exp().min(Self::MAX_SCALE)
    }

    pub fn clamp(&mut self) {
        self.log_scale = self.log_scale.min(Self::MAX_SCALE.ln());
    }
}

impl Default for LogitScale {
    fn default() -> Self {
        LogitScale::clip_init()
    }
}

/// Video-to-text plus text-to-video cross entropy with matched pairs on the
/// diagonal of `s`.
pub fn info_nce_symmetric(s: &Matrix, scale: LogitScale) -> Result<f64> {
    check_dim("info_nce_symmetric: square", s.rows(), s.cols())?;
    if s.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = s.rows();
    let mut logits = s.clone();
    logits.scale(scale.scale());
    let cols = logits.transpose();
    let mut v2t = 0.0;
    let mut t2v = 0.0;
    for i in 0..n {
        v2t += log_sum_exp(logits.row(i)) - logits[(i, i)];
        t2v += log_sum_exp(cols.row(i)) - logits[(i, i)];
    }
    Ok((v2t + t2v) / n as f64)
}

/// Gradients of [`info_nce_symmetric`] with respect to `s` and `log_scale`.
pub(crate) fn info_nce_backward(s: &Matrix, scale: LogitScale) -> (Matrix, f64) {
    let n = s.rows();
    let k = scale.scale();
    let mut logits = s.clone();
    logits.scale(k);
    let rows = row_softmax(&logits);
    let cols = col_softmax(&logits);
    let mut g_logits = Matrix::zeros(n, n);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 2.0 } else { 0.0 };
            g_logits[(i, j)] = (rows[(i, j)] + cols[(i, j)] - delta) * inv_n;
        }
    }
    let g_log_scale: f64 = g_logits
        .data()
        .iter()
        .zip(logits.data())
        .map(|(g, l)| g * l)
        .sum();
    let mut g_s = g_logits;
    g_s.scale(k);
    (g_s, g_log_scale)
}

/// Sparse representations of one pair fed to the alignment loss.
#[derive(Clone, Copy, Debug)]
pub struct AlignTerm<'a> {
    pub video: &'a [f64],
    /// `n_frame × d`
    pub frames: &'a Matrix,
    pub sentence: &'a [f64],
}

/// Concept similarities of one pair fed to the sparse similarity loss.
#[derive(Clone, Copy, Debug)]
pub struct SparseTerm<'a> {
    pub video_sim: &'a [f64],
    /// `n_frame × n_c`
    pub frame_sims: &'a Matrix,
    /// per-concept word counts of the caption divided by its length
    pub target: &'a [f64],
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff)
}

/// Mean over pairs of `‖video − sentence‖ + ‖mean_frames − sentence‖`.
fn two_distance_loss<'a>(terms: impl ExactSizeIterator<Item = (&'a [f64], &'a Matrix, &'a [f64])>) -> Result<f64> {
    let n = terms.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (single, many, anchor) in terms {
        check_dim("loss: vector dim", anchor.len(), single.len())?;
        check_dim("loss: frame dim", anchor.len(), many.cols())?;
        total += distance(single, anchor) + distance(&many.col_mean(), anchor);
    }
    Ok(total / n as f64)
}

pub fn alignment_loss(batch: &[AlignTerm]) -> Result<f64> {
    two_distance_loss(batch.iter().map(|t| (t.video, t.frames, t.sentence)))
}

pub fn sparse_similarity_loss(batch: &[SparseTerm]) -> Result<f64> {
    two_distance_loss(batch.iter().map(|t| (t.video_sim, t.frame_sims, t.target)))
}

pub fn total_loss(l_sim: f64, l_align: f64, l_sparse: f64, w: LossWeights) -> Result<f64> {
    let total = l_sim + w.alpha * l_align + w.beta * l_sparse;
    if !total.is_finite() || !l_sim.is_finite() || !l_align.is_finite() || !l_sparse.is_finite() {
        return Err(Error::NonFiniteValue(format!(
            "loss components ({l_sim}, {l_align}, {l_sparse})"
        )));
    }
    Ok(total)
}

/// Gradient of `‖a − b‖` with respect to `a`, scaled by `weight`.
pub(crate) fn distance_grad(a: &[f64], b: &[f64], weight: f64) -> Vec<f64> {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = norm2(&diff);
    if n <= NORM_GRAD_FLOOR {
        return vec![0.0; diff.len()];
    }
    diff.iter().map(|d| weight * d / n).collect()
}
