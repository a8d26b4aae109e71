//! Frame-to-video aggregation: plain mean pooling, or one residual layer of
//! single-head self-attention with learned positions followed by mean pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, row_softmax, Matrix, Vector};
use crate::synthetic_data::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    MeanPool,
    SelfAttention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    /// `n_frame × d` learned position embeddings.
    pub pos: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TemporalParams {
    MeanPool,
    SelfAttention(AttentionParams),
}

impl AttentionParams {
    /// Projections are uniform with variance `1/d`; the output projection
    /// and positions start at zero so the layer initially reduces to mean
    /// pooling.
    pub fn init(d: usize, n_frame: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let scale = (3.0 / d as f64).sqrt();
        let mut random = || {
            let data = (0..d * d).map(|_| rng.random_range(-scale..scale)).collect();
            Matrix::from_vec(d, d, data).unwrap()
        };
        AttentionParams {
            w_q: random(),
            w_k: random(),
            w_v: random(),
            w_o: Matrix::zeros(d, d),
            pos: Matrix::zeros(n_frame, d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        AttentionParams {
            w_q: z(&self.w_q),
            w_k: z(&self.w_k),
            w_v: z(&self.w_v),
            w_o: z(&self.w_o),
            pos: z(&self.pos),
        }
    }

    pub fn blocks(&self) -> [&Matrix; 5] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.pos]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.pos,
        ]
    }
}

/// Intermediate values of one attention forward pass.
#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    h: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Matrix,
    att: Matrix,
}

impl TemporalParams {
    pub fn new(mode: TemporalMode, d: usize, n_frame: usize, seed: u64) -> Self {
        match mode {
            TemporalMode::MeanPool => TemporalParams::MeanPool,
            TemporalMode::SelfAttention => {
                TemporalParams::SelfAttention(AttentionParams::init(d, n_frame, seed))
            }
        }
    }

    pub fn mode(&self) -> TemporalMode {
        match self {
            TemporalParams::MeanPool => TemporalMode::MeanPool,
            TemporalParams::SelfAttention(_) => TemporalMode::SelfAttention,
        }
    }

    pub fn aggregate_frames(&self, frames: &Matrix) -> Result<Vector> {
        Ok(self.forward(frames)?.0)
    }

    pub(crate) fn forward(&self, frames: &Matrix) -> Result<(Vector, Option<AttentionCache>)> {
        if frames.rows() == 0 {
            return Err(Error::DimMismatch {
                context: "aggregate_frames: at least one frame",
                expected: 1,
                got: 0,
            });
        }
        match self {
            TemporalParams::MeanPool => Ok((frames.col_mean(), None)),
            TemporalParams::SelfAttention(p) => {
                let d = p.w_q.rows();
                check_dim("aggregate_frames: d", d, frames.cols())?;
                check_dim("aggregate_frames: n_frame", p.pos.rows(), frames.rows())?;
                let mut h = frames.clone();
                h.add_scaled(1.0, &p.pos);
                let q = matmul(&h, &p.w_q);
                let k = matmul(&h, &p.w_k);
                let v = matmul(&h, &p.w_v);
                let mut scores = matmul_nt(&q, &k);
                scores.scale(1.0 / (d as f64).sqrt());
                let probs = row_softmax(&scores);
                let att = matmul(&probs, &v);
                let mut out = matmul(&att, &p.w_o);
                out.add_scaled(1.0, &h);
                let pooled = out.col_mean();
                Ok((
                    pooled,
                    Some(AttentionCache {
                        h,
                        q,
                        k,
                        v,
                        probs,
                        att,
                    }),
                ))
            }
        }
    }
}

/// Gradients of the attention parameters given the upstream gradient on the
/// pooled video vector.
pub(crate) fn attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    grad_video: &[f64],
    grads: &mut AttentionParams,
) {
    let n = cache.h.rows();
    let d = p.w_q.rows();
    let inv_n = 1.0 / n as f64;
    let mut g_out = Matrix::zeros(n, d);
    for i in 0..n {
        for (g, up) in g_out.row_mut(i).iter_mut().zip(grad_video) {
            *g = up * inv_n;
        }
    }

    // out = h + att·W_o
    grads.w_o.add_scaled(1.0, &matmul_tn(&cache.att, &g_out));
    let g_att = matmul_nt(&g_out, &p.w_o);
    let mut g_h = g_out;

    // att = probs·V
    let g_probs = matmul_nt(&g_att, &cache.v);
    let g_v = matmul_tn(&cache.probs, &g_att);

    let mut g_scores = Matrix::zeros(n, n);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    for i in 0..n {
        let pr = cache.probs.row(i);
        let gp = g_probs.row(i);
        let inner: f64 = pr.iter().zip(gp).map(|(a, b)| a * b).sum();
        for j in 0..n {
            g_scores[(i, j)] = pr[j] * (gp[j] - inner) * inv_sqrt_d;
        }
    }
    let g_q = matmul(&g_scores, &cache.k);
    let g_k = matmul_tn(&g_scores, &cache.q);

    grads.w_q.add_scaled(1.0, &matmul_tn(&cache.h, &g_q));
    grads.w_k.add_scaled(1.0, &matmul_tn(&cache.h, &g_k));
    grads.w_v.add_scaled(1.0, &matmul_tn(&cache.h, &g_v));
    g_h.add_scaled(1.0, &matmul_nt(&g_q, &p.w_q));
    g_h.add_scaled(1.0, &matmul_nt(&g_k, &p.w_k));
    g_h.add_scaled(1.0, &matmul_nt(&g_v, &p.w_v));
    grads.pos.add_scaled(1.0, &g_h);
}
