//! Gradients of the full objective, decoupled-weight-decay Adam with a
//! warmup + cosine schedule, the mini-batch loop, and `S3MACKP1` checkpoints.
//!
//! Gradients are accumulated in reverse through the fixed graph
//! `frames → temporal encoder → normalization / concept projection → heads →
//! InfoNCE` plus the two concept-space penalties, using per-op adjoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{ByteReader, ByteWriter};
use crate::concept_space::{project_backward, ConceptSpace};
use crate::embedding_store::{validate, EmbeddingItem, EmbeddingSet};
use crate::error::{Error, Result};
use crate::losses::{
    alignment_loss, distance_grad, info_nce_backward, info_nce_symmetric, sparse_similarity_loss,
    total_loss, AlignTerm, LossWeights, SparseTerm,
};
use crate::model::{ModelParams, SentenceMode, TextForward, VideoForward};
use crate::numerics::{add_outer, axpy, l2_normalize_backward, mat_vec, vec_mat, Matrix};
use crate::similarity::{pair_score, FrameHead, HeadMask, SimilarityHeads};
use crate::synthetic_data::SplitMix64;
use crate::temporal_encoder::{attention_backward, AttentionParams, TemporalMode, TemporalParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub heads: HeadMask,
    pub temporal: TemporalMode,
    pub sentence_mode: SentenceMode,
    /// Concept count used when the concept space is built for this run.
    pub n_c: usize,
    pub train_concepts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            base_lr: 1e-3,
            weight_decay: 0.2,
            warmup_steps: 20,
            seed: 0,
            weights: LossWeights::default(),
            heads: HeadMask::ALL,
            temporal: TemporalMode::SelfAttention,
            sentence_mode: SentenceMode::Anchor,
            n_c: 1024,
            train_concepts: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.n_c == 0 {
            return bad("n_c must be positive".into());
        }
        if self.heads.count() == 0 {
            return Err(Error::NoHeadsEnabled);
        }
        self.weights.validate()
    }

    pub fn steps_per_epoch(&self, n_items: usize) -> usize {
        n_items.div_ceil(self.batch_size)
    }
}

/// Linear warmup to `base_lr`, then half-cosine decay reaching zero at the
/// last step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig, total_steps: usize) -> Self {
        LrSchedule {
            base_lr: cfg.base_lr,
            warmup_steps: cfg.warmup_steps,
            total_steps,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let last = self.total_steps.saturating_sub(1);
        let span = last.saturating_sub(self.warmup_steps);
        let progress = if span == 0 {
            if step >= last {
                1.0
            } else {
                0.0
            }
        } else {
            ((step - self.warmup_steps) as f64 / span as f64).min(1.0)
        };
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sim: f64,
    pub l_align: f64,
    pub l_sparse: f64,
    pub total: f64,
}

/// One entry per model parameter, same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub concepts: Matrix,
    pub a_vs: Matrix,
    pub a_fs: Matrix,
    pub a_vcsc: Matrix,
    pub a_fcsc: Matrix,
    pub temporal: Option<AttentionParams>,
    pub log_scale: f64,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Gradients {
            concepts: z(&p.concepts.centers),
            a_vs: z(&p.heads.a_vs),
            a_fs: z(&p.heads.a_fs),
            a_vcsc: z(&p.heads.a_vcsc),
            a_fcsc: z(&p.heads.a_fcsc),
            temporal: match &p.temporal {
                TemporalParams::MeanPool => None,
                TemporalParams::SelfAttention(a) => Some(a.zeros_like()),
            },
            log_scale: 0.0,
        }
    }

    /// Flat views in checkpoint block order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.concepts.data(),
            self.a_vs.data(),
            self.a_fs.data(),
            self.a_vcsc.data(),
            self.a_fcsc.data(),
        ];
        if let Some(t) = &self.temporal {
            out.extend(t.blocks().iter().map(|m| m.data()));
        }
        out.push(std::slice::from_ref(&self.log_scale));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// A named, mutable view of one parameter block.
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub values: &'a mut [f64],
    /// whether decoupled weight decay applies
    pub decay: bool,
}

/// Parameter blocks in checkpoint order: concepts, four head matrices,
/// attention weights (if any), logit scale.
pub fn param_blocks(p: &mut ModelParams) -> Vec<ParamBlock<'_>> {
    let mut out = vec![
        ParamBlock {
            name: "concepts",
            values: p.concepts.centers.data_mut(),
            decay: false,
        },
        ParamBlock {
            name: "a_vs",
            values: p.heads.a_vs.data_mut(),
            decay: true,
        },
        ParamBlock {
            name: "a_fs",
            values: p.heads.a_fs.data_mut(),
            decay: true,
        },
        ParamBlock {
            name: "a_vcsc",
            values: p.heads.a_vcsc.data_mut(),
            decay: true,
        },
        ParamBlock {
            name: "a_fcsc",
            values: p.heads.a_fcsc.data_mut(),
            decay: true,
        },
    ];
    if let TemporalParams::SelfAttention(a) = &mut p.temporal {
        let names = ["w_q", "w_k", "w_v", "w_o", "pos"];
        for (name, m) in names.into_iter().zip(a.blocks_mut()) {
            out.push(ParamBlock {
                name,
                values: m.data_mut(),
                decay: name != "pos",
            });
        }
    }
    out.push(ParamBlock {
        name: "log_scale",
        values: std::slice::from_mut(&mut p.logit_scale.log_scale),
        decay: false,
    });
    out
}

struct Forward {
    videos: Vec<VideoForward>,
    texts: Vec<TextForward>,
    scores: Matrix,
    loss: LossBreakdown,
}

fn forward(params: &ModelParams, batch: &[&EmbeddingItem], weights: LossWeights) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if params.heads.enabled.count() == 0 {
        return Err(Error::NoHeadsEnabled);
    }
    let cn = params.concept_norms()?;
    let videos: Vec<VideoForward> = batch
        .iter()
        .map(|it| params.forward_video(&cn, &it.frame_embeddings))
        .collect::<Result<_>>()?;
    let texts: Vec<TextForward> = batch
        .iter()
        .map(|it| params.forward_text(&cn, &it.caption_token_ids, &it.sentence_embedding))
        .collect::<Result<_>>()?;

    let n = batch.len();
    let mut scores = Matrix::zeros(n, n);
    for (i, v) in videos.iter().enumerate() {
        for (j, t) in texts.iter().enumerate() {
            scores[(i, j)] = pair_score(&params.heads, &v.enc, &t.enc);
        }
    }

    let l_sim = info_nce_symmetric(&scores, params.logit_scale)?;
    let align: Vec<AlignTerm> = videos
        .iter()
        .zip(&texts)
        .map(|(v, t)| AlignTerm {
            video: &v.enc.sparse_video.rep,
            frames: &v.enc.sparse_frames.reps,
            sentence: &t.enc.sparse,
        })
        .collect();
    let l_align = alignment_loss(&align)?;
    let sparse: Vec<SparseTerm> = videos
        .iter()
        .zip(&texts)
        .map(|(v, t)| SparseTerm {
            video_sim: &v.enc.sparse_video.sim,
            frame_sims: &v.enc.sparse_frames.sims,
            target: &t.enc.target,
        })
        .collect();
    let l_sparse = sparse_similarity_loss(&sparse)?;
    let total = total_loss(l_sim, l_align, l_sparse, weights)?;
    Ok(Forward {
        videos,
        texts,
        scores,
        loss: LossBreakdown {
            l_sim,
            l_align,
            l_sparse,
            total,
        },
    })
}

/// Objective value on one batch; item `k` is matched with item `k`.
pub fn batch_loss(params: &ModelParams, batch: &[&EmbeddingItem], weights: LossWeights) -> Result<LossBreakdown> {
    Ok(forward(params, batch, weights)?.loss)
}

/// Loss and its gradient with respect to every parameter block. The concept
/// gradient is zeroed when `train_concepts` is false.
pub fn compute_gradients(
    params: &ModelParams,
    batch: &[&EmbeddingItem],
    weights: LossWeights,
    train_concepts: bool,
) -> Result<(LossBreakdown, Gradients)> {
    let fwd = forward(params, batch, weights)?;
    let heads: &SimilarityHeads = &params.heads;
    let mask = heads.enabled;
    let n = batch.len();
    let d = params.dim();
    let n_frame = params.n_frame();
    let n_c = params.concepts.n_concepts();
    let mut grads = Gradients::zeros_like(params);

    let (g_scores, g_log_scale) = info_nce_backward(&fwd.scores, params.logit_scale);
    grads.log_scale = g_log_scale;

    let mut g_dense_video = vec![vec![0.0; d]; n];
    let mut g_sparse_video = vec![vec![0.0; d]; n];
    let mut g_sparse_frames = vec![Matrix::zeros(n_frame, d); n];
    let mut g_video_sim = vec![vec![0.0; n_c]; n];
    let mut g_frame_sims = vec![Matrix::zeros(n_frame, n_c); n];
    let mut g_sparse_text = vec![vec![0.0; d]; n];

    let inv_heads = 1.0 / mask.count() as f64;
    for (i, v) in fwd.videos.iter().enumerate() {
        let v = &v.enc;
        for (j, t) in fwd.texts.iter().enumerate() {
            let t = &t.enc;
            let g = g_scores[(i, j)] * inv_heads;
            if mask.video_sentence {
                add_outer(&mut grads.a_vs, g, &v.dense_video, &t.dense);
                axpy(g, &mat_vec(&heads.a_vs, &t.dense), &mut g_dense_video[i]);
            }
            if mask.frame_sentence {
                // frame and sentence features are fixed inputs; only A learns
                FrameHead::forward(&v.dense_frames, &t.dense, &heads.a_fs).backward(&heads.a_fs, g, &mut grads.a_fs);
            }
            if mask.sparse_video_sentence {
                let rv = &v.sparse_video.rep;
                add_outer(&mut grads.a_vcsc, g, rv, &t.sparse);
                axpy(g, &mat_vec(&heads.a_vcsc, &t.sparse), &mut g_sparse_video[i]);
                axpy(g, &vec_mat(rv, &heads.a_vcsc), &mut g_sparse_text[j]);
            }
            if mask.sparse_frame_sentence {
                let rf = &v.sparse_frames.reps;
                let head = FrameHead::forward(rf, &t.sparse, &heads.a_fcsc);
                let g_q = head.backward(&heads.a_fcsc, g, &mut grads.a_fcsc);
                add_outer(&mut g_sparse_frames[i], 1.0, &g_q, &t.sparse);
                axpy(1.0, &vec_mat(&g_q, rf), &mut g_sparse_text[j]);
            }
        }
    }

    let w_align = weights.alpha / n as f64;
    let w_sparse = weights.beta / n as f64;
    let inv_frames = 1.0 / n_frame as f64;
    for i in 0..n {
        let v = &fwd.videos[i].enc;
        let t = &fwd.texts[i].enc;
        if w_align != 0.0 {
            let a = distance_grad(&v.sparse_video.rep, &t.sparse, w_align);
            axpy(1.0, &a, &mut g_sparse_video[i]);
            axpy(-1.0, &a, &mut g_sparse_text[i]);
            let b = distance_grad(&v.sparse_frames.reps.col_mean(), &t.sparse, w_align);
            for k in 0..n_frame {
                axpy(inv_frames, &b, g_sparse_frames[i].row_mut(k));
            }
            axpy(-1.0, &b, &mut g_sparse_text[i]);
        }
        if w_sparse != 0.0 {
            let a = distance_grad(&v.sparse_video.sim, &t.target, w_sparse);
            axpy(1.0, &a, &mut g_video_sim[i]);
            let b = distance_grad(&v.sparse_frames.sims.col_mean(), &t.target, w_sparse);
            for k in 0..n_frame {
                axpy(inv_frames, &b, g_frame_sims[i].row_mut(k));
            }
        }
    }

    let cn = params.concept_norms()?;
    let centers = &params.concepts.centers;
    for (i, vf) in fwd.videos.iter().enumerate() {
        let mut g_raw = project_backward(
            centers,
            &cn,
            &vf.video_proj,
            &g_sparse_video[i],
            Some(&g_video_sim[i]),
            &mut grads.concepts,
        );
        let through_norm = l2_normalize_backward(&vf.enc.dense_video, vf.raw_norm, &g_dense_video[i]);
        axpy(1.0, &through_norm, &mut g_raw);
        if let (TemporalParams::SelfAttention(p), Some(cache), Some(g_att)) =
            (&params.temporal, &vf.temporal, grads.temporal.as_mut())
        {
            attention_backward(p, cache, &g_raw, g_att);
        }
        for (k, cache) in vf.frame_projs.iter().enumerate() {
            project_backward(
                centers,
                &cn,
                cache,
                g_sparse_frames[i].row(k),
                Some(g_frame_sims[i].row(k)),
                &mut grads.concepts,
            );
        }
    }
    for (j, tf) in fwd.texts.iter().enumerate() {
        match (params.sentence_mode, &tf.anchor_free) {
            (SentenceMode::AnchorFree, Some(cache)) => {
                project_backward(centers, &cn, cache, &g_sparse_text[j], None, &mut grads.concepts);
            }
            _ => {
                let inv = 1.0 / tf.n_tokens as f64;
                let weights: Vec<f64> = tf.counts.iter().map(|c| c * inv).collect();
                add_outer(&mut grads.concepts, 1.0, &weights, &g_sparse_text[j]);
            }
        }
    }

    if !train_concepts {
        grads.concepts.scale(0.0);
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteValue("gradient".into()));
    }
    Ok((fwd.loss, grads))
}

/// First and second moment estimates per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &mut ModelParams) -> Self {
        let sizes: Vec<usize> = param_blocks(params).iter().map(|b| b.values.len()).collect();
        OptimizerState {
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            step: 0,
        }
    }
}

/// One AdamW update on a flat slice.
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for k in 0..theta.len() {
        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        theta[k] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * theta[k]);
    }
}

/// Applies one AdamW step to every block. Concepts are left untouched when
/// `train_concepts` is false; weight decay only applies to blocks flagged for it.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
    train_concepts: bool,
) -> Result<()> {
    let g_blocks = grads.blocks();
    let mut blocks = param_blocks(params);
    if blocks.len() != g_blocks.len() || blocks.len() != state.m.len() {
        return Err(Error::DimMismatch {
            context: "optimizer_step: parameter blocks",
            expected: blocks.len(),
            got: g_blocks.len(),
        });
    }
    state.step += 1;
    for (k, block) in blocks.iter_mut().enumerate() {
        if block.values.len() != g_blocks[k].len() {
            return Err(Error::DimMismatch {
                context: "optimizer_step: block length",
                expected: block.values.len(),
                got: g_blocks[k].len(),
            });
        }
        if block.name == "concepts" && !train_concepts {
            continue;
        }
        let wd = if block.decay { weight_decay } else { 0.0 };
        adamw_update(block.values, g_blocks[k], &mut state.m[k], &mut state.v[k], state.step, lr, wd);
    }
    params.logit_scale.clamp();
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub l_sim: f64,
    pub l_align: f64,
    pub l_sparse: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

/// Builds a fresh model around `space` and trains it on `dataset`.
pub fn train(dataset: &EmbeddingSet, space: &ConceptSpace, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = ModelParams::new(
        space.clone(),
        dataset.n_frame,
        cfg.heads,
        cfg.temporal,
        cfg.sentence_mode,
        cfg.seed,
    );
    train_from(params, dataset, cfg)
}

pub fn train_from(mut params: ModelParams, dataset: &EmbeddingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let violations = validate(dataset, Some(params.concepts.n_words()));
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if dataset.d != params.dim() || dataset.n_frame != params.n_frame() {
        return Err(Error::Config(format!(
            "dataset is {}x{} (n_frame x d) but the model expects {}x{}",
            dataset.n_frame,
            dataset.d,
            params.n_frame(),
            params.dim()
        )));
    }
    if cfg.batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {}",
            cfg.batch_size,
            dataset.len()
        )));
    }

    let mut trace = Vec::new();
    let steps_per_epoch = cfg.steps_per_epoch(dataset.len());
    let schedule = LrSchedule::new(cfg, cfg.epochs * steps_per_epoch);
    let mut state = OptimizerState::new(&mut params);
    let mut rng = SplitMix64::new(cfg.seed.wrapping_add(0x5EED));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EmbeddingItem> = chunk.iter().map(|&k| &dataset.items[k]).collect();
            let lr = schedule.lr_at(step);
            let (loss, grads) = compute_gradients(&params, &batch, cfg.weights, cfg.train_concepts)
                .map_err(|e| match e {
                    Error::NonFiniteValue(m) => Error::NonFiniteValue(format!("step {step}: {m}")),
                    other => other,
                })?;
            optimizer_step(&mut params, &grads, &mut state, lr, cfg.weight_decay, cfg.train_concepts)?;
            if !params.is_finite() {
                return Err(Error::NonFiniteValue(format!("step {step}: parameters")));
            }
            trace.push(TraceRow {
                step,
                l_sim: loss.l_sim,
                l_align: loss.l_align,
                l_sparse: loss.l_sparse,
                total: loss.total,
                lr,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { params, trace })
}

pub fn write_trace_csv(trace: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,l_sim,l_align,l_sparse,total,lr")?;
    for r in trace {
        writeln!(
            out,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            r.step, r.l_sim, r.l_align, r.l_sparse, r.total, r.lr
        )?;
    }
    Ok(())
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"S3MACKP1";
const CHECKPOINT_VERSION: u32 = 1;

fn mode_code(m: TemporalMode) -> u32 {
    match m {
        TemporalMode::MeanPool => 0,
        TemporalMode::SelfAttention => 1,
    }
}

fn sentence_code(m: SentenceMode) -> u32 {
    match m {
        SentenceMode::Anchor => 0,
        SentenceMode::AnchorFree => 1,
    }
}

fn mask_bits(m: HeadMask) -> u32 {
    (m.video_sentence as u32)
        | (m.frame_sentence as u32) << 1
        | (m.sparse_video_sentence as u32) << 2
        | (m.sparse_frame_sentence as u32) << 3
}

/// Serializes the model and the config it was trained with.
///
/// ```text
/// S3MACKP1 | u32 version | u32 d | u32 n_frame | u32 n_c | u32 n_words
///   | u32 temporal_mode | u32 sentence_mode | u32 head_bits | u32 n_blocks
///   | block*: (u32 name_len, name, u32 rows, u32 cols, rows*cols f64)
///   | n_words u32 concept assignment | u32 config_len, JSON config
/// ```
pub fn encode_checkpoint(params: &ModelParams, cfg: &TrainConfig) -> Result<Vec<u8>> {
    let mut w = ByteWriter::with_magic(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.len_u32(params.dim())?;
    w.len_u32(params.n_frame())?;
    w.len_u32(params.concepts.n_concepts())?;
    w.len_u32(params.concepts.n_words())?;
    w.u32(mode_code(params.temporal.mode()));
    w.u32(sentence_code(params.sentence_mode));
    w.u32(mask_bits(params.heads.enabled));

    let mut shapes: Vec<(usize, usize)> = vec![
        params.concepts.centers.shape(),
        params.heads.a_vs.shape(),
        params.heads.a_fs.shape(),
        params.heads.a_vcsc.shape(),
        params.heads.a_fcsc.shape(),
    ];
    if let TemporalParams::SelfAttention(a) = &params.temporal {
        shapes.extend(a.blocks().iter().map(|m| m.shape()));
    }
    shapes.push((1, 1));
    let mut owned = params.clone();
    let blocks = param_blocks(&mut owned);
    w.len_u32(blocks.len())?;
    for (b, (r, c)) in blocks.iter().zip(shapes) {
        w.str(b.name);
        w.len_u32(r)?;
        w.len_u32(c)?;
        w.f64s(b.values);
    }
    for a in &params.concepts.assignment {
        w.u32(*a);
    }
    let json = serde_json::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    w.str(&json);
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, TrainConfig)> {
    let mut r = ByteReader::with_magic(bytes, CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d = r.u32()? as usize;
    let n_frame = r.u32()? as usize;
    let n_c = r.u32()? as usize;
    let n_words = r.u32()? as usize;
    let mode = match r.u32()? {
        0 => TemporalMode::MeanPool,
        1 => TemporalMode::SelfAttention,
        other => return Err(Error::Config(format!("unknown temporal mode code {other}"))),
    };
    let sentence_mode = match r.u32()? {
        0 => SentenceMode::Anchor,
        1 => SentenceMode::AnchorFree,
        other => return Err(Error::Config(format!("unknown sentence mode code {other}"))),
    };
    let bits = r.u32()?;
    let mask = HeadMask::new(bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0);

    let mut params = ModelParams::new(
        ConceptSpace {
            centers: Matrix::zeros(n_c, d),
            assignment: vec![0; n_words],
        },
        n_frame,
        mask,
        mode,
        sentence_mode,
        0,
    );
    let n_blocks = r.u32()? as usize;
    {
        let mut blocks = param_blocks(&mut params);
        if n_blocks != blocks.len() {
            return Err(Error::Config(format!(
                "checkpoint has {n_blocks} parameter blocks, expected {}",
                blocks.len()
            )));
        }
        for b in blocks.iter_mut() {
            let name = r.str()?;
            if name != b.name {
                return Err(Error::Config(format!("expected block {:?}, found {name:?}", b.name)));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if rows * cols != b.values.len() {
                return Err(Error::DimMismatch {
                    context: "checkpoint block size",
                    expected: b.values.len(),
                    got: rows * cols,
                });
            }
            let vals = r.f64s(rows * cols)?;
            b.values.copy_from_slice(&vals);
        }
    }
    params.concepts.assignment = r.u32s(n_words)?;
    let json = r.str()?;
    r.finish()?;
    params.concepts.validate()?;
    let cfg: TrainConfig =
        serde_json::from_str(&json).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    Ok((params, cfg))
}

pub fn write_checkpoint(params: &ModelParams, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(params, cfg)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, TrainConfig)> {
    decode_checkpoint(&fs::read(path)?)
}
