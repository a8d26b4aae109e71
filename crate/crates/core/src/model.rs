//! Learnable state and the forward encoding of videos and texts into the
//! dense and sparse representations the heads consume.

use serde::{Deserialize, Serialize};

use crate::concept_space::{project, ConceptNorms, ConceptSpace, FrameProjections, ProjectionCache, SparseProjection};
use crate::embedding_store::EmbeddingSet;
use crate::error::{check_dim, Error, Result};
use crate::losses::LogitScale;
use crate::numerics::{l2_normalize, norm2, vec_mat, Matrix, Vector};
use crate::similarity::{score_matrix, HeadInputs, HeadMask, SimilarityHeads};
use crate::temporal_encoder::{AttentionCache, TemporalMode, TemporalParams};

/// How the sparse sentence representation is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceMode {
    /// Average of the concepts looked up from the caption's words.
    #[default]
    Anchor,
    /// Cosine-weighted concept mix of the sentence embedding.
    AnchorFree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub concepts: ConceptSpace,
    pub heads: SimilarityHeads,
    pub temporal: TemporalParams,
    pub logit_scale: LogitScale,
    pub sentence_mode: SentenceMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEncoding {
    /// unit-normalized temporal encoder output
    pub dense_video: Vector,
    /// unit-normalized frame rows
    pub dense_frames: Matrix,
    pub sparse_video: SparseProjection,
    pub sparse_frames: FrameProjections,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoding {
    /// unit-normalized sentence embedding
    pub dense: Vector,
    pub sparse: Vector,
    /// concept counts of the caption divided by its length
    pub target: Vector,
}

impl VideoEncoding {
    pub fn dense_inputs<'a>(&'a self, t: &'a TextEncoding) -> HeadInputs<'a> {
        HeadInputs {
            video: &self.dense_video,
            frames: &self.dense_frames,
            sentence: &t.dense,
        }
    }

    pub fn sparse_inputs<'a>(&'a self, t: &'a TextEncoding) -> HeadInputs<'a> {
        HeadInputs {
            video: &self.sparse_video.rep,
            frames: &self.sparse_frames.reps,
            sentence: &t.sparse,
        }
    }
}

/// Video forward pass with everything the backward pass needs.
pub(crate) struct VideoForward {
    pub enc: VideoEncoding,
    pub raw_norm: f64,
    pub temporal: Option<AttentionCache>,
    pub video_proj: ProjectionCache,
    pub frame_projs: Vec<ProjectionCache>,
}

pub(crate) struct TextForward {
    pub enc: TextEncoding,
    pub counts: Vector,
    pub n_tokens: usize,
    pub anchor_free: Option<ProjectionCache>,
}

fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let unit = l2_normalize(m.row(i))?;
        out.row_mut(i).copy_from_slice(&unit);
    }
    Ok(out)
}

impl ModelParams {
    /// Fresh model around an initialized concept space: identity head
    /// matrices, CLIP-like logit scale, and a temporal encoder in `mode`.
    pub fn new(
        concepts: ConceptSpace,
        n_frame: usize,
        heads: HeadMask,
        mode: TemporalMode,
        sentence_mode: SentenceMode,
        seed: u64,
    ) -> Self {
        let d = concepts.dim();
        ModelParams {
            concepts,
            heads: SimilarityHeads::new(d, n_frame, heads),
            temporal: TemporalParams::new(mode, d, n_frame, seed),
            logit_scale: LogitScale::clip_init(),
            sentence_mode,
        }
    }

    pub fn dim(&self) -> usize {
        self.concepts.dim()
    }

    pub fn n_frame(&self) -> usize {
        self.heads.a_fs.rows()
    }

    pub(crate) fn concept_norms(&self) -> Result<ConceptNorms> {
        ConceptNorms::new(&self.concepts.centers)
    }

    pub(crate) fn forward_video(&self, cn: &ConceptNorms, frames: &Matrix) -> Result<VideoForward> {
        check_dim("encode_video: d", self.dim(), frames.cols())?;
        check_dim("encode_video: n_frame", self.n_frame(), frames.rows())?;
        let (raw, temporal) = self.temporal.forward(frames)?;
        let raw_norm = norm2(&raw);
        let dense_video = l2_normalize(&raw)?;
        let dense_frames = normalize_rows(frames)?;
        let centers = &self.concepts.centers;
        let video_proj = project(centers, cn, &raw)?;
        let mut frame_projs = Vec::with_capacity(frames.rows());
        let mut reps = Matrix::zeros(frames.rows(), self.dim());
        let mut sims = Matrix::zeros(frames.rows(), self.concepts.n_concepts());
        for (i, f) in frames.row_iter().enumerate() {
            let p = project(centers, cn, f)?;
            reps.row_mut(i).copy_from_slice(&p.out.rep);
            sims.row_mut(i).copy_from_slice(&p.out.sim);
            frame_projs.push(p);
        }
        Ok(VideoForward {
            enc: VideoEncoding {
                dense_video,
                dense_frames,
                sparse_video: video_proj.out.clone(),
                sparse_frames: FrameProjections { reps, sims },
            },
            raw_norm,
            temporal,
            video_proj,
            frame_projs,
        })
    }

    pub(crate) fn forward_text(&self, cn: &ConceptNorms, tokens: &[u32], embedding: &[f64]) -> Result<TextForward> {
        check_dim("encode_text: d", self.dim(), embedding.len())?;
        let counts = self.concepts.sentence_concept_counts(tokens)?;
        let n = tokens.len() as f64;
        let target = Vector(counts.iter().map(|c| c / n).collect());
        let (sparse, anchor_free) = match self.sentence_mode {
            SentenceMode::Anchor => (Vector(vec_mat(&target, &self.concepts.centers)), None),
            SentenceMode::AnchorFree => {
                let p = project(&self.concepts.centers, cn, embedding)?;
                (p.out.rep.clone(), Some(p))
            }
        };
        Ok(TextForward {
            enc: TextEncoding {
                dense: l2_normalize(embedding)?,
                sparse,
                target,
            },
            counts,
            n_tokens: tokens.len(),
            anchor_free,
        })
    }

    pub fn encode_video(&self, frames: &Matrix) -> Result<VideoEncoding> {
        Ok(self.forward_video(&self.concept_norms()?, frames)?.enc)
    }

    pub fn encode_text(&self, tokens: &[u32], embedding: &[f64]) -> Result<TextEncoding> {
        Ok(self.forward_text(&self.concept_norms()?, tokens, embedding)?.enc)
    }

    /// Encodes every item of `set` once and returns the `N × N` score
    /// matrix, videos along rows.
    pub fn score_set(&self, set: &EmbeddingSet) -> Result<Matrix> {
        if set.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let cn = self.concept_norms()?;
        let videos: Vec<VideoEncoding> = set
            .items
            .iter()
            .map(|it| Ok(self.forward_video(&cn, &it.frame_embeddings)?.enc))
            .collect::<Result<_>>()?;
        let texts: Vec<TextEncoding> = set
            .items
            .iter()
            .map(|it| Ok(self.forward_text(&cn, &it.caption_token_ids, &it.sentence_embedding)?.enc))
            .collect::<Result<_>>()?;
        score_matrix(&self.heads, &videos, &texts)
    }

    pub fn is_finite(&self) -> bool {
        let temporal_ok = match &self.temporal {
            TemporalParams::MeanPool => true,
            TemporalParams::SelfAttention(p) => p.blocks().iter().all(|m| m.is_finite()),
        };
        self.concepts.centers.is_finite()
            && self.heads.a_vs.is_finite()
            && self.heads.a_fs.is_finite()
            && self.heads.a_vcsc.is_finite()
            && self.heads.a_fcsc.is_finite()
            && temporal_ok
            && self.logit_scale.log_scale.is_finite()
    }
}
