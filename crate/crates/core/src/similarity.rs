//! The four video-text similarity heads, their average, batched scoring and
//! the dual-softmax inference normalization.
//!
//! Coarse heads score a single video vector against the sentence through a
//! learnable `d × d` bilinear form. Fine heads weight frames by the softmax of
//! their dot products with the sentence, mix the per-frame scores through a
//! learnable `n_frame × n_frame` matrix, and sum. Each pair of heads runs once
//! on the dense encoder features and once on the sparse concept projections.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{ModelParams, TextEncoding, VideoEncoding};
use crate::numerics::{
    add_outer, col_softmax, dot, mat_vec, row_softmax, softmax, vec_mat, Matrix,
};

/// Which heads contribute to the overall similarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadMask {
    pub video_sentence: bool,
    pub frame_sentence: bool,
    pub sparse_video_sentence: bool,
    pub sparse_frame_sentence: bool,
}

impl Default for HeadMask {
    fn default() -> Self {
        HeadMask::ALL
    }
}

impl HeadMask {
    pub const ALL: HeadMask = HeadMask::new(true, true, true, true);
    pub const DENSE: HeadMask = HeadMask::new(true, true, false, false);

    /// Arguments in the order dense video, dense frame, sparse video, sparse frame.
    pub const fn new(vs: bool, fs: bool, vcsc: bool, fcsc: bool) -> Self {
        HeadMask {
            video_sentence: vs,
            frame_sentence: fs,
            sparse_video_sentence: vcsc,
            sparse_frame_sentence: fcsc,
        }
    }

    pub fn count(&self) -> usize {
        [
            self.video_sentence,
            self.frame_sentence,
            self.sparse_video_sentence,
            self.sparse_frame_sentence,
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }

    /// Short label such as `dV+dF+sV`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.video_sentence, "dV"),
            (self.frame_sentence, "dF"),
            (self.sparse_video_sentence, "sV"),
            (self.sparse_frame_sentence, "sF"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, l)| *l)
        .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    /// The ten head combinations of the similarity ablation, in table order.
    pub fn ablation_grid() -> [HeadMask; 10] {
        [
            HeadMask::new(true, false, false, false),
            HeadMask::new(true, false, true, false),
            HeadMask::new(false, true, false, false),
            HeadMask::new(false, true, false, true),
            HeadMask::new(true, false, false, true),
            HeadMask::new(false, true, true, false),
            HeadMask::new(true, true, false, false),
            HeadMask::new(true, true, true, false),
            HeadMask::new(true, true, false, true),
            HeadMask::ALL,
        ]
    }
}

impl std::str::FromStr for HeadMask {
    type Err = Error;

    /// Accepts `all`, `dense`, or labels joined by `+` as produced by [`HeadMask::label`].
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => return Ok(HeadMask::ALL),
            "dense" => return Ok(HeadMask::DENSE),
            _ => {}
        }
        let mut m = HeadMask::new(false, false, false, false);
        for part in s.split('+') {
            let slot = match part.trim() {
                "dV" => &mut m.video_sentence,
                "dF" => &mut m.frame_sentence,
                "sV" => &mut m.sparse_video_sentence,
                "sF" => &mut m.sparse_frame_sentence,
                other => return Err(Error::Config(format!("unknown head {other:?} (expected dV, dF, sV, sF)"))),
            };
            *slot = true;
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityHeads {
    /// `d × d`
    pub a_vs: Matrix,
    /// `n_frame × n_frame`
    pub a_fs: Matrix,
    /// `d × d`
    pub a_vcsc: Matrix,
    /// `n_frame × n_frame`
    pub a_fcsc: Matrix,
    pub enabled: HeadMask,
}

impl SimilarityHeads {
    /// All four matrices start at the identity.
    pub fn new(d: usize, n_frame: usize, enabled: HeadMask) -> Self {
        SimilarityHeads {
            a_vs: Matrix::identity(d),
            a_fs: Matrix::identity(n_frame),
            a_vcsc: Matrix::identity(d),
            a_fcsc: Matrix::identity(n_frame),
            enabled,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBundle {
    pub s_vs: Option<f64>,
    pub s_fs: Option<f64>,
    pub s_vcsc: Option<f64>,
    pub s_fcsc: Option<f64>,
    pub overall: f64,
}

/// The three representations a head pair consumes for one video-text pair.
#[derive(Clone, Copy, Debug)]
pub struct HeadInputs<'a> {
    pub video: &'a [f64],
    /// `n_frame × d`
    pub frames: &'a Matrix,
    pub sentence: &'a [f64],
}

/// `v · A · sᵀ`
pub fn sim_video_sentence(video: &[f64], sentence: &[f64], a: &Matrix) -> Result<f64> {
    check_dim("sim_video_sentence: A rows", a.rows(), video.len())?;
    check_dim("sim_video_sentence: A cols", a.cols(), sentence.len())?;
    Ok(dot(&vec_mat(video, a), sentence))
}

/// `softmax(s·Fᵀ) · A · (F·sᵀ)`
pub fn sim_frame_sentence(frames: &Matrix, sentence: &[f64], a: &Matrix) -> Result<f64> {
    check_dim("sim_frame_sentence: d", frames.cols(), sentence.len())?;
    check_dim("sim_frame_sentence: A rows", a.rows(), frames.rows())?;
    check_dim("sim_frame_sentence: A cols", a.cols(), frames.rows())?;
    Ok(FrameHead::forward(frames, sentence, a).value)
}

/// Forward values of the fine-grained head kept for its backward pass.
pub(crate) struct FrameHead {
    /// per-frame dot products `F·sᵀ`
    pub scores: Vec<f64>,
    /// softmax of `scores`
    pub weights: Vec<f64>,
    /// `A · scores`
    pub mixed: Vec<f64>,
    pub value: f64,
}

impl FrameHead {
    pub fn forward(frames: &Matrix, sentence: &[f64], a: &Matrix) -> Self {
        let scores = mat_vec(frames, sentence);
        let weights = softmax(&scores);
        let mixed = mat_vec(a, &scores);
        let value = dot(&weights, &mixed);
        FrameHead {
            scores,
            weights,
            mixed,
            value,
        }
    }

    /// Upstream gradient `g` on the head value. Accumulates `∂/∂A` and
    /// returns `∂/∂scores`.
    pub fn backward(&self, a: &Matrix, g: f64, grad_a: &mut Matrix) -> Vec<f64> {
        add_outer(grad_a, g, &self.weights, &self.scores);
        let through_a = vec_mat(&self.weights, a);
        self.weights
            .iter()
            .zip(&self.mixed)
            .zip(&through_a)
            .map(|((w, m), t)| g * (t + w * (m - self.value)))
            .collect()
    }
}

fn head_values(heads: &SimilarityHeads, dense: HeadInputs, sparse: HeadInputs) -> [Option<f64>; 4] {
    let m = heads.enabled;
    [
        m.video_sentence
            .then(|| dot(&vec_mat(dense.video, &heads.a_vs), dense.sentence)),
        m.frame_sentence
            .then(|| FrameHead::forward(dense.frames, dense.sentence, &heads.a_fs).value),
        m.sparse_video_sentence
            .then(|| dot(&vec_mat(sparse.video, &heads.a_vcsc), sparse.sentence)),
        m.sparse_frame_sentence
            .then(|| FrameHead::forward(sparse.frames, sparse.sentence, &heads.a_fcsc).value),
    ]
}

fn check_inputs(x: HeadInputs, a_video: &Matrix, a_frame: &Matrix) -> Result<()> {
    check_dim("overall_similarity: video dim", a_video.rows(), x.video.len())?;
    check_dim("overall_similarity: sentence dim", a_video.cols(), x.sentence.len())?;
    check_dim("overall_similarity: frame dim", x.sentence.len(), x.frames.cols())?;
    check_dim("overall_similarity: n_frame", a_frame.rows(), x.frames.rows())?;
    Ok(())
}

/// Scores one pair with every enabled head and averages them.
pub fn overall_similarity(
    heads: &SimilarityHeads,
    dense: HeadInputs,
    sparse: HeadInputs,
) -> Result<SimilarityBundle> {
    let n = heads.enabled.count();
    if n == 0 {
        return Err(Error::NoHeadsEnabled);
    }
    check_inputs(dense, &heads.a_vs, &heads.a_fs)?;
    check_inputs(sparse, &heads.a_vcsc, &heads.a_fcsc)?;
    let [s_vs, s_fs, s_vcsc, s_fcsc] = head_values(heads, dense, sparse);
    let overall = [s_vs, s_fs, s_vcsc, s_fcsc].iter().flatten().sum::<f64>() / n as f64;
    Ok(SimilarityBundle {
        s_vs,
        s_fs,
        s_vcsc,
        s_fcsc,
        overall,
    })
}

/// Overall similarity of pre-encoded representations.
pub(crate) fn pair_score(heads: &SimilarityHeads, v: &VideoEncoding, t: &TextEncoding) -> f64 {
    let vals = head_values(heads, v.dense_inputs(t), v.sparse_inputs(t));
    vals.iter().flatten().sum::<f64>() / heads.enabled.count() as f64
}

/// Entry `(i, j)` scores video `i` against text `j`.
pub fn score_matrix(heads: &SimilarityHeads, videos: &[VideoEncoding], texts: &[TextEncoding]) -> Result<Matrix> {
    if heads.enabled.count() == 0 {
        return Err(Error::NoHeadsEnabled);
    }
    let mut s = Matrix::zeros(videos.len(), texts.len());
    for (i, v) in videos.iter().enumerate() {
        for (j, t) in texts.iter().enumerate() {
            s[(i, j)] = pair_score(heads, v, t);
        }
    }
    Ok(s)
}

/// Encodes every item through `model` and scores all video-text pairs.
pub fn batch_similarity_matrix(
    model: &ModelParams,
    videos: &[&Matrix],
    texts: &[(&[u32], &[f64])],
) -> Result<Matrix> {
    let v: Vec<VideoEncoding> = videos
        .iter()
        .map(|f| model.encode_video(f))
        .collect::<Result<_>>()?;
    let t: Vec<TextEncoding> = texts
        .iter()
        .map(|(tokens, emb)| model.encode_text(tokens, emb))
        .collect::<Result<_>>()?;
    score_matrix(&model.heads, &v, &t)
}

/// Dual-softmax renormalization: `softmax_row(τS) ⊙ softmax_col(τS)`.
pub fn inverted_softmax(s: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("inverted softmax temperature must be positive, got {tau}")));
    }
    if !s.is_finite() {
        return Err(Error::NonFiniteValue("similarity matrix".into()));
    }
    let mut scaled = s.clone();
    scaled.scale(tau);
    let rows = row_softmax(&scaled);
    let cols = col_softmax(&scaled);
    let data = rows.data().iter().zip(cols.data()).map(|(a, b)| a * b).collect();
    Matrix::from_vec(s.rows(), s.cols(), data)
}
