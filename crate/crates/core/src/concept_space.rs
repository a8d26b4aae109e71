//! The shared sparse concept space: clustered word embeddings acting as a
//! codebook that sentences, videos and frames are projected onto.
//!
//! Sentences are projected by looking up the concept of each of their words
//! and averaging the centers. Dense video and frame vectors are projected by
//! weighting every center with its cosine similarity to the input and
//! dividing by the ℓ₁ norm of those weights. Weights keep their sign.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::embedding_store::Vocabulary;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{
    axpy, checked_norm, dot, l2_normalize_backward, norm1, vec_mat, Matrix, Vector,
};
use crate::synthetic_data::SplitMix64;

pub const CONCEPTS_MAGIC: &[u8; 8] = b"S3MACPT1";
const CONCEPTS_VERSION: u32 = 1;

/// Below this ℓ₁ norm the cosine weights of a projection are rejected.
pub const DEGENERATE_L1: f64 = 1e-8;

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_REL_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptSpace {
    /// `n_c × d` concept centers.
    pub centers: Matrix,
    /// Cluster index of every vocabulary word.
    pub assignment: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansOutcome {
    pub centers: Matrix,
    pub labels: Vec<u32>,
    /// Inertia measured at each assignment step, in order.
    pub inertia_history: Vec<f64>,
}

/// Cosine weights of one dense input against every concept, and the
/// resulting sparse representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseProjection {
    pub rep: Vector,
    pub sim: Vector,
}

/// Per-frame projections: row `i` of `reps`/`sims` belongs to frame `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameProjections {
    pub reps: Matrix,
    pub sims: Matrix,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.row_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut SplitMix64) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = points.row_iter().map(|p| sq_dist(p, points.row(first))).collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;

    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave acc a hair short of target
            pick.unwrap_or_else(|| dist.iter().rposition(|d| *d > 0.0).unwrap())
        } else {
            // every point already coincides with a center
            (0..n).find(|i| !chosen[*i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.row_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, centers.row(c)));
        }
    }
    centers
}

/// Lloyd iterations from a k-means++ start.
///
/// Stops after [`KMEANS_MAX_ITER`] center updates or once the relative
/// inertia improvement drops below [`KMEANS_REL_TOL`]. A cluster left empty
/// by an assignment step is moved onto the point farthest from its own
/// center.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeansOutcome> {
    let n = points.rows();
    if k < 1 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    if !points.is_finite() {
        return Err(Error::NonFiniteValue("k-means input".into()));
    }
    let d = points.cols();
    let mut rng = SplitMix64::new(seed);
    let mut centers = kmeans_plus_plus(points, k, &mut rng);
    let mut labels = vec![0u32; n];
    let mut point_dist = vec![0.0; n];
    let mut history = Vec::new();

    for iter in 0..=KMEANS_MAX_ITER {
        let mut inertia = 0.0;
        for (i, p) in points.row_iter().enumerate() {
            let (j, dist) = nearest(p, &centers);
            labels[i] = j as u32;
            point_dist[i] = dist;
            inertia += dist;
        }
        let converged = match history.last() {
            _ if inertia == 0.0 => true,
            Some(&prev) => (prev - inertia) / prev < KMEANS_REL_TOL,
            None => false,
        };
        history.push(inertia);
        if converged || iter == KMEANS_MAX_ITER {
            break;
        }

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in points.row_iter().enumerate() {
            let j = labels[i] as usize;
            counts[j] += 1;
            axpy(1.0, p, sums.row_mut(j));
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                let row = centers.row_mut(j);
                for (c, s) in row.iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            } else {
                let far = (0..n)
                    .filter(|i| !taken[*i])
                    .max_by(|a, b| point_dist[*a].total_cmp(&point_dist[*b]))
                    .unwrap_or(0);
                taken[far] = true;
                centers.row_mut(j).copy_from_slice(points.row(far));
            }
        }
    }

    Ok(KMeansOutcome {
        centers,
        labels,
        inertia_history: history,
    })
}

/// Clusters the vocabulary embeddings into `n_c` concepts.
pub fn init_concepts(vocab: &Vocabulary, n_c: usize, seed: u64) -> Result<ConceptSpace> {
    if n_c < 1 || n_c > vocab.len() {
        return Err(Error::Config(format!(
            "n_c = {n_c} must be in [1, {}] (vocabulary size)",
            vocab.len()
        )));
    }
    let out = kmeans(&vocab.embeddings, n_c, seed)?;
    Ok(ConceptSpace {
        centers: out.centers,
        assignment: out.labels,
    })
}

/// Unit-normalized centers and their norms, shared by every cosine
/// projection against one state of `C`.
#[derive(Clone, Debug)]
pub(crate) struct ConceptNorms {
    pub units: Matrix,
    pub norms: Vec<f64>,
}

impl ConceptNorms {
    pub fn new(centers: &Matrix) -> Result<Self> {
        let mut units = centers.clone();
        let mut norms = Vec::with_capacity(centers.rows());
        for j in 0..centers.rows() {
            let n = checked_norm(centers.row(j))?;
            units.row_mut(j).iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok(ConceptNorms { units, norms })
    }
}

/// Forward state of one cosine projection, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ProjectionCache {
    pub unit: Vec<f64>,
    pub norm: f64,
    pub l1: f64,
    pub out: SparseProjection,
}

pub(crate) fn project(centers: &Matrix, cn: &ConceptNorms, x: &[f64]) -> Result<ProjectionCache> {
    check_dim("sparse projection input", centers.cols(), x.len())?;
    let norm = checked_norm(x)?;
    let unit: Vec<f64> = x.iter().map(|v| v / norm).collect();
    let sim: Vec<f64> = cn.units.row_iter().map(|c| dot(&unit, c)).collect();
    let l1 = norm1(&sim);
    if l1 < DEGENERATE_L1 {
        return Err(Error::DegenerateSimilarity { norm: l1 });
    }
    let mut rep = vec_mat(&sim, centers);
    rep.iter_mut().for_each(|v| *v /= l1);
    Ok(ProjectionCache {
        unit,
        norm,
        l1,
        out: SparseProjection {
            rep: Vector(rep),
            sim: Vector(sim),
        },
    })
}

/// Accumulates into `grad_centers` and returns the gradient on the dense input.
pub(crate) fn project_backward(
    centers: &Matrix,
    cn: &ConceptNorms,
    cache: &ProjectionCache,
    grad_rep: &[f64],
    grad_sim: Option<&[f64]>,
    grad_centers: &mut Matrix,
) -> Vec<f64> {
    let sim = &cache.out.sim;
    let rep = &cache.out.rep;
    let d_p: Vec<f64> = grad_rep.iter().map(|g| g / cache.l1).collect();
    let d_l1 = -dot(grad_rep, rep) / cache.l1;

    let mut d_unit = vec![0.0; cache.unit.len()];
    for j in 0..centers.rows() {
        let c = centers.row(j);
        let sign = if sim[j] > 0.0 {
            1.0
        } else if sim[j] < 0.0 {
            -1.0
        } else {
            0.0
        };
        let mut d_sim = dot(c, &d_p) + sign * d_l1;
        if let Some(g) = grad_sim {
            d_sim += g[j];
        }
        // direct use of c_j in the weighted sum
        axpy(sim[j], &d_p, grad_centers.row_mut(j));
        if d_sim != 0.0 {
            let c_unit = cn.units.row(j);
            axpy(d_sim, c_unit, &mut d_unit);
            let d_c_unit: Vec<f64> = cache.unit.iter().map(|u| u * d_sim).collect();
            let d_c = l2_normalize_backward(c_unit, cn.norms[j], &d_c_unit);
            axpy(1.0, &d_c, grad_centers.row_mut(j));
        }
    }
    l2_normalize_backward(&cache.unit, cache.norm, &d_unit)
}

impl ConceptSpace {
    pub fn n_concepts(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn n_words(&self) -> usize {
        self.assignment.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.assignment.iter().find(|&&a| a as usize >= self.n_concepts()) {
            return Err(Error::Config(format!(
                "word assigned to cluster {bad} but only {} concepts exist",
                self.n_concepts()
            )));
        }
        if !self.centers.is_finite() {
            return Err(Error::NonFiniteValue("concept centers".into()));
        }
        Ok(())
    }

    fn cluster_of(&self, word_id: usize) -> Result<usize> {
        self.assignment
            .get(word_id)
            .map(|c| *c as usize)
            .ok_or(Error::UnknownWord(word_id))
    }

    /// One-hot indicator of the word's concept.
    pub fn word_to_concept(&self, word_id: usize) -> Result<Vector> {
        let mut v = Vector::zeros(self.n_concepts());
        v[self.cluster_of(word_id)?] = 1.0;
        Ok(v)
    }

    /// How many words of the sentence fall into each concept.
    pub fn sentence_concept_counts(&self, token_ids: &[u32]) -> Result<Vector> {
        if token_ids.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut counts = Vector::zeros(self.n_concepts());
        for &t in token_ids {
            counts[self.cluster_of(t as usize)?] += 1.0;
        }
        Ok(counts)
    }

    /// Mean of the concept centers looked up from the sentence's words.
    pub fn sparse_sentence_rep(&self, token_ids: &[u32]) -> Result<Vector> {
        let counts = self.sentence_concept_counts(token_ids)?;
        let mut rep = vec_mat(&counts, &self.centers);
        let n = token_ids.len() as f64;
        rep.iter_mut().for_each(|v| *v /= n);
        Ok(Vector(rep))
    }

    pub fn sparse_video_rep(&self, video: &[f64]) -> Result<SparseProjection> {
        let cn = ConceptNorms::new(&self.centers)?;
        Ok(project(&self.centers, &cn, video)?.out)
    }

    pub fn sparse_frame_reps(&self, frames: &Matrix) -> Result<FrameProjections> {
        let cn = ConceptNorms::new(&self.centers)?;
        let mut reps = Matrix::zeros(frames.rows(), self.dim());
        let mut sims = Matrix::zeros(frames.rows(), self.n_concepts());
        for (i, f) in frames.row_iter().enumerate() {
            let p = project(&self.centers, &cn, f)?.out;
            reps.row_mut(i).copy_from_slice(&p.rep);
            sims.row_mut(i).copy_from_slice(&p.sim);
        }
        Ok(FrameProjections { reps, sims })
    }

    /// Sentence projection driven by the sentence embedding instead of its words.
    pub fn anchor_free_sentence_rep(&self, sentence: &[f64]) -> Result<Vector> {
        Ok(self.sparse_video_rep(sentence)?.rep)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = ByteWriter::with_magic(CONCEPTS_MAGIC);
        w.u32(CONCEPTS_VERSION);
        w.len_u32(self.n_concepts())?;
        w.len_u32(self.dim())?;
        w.len_u32(self.n_words())?;
        w.f32s(self.centers.data());
        for a in &self.assignment {
            w.u32(*a);
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_magic(bytes, CONCEPTS_MAGIC)?;
        let version = r.u32()?;
        if version != CONCEPTS_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n_c = r.u32()? as usize;
        let d = r.u32()? as usize;
        let n_words = r.u32()? as usize;
        let centers = Matrix::from_vec(n_c, d, r.f32s(n_c * d)?)?;
        let assignment = r.u32s(n_words)?;
        r.finish()?;
        let space = ConceptSpace {
            centers,
            assignment,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cosine, finite_diff_gradient, max_relative_error};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vocab(rows: &[&[f64]]) -> Vocabulary {
        Vocabulary {
            tokens: (0..rows.len()).map(|i| format!("t{i}")).collect(),
            embeddings: Matrix::from_rows(rows).unwrap(),
        }
    }

    fn orthonormal_space() -> ConceptSpace {
        ConceptSpace {
            centers: Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap(),
            assignment: vec![0, 1, 2, 2],
        }
    }

    fn random_space(n_c: usize, d: usize, seed: u64) -> ConceptSpace {
        let mut rng = SplitMix64::new(seed);
        let data = (0..n_c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        ConceptSpace {
            centers: Matrix::from_vec(n_c, d, data).unwrap(),
            assignment: (0..10).map(|i| (i % n_c) as u32).collect(),
        }
    }

    /// Straight scalar loops over the printed formula.
    fn oracle_projection(c: &Matrix, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n_c = c.rows();
        let d = c.cols();
        let mut sim = vec![0.0; n_c];
        for j in 0..n_c {
            let mut xy = 0.0;
            let mut xx = 0.0;
            let mut yy = 0.0;
            for k in 0..d {
                xy += x[k] * c[(j, k)];
                xx += x[k] * x[k];
                yy += c[(j, k)] * c[(j, k)];
            }
            sim[j] = xy / (xx.sqrt() * yy.sqrt());
        }
        let l1: f64 = sim.iter().map(|s| s.abs()).sum();
        let mut rep = vec![0.0; d];
        for k in 0..d {
            for j in 0..n_c {
                rep[k] += sim[j] * c[(j, k)];
            }
            rep[k] /= l1;
        }
        (rep, sim)
    }

    #[test]
    fn corners_one_center_each() {
        let v = vocab(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let out = kmeans(&v.embeddings, 4, 11).unwrap();
        assert_eq!(*out.inertia_history.last().unwrap(), 0.0);
        let mut labels = out.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_cluster_is_mean() {
        let v = vocab(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5], &[-2.0, 4.0], &[0.0, 0.0]]);
        let space = init_concepts(&v, 1, 5).unwrap();
        assert_abs_diff_eq!(space.centers[(0, 0)], 2.5 / 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(space.centers[(0, 1)], 5.5 / 5.0, epsilon = 1e-12);
        assert!(space.assignment.iter().all(|a| *a == 0));
    }

    /// Exhaustive search over all 2-partitions for the minimum inertia.
    fn brute_force_two_means(points: &Matrix) -> (f64, Vec<Vec<f64>>) {
        let n = points.rows();
        let d = points.cols();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << n) - 1 {
            let mut means = vec![vec![0.0; d]; 2];
            let mut counts = [0.0; 2];
            for i in 0..n {
                let g = ((mask >> i) & 1) as usize;
                counts[g] += 1.0;
                for k in 0..d {
                    means[g][k] += points[(i, k)];
                }
            }
            for g in 0..2 {
                means[g].iter_mut().for_each(|m| *m /= counts[g]);
            }
            let mut inertia = 0.0;
            for i in 0..n {
                let g = ((mask >> i) & 1) as usize;
                inertia += sq_dist(points.row(i), &means[g]);
            }
            if inertia < best.0 {
                best = (inertia, means);
            }
        }
        best
    }

    #[test]
    fn two_blobs_recover_partition_oracle() {
        let pts = Matrix::from_rows(&[
            [0.0, 0.1],
            [0.1, -0.1],
            [-0.1, 0.0],
            [5.0, 5.1],
            [5.2, 4.9],
            [4.9, 5.0],
        ])
        .unwrap();
        let (best, means) = brute_force_two_means(&pts);
        for seed in 0..5 {
            let out = kmeans(&pts, 2, seed).unwrap();
            assert_abs_diff_eq!(*out.inertia_history.last().unwrap(), best, epsilon = 1e-12);
            for m in &means {
                let matched = out
                    .centers
                    .row_iter()
                    .any(|c| c.iter().zip(m).all(|(a, b)| (a - b).abs() < 1e-12));
                assert!(matched, "seed {seed}: {m:?} not among centers");
            }
        }
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = SplitMix64::new(99);
        let data = (0..200 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = Matrix::from_vec(200, 3, data).unwrap();
        for k in [2, 7, 25, 200] {
            let out = kmeans(&pts, k, 3).unwrap();
            for w in out.inertia_history.windows(2) {
                assert!(w[1] <= w[0], "k={k}: {} -> {}", w[0], w[1]);
            }
            if k == 200 {
                assert_eq!(*out.inertia_history.last().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn empty_cluster_reseeded() {
        // duplicated points force k-means++ to place a center on a duplicate
        let pts = Matrix::from_rows(&[[0.0], [0.0], [0.0], [1.0]]).unwrap();
        let out = kmeans(&pts, 3, 1).unwrap();
        assert_eq!(out.labels.len(), 4);
        assert!(out.centers.is_finite());
        assert_eq!(*out.inertia_history.last().unwrap(), 0.0);
    }

    #[test]
    fn init_rejects_bad_counts() {
        let v = vocab(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(init_concepts(&v, 3, 0), Err(Error::Config(_))));
        assert!(matches!(init_concepts(&v, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = SplitMix64::new(4);
        let data = (0..50 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = Matrix::from_vec(50, 4, data).unwrap();
        assert_eq!(kmeans(&pts, 6, 9).unwrap(), kmeans(&pts, 6, 9).unwrap());
    }

    #[test]
    fn word_lookup() {
        let space = ConceptSpace {
            centers: Matrix::identity(8),
            assignment: vec![3, 0, 3, 7, 1],
        };
        assert_eq!(space.word_to_concept(0).unwrap().0, {
            let mut e = vec![0.0; 8];
            e[3] = 1.0;
            e
        });
        assert!(matches!(space.word_to_concept(5), Err(Error::UnknownWord(5))));

        let mut total = Vector::zeros(8);
        for w in 0..space.n_words() {
            axpy(1.0, &space.word_to_concept(w).unwrap(), &mut total);
        }
        let mut sizes = vec![0.0; 8];
        for a in &space.assignment {
            sizes[*a as usize] += 1.0;
        }
        assert_eq!(total.0, sizes);
    }

    #[test]
    fn concept_counts() {
        let space = orthonormal_space();
        assert_eq!(space.sentence_concept_counts(&[1]).unwrap().0, vec![0.0, 1.0, 0.0]);
        assert_eq!(space.sentence_concept_counts(&[2, 3]).unwrap().0, vec![0.0, 0.0, 2.0]);
        assert_eq!(
            space.sentence_concept_counts(&[3, 0, 1]).unwrap(),
            space.sentence_concept_counts(&[1, 3, 0]).unwrap()
        );
        assert!(matches!(space.sentence_concept_counts(&[]), Err(Error::EmptySentence)));
        assert!(matches!(space.sentence_concept_counts(&[9]), Err(Error::UnknownWord(9))));
    }

    #[test]
    fn sentence_rep_examples() {
        let space = random_space(4, 3, 1);
        let single = space.sparse_sentence_rep(&[2]).unwrap();
        assert_eq!(&single[..], space.centers.row(2));
        let pair = space.sparse_sentence_rep(&[1, 2]).unwrap();
        for k in 0..3 {
            let expect = (space.centers[(1, k)] + space.centers[(2, k)]) / 2.0;
            assert_abs_diff_eq!(pair[k], expect, epsilon = 1e-15);
        }
        assert!(matches!(space.sparse_sentence_rep(&[]), Err(Error::EmptySentence)));
    }

    #[test]
    fn video_rep_examples() {
        let space = orthonormal_space();
        let p = space.sparse_video_rep(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.sim.0, vec![0.0, 1.0, 0.0]);
        assert_eq!(p.rep.0, vec![0.0, 1.0, 0.0]);

        let space = random_space(3, 4, 2);
        let x = [0.3, -1.2, 0.7, 0.05];
        let p = space.sparse_video_rep(&x).unwrap();
        let doubled: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let q = space.sparse_video_rep(&doubled).unwrap();
        let (rep, sim) = oracle_projection(&space.centers, &x);
        for k in 0..4 {
            assert_abs_diff_eq!(p.rep[k], rep[k], epsilon = 1e-12);
            assert_abs_diff_eq!(p.rep[k], q.rep[k], epsilon = 1e-12);
        }
        for j in 0..3 {
            assert_abs_diff_eq!(p.sim[j], sim[j], epsilon = 1e-12);
            assert_abs_diff_eq!(p.sim[j], cosine(&x, space.centers.row(j)).unwrap(), epsilon = 1e-12);
        }
        assert!(matches!(space.sparse_video_rep(&[0.0; 4]), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn degenerate_similarity_is_an_error() {
        let space = ConceptSpace {
            centers: Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(),
            assignment: vec![0, 1],
        };
        assert!(matches!(
            space.sparse_video_rep(&[0.0, 0.0, 1.0]),
            Err(Error::DegenerateSimilarity { .. })
        ));
        let zero_center = ConceptSpace {
            centers: Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap(),
            assignment: vec![0, 1],
        };
        assert!(matches!(zero_center.sparse_video_rep(&[1.0, 1.0]), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn frame_reps_examples() {
        let space = random_space(3, 4, 3);
        let frames = Matrix::from_rows(&[[0.2, 0.4, -0.1, 0.9], [1.0, -0.5, 0.3, 0.0], [-0.7, 0.1, 0.8, 0.2]])
            .unwrap();
        let out = space.sparse_frame_reps(&frames).unwrap();
        for i in 0..3 {
            let (rep, sim) = oracle_projection(&space.centers, frames.row(i));
            for k in 0..4 {
                assert_abs_diff_eq!(out.reps[(i, k)], rep[k], epsilon = 1e-12);
            }
            for j in 0..3 {
                assert_abs_diff_eq!(out.sims[(i, j)], sim[j], epsilon = 1e-12);
            }
        }

        let single = Matrix::from_rows(&[frames.row(1)]).unwrap();
        let one = space.sparse_frame_reps(&single).unwrap();
        let video = space.sparse_video_rep(frames.row(1)).unwrap();
        assert_eq!(one.reps.row(0), &video.rep[..]);
        assert_eq!(one.sims.row(0), &video.sim[..]);

        let permuted = Matrix::from_rows(&[frames.row(2), frames.row(0), frames.row(1)]).unwrap();
        let p = space.sparse_frame_reps(&permuted).unwrap();
        assert_eq!(p.reps.row(0), out.reps.row(2));
        assert_eq!(p.reps.row(1), out.reps.row(0));
        assert_eq!(p.sims.row(2), out.sims.row(1));
    }

    #[test]
    fn anchor_free_examples() {
        let space = orthonormal_space();
        assert_eq!(space.anchor_free_sentence_rep(&[0.0, 0.0, 3.0]).unwrap().0, vec![0.0, 0.0, 1.0]);
        let space = random_space(3, 4, 8);
        let s = [0.5, 0.5, -0.25, 1.0];
        let a = space.anchor_free_sentence_rep(&s).unwrap();
        let b = space.anchor_free_sentence_rep(&s.map(|v| v * 7.5)).unwrap();
        let (rep, _) = oracle_projection(&space.centers, &s);
        for k in 0..4 {
            assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-12);
            assert_abs_diff_eq!(a[k], rep[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let space = random_space(5, 4, 21);
        let x = vec![0.4, -0.3, 0.9, 0.2];
        let g_rep = [0.7, -0.2, 0.1, 0.5];
        let g_sim = [0.3, -0.6, 0.2, 0.05, -0.1];
        let objective = |c: &Matrix, x: &[f64]| {
            let cn = ConceptNorms::new(c).unwrap();
            let p = project(c, &cn, x).unwrap().out;
            dot(&p.rep, &g_rep) + dot(&p.sim, &g_sim)
        };
        let cn = ConceptNorms::new(&space.centers).unwrap();
        let cache = project(&space.centers, &cn, &x).unwrap();
        let mut grad_c = Matrix::zeros(5, 4);
        let grad_x = project_backward(&space.centers, &cn, &cache, &g_rep, Some(&g_sim), &mut grad_c);

        let fd_c = finite_diff_gradient(|c| objective(c, &x), &space.centers, 1e-5).unwrap();
        assert!(max_relative_error(&grad_c, &fd_c, 1e-6) < 1e-6);
        let xm = Matrix::from_vec(1, 4, x.clone()).unwrap();
        let fd_x = finite_diff_gradient(|m| objective(&space.centers, m.row(0)), &xm, 1e-5).unwrap();
        let gx = Matrix::from_vec(1, 4, grad_x).unwrap();
        assert!(max_relative_error(&gx, &fd_x, 1e-6) < 1e-6);
    }

    #[test]
    fn persistence_roundtrip() {
        let space = ConceptSpace {
            centers: Matrix::from_rows(&[[1.0, -0.5], [0.25, 2.0], [0.0, 1.0]]).unwrap(),
            assignment: vec![2, 0, 1, 1],
        };
        let bytes = space.encode().unwrap();
        assert_eq!(&bytes[..8], CONCEPTS_MAGIC);
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 16 + 6 * 4 + 4 * 4);
        assert_eq!(ConceptSpace::decode(&bytes).unwrap(), space);
        assert!(matches!(ConceptSpace::decode(&bytes[..30]), Err(Error::TruncatedFile)));

        let bad = ConceptSpace {
            assignment: vec![5],
            ..space
        };
        assert!(bad.encode().is_err());
    }

    proptest! {
        #[test]
        fn sentence_rep_inside_center_envelope(tokens in prop::collection::vec(0u32..10, 1..8), seed in 0u64..50) {
            let space = random_space(4, 3, seed);
            let rep = space.sparse_sentence_rep(&tokens).unwrap();
            let counts = space.sentence_concept_counts(&tokens).unwrap();
            prop_assert_eq!(counts.iter().sum::<f64>(), tokens.len() as f64);
            for k in 0..3 {
                let used = tokens.iter().map(|t| space.centers[(space.assignment[*t as usize] as usize, k)]);
                let lo = used.clone().fold(f64::INFINITY, f64::min);
                let hi = used.fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(rep[k] >= lo - 1e-12 && rep[k] <= hi + 1e-12);
            }
        }

        #[test]
        fn projections_scale_invariant(x in prop::collection::vec(-1.0f64..1.0, 4), s in 0.01f64..100.0) {
            prop_assume!(crate::numerics::norm2(&x) > 1e-3);
            let space = random_space(3, 4, 77);
            let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
            let a = space.sparse_video_rep(&x).unwrap();
            let b = space.sparse_video_rep(&scaled).unwrap();
            for k in 0..4 {
                prop_assert!((a.rep[k] - b.rep[k]).abs() < 1e-10);
            }
        }
    }
}
