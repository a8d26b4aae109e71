//! Retrieval metrics over a square score matrix (videos along rows, texts
//! along columns, ground truth on the diagonal).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Matrix;
use crate::similarity::inverted_softmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// each caption queries all videos (columns of the matrix)
    TextToVideo,
    /// each video queries all captions (rows)
    VideoToText,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::TextToVideo => "t2v",
            Direction::VideoToText => "v2t",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub n: usize,
    /// percentages in [0, 100]
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub median_rank: f64,
    pub mean_rank: f64,
}

/// 1-based rank of `scores[gt]`; every other candidate scoring at least as
/// high is counted ahead of it.
pub fn rank_of_ground_truth(scores: &[f64], gt: usize) -> Result<usize> {
    if gt >= scores.len() {
        return Err(Error::IndexOutOfRange {
            index: gt,
            len: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue(format!("score {bad}")));
    }
    let target = scores[gt];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, s)| j != gt && *s >= target)
        .count();
    Ok(1 + ahead)
}

fn check_square(s: &Matrix) -> Result<()> {
    if s.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if s.rows() != s.cols() {
        return Err(Error::DimMismatch {
            context: "retrieval: square score matrix",
            expected: s.rows(),
            got: s.cols(),
        });
    }
    Ok(())
}

/// Ground-truth rank of every query.
pub fn ranks(s: &Matrix, direction: Direction) -> Result<Vec<usize>> {
    check_square(s)?;
    let n = s.rows();
    (0..n)
        .map(|q| match direction {
            Direction::VideoToText => rank_of_ground_truth(s.row(q), q),
            Direction::TextToVideo => {
                let col: Vec<f64> = (0..n).map(|i| s[(i, q)]).collect();
                rank_of_ground_truth(&col, q)
            }
        })
        .collect()
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

pub fn retrieval_report(s: &Matrix, direction: Direction) -> Result<RetrievalReport> {
    let mut r = ranks(s, direction)?;
    let n = r.len();
    let recall = |k: usize| 100.0 * r.iter().filter(|&&x| x <= k).count() as f64 / n as f64;
    let (r1, r5, r10) = (recall(1), recall(5), recall(10));
    let mean_rank = r.iter().sum::<usize>() as f64 / n as f64;
    r.sort_unstable();
    Ok(RetrievalReport {
        direction,
        n,
        r1,
        r5,
        r10,
        median_rank: median(&r),
        mean_rank,
    })
}

/// Both directions from one matrix, text-to-video first.
pub fn retrieval_reports(s: &Matrix) -> Result<[RetrievalReport; 2]> {
    Ok([
        retrieval_report(s, Direction::TextToVideo)?,
        retrieval_report(s, Direction::VideoToText)?,
    ])
}

/// Scores `set` with `params`, optionally rescored by inverted softmax at
/// temperature `tau`, and reports both directions.
pub fn evaluate(params: &ModelParams, set: &EmbeddingSet, inverted_tau: Option<f64>) -> Result<[RetrievalReport; 2]> {
    let mut s = params.score_set(set)?;
    if let Some(tau) = inverted_tau {
        s = inverted_softmax(&s, tau)?;
    }
    retrieval_reports(&s)
}

pub fn write_reports_json(reports: &[RetrievalReport], out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, reports).map_err(|e| Error::Io(e.into()))
}

pub fn write_reports_csv(reports: &[RetrievalReport], mut out: impl Write) -> Result<()> {
    writeln!(out, "direction,n,r1,r5,r10,median_rank,mean_rank")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.direction.label(),
            r.n,
            r.r1,
            r.r5,
            r.r10,
            r.median_rank,
            r.mean_rank
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic_data::SplitMix64;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(n: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Rank by sorting candidates by descending score, placing the ground
    /// truth last among equals.
    fn sort_rank(scores: &[f64], gt: usize) -> usize {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then_with(|| (a == gt).cmp(&(b == gt)))
        });
        1 + idx.iter().position(|&j| j == gt).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        for r in retrieval_reports(&Matrix::identity(5)).unwrap() {
            assert_eq!((r.r1, r.r5, r.r10), (100.0, 100.0, 100.0));
            assert_eq!((r.median_rank, r.mean_rank), (1.0, 1.0));
            assert_eq!(r.n, 5);
        }
    }

    #[test]
    fn ties_are_pessimistic() {
        assert_eq!(rank_of_ground_truth(&[0.5, 0.5, 0.5], 0).unwrap(), 3);
        assert_eq!(rank_of_ground_truth(&[0.1, 0.9, 0.9, 0.2], 1).unwrap(), 2);
        let r = retrieval_report(&Matrix::zeros(4, 4), Direction::TextToVideo).unwrap();
        assert_eq!((r.r1, r.median_rank, r.mean_rank), (0.0, 4.0, 4.0));
        assert_eq!(r.r5, 100.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            rank_of_ground_truth(&[1.0, 2.0], 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(rank_of_ground_truth(&[f64::NAN, 1.0], 1).is_err());
        assert!(retrieval_report(&Matrix::zeros(2, 3), Direction::VideoToText).is_err());
        assert!(matches!(
            retrieval_report(&Matrix::zeros(0, 0), Direction::VideoToText),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn directions_read_rows_and_columns() {
        // video 0 prefers caption 1, while caption 1 prefers video 0
        let s = Matrix::from_rows(&[[0.5, 0.9], [0.1, 0.2]]).unwrap();
        assert_eq!(ranks(&s, Direction::VideoToText).unwrap(), vec![2, 1]);
        assert_eq!(ranks(&s, Direction::TextToVideo).unwrap(), vec![1, 2]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[1, 2, 3]), 2.0);
        assert_eq!(median(&[1, 2, 4, 9]), 3.0);
    }

    #[test]
    fn brute_force_oracle() {
        let s = random_matrix(20, 77);
        for dir in [Direction::TextToVideo, Direction::VideoToText] {
            let got = retrieval_report(&s, dir).unwrap();
            let mut rs: Vec<usize> = (0..20)
                .map(|q| {
                    let cand: Vec<f64> = match dir {
                        Direction::VideoToText => s.row(q).to_vec(),
                        Direction::TextToVideo => (0..20).map(|i| s[(i, q)]).collect(),
                    };
                    sort_rank(&cand, q)
                })
                .collect();
            let r1 = rs.iter().filter(|&&r| r <= 1).count() as f64 * 5.0;
            let r5 = rs.iter().filter(|&&r| r <= 5).count() as f64 * 5.0;
            let r10 = rs.iter().filter(|&&r| r <= 10).count() as f64 * 5.0;
            let mnr = rs.iter().sum::<usize>() as f64 / 20.0;
            rs.sort();
            let mdr = (rs[9] + rs[10]) as f64 / 2.0;
            assert_eq!((got.r1, got.r5, got.r10), (r1, r5, r10));
            assert_eq!((got.median_rank, got.mean_rank), (mdr, mnr));
        }
    }

    #[test]
    fn output_formats() {
        let reports = retrieval_reports(&Matrix::identity(3)).unwrap();
        let mut csv = Vec::new();
        write_reports_csv(&reports, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "t2v,3,100,100,100,1,1");
        let mut json = Vec::new();
        write_reports_json(&reports, &mut json).unwrap();
        let back: Vec<RetrievalReport> = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, reports.to_vec());
    }

    proptest! {
        #[test]
        fn raising_ground_truth_never_hurts(seed in 0u64..10_000, n in 2usize..12, bump in 0.0f64..2.0) {
            let s = random_matrix(n, seed);
            let mut t = s.clone();
            for i in 0..n {
                t[(i, i)] += bump;
            }
            for dir in [Direction::TextToVideo, Direction::VideoToText] {
                let a = retrieval_report(&s, dir).unwrap();
                let b = retrieval_report(&t, dir).unwrap();
                prop_assert!(b.r1 >= a.r1 && b.r5 >= a.r5 && b.r10 >= a.r10);
                prop_assert!(b.median_rank <= a.median_rank && b.mean_rank <= a.mean_rank);
            }
        }

        #[test]
        fn strictly_monotone_transform_is_invariant(seed in 0u64..10_000, n in 1usize..12) {
            let s = random_matrix(n, seed);
            let mut t = s.clone();
            for x in t.data_mut() {
                *x = (3.0 * *x).exp() - 7.0;
            }
            prop_assert_eq!(retrieval_reports(&s).unwrap(), retrieval_reports(&t).unwrap());
        }

        #[test]
        fn joint_relabeling_is_invariant(seed in 0u64..10_000, n in 1usize..12) {
            let s = random_matrix(n, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = SplitMix64::new(seed ^ 1);
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let mut t = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    t[(i, j)] = s[(perm[i], perm[j])];
                }
            }
            prop_assert_eq!(retrieval_reports(&s).unwrap(), retrieval_reports(&t).unwrap());
        }
    }
}
