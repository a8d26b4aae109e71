//! Desk-scale ablation runs on synthetic data: each variant is trained on
//! the first part of a generated set and evaluated on the held-out rest.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concept_space::init_concepts;
use crate::error::{Error, Result};
use crate::eval_metrics::{evaluate, RetrievalReport};
use crate::losses::LossWeights;
use crate::model::SentenceMode;
use crate::similarity::HeadMask;
use crate::synthetic_data::{generate_aligned_dataset, SynthConfig};
use crate::temporal_encoder::TemporalMode;
use crate::trainer::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// the ten head combinations
    Heads,
    /// mean pooling vs self-attention
    Temporal,
    /// concept count sweep
    Concepts,
    /// with and without each penalty term
    Losses,
    /// anchored vs anchor-free sentence representation
    Anchor,
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(Study::Heads),
            "temporal" => Ok(Study::Temporal),
            "concepts" => Ok(Study::Concepts),
            "losses" => Ok(Study::Losses),
            "anchor" => Ok(Study::Anchor),
            other => Err(Error::Config(format!("unknown study {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSetup {
    pub synth: SynthConfig,
    /// fraction of pairs used for training; the rest is the test split
    pub train_fraction: f64,
    pub train: TrainConfig,
}

impl Default for AblationSetup {
    fn default() -> Self {
        AblationSetup {
            synth: SynthConfig {
                n_pairs: 128,
                n_frame: 4,
                noise_sigma: 0.3,
                ..SynthConfig::default()
            },
            train_fraction: 0.5,
            train: TrainConfig {
                epochs: 50,
                n_c: 16,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: String,
    pub t2v: RetrievalReport,
    pub v2t: RetrievalReport,
}

/// Training configs for every variant of `study`, labelled.
pub fn variants(study: Study, base: &TrainConfig, n_words: usize) -> Vec<(String, TrainConfig)> {
    match study {
        Study::Heads => HeadMask::ablation_grid()
            .into_iter()
            .map(|m| (m.label(), TrainConfig { heads: m, ..base.clone() }))
            .collect(),
        Study::Temporal => [
            ("mean_pool", TemporalMode::MeanPool),
            ("self_attention", TemporalMode::SelfAttention),
        ]
        .into_iter()
        .map(|(l, t)| (l.to_string(), TrainConfig { temporal: t, ..base.clone() }))
        .collect(),
        Study::Concepts => {
            let mut sizes: Vec<usize> = [8, 4, 2, 1].iter().map(|div| (n_words / div).max(1)).collect();
            sizes.dedup();
            sizes
                .into_iter()
                .map(|n_c| (format!("n_c={n_c}"), TrainConfig { n_c, ..base.clone() }))
                .collect()
        }
        Study::Losses => {
            let (a, b) = (base.weights.alpha, base.weights.beta);
            [(0.0, 0.0), (a, 0.0), (0.0, b), (a, b)]
                .into_iter()
                .map(|(alpha, beta)| {
                    (
                        format!("alpha={alpha},beta={beta}"),
                        TrainConfig {
                            weights: LossWeights { alpha, beta },
                            ..base.clone()
                        },
                    )
                })
                .collect()
        }
        Study::Anchor => [("anchor", SentenceMode::Anchor), ("anchor_free", SentenceMode::AnchorFree)]
            .into_iter()
            .map(|(l, m)| (l.to_string(), TrainConfig { sentence_mode: m, ..base.clone() }))
            .collect(),
    }
}

/// For each seed: generate data (seeded), build concepts, train and evaluate
/// every variant. Rows come out seed-major in variant order.
pub fn run_ablation(study: Study, setup: &AblationSetup, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if !(setup.train_fraction > 0.0 && setup.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {}",
            setup.train_fraction
        )));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let synth = SynthConfig { seed, ..setup.synth.clone() };
        let (set, vocab) = generate_aligned_dataset(&synth)?;
        let n_train = ((set.len() as f64) * setup.train_fraction).round() as usize;
        if n_train == 0 || n_train >= set.len() {
            return Err(Error::Config(format!("split of {} pairs leaves an empty side", set.len())));
        }
        let (train_set, test_set) = set.split_at(n_train);
        let base = TrainConfig { seed, ..setup.train.clone() };
        for (variant, cfg) in variants(study, &base, vocab.len()) {
            let space = init_concepts(&vocab, cfg.n_c, seed)?;
            let trained = train(&train_set, &space, &cfg)?;
            let [t2v, v2t] = evaluate(&trained.params, &test_set, None)?;
            rows.push(AblationRow { seed, variant, t2v, v2t });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], mut out: impl Write) -> Result<()> {
    writeln!(
        out,
        "seed,variant,t2v_r1,t2v_r5,t2v_r10,t2v_mdr,t2v_mnr,v2t_r1,v2t_r5,v2t_r10,v2t_mdr,v2t_mnr"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.variant,
            r.t2v.r1,
            r.t2v.r5,
            r.t2v.r10,
            r.t2v.median_rank,
            r.t2v.mean_rank,
            r.v2t.r1,
            r.v2t.r5,
            r.v2t.r10,
            r.v2t.median_rank,
            r.v2t.mean_rank
        )?;
    }
    Ok(())
}

/// Mean text-to-video R@1 of `variant` across seeds.
pub fn mean_t2v_r1(rows: &[AblationRow], variant: &str) -> Option<f64> {
    let hits: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.t2v.r1).collect();
    (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
}
