//! Seeded toy video-text pairs whose ground-truth pairing is recoverable.

use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingItem, EmbeddingSet, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{axpy, l2_normalize, Matrix, Vector};

/// SplitMix64: a 64-bit state advanced by a Weyl constant and mixed on output.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }
}

impl RngCore for SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

impl SeedableRng for SplitMix64 {
    type Seed = [u8; 8];

    fn from_seed(seed: [u8; 8]) -> Self {
        SplitMix64::new(u64::from_le_bytes(seed))
    }

    fn seed_from_u64(state: u64) -> Self {
        SplitMix64::new(state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub d: usize,
    pub n_frame: usize,
    pub vocab_size: usize,
    pub words_per_caption: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 64,
            d: 32,
            n_frame: 12,
            vocab_size: 64,
            words_per_caption: 4,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_pairs < 1 {
            return bad("n_pairs must be at least 1");
        }
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if self.n_frame < 1 {
            return bad("n_frame must be at least 1");
        }
        if self.words_per_caption < 1 || self.vocab_size < self.words_per_caption {
            return bad("need vocab_size >= words_per_caption >= 1");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be a finite nonnegative number");
        }
        Ok(())
    }
}

/// Generates a vocabulary and `n_pairs` aligned items.
///
/// Word embeddings are unit-normalized Gaussian draws. A caption is a set of
/// `words_per_caption` distinct token ids, its sentence embedding the mean of
/// their embeddings. Frame `k` shows caption word `k mod words_per_caption`
/// plus isotropic Gaussian noise of scale `noise_sigma`.
pub fn generate_aligned_dataset(cfg: &SynthConfig) -> Result<(EmbeddingSet, Vocabulary)> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);

    let mut words = Matrix::zeros(cfg.vocab_size, cfg.d);
    for w in 0..cfg.vocab_size {
        let raw: Vec<f64> = (0..cfg.d).map(|_| StandardNormal.sample(&mut rng)).collect();
        // a d>=2 Gaussian draw has zero norm with probability 0
        let unit = l2_normalize(&raw)?;
        words.row_mut(w).copy_from_slice(&unit);
    }
    let tokens = (0..cfg.vocab_size).map(|w| format!("w{w:04}")).collect();

    let mut items = Vec::with_capacity(cfg.n_pairs);
    for p in 0..cfg.n_pairs {
        let caption: Vec<u32> = index::sample(&mut rng, cfg.vocab_size, cfg.words_per_caption)
            .into_iter()
            .map(|i| i as u32)
            .collect();

        let mut sentence = vec![0.0; cfg.d];
        for &t in &caption {
            axpy(1.0 / caption.len() as f64, words.row(t as usize), &mut sentence);
        }

        let mut frames = Matrix::zeros(cfg.n_frame, cfg.d);
        for k in 0..cfg.n_frame {
            let word = caption[k % caption.len()] as usize;
            let row = frames.row_mut(k);
            row.copy_from_slice(words.row(word));
            if cfg.noise_sigma > 0.0 {
                for x in row.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *x += cfg.noise_sigma * n;
                }
            }
        }

        items.push(EmbeddingItem {
            id: format!("pair{p:05}"),
            caption_token_ids: caption,
            frame_embeddings: frames,
            sentence_embedding: Vector(sentence),
        });
    }

    let set = EmbeddingSet {
        d: cfg.d,
        n_frame: cfg.n_frame,
        items,
    };
    Ok((
        set,
        Vocabulary {
            tokens,
            embeddings: words,
        },
    ))
}
