//! Shared fixtures for the criterion benches.

use s3ma::{
    generate_aligned_dataset, init_concepts, EmbeddingSet, HeadMask, ModelParams, SentenceMode, SynthConfig,
    TemporalMode, Vocabulary,
};

pub struct Fixture {
    pub set: EmbeddingSet,
    pub vocab: Vocabulary,
    pub model: ModelParams,
}

/// Synthetic set plus a fresh all-heads self-attention model over it.
pub fn fixture(n_pairs: usize, d: usize, n_frame: usize, n_c: usize) -> Fixture {
    let cfg = SynthConfig {
        n_pairs,
        d,
        n_frame,
        vocab_size: (4 * n_c).max(16),
        ..SynthConfig::default()
    };
    let (set, vocab) = generate_aligned_dataset(&cfg).expect("valid synthetic config");
    let space = init_concepts(&vocab, n_c, 0).expect("n_c within vocabulary");
    let model = ModelParams::new(
        space,
        n_frame,
        HeadMask::ALL,
        TemporalMode::SelfAttention,
        SentenceMode::Anchor,
        0,
    );
    Fixture { set, vocab, model }
}
