//! Video-text retrieval over precomputed embeddings with a learnable shared
//! sparse concept space and four multi-grained similarity heads.
//!
//! Pipeline: [`synthetic_data`] or [`embedding_store`] files →
//! [`concept_space::init_concepts`] → [`trainer::train`] →
//! [`eval_metrics::evaluate`].

mod codec;

pub mod ablation;
pub mod concept_space;
pub mod embedding_store;
pub mod error;
pub mod eval_metrics;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod similarity;
pub mod synthetic_data;
pub mod temporal_encoder;
pub mod trainer;

pub use ablation::{run_ablation, AblationRow, AblationSetup, Study};
pub use concept_space::{init_concepts, kmeans, ConceptSpace, FrameProjections, KMeansOutcome, SparseProjection};
pub use embedding_store::{validate, EmbeddingItem, EmbeddingSet, Violation, Vocabulary};
pub use error::{Error, Result};
pub use eval_metrics::{evaluate, rank_of_ground_truth, retrieval_report, Direction, RetrievalReport};
pub use losses::{LogitScale, LossWeights};
pub use model::{ModelParams, SentenceMode, TextEncoding, VideoEncoding};
pub use numerics::{Matrix, Vector};
pub use similarity::{inverted_softmax, HeadMask, SimilarityBundle, SimilarityHeads};
pub use synthetic_data::{generate_aligned_dataset, SplitMix64, SynthConfig};
pub use temporal_encoder::{AttentionParams, TemporalMode, TemporalParams};
pub use trainer::{train, Gradients, LossBreakdown, TrainConfig, TraceRow, TrainOutcome};
