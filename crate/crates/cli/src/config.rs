//! Optional TOML run file. Every section is optional; command-line flags
//! override whatever the file sets.
//!
//! ```toml
//! [synth]
//! n_pairs = 64
//! noise_sigma = 0.05
//!
//! [train]
//! epochs = 100
//! base_lr = 1e-3
//!
//! [eval]
//! inverted_softmax = true
//! tau = 100.0
//!
//! [ablate]
//! study = "heads"
//! seeds = [1, 2, 3]
//! [ablate.setup]
//! train_fraction = 0.5
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use s3ma::{AblationSetup, Study, SynthConfig, TrainConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub ablate: AblateOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub inverted_softmax: bool,
    pub tau: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            inverted_softmax: false,
            tau: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateOptions {
    pub study: Study,
    pub seeds: Vec<u64>,
    pub setup: AblationSetup,
}

impl Default for AblateOptions {
    fn default() -> Self {
        AblateOptions {
            study: Study::Heads,
            seeds: vec![0],
            setup: AblationSetup::default(),
        }
    }
}

/// Parse failures are reported as usage errors by the caller.
pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("parsing {}: {e}", path.display()))
}
