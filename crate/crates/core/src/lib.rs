//! Turns daily OHLCV history into a chart-image + dialog instruction-tuning corpus.

pub mod annotate;
pub mod config;
pub mod dataset;
pub mod market;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod sampler;
pub mod synth;
pub mod trend;
pub mod validate;

use serde::{Deserialize, Serialize};

/// Which corpus a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Chart description for pretraining alignment.
    Pretrain,
    /// Multi-turn question/answer dialog for instruction tuning.
    Instruct,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Instruct => "instruct",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
