//! Reproducible runs: configuration, the verification suite, training,
//! decoding and hyper-parameter sweeps, each writing machine-readable
//! artifacts into an output directory.

mod run;
mod verify;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use run::{
    cmd_decode, cmd_sweep, cmd_train, read_trace_csv, summarize_sweep, SweepRow, SummaryRow, TrainOutcome, REFERENCE_ROWS,
    SUMMARY_SCHEMA, SWEEP_SCHEMA, TRACE_SCHEMA,
};
pub use verify::{run_verify, CheckOutcome, FailingCase, VerifyConfig, VerifyReport};

use crate::error::{Error, Result};
use crate::model::{generate_corpus, read_corpus, CorpusConfig, Method, Model, NetworkDims, OptimizerConfig, SyntheticUtterance, TableModel, TinyJointModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Table { init_scale: f64, blank_bias: f64 },
    Network { encoder: usize, predictor: usize, joint: usize },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Table { init_scale: 0.5, blank_bias: 1.0 }
    }
}

impl ModelConfig {
    pub fn build(&self, corpus: &[SyntheticUtterance], vocab: usize, seed: u64) -> Result<Model> {
        Ok(match *self {
            ModelConfig::Table { init_scale, blank_bias } => Model::Table(TableModel::init(corpus, vocab, seed, init_scale, blank_bias)?),
            ModelConfig::Network { encoder, predictor, joint } => {
                if encoder == 0 || predictor == 0 || joint == 0 {
                    return Err(Error::invalid("network dimensions must be positive"));
                }
                Model::Network(TinyJointModel::init(NetworkDims { input: vocab + 1, encoder, predictor, joint, vocab }, seed))
            }
        })
    }
}

/// Everything a run needs. Copied verbatim into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    /// Used when `corpus_path` is absent.
    pub corpus: CorpusConfig,
    /// JSON-lines corpus to read instead of generating one.
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    pub model: ModelConfig,
    pub method: Method,
    pub optimizer: OptimizerConfig,
    pub frame_period_ms: f64,
    /// Model-initialisation seeds; `train` uses the first, `sweep` all.
    pub seeds: Vec<u64>,
    /// `None` decodes greedily.
    #[serde(default)]
    pub beam: Option<usize>,
    /// Sweep grid; each entry replaces `method`. Empty for single runs.
    #[serde(default)]
    pub grid: Vec<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "demo".into(),
            corpus: CorpusConfig::default(),
            corpus_path: None,
            model: ModelConfig::default(),
            method: Method::Baseline,
            optimizer: OptimizerConfig {
                learning_rate: 0.5,
                epochs: 200,
                momentum: 0.0,
                reduction: crate::model::Reduction::Sum,
                eval_every: 20,
            },
            frame_period_ms: 60.0,
            seeds: vec![1, 2, 3],
            beam: None,
            grid: Vec::new(),
        }
    }
}

impl RunConfig {
    /// The demo trade-off grid: baseline plus two settings of each method.
    pub fn demo_grid() -> Vec<Method> {
        vec![
            Method::Baseline,
            Method::AlignRestricted { b_left: 20, b_right: 12 },
            Method::AlignRestricted { b_left: 20, b_right: 9 },
            Method::FastEmit { lambda: 0.015 },
            Method::FastEmit { lambda: 0.1 },
            Method::Mlt { lambda: 0.03 },
            Method::Mlt { lambda: 0.1 },
            Method::Mlt { lambda: 0.3 },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.optimizer.validate()?;
        for m in &self.grid {
            m.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if !(self.frame_period_ms > 0.0 && self.frame_period_ms.is_finite()) {
            return Err(Error::invalid("frame_period_ms must be positive"));
        }
        if self.beam == Some(0) {
            return Err(Error::invalid("beam size must be at least 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_corpus(&self) -> Result<Vec<SyntheticUtterance>> {
        match &self.corpus_path {
            Some(p) => read_corpus(p),
            None => generate_corpus(&self.corpus),
        }
    }

    /// Vocabulary size: from the corpus config, or the largest label in a
    /// file-supplied corpus.
    pub fn vocab(&self, corpus: &[SyntheticUtterance]) -> usize {
        match self.corpus_path {
            None => self.corpus.vocab,
            Some(_) => {
                let from_labels = corpus.iter().flat_map(|u| u.labels.iter().copied()).max().unwrap_or(0);
                let from_features = corpus.first().map_or(0, |u| u.feature_dim().saturating_sub(1));
                from_labels.max(from_features)
            }
        }
    }
}
