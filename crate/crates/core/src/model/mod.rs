//! Toy trainable transducers and the training loop.
//!
//! Two models share one interface: a free logit table per utterance (which
//! isolates loss behaviour from optimisation) and a tiny
//! encoder/predictor/joint network with hand-written backpropagation.
//! Parameters of either model are a single flat vector, so the optimiser and
//! finite-difference checks treat both alike.

mod corpus;
mod network;
mod table;
mod train;

pub use corpus::{generate_corpus, read_corpus, stream_seed, write_corpus, CorpusConfig, SyntheticUtterance};
pub use network::{NetworkDims, NetworkScorer, TinyJointModel};
pub use table::TableModel;
pub use train::{
    parameter_gradient, train_run, train_run_observed, utterance_gradient, EpochStats, Method, OptimizerConfig, Reduction,
    TrainingTrace, UtteranceGradient,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::lattice::EmissionLattice;
use crate::logspace::log_softmax_in_place;

/// Log-distribution over the extended vocabulary (index 0 is blank) at a
/// frame, given the labels emitted so far.
pub trait Scorer {
    fn frames(&self) -> usize;

    /// Size of the extended vocabulary, blank included.
    fn vocab_size(&self) -> usize;

    fn log_probs(&self, t: usize, prefix: &[usize]) -> Vec<f64>;
}

/// A fixed table of per-cell log-distributions, `T x rows x K`. Prefixes
/// longer than the table reuse its last row; only the prefix length matters.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTableScorer {
    log_probs: Grid3,
}

impl CellTableScorer {
    /// From unnormalised scores; each cell is passed through log-softmax.
    pub fn from_scores(mut scores: Grid3) -> Self {
        for r in 0..scores.rows() {
            for c in 0..scores.cols() {
                log_softmax_in_place(scores.cell_mut(r, c));
            }
        }
        CellTableScorer { log_probs: scores }
    }

    /// From linear probabilities; zeros become `-inf`.
    pub fn from_probs(probs: &Grid3) -> Self {
        let data = probs.as_slice().iter().map(|p| p.ln()).collect();
        CellTableScorer { log_probs: Grid3::from_vec(probs.rows(), probs.cols(), probs.depth(), data).expect("same shape") }
    }
}

impl Scorer for CellTableScorer {
    fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    fn vocab_size(&self) -> usize {
        self.log_probs.depth()
    }

    fn log_probs(&self, t: usize, prefix: &[usize]) -> Vec<f64> {
        let row = prefix.len().min(self.log_probs.cols() - 1);
        self.log_probs.cell(t - 1, row).to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Table(TableModel),
    Network(TinyJointModel),
}

impl Model {
    /// `|V|`, blank excluded.
    pub fn vocab(&self) -> usize {
        match self {
            Model::Table(m) => m.vocab(),
            Model::Network(m) => m.dims().vocab,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Table(m) => m.params(),
            Model::Network(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Table(m) => m.params_mut(),
            Model::Network(m) => m.params_mut(),
        }
    }

    /// Pre-softmax scores on every lattice cell, with the reference labels as
    /// predictor context: `T x (U + 1) x (|V| + 1)`.
    pub fn lattice_scores(&self, utt: &SyntheticUtterance) -> Result<Grid3> {
        match self {
            Model::Table(m) => m.lattice_scores(utt),
            Model::Network(m) => m.lattice_scores(utt),
        }
    }

    /// Accumulates `dL/dtheta` for one utterance into `grad`, given `dL/dz`
    /// on every lattice cell.
    pub fn backprop(&self, utt: &SyntheticUtterance, logits_grad: &Grid3, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.params().len() {
            return Err(Error::invalid("gradient buffer does not match the parameter count"));
        }
        match self {
            Model::Table(m) => m.backprop(utt, logits_grad, grad),
            Model::Network(m) => m.backprop(utt, logits_grad, grad),
        }
    }

    /// Scorer for decoding one utterance with arbitrary label prefixes.
    pub fn scorer<'a>(&'a self, utt: &'a SyntheticUtterance) -> Result<Box<dyn Scorer + 'a>> {
        match self {
            Model::Table(m) => Ok(Box::new(m.scorer(utt)?)),
            Model::Network(m) => Ok(Box::new(m.scorer(utt)?)),
        }
    }

    pub(crate) fn check_utterance(&self, utt: &SyntheticUtterance) -> Result<()> {
        if let Some(&k) = utt.labels.iter().find(|&&k| k == 0 || k > self.vocab()) {
            return Err(Error::invalid(format!("{}: label {k} outside 1..={}", utt.id, self.vocab())));
        }
        Ok(())
    }
}

/// Model output on the lattice: the emission lattice the loss consumes and
/// the full per-cell distributions the softmax chain rule needs.
pub fn emit_lattice(model: &Model, utt: &SyntheticUtterance) -> Result<(EmissionLattice, Grid3)> {
    model.check_utterance(utt)?;
    let mut log_probs = model.lattice_scores(utt)?;
    let (frames, labels) = (utt.frames(), utt.labels.len());
    let mut log_label = vec![vec![0.0; labels]; frames];
    let mut log_blank = vec![vec![0.0; labels + 1]; frames];
    for t in 0..frames {
        for u in 0..=labels {
            let cell = log_probs.cell_mut(t, u);
            log_softmax_in_place(cell);
            log_blank[t][u] = cell[0];
            if u < labels {
                log_label[t][u] = cell[utt.labels[u]];
            }
        }
    }
    let lattice = EmissionLattice::new(frames, labels, log_label, log_blank)?;
    let probs = log_probs.as_slice().iter().map(|v| v.exp()).collect();
    let probs = Grid3::from_vec(frames, labels + 1, log_probs.depth(), probs).expect("same shape");
    Ok((lattice, probs))
}
