//! Per-utterance gradients for the four training methods and a deterministic
//! full-batch gradient-descent loop.

use serde::{Deserialize, Serialize};

use super::{emit_lattice, Model, SyntheticUtterance};
use crate::constraint::{build_masks, fastemit_grads, masked_grad_probs, masked_loss};
use crate::decode::{decode_corpus, mean_token_delay, token_error_rate};
use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::latency::{expected_delays, mlt_grads, mlt_report_loss, DelayField, ExpectedDelays};
use crate::lattice::{logits_grad, loss_grad_probs, transducer_loss, GradientField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Baseline,
    AlignRestricted { b_left: usize, b_right: usize },
    FastEmit { lambda: f64 },
    Mlt { lambda: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::AlignRestricted { .. } => "align_restricted",
            Method::FastEmit { .. } => "fastemit",
            Method::Mlt { .. } => "mlt",
        }
    }

    /// The swept hyper-parameter: `b_right` for alignment restriction, the
    /// weight for the regularisers, 0 for the baseline.
    pub fn param(&self) -> f64 {
        match *self {
            Method::Baseline => 0.0,
            Method::AlignRestricted { b_right, .. } => b_right as f64,
            Method::FastEmit { lambda } | Method::Mlt { lambda } => lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::FastEmit { lambda } | Method::Mlt { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::invalid(format!("{} weight must be finite and non-negative, got {lambda}", self.name())))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Gradient averaged over utterances.
    Mean,
    /// Gradient summed over utterances. Suits the table model, whose
    /// parameters are disjoint per utterance.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Heavy-ball coefficient; 0 is plain gradient descent.
    pub momentum: f64,
    pub reduction: Reduction,
    /// Decode the corpus every this many epochs (and after the last).
    pub eval_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 0.5, epochs: 100, momentum: 0.0, reduction: Reduction::Mean, eval_every: 10 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// Everything one utterance contributes to a training step.
#[derive(Debug, Clone)]
pub struct UtteranceGradient {
    /// Loss as reported for the method: the transducer loss, the masked
    /// loss for alignment restriction, loss plus weighted mean delay for MLT.
    pub loss: f64,
    /// Expected delays under the unmasked posterior, comparable across methods.
    pub dbar: ExpectedDelays,
    /// Gradient on the blank and next-label probability of every cell.
    pub prob_grads: GradientField,
    /// The same gradient pushed through each cell's softmax.
    pub logits_grads: Grid3,
}

pub fn utterance_gradient(model: &Model, utt: &SyntheticUtterance, method: &Method) -> Result<UtteranceGradient> {
    method.validate()?;
    let (lattice, probs) = emit_lattice(model, utt)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let delays = DelayField::from_reference(&utt.reference, frames, labels)?;
    let (loss, fb) = transducer_loss(&lattice)?;
    let dbar = expected_delays(&fb, &delays)?;
    let (loss, prob_grads) = match *method {
        Method::Baseline => (loss, loss_grad_probs(&fb, &lattice)?),
        Method::FastEmit { lambda } => (loss, fastemit_grads(&loss_grad_probs(&fb, &lattice)?, lambda)?),
        Method::Mlt { lambda } => {
            let trans = loss_grad_probs(&fb, &lattice)?;
            (mlt_report_loss(loss, &dbar, lambda), mlt_grads(&trans, &delays, &dbar, lambda)?)
        }
        Method::AlignRestricted { b_left, b_right } => {
            let masks = build_masks(&utt.reference, b_left, b_right, frames, labels)?;
            let (masked, mfb) = masked_loss(&lattice, &masks)?;
            (masked, masked_grad_probs(&mfb, &masks)?)
        }
    };
    let logits_grads = logits_grad(&prob_grads, &probs, &utt.labels)?;
    Ok(UtteranceGradient { loss, dbar, prob_grads, logits_grads })
}

/// [`utterance_gradient`] carried through to the model parameters.
pub fn parameter_gradient(model: &Model, utt: &SyntheticUtterance, method: &Method) -> Result<(UtteranceGradient, Vec<f64>)> {
    let g = utterance_gradient(model, utt, method)?;
    let mut grad = vec![0.0; model.params().len()];
    model.backprop(utt, &g.logits_grads, &mut grad)?;
    Ok((g, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean reported loss over the corpus, measured before this epoch's update.
    pub loss: f64,
    /// Mean over utterances of the average expected delay, before the update.
    pub mean_dbar: f64,
    /// Greedy token error rate after the update, on evaluation epochs.
    pub ter: Option<f64>,
    /// Mean signed greedy emission delay in frames, after the update.
    pub mean_delay: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainingTrace {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// Last epoch that ran an evaluation.
    pub fn last_evaluated(&self) -> Option<&EpochStats> {
        self.epochs.iter().rev().find(|e| e.ter.is_some())
    }
}

/// Full-batch training. Utterance gradients are accumulated in corpus order,
/// so a run is bit-reproducible.
pub fn train_run(model: &mut Model, corpus: &[SyntheticUtterance], method: &Method, opt: &OptimizerConfig) -> Result<TrainingTrace> {
    let mut trace = TrainingTrace::default();
    train_run_observed(model, corpus, method, opt, &mut |s| {
        trace.epochs.push(s.clone());
        Ok(())
    })?;
    Ok(trace)
}

/// [`train_run`] reporting each epoch to `observer` as it completes, so a
/// caller keeps the trace even when training diverges.
pub fn train_run_observed(
    model: &mut Model,
    corpus: &[SyntheticUtterance],
    method: &Method,
    opt: &OptimizerConfig,
    observer: &mut dyn FnMut(&EpochStats) -> Result<()>,
) -> Result<()> {
    method.validate()?;
    opt.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    let n = corpus.len() as f64;
    let mut velocity = vec![0.0; model.params().len()];
    let mut grad = vec![0.0; model.params().len()];
    for epoch in 1..=opt.epochs {
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (mut loss, mut dbar) = (0.0, 0.0);
        for utt in corpus {
            let g = match utterance_gradient(model, utt, method) {
                Ok(g) => g,
                Err(Error::DegenerateLattice(_)) => return Err(Error::Divergence { epoch, loss: f64::INFINITY }),
                Err(e) => return Err(e),
            };
            loss += g.loss;
            dbar += g.dbar.mean();
            model.backprop(utt, &g.logits_grads, &mut grad)?;
        }
        let (loss, dbar) = (loss / n, dbar / n);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        let scale = match opt.reduction {
            Reduction::Mean => opt.learning_rate / n,
            Reduction::Sum => opt.learning_rate,
        };
        for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = opt.momentum * *v - scale * g;
            *p += *v;
        }
        let (ter, mean_delay) = if epoch % opt.eval_every == 0 || epoch == opt.epochs {
            let decoded = decode_corpus(model, corpus, None)?;
            (Some(token_error_rate(&decoded)), mean_token_delay(&decoded))
        } else {
            (None, None)
        };
        observer(&EpochStats { epoch, loss, mean_dbar: dbar, ter, mean_delay })?;
    }
    Ok(())
}
