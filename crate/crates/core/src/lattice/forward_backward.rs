use serde::{Deserialize, Serialize};

use super::EmissionLattice;
use crate::constraint::MaskField;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::logspace::log_add;

/// A log-space table over `t in 1..=T+1`, `u in 0..=U`. Only `(T+1, U)` is a
/// real cell on the virtual row `T+1`; the other entries there stay `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTable {
    frames: usize,
    labels: usize,
    values: Grid<f64>,
}

impl LogTable {
    fn empty(frames: usize, labels: usize) -> Self {
        LogTable { frames, labels, values: Grid::filled(frames + 1, labels + 1, f64::NEG_INFINITY) }
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        *self.values.get(t - 1, u)
    }

    #[inline]
    fn set(&mut self, t: usize, u: usize, v: f64) {
        *self.values.get_mut(t - 1, u) = v;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }
}

fn check_mask(lattice: &EmissionLattice, mask: Option<&MaskField>) -> Result<()> {
    match mask {
        Some(m) if m.frames() != lattice.frames() || m.labels() != lattice.labels() => Err(Error::invalid(format!(
            "mask is T={} U={} but lattice is T={} U={}",
            m.frames(),
            m.labels(),
            lattice.frames(),
            lattice.labels()
        ))),
        _ => Ok(()),
    }
}

#[inline]
fn blank_open(mask: Option<&MaskField>, t: usize, u: usize) -> bool {
    mask.is_none_or(|m| m.blank_allowed(t, u))
}

#[inline]
fn label_open(mask: Option<&MaskField>, t: usize, u: usize) -> bool {
    mask.is_none_or(|m| m.label_allowed(t, u))
}

/// Forward variables `ln alpha(t, u)`.
///
/// With a mask, the blank emitted at `(t, u)` is gated by `m_blank(t, u)` and
/// the label step into `(t, u)` by `m_label(t, u)`.
pub fn forward(lattice: &EmissionLattice, mask: Option<&MaskField>) -> Result<LogTable> {
    check_mask(lattice, mask)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let mut alpha = LogTable::empty(frames, labels);
    alpha.set(1, 0, 0.0);
    for t in 1..=frames {
        for u in 0..=labels {
            if t == 1 && u == 0 {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t > 1 && blank_open(mask, t - 1, u) {
                acc = log_add(acc, alpha.get(t - 1, u) + lattice.log_blank(t - 1, u));
            }
            if u > 0 && label_open(mask, t, u) {
                acc = log_add(acc, alpha.get(t, u - 1) + lattice.log_label(t, u - 1));
            }
            alpha.set(t, u, acc);
        }
    }
    if blank_open(mask, frames, labels) {
        alpha.set(frames + 1, labels, alpha.get(frames, labels) + lattice.log_blank(frames, labels));
    }
    Ok(alpha)
}

/// Backward variables `ln beta(t, u)`, gated by the same transitions as [`forward`].
pub fn backward(lattice: &EmissionLattice, mask: Option<&MaskField>) -> Result<LogTable> {
    check_mask(lattice, mask)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let mut beta = LogTable::empty(frames, labels);
    beta.set(frames + 1, labels, 0.0);
    for t in (1..=frames).rev() {
        for u in (0..=labels).rev() {
            let mut acc = f64::NEG_INFINITY;
            if blank_open(mask, t, u) {
                acc = log_add(acc, beta.get(t + 1, u) + lattice.log_blank(t, u));
            }
            if u < labels && label_open(mask, t, u + 1) {
                acc = log_add(acc, beta.get(t, u + 1) + lattice.log_label(t, u));
            }
            beta.set(t, u, acc);
        }
    }
    Ok(beta)
}

/// Forward and backward tables plus `ln P(Y|X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbTables {
    log_alpha: LogTable,
    log_beta: LogTable,
    log_likelihood: f64,
}

impl FbTables {
    /// Runs both recursions. The likelihood is read off the forward terminal
    /// `alpha(T+1, U)` and may be `-inf`; callers that need a finite value
    /// go through [`transducer_loss`] or the masked loss.
    pub fn compute(lattice: &EmissionLattice, mask: Option<&MaskField>) -> Result<Self> {
        let log_alpha = forward(lattice, mask)?;
        let log_beta = backward(lattice, mask)?;
        let log_likelihood = log_alpha.get(lattice.frames() + 1, lattice.labels());
        Ok(FbTables { log_alpha, log_beta, log_likelihood })
    }

    pub fn frames(&self) -> usize {
        self.log_alpha.frames
    }

    pub fn labels(&self) -> usize {
        self.log_alpha.labels
    }

    #[inline]
    pub fn log_alpha(&self, t: usize, u: usize) -> f64 {
        self.log_alpha.get(t, u)
    }

    #[inline]
    pub fn log_beta(&self, t: usize, u: usize) -> f64 {
        self.log_beta.get(t, u)
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn alpha_table(&self) -> &LogTable {
        &self.log_alpha
    }

    pub fn beta_table(&self) -> &LogTable {
        &self.log_beta
    }

    /// Cells `(t, u)` on diagonal `t + u = n`, including the virtual terminal.
    pub fn diagonal_cells(&self, n: usize) -> Vec<(usize, usize)> {
        diagonal_cells(self.frames(), self.labels(), n)
    }

    pub(crate) fn require_finite(&self) -> Result<()> {
        if self.log_likelihood.is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateLattice("no surviving alignment".into()))
        }
    }

    /// Shifts one backward entry. Exists only so the verification suite can
    /// prove it notices a broken recursion.
    #[doc(hidden)]
    pub fn perturb_beta_for_testing(&mut self, t: usize, u: usize, delta: f64) {
        let v = self.log_beta.get(t, u);
        self.log_beta.set(t, u, v + delta);
    }
}

pub(crate) fn diagonal_cells(frames: usize, labels: usize, n: usize) -> Vec<(usize, usize)> {
    if n == frames + labels + 1 {
        return vec![(frames + 1, labels)];
    }
    let t_lo = n.saturating_sub(labels).max(1);
    let t_hi = frames.min(n);
    (t_lo..=t_hi).map(|t| (t, n - t)).collect()
}

/// Negative log-likelihood `-ln P(Y|X)` with the tables that produced it.
pub fn transducer_loss(lattice: &EmissionLattice) -> Result<(f64, FbTables)> {
    let fb = FbTables::compute(lattice, None)?;
    fb.require_finite()?;
    Ok((-fb.log_likelihood, fb))
}

/// State-occupancy posteriors `alpha(t,u) beta(t,u) / P(Y|X)` on diagonal `n`.
pub fn diagonal_posteriors(fb: &FbTables, n: usize) -> Result<Vec<((usize, usize), f64)>> {
    let last = fb.frames() + fb.labels() + 1;
    if !(1..=last).contains(&n) {
        return Err(Error::invalid(format!("diagonal {n} outside 1..={last}")));
    }
    fb.require_finite()?;
    Ok(fb
        .diagonal_cells(n)
        .into_iter()
        .map(|(t, u)| ((t, u), (fb.log_alpha(t, u) + fb.log_beta(t, u) - fb.log_likelihood).exp()))
        .collect())
}
