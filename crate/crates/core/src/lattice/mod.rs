//! The transducer lattice: emission probabilities on the `T x (U+1)` grid,
//! the forward-backward recursions, the transducer loss and its gradients.
//!
//! Frames `t` are 1-based (`1..=T`) and label positions `u` are 0-based
//! (`0..=U`) everywhere in the public API. Storage is 0-based, row `t - 1`.

mod forward_backward;
mod gradient;

pub use forward_backward::{backward, diagonal_posteriors, forward, transducer_loss, FbTables, LogTable};
pub use gradient::{logits_grad, loss_grad_probs, GradientField};

pub(crate) use forward_backward::diagonal_cells;
pub(crate) use gradient::transition_sensitivity;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Which of the two per-cell emissions the loss touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// `P(y_{u+1} | t, u)`, the next reference label.
    Label,
    /// `P(blank | t, u)`.
    Blank,
}

/// Per-cell log-probabilities of the next reference label and of blank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeFile", into = "LatticeFile")]
pub struct EmissionLattice {
    frames: usize,
    labels: usize,
    log_label: Grid<f64>,
    log_blank: Grid<f64>,
}

impl EmissionLattice {
    /// `log_p_label` is `T` rows of `U` entries, `log_p_blank` is `T` rows of `U + 1`.
    pub fn new(frames: usize, labels: usize, log_p_label: Vec<Vec<f64>>, log_p_blank: Vec<Vec<f64>>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("lattice needs at least one frame"));
        }
        // A label-free lattice may arrive with no label rows at all.
        let log_p_label = if labels == 0 && log_p_label.is_empty() { vec![Vec::new(); frames] } else { log_p_label };
        let log_label = Grid::from_rows(frames, labels, log_p_label)
            .ok_or_else(|| Error::invalid(format!("log_p_label must be {frames} rows of {labels} entries")))?;
        let log_blank = Grid::from_rows(frames, labels + 1, log_p_blank)
            .ok_or_else(|| Error::invalid(format!("log_p_blank must be {frames} rows of {} entries", labels + 1)))?;
        for &v in log_label.as_slice().iter().chain(log_blank.as_slice()) {
            if v.is_nan() || v > 0.0 {
                return Err(Error::invalid(format!("log-probability {v} is not in [-inf, 0]")));
            }
        }
        Ok(EmissionLattice { frames, labels, log_label, log_blank })
    }

    /// Builds from linear-space probabilities.
    pub fn from_probs(frames: usize, labels: usize, p_label: Vec<Vec<f64>>, p_blank: Vec<Vec<f64>>) -> Result<Self> {
        let ln = |rows: Vec<Vec<f64>>| rows.into_iter().map(|r| r.into_iter().map(f64::ln).collect()).collect();
        Self::new(frames, labels, ln(p_label), ln(p_blank))
    }

    /// Every label entry `p_label`, every blank entry `p_blank`.
    pub fn uniform(frames: usize, labels: usize, p_label: f64, p_blank: f64) -> Result<Self> {
        Self::from_probs(frames, labels, vec![vec![p_label; labels]; frames], vec![vec![p_blank; labels + 1]; frames])
    }

    /// Independent probabilities drawn uniformly from `[0.05, 0.95]`; the
    /// label and blank entries of a cell are not normalised against each other.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, frames: usize, labels: usize) -> Result<Self> {
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..frames).map(|_| (0..n).map(|_| rng.random_range(0.05..0.95)).collect()).collect()
        };
        let p_label = draw(labels);
        let p_blank = draw(labels + 1);
        Self::from_probs(frames, labels, p_label, p_blank)
    }

    /// `T`.
    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `U`.
    #[inline]
    pub fn labels(&self) -> usize {
        self.labels
    }

    /// `ln P(y_{u+1} | t, u)` for `t in 1..=T`, `u in 0..U`.
    #[inline]
    pub fn log_label(&self, t: usize, u: usize) -> f64 {
        *self.log_label.get(t - 1, u)
    }

    /// `ln P(blank | t, u)` for `t in 1..=T`, `u in 0..=U`.
    #[inline]
    pub fn log_blank(&self, t: usize, u: usize) -> f64 {
        *self.log_blank.get(t - 1, u)
    }

    pub fn log_prob(&self, kind: Emission, t: usize, u: usize) -> f64 {
        match kind {
            Emission::Label => self.log_label(t, u),
            Emission::Blank => self.log_blank(t, u),
        }
    }

    pub fn prob(&self, kind: Emission, t: usize, u: usize) -> f64 {
        self.log_prob(kind, t, u).exp()
    }

    /// True when `(t, u)` addresses an existing entry of the given kind.
    pub fn has_entry(&self, kind: Emission, t: usize, u: usize) -> bool {
        let u_max = match kind {
            Emission::Label => self.labels,
            Emission::Blank => self.labels + 1,
        };
        (1..=self.frames).contains(&t) && u < u_max
    }

    /// Copy with one entry replaced by the linear probability `p`.
    ///
    /// Perturbation may push `p` above one; the rest of the lattice is left
    /// untouched and nothing is renormalised.
    pub fn with_prob(&self, kind: Emission, t: usize, u: usize, p: f64) -> Result<Self> {
        if !self.has_entry(kind, t, u) {
            return Err(Error::invalid(format!("no {kind:?} entry at ({t},{u})")));
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::invalid(format!("probability {p} must be finite and non-negative")));
        }
        let mut out = self.clone();
        let grid = match kind {
            Emission::Label => &mut out.log_label,
            Emission::Blank => &mut out.log_blank,
        };
        *grid.get_mut(t - 1, u) = p.ln();
        Ok(out)
    }

    pub(crate) fn check_shape(&self, frames: usize, labels: usize) -> Result<()> {
        if self.frames != frames || self.labels != labels {
            return Err(Error::invalid(format!(
                "shape mismatch: lattice is T={} U={}, expected T={frames} U={labels}",
                self.frames, self.labels
            )));
        }
        Ok(())
    }
}

/// JSON layout: `{ "T", "U", "log_p_label", "log_p_blank" }`, row `t - 1`,
/// column `u`. Negative infinity is written as `null`.
#[derive(Serialize, Deserialize)]
struct LatticeFile {
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "U")]
    labels: usize,
    log_p_label: Vec<Vec<Option<f64>>>,
    log_p_blank: Vec<Vec<Option<f64>>>,
}

fn encode_rows(grid: &Grid<f64>) -> Vec<Vec<Option<f64>>> {
    grid.to_rows().into_iter().map(|r| r.into_iter().map(|v| v.is_finite().then_some(v)).collect()).collect()
}

fn decode_rows(rows: Vec<Vec<Option<f64>>>) -> Vec<Vec<f64>> {
    rows.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect()).collect()
}

impl TryFrom<LatticeFile> for EmissionLattice {
    type Error = Error;

    fn try_from(f: LatticeFile) -> Result<Self> {
        EmissionLattice::new(f.frames, f.labels, decode_rows(f.log_p_label), decode_rows(f.log_p_blank))
    }
}

impl From<EmissionLattice> for LatticeFile {
    fn from(l: EmissionLattice) -> Self {
        LatticeFile {
            frames: l.frames,
            labels: l.labels,
            log_p_label: encode_rows(&l.log_label),
            log_p_blank: encode_rows(&l.log_blank),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_positive_log_probability() {
        let err = EmissionLattice::new(1, 0, vec![], vec![vec![0.1]]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = EmissionLattice::new(2, 1, vec![vec![-1.0], vec![]], vec![vec![-1.0, -1.0]; 2]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn json_round_trip_keeps_negative_infinity() {
        let lattice = EmissionLattice::new(
            2,
            1,
            vec![vec![f64::NEG_INFINITY], vec![-0.5]],
            vec![vec![-0.1, -0.2], vec![-0.3, f64::NEG_INFINITY]],
        )
        .unwrap();
        let text = serde_json::to_string(&lattice).unwrap();
        assert!(text.contains("\"T\":2") && text.contains("null"));
        let back: EmissionLattice = serde_json::from_str(&text).unwrap();
        assert_eq!(back, lattice);
    }

    #[test]
    fn json_accepts_label_free_lattice_without_rows() {
        let l: EmissionLattice =
            serde_json::from_str(r#"{"T":2,"U":0,"log_p_label":[],"log_p_blank":[[-0.1],[-0.2]]}"#).unwrap();
        assert_eq!((l.frames(), l.labels()), (2, 0));
    }

    #[test]
    fn with_prob_leaves_other_entries() {
        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let p = l.with_prob(Emission::Blank, 2, 1, 0.25).unwrap();
        assert!((p.prob(Emission::Blank, 2, 1) - 0.25).abs() < 1e-15);
        assert_eq!(p.log_blank(1, 1), l.log_blank(1, 1));
        assert!(l.with_prob(Emission::Label, 1, 1, 0.5).is_err());
    }
}
