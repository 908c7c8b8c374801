use serde::{Deserialize, Serialize};

use super::{Emission, EmissionLattice, FbTables};
use crate::constraint::MaskField;
use crate::error::{Error, Result};
use crate::grid::{Grid, Grid3};

/// Per-cell partial derivatives with respect to the label and blank emission
/// probabilities, in linear space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    frames: usize,
    labels: usize,
    d_label: Grid<f64>,
    d_blank: Grid<f64>,
}

impl GradientField {
    pub fn zeros(frames: usize, labels: usize) -> Self {
        GradientField {
            frames,
            labels,
            d_label: Grid::filled(frames, labels, 0.0),
            d_blank: Grid::filled(frames, labels + 1, 0.0),
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn label(&self, t: usize, u: usize) -> f64 {
        *self.d_label.get(t - 1, u)
    }

    #[inline]
    pub fn blank(&self, t: usize, u: usize) -> f64 {
        *self.d_blank.get(t - 1, u)
    }

    pub fn get(&self, kind: Emission, t: usize, u: usize) -> f64 {
        match kind {
            Emission::Label => self.label(t, u),
            Emission::Blank => self.blank(t, u),
        }
    }

    #[inline]
    pub(crate) fn set_label(&mut self, t: usize, u: usize, v: f64) {
        *self.d_label.get_mut(t - 1, u) = v;
    }

    #[inline]
    pub(crate) fn set_blank(&mut self, t: usize, u: usize, v: f64) {
        *self.d_blank.get_mut(t - 1, u) = v;
    }

    /// Every `(kind, t, u)` entry with its value, label entries first.
    pub fn entries(&self) -> impl Iterator<Item = (Emission, usize, usize, f64)> + '_ {
        let labels = (1..=self.frames)
            .flat_map(move |t| (0..self.labels).map(move |u| (Emission::Label, t, u, self.label(t, u))));
        let blanks = (1..=self.frames)
            .flat_map(move |t| (0..=self.labels).map(move |u| (Emission::Blank, t, u, self.blank(t, u))));
        labels.chain(blanks)
    }

    /// Cellwise transform `(kind, t, u, value) -> value`.
    pub fn map_entries(&self, f: impl Fn(Emission, usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for t in 1..=self.frames {
            for u in 0..self.labels {
                out.set_label(t, u, f(Emission::Label, t, u, self.label(t, u)));
            }
            for u in 0..=self.labels {
                out.set_blank(t, u, f(Emission::Blank, t, u, self.blank(t, u)));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.d_label.as_slice().iter().chain(self.d_blank.as_slice()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_shape(&self, frames: usize, labels: usize) -> Result<()> {
        if self.frames != frames || self.labels != labels {
            return Err(Error::invalid(format!(
                "gradient field is T={} U={}, expected T={frames} U={labels}",
                self.frames, self.labels
            )));
        }
        Ok(())
    }
}

/// `alpha(t,u) beta(next) / P(Y|X)` for every transition out of `(t, u)`,
/// zero where a mask prunes the transition.
pub(crate) fn transition_sensitivity(fb: &FbTables, mask: Option<&MaskField>) -> Result<GradientField> {
    fb.require_finite()?;
    let (frames, labels) = (fb.frames(), fb.labels());
    let ll = fb.log_likelihood();
    let mut out = GradientField::zeros(frames, labels);
    for t in 1..=frames {
        for u in 0..=labels {
            let a = fb.log_alpha(t, u);
            if u < labels && mask.is_none_or(|m| m.label_allowed(t, u + 1)) {
                out.set_label(t, u, (a + fb.log_beta(t, u + 1) - ll).exp());
            }
            if mask.is_none_or(|m| m.blank_allowed(t, u)) {
                out.set_blank(t, u, (a + fb.log_beta(t + 1, u) - ll).exp());
            }
        }
    }
    Ok(out)
}

/// Gradient of the transducer loss with respect to the two emission
/// probabilities of every cell: `-alpha(t,u) beta(t,u+1) / P(Y|X)` for labels
/// and `-alpha(t,u) beta(t+1,u) / P(Y|X)` for blanks.
pub fn loss_grad_probs(fb: &FbTables, lattice: &EmissionLattice) -> Result<GradientField> {
    lattice.check_shape(fb.frames(), fb.labels())?;
    Ok(transition_sensitivity(fb, None)?.map_entries(|_, _, _, w| -w))
}

/// Chain rule through the softmax of each cell.
///
/// `full_dist` holds, for every `(t, u)`, the probability vector over the
/// extended vocabulary (index 0 is blank, token `k` sits at index `k`);
/// `reference_labels` are the tokens `y_1..y_U`. The result has the same
/// layout as `full_dist` and holds `dL/dz_k` for the pre-softmax scores.
pub fn logits_grad(grad: &GradientField, full_dist: &Grid3, reference_labels: &[usize]) -> Result<Grid3> {
    let (frames, labels) = (grad.frames(), grad.labels());
    if full_dist.rows() != frames || full_dist.cols() != labels + 1 {
        return Err(Error::invalid(format!(
            "distribution table is {}x{}, expected {frames}x{}",
            full_dist.rows(),
            full_dist.cols(),
            labels + 1
        )));
    }
    if reference_labels.len() != labels {
        return Err(Error::invalid(format!("{} reference labels for U={labels}", reference_labels.len())));
    }
    let vocab = full_dist.depth();
    if let Some(&bad) = reference_labels.iter().find(|&&k| k == 0 || k >= vocab) {
        return Err(Error::invalid(format!("reference label {bad} outside 1..{vocab}")));
    }
    let mut out = Grid3::zeros(frames, labels + 1, vocab);
    for row in 0..frames {
        for u in 0..=labels {
            let p = full_dist.cell(row, u);
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("distribution at ({}, {u}) sums to {total}", row + 1)));
            }
            // Only blank and the next reference label carry upstream gradient.
            let g_blank = grad.blank(row + 1, u);
            let (label_idx, g_label) = if u < labels { (reference_labels[u], grad.label(row + 1, u)) } else { (0, 0.0) };
            let inner = g_blank * p[0] + g_label * p[label_idx];
            let dz = out.cell_mut(row, u);
            for (k, slot) in dz.iter_mut().enumerate() {
                let mut own = if k == 0 { g_blank } else { 0.0 };
                if u < labels && k == label_idx {
                    own += g_label;
                }
                *slot = p[k] * (own - inner);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::transducer_loss;

    #[test]
    fn single_blank_gradient() {
        let l = EmissionLattice::from_probs(1, 0, vec![vec![]], vec![vec![0.8]]).unwrap();
        let (_, fb) = transducer_loss(&l).unwrap();
        let g = loss_grad_probs(&fb, &l).unwrap();
        assert!((g.blank(1, 0) + 1.25).abs() < 1e-12);
    }

    #[test]
    fn uniform_lattice_gradients() {
        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let (_, fb) = transducer_loss(&l).unwrap();
        let g = loss_grad_probs(&fb, &l).unwrap();
        assert!((g.label(1, 0) + 1.0).abs() < 1e-12);
        // Blank at (2, 0) leads to (3, 0), which cannot finish.
        assert_eq!(g.blank(2, 0), 0.0);
        assert!(g.entries().all(|(_, _, _, v)| v <= 0.0));
    }

    #[test]
    fn softmax_chain_rule_on_two_token_cell() {
        let mut g = GradientField::zeros(1, 0);
        g.set_blank(1, 0, -1.25);
        let dist = Grid3::from_vec(1, 1, 2, vec![0.8, 0.2]).unwrap();
        let dz = logits_grad(&g, &dist, &[]).unwrap();
        assert!((dz.cell(0, 0)[0] + 0.2).abs() < 1e-12);
        assert!((dz.cell(0, 0)[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_logit_gradient() {
        let g = GradientField::zeros(2, 1);
        let dist = Grid3::from_vec(2, 2, 3, vec![1.0 / 3.0; 12]).unwrap();
        let dz = logits_grad(&g, &dist, &[2]).unwrap();
        assert!(dz.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logit_gradient_rows_sum_to_zero() {
        let l = EmissionLattice::uniform(2, 1, 0.3, 0.5).unwrap();
        let (_, fb) = transducer_loss(&l).unwrap();
        let g = loss_grad_probs(&fb, &l).unwrap();
        let dist = Grid3::from_vec(2, 2, 3, [0.5, 0.2, 0.3].repeat(4)).unwrap();
        let dz = logits_grad(&g, &dist, &[2]).unwrap();
        for row in 0..2 {
            for u in 0..2 {
                assert!(dz.cell(row, u).iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_grad_rejects_out_of_vocabulary_label() {
        let g = GradientField::zeros(1, 1);
        let dist = Grid3::from_vec(1, 2, 3, vec![1.0 / 3.0; 6]).unwrap();
        assert!(matches!(logits_grad(&g, &dist, &[3]), Err(Error::InvalidInput(_))));
        assert!(matches!(logits_grad(&g, &dist, &[0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn logits_grad_rejects_unnormalised_rows() {
        let g = GradientField::zeros(1, 0);
        let dist = Grid3::from_vec(1, 1, 2, vec![0.5, 0.4]).unwrap();
        assert!(matches!(logits_grad(&g, &dist, &[]), Err(Error::InvalidInput(_))));
    }
}
