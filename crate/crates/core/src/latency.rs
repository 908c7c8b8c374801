//! Delays relative to a reference alignment, the expected delay on every
//! diagonal of the lattice, and the minimum-latency training gradients.
//!
//! Diagonal `n` is the set of cells with `t + u = n`, `n in 1..=T+U+1`.
//! Every alignment crosses each diagonal exactly once, so the forward-backward
//! posteriors on a diagonal form a distribution and the expected delay there is
//! a plain weighted average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lattice::{diagonal_posteriors, transition_sensitivity, Emission, FbTables, GradientField};

/// Reference emission frame of every label plus the end-of-speech frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceAlignment {
    /// `t_1 <= ... <= t_U`, each in `1..=T`.
    pub label_times: Vec<usize>,
    /// Frame in `1..=T` at which speech ends.
    pub eos_frame: usize,
}

impl ReferenceAlignment {
    pub fn validate(&self, frames: usize, labels: usize) -> Result<()> {
        if self.label_times.len() != labels {
            return Err(Error::invalid(format!("{} reference times for U={labels}", self.label_times.len())));
        }
        let in_range = |t: usize| (1..=frames).contains(&t);
        if let Some(&t) = self.label_times.iter().find(|&&t| !in_range(t)) {
            return Err(Error::invalid(format!("reference time {t} outside 1..={frames}")));
        }
        if self.label_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("reference times must be non-decreasing"));
        }
        if !in_range(self.eos_frame) {
            return Err(Error::invalid(format!("eos frame {} outside 1..={frames}", self.eos_frame)));
        }
        Ok(())
    }
}

/// Reference time on each diagonal: the frame of the single cell that the
/// reference path visits on diagonal `n`. Index `n - 1`.
///
/// The path starts at `(1, 0)`, walks blanks until `t = t_u` before each label
/// step, and finishes with blanks to `(T + 1, U)`.
pub fn tau_from_reference(reference: &ReferenceAlignment, frames: usize, labels: usize) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    if reference.label_times.len() != labels {
        return Err(Error::invalid(format!("{} reference times for U={labels}", reference.label_times.len())));
    }
    let mut prev = 1;
    for &t in &reference.label_times {
        if !(1..=frames).contains(&t) || t < prev {
            return Err(Error::invalid(format!("reference times {:?} must be non-decreasing in 1..={frames}", reference.label_times)));
        }
        prev = t;
    }
    let mut tau = Vec::with_capacity(frames + labels + 1);
    let mut t = 1;
    tau.push(t);
    for &target in &reference.label_times {
        while t < target {
            t += 1;
            tau.push(t);
        }
        // label step keeps the frame
        tau.push(t);
    }
    while t <= frames {
        t += 1;
        tau.push(t);
    }
    debug_assert_eq!(tau.len(), frames + labels + 1);
    Ok(tau)
}

/// Delays `d(t, u)` on every cell `t in 1..=T+1`, `u in 0..=U`, in frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayField {
    frames: usize,
    labels: usize,
    tau_ref: Vec<usize>,
    d: Grid<f64>,
}

impl DelayField {
    /// `tau_from_reference` followed by [`delay_matrix`].
    pub fn from_reference(reference: &ReferenceAlignment, frames: usize, labels: usize) -> Result<Self> {
        delay_matrix(&tau_from_reference(reference, frames, labels)?, frames, labels)
    }

    /// Arbitrary non-negative delays, row `t - 1` for `t in 1..=T+1`.
    pub fn from_values(frames: usize, labels: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let d = Grid::from_rows(frames + 1, labels + 1, values)
            .ok_or_else(|| Error::invalid(format!("delay table must be {} rows of {} entries", frames + 1, labels + 1)))?;
        if d.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("delays must be finite and non-negative"));
        }
        Ok(DelayField { frames, labels, tau_ref: Vec::new(), d })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    /// Empty when the field was built from explicit values.
    pub fn tau_ref(&self) -> &[usize] {
        &self.tau_ref
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        *self.d.get(t - 1, u)
    }

    fn check_shape(&self, fb: &FbTables) -> Result<()> {
        if fb.frames() != self.frames || fb.labels() != self.labels {
            return Err(Error::invalid("delay field and forward-backward tables disagree in shape"));
        }
        Ok(())
    }
}

/// `d(t, u) = max(0, t - tau_ref(t + u))`.
pub fn delay_matrix(tau_ref: &[usize], frames: usize, labels: usize) -> Result<DelayField> {
    if tau_ref.len() != frames + labels + 1 {
        return Err(Error::invalid(format!("tau_ref has {} entries, expected {}", tau_ref.len(), frames + labels + 1)));
    }
    let mut d = Grid::filled(frames + 1, labels + 1, 0.0);
    for t in 1..=frames + 1 {
        for u in 0..=labels {
            let tau = tau_ref[t + u - 1] as f64;
            *d.get_mut(t - 1, u) = (t as f64 - tau).max(0.0);
        }
    }
    Ok(DelayField { frames, labels, tau_ref: tau_ref.to_vec(), d })
}

/// Posterior-weighted mean delay on every diagonal, index `n - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDelays {
    pub d_bar: Vec<f64>,
}

impl ExpectedDelays {
    /// `d_bar(n)` for `n in 1..=T+U+1`.
    #[inline]
    pub fn get(&self, n: usize) -> f64 {
        self.d_bar[n - 1]
    }

    pub fn mean(&self) -> f64 {
        if self.d_bar.is_empty() {
            0.0
        } else {
            self.d_bar.iter().sum::<f64>() / self.d_bar.len() as f64
        }
    }
}

pub fn expected_delays(fb: &FbTables, delays: &DelayField) -> Result<ExpectedDelays> {
    delays.check_shape(fb)?;
    let last = fb.frames() + fb.labels() + 1;
    let d_bar = (1..=last)
        .map(|n| Ok(diagonal_posteriors(fb, n)?.into_iter().map(|((t, u), w)| w * delays.get(t, u)).sum()))
        .collect::<Result<_>>()?;
    Ok(ExpectedDelays { d_bar })
}

/// Gradient of `d_bar(t + u + 1)` with respect to each emission probability
/// at `(t, u)`:
///
/// - label: `alpha(t,u) beta(t,u+1) / P(Y|X) * (d(t,u+1) - d_bar(t+u+1))`
/// - blank: `alpha(t,u) beta(t+1,u) / P(Y|X) * (d(t+1,u) - d_bar(t+u+1))`
///
/// Entries may have either sign.
pub fn latency_grads(fb: &FbTables, delays: &DelayField, dbar: &ExpectedDelays) -> Result<GradientField> {
    delays.check_shape(fb)?;
    check_dbar(dbar, fb.frames(), fb.labels())?;
    let weights = transition_sensitivity(fb, None)?;
    Ok(weights.map_entries(|kind, t, u, w| {
        if w == 0.0 {
            return 0.0;
        }
        let successor = match kind {
            Emission::Label => delays.get(t, u + 1),
            Emission::Blank => delays.get(t + 1, u),
        };
        w * (successor - dbar.get(t + u + 1))
    }))
}

/// Minimum-latency training gradient: each transducer-loss entry times
/// `1 - lambda_mlt * (d(successor) - d_bar(t + u + 1))`.
///
/// A successor later than the diagonal's expected delay discounts the
/// gradient; an earlier one boosts it.
pub fn mlt_grads(
    trans_grads: &GradientField,
    delays: &DelayField,
    dbar: &ExpectedDelays,
    lambda_mlt: f64,
) -> Result<GradientField> {
    if !(lambda_mlt >= 0.0 && lambda_mlt.is_finite()) {
        return Err(Error::invalid(format!("lambda_mlt must be finite and non-negative, got {lambda_mlt}")));
    }
    trans_grads.check_shape(delays.frames, delays.labels)?;
    check_dbar(dbar, delays.frames, delays.labels)?;
    Ok(trans_grads.map_entries(|kind, t, u, g| g * mlt_factor(kind, t, u, delays, dbar, lambda_mlt)))
}

/// The bracket `1 - lambda (d(successor) - d_bar(t+u+1))` for one entry.
pub fn mlt_factor(kind: Emission, t: usize, u: usize, delays: &DelayField, dbar: &ExpectedDelays, lambda_mlt: f64) -> f64 {
    let successor = match kind {
        Emission::Label => delays.get(t, u + 1),
        Emission::Blank => delays.get(t + 1, u),
    };
    1.0 - lambda_mlt * (successor - dbar.get(t + u + 1))
}

/// Reported scalar `loss + lambda * mean_n d_bar(n)`; training uses [`mlt_grads`].
pub fn mlt_report_loss(loss: f64, dbar: &ExpectedDelays, lambda_mlt: f64) -> f64 {
    loss + lambda_mlt * dbar.mean()
}

fn check_dbar(dbar: &ExpectedDelays, frames: usize, labels: usize) -> Result<()> {
    if dbar.d_bar.len() != frames + labels + 1 {
        return Err(Error::invalid(format!("{} expected delays for {} diagonals", dbar.d_bar.len(), frames + labels + 1)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{loss_grad_probs, transducer_loss, EmissionLattice};

    fn reference(times: &[usize], eos: usize) -> ReferenceAlignment {
        ReferenceAlignment { label_times: times.to_vec(), eos_frame: eos }
    }

    #[test]
    fn tau_small_cases() {
        assert_eq!(tau_from_reference(&reference(&[1], 2), 2, 1).unwrap(), vec![1, 1, 2, 3]);
        assert_eq!(tau_from_reference(&reference(&[], 4), 4, 0).unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(tau_from_reference(&reference(&[2, 2], 3), 3, 2).unwrap(), vec![1, 2, 2, 2, 3, 4]);
    }

    #[test]
    fn tau_rejects_bad_times() {
        assert!(tau_from_reference(&reference(&[3, 2], 3), 3, 2).is_err());
        assert!(tau_from_reference(&reference(&[4], 3), 3, 1).is_err());
        assert!(tau_from_reference(&reference(&[0], 3), 3, 1).is_err());
        assert!(tau_from_reference(&reference(&[1], 3), 3, 2).is_err());
    }

    #[test]
    fn delay_values_small_case() {
        let d = DelayField::from_reference(&reference(&[1], 2), 2, 1).unwrap();
        assert_eq!(d.get(1, 1), 0.0);
        assert_eq!(d.get(2, 0), 1.0);
        assert_eq!(d.get(2, 1), 0.0);
        assert_eq!(d.get(3, 1), 0.0);
        let d = DelayField::from_reference(&reference(&[2, 2], 3), 3, 2).unwrap();
        assert_eq!(d.get(4, 2), 0.0);
    }

    fn uniform_case() -> (FbTables, DelayField, ExpectedDelays, EmissionLattice) {
        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let (_, fb) = transducer_loss(&l).unwrap();
        let d = DelayField::from_reference(&reference(&[1], 2), 2, 1).unwrap();
        let e = expected_delays(&fb, &d).unwrap();
        (fb, d, e, l)
    }

    #[test]
    fn expected_delay_on_uniform_lattice() {
        let (_, _, e, _) = uniform_case();
        assert_eq!(e.get(1), 0.0);
        assert!((e.get(2) - 0.5).abs() < 1e-15);
        assert_eq!(e.get(3), 0.0);
        assert_eq!(e.get(4), 0.0);
    }

    #[test]
    fn latency_gradient_hand_values() {
        let (fb, d, e, _) = uniform_case();
        let g = latency_grads(&fb, &d, &e).unwrap();
        assert!((g.label(1, 0) + 0.5).abs() < 1e-15);
        assert!((g.blank(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mlt_factors_and_identity() {
        let (fb, d, e, l) = uniform_case();
        let trans = loss_grad_probs(&fb, &l).unwrap();
        assert_eq!(mlt_grads(&trans, &d, &e, 0.0).unwrap(), trans);
        assert!((mlt_factor(Emission::Label, 1, 0, &d, &e, 1.0) - 1.5).abs() < 1e-15);
        assert!((mlt_factor(Emission::Blank, 1, 0, &d, &e, 1.0) - 0.5).abs() < 1e-15);
        let mlt = mlt_grads(&trans, &d, &e, 1.0).unwrap();
        let lat = latency_grads(&fb, &d, &e).unwrap();
        for (kind, t, u, v) in mlt.entries() {
            assert!((v - (trans.get(kind, t, u) + lat.get(kind, t, u))).abs() < 1e-15);
        }
        assert!(mlt_grads(&trans, &d, &e, -1.0).is_err());
    }

    #[test]
    fn report_loss() {
        let (_, _, e, _) = uniform_case();
        assert_eq!(mlt_report_loss(1.5, &e, 0.0), 1.5);
        assert!((mlt_report_loss(4f64.ln(), &e, 1.0) - (4f64.ln() + 0.125)).abs() < 1e-15);
        assert_eq!(mlt_report_loss(2.0, &ExpectedDelays { d_bar: vec![0.0; 4] }, 3.0), 2.0);
    }

    #[test]
    fn reference_path_delta_lattice_has_zero_expected_delay() {
        // T=3, U=2, t = [2, 3]; the reference path is the only non-zero path.
        let r = reference(&[2, 3], 3);
        let tau = tau_from_reference(&r, 3, 2).unwrap();
        let mut p_label = vec![vec![0.0; 2]; 3];
        let mut p_blank = vec![vec![0.0; 3]; 3];
        let (mut t, mut u) = (1, 0);
        for &target in &r.label_times {
            while t < target {
                p_blank[t - 1][u] = 1.0;
                t += 1;
            }
            p_label[t - 1][u] = 1.0;
            u += 1;
        }
        while t <= 3 {
            p_blank[t - 1][u] = 1.0;
            t += 1;
        }
        let l = EmissionLattice::from_probs(3, 2, p_label, p_blank).unwrap();
        let (loss, fb) = transducer_loss(&l).unwrap();
        assert_eq!(loss, 0.0);
        let d = delay_matrix(&tau, 3, 2).unwrap();
        let e = expected_delays(&fb, &d).unwrap();
        assert!(e.d_bar.iter().all(|&v| v == 0.0));
        assert_eq!(latency_grads(&fb, &d, &e).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn injected_delays_are_validated() {
        assert!(DelayField::from_values(1, 0, vec![vec![0.0], vec![-1.0]]).is_err());
        let d = DelayField::from_values(1, 0, vec![vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(d.get(2, 0), 2.0);
        assert!(d.tau_ref().is_empty());
    }
}
