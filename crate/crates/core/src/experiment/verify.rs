//! Seeded oracle and finite-difference checks over random lattices.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{band_masks, fastemit_grads, masked_grad_probs, masked_loss, MaskField};
use crate::error::Result;
use crate::latency::{expected_delays, latency_grads, mlt_factor, mlt_grads, DelayField, ExpectedDelays, ReferenceAlignment};
use crate::lattice::{loss_grad_probs, transducer_loss, EmissionLattice, FbTables};
use crate::model::stream_seed;
use crate::oracle::{enumerate_alignments, finite_diff, oracle_expected_delay, oracle_likelihood};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub max_frames: usize,
    pub max_labels: usize,
    /// Lattices for the oracle, diagonal, delay and mask checks.
    pub lattices: usize,
    /// Lattices for the finite-difference checks (at most 5 frames, 3 labels).
    pub fd_lattices: usize,
    pub seed: u64,
    /// Negative control: corrupt one backward value before every check that
    /// reads it.
    pub perturb_beta: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { max_frames: 6, max_labels: 4, lattices: 500, fd_lattices: 50, seed: 0, perturb_beta: false }
    }
}

/// The first failing instance, kept for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailingCase {
    pub check: String,
    pub detail: String,
    pub lattice: EmissionLattice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceAlignment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error seen, in the check's own measure.
    pub worst: f64,
    pub tolerance: f64,
    pub first_failure: Option<FailingCase>,
}

impl CheckOutcome {
    fn new(name: &str, tolerance: f64) -> Self {
        CheckOutcome { name: name.into(), cases: 0, failures: 0, worst: 0.0, tolerance, first_failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, err: f64, case: impl FnOnce() -> FailingCase) {
        self.cases += 1;
        let err = if err.is_nan() { f64::INFINITY } else { err };
        self.worst = self.worst.max(err);
        if err > self.tolerance {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(case());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    pub fn first_failure(&self) -> Option<&FailingCase> {
        self.checks.iter().find_map(|c| c.first_failure.as_ref())
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>7} {:>8} {:>11} {:>9}  result", "check", "cases", "failures", "worst", "tol")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} {:>7} {:>8} {:>11.3e} {:>9.1e}  {}",
                c.name,
                c.cases,
                c.failures,
                c.worst,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// `|a - n| / max(|a|, |n|, floor / tol)`: below `tol` exactly when the
/// relative error is below `tol` or the absolute error below `floor`.
fn rel_err(analytic: f64, numeric: f64, floor: f64, tol: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor / tol)
}

struct Instance {
    lattice: EmissionLattice,
    reference: ReferenceAlignment,
}

fn instance(seed: u64, tag: &str, i: usize, max_frames: usize, max_labels: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("{tag}-{i}")));
    let frames = rng.random_range(1..=max_frames.max(1));
    let labels = rng.random_range(0..=max_labels);
    let lattice = EmissionLattice::random(&mut rng, frames, labels)?;
    let mut times: Vec<usize> = (0..labels).map(|_| rng.random_range(1..=frames)).collect();
    times.sort_unstable();
    let eos_frame = times.last().copied().unwrap_or(1);
    Ok(Instance { lattice, reference: ReferenceAlignment { label_times: times, eos_frame } })
}

fn tables(lattice: &EmissionLattice, perturb: bool) -> Result<FbTables> {
    let mut fb = FbTables::compute(lattice, None)?;
    if perturb {
        fb.perturb_beta_for_testing(lattice.frames(), lattice.labels(), 0.1);
    }
    Ok(fb)
}

pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    let mut likelihood = CheckOutcome::new("oracle likelihood", 1e-9);
    let mut diagonal = CheckOutcome::new("diagonal identity", 1e-9);
    let mut delays_check = CheckOutcome::new("expected delay vs oracle", 1e-9);
    let mut masks_check = CheckOutcome::new("masked likelihood vs oracle", 1e-9);
    let mut widening = CheckOutcome::new("buffer widening monotone", 1e-12);
    let mut loss_fd = CheckOutcome::new("loss gradient fd", 1e-5);
    let mut latency_fd = CheckOutcome::new("latency gradient fd", 1e-5);
    let mut scaling = CheckOutcome::new("mlt/fastemit factorisation", 1e-12);

    for i in 0..config.lattices {
        let Instance { lattice, reference } = instance(config.seed, "oracle", i, config.max_frames, config.max_labels)?;
        let (frames, labels) = (lattice.frames(), lattice.labels());
        let paths = enumerate_alignments(frames, labels)?;
        let fb = tables(&lattice, config.perturb_beta)?;
        let case = |check: &str, detail: String| FailingCase {
            check: check.into(),
            detail,
            lattice: lattice.clone(),
            reference: Some(reference.clone()),
            masks: None,
        };

        let oracle = oracle_likelihood(&lattice, &paths, None);
        let err = (fb.log_likelihood() - oracle.ln()).abs();
        likelihood.record(err, || case("oracle likelihood", format!("forward {} oracle {}", fb.log_likelihood(), oracle.ln())));

        let mut worst = 0.0f64;
        for n in 1..=frames + labels + 1 {
            let total: f64 = fb
                .diagonal_cells(n)
                .into_iter()
                .map(|(t, u)| (fb.log_alpha(t, u) + fb.log_beta(t, u) - fb.log_likelihood()).exp())
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
        diagonal.record(worst, || case("diagonal identity", format!("worst relative deviation {worst:e}")));

        let delays = DelayField::from_reference(&reference, frames, labels)?;
        let dbar = expected_delays(&fb, &delays)?;
        let worst = (1..=frames + labels + 1)
            .map(|n| (dbar.get(n) - oracle_expected_delay(&lattice, &paths, &delays, n)).abs())
            .fold(0.0, f64::max);
        delays_check.record(worst, || case("expected delay vs oracle", format!("worst deviation {worst:e}")));

        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &format!("masks-{i}")));
        let (b_left, b_right) = (rng.random_range(0..=frames), rng.random_range(0..=frames));
        let narrow = band_masks(&reference, b_left, b_right, frames, labels)?;
        let wide = band_masks(&reference, b_left + 1, b_right + 1, frames, labels)?;
        if narrow.check_feasible().is_ok() {
            let (loss, mut mfb) = masked_loss(&lattice, &narrow)?;
            if config.perturb_beta {
                mfb.perturb_beta_for_testing(frames, labels, 0.1);
            }
            let oracle = oracle_likelihood(&lattice, &paths, Some(&narrow));
            let err = (-loss - oracle.ln()).abs();
            let case_m = || FailingCase { masks: Some(narrow.clone()), ..case("masked likelihood vs oracle", format!("masked {} oracle {}", -loss, oracle.ln())) };
            masks_check.record(err, case_m);
            let (wide_loss, _) = masked_loss(&lattice, &wide)?;
            let drop = (wide_loss - loss).max(0.0);
            widening.record(drop, || FailingCase { masks: Some(narrow.clone()), ..case("buffer widening monotone", format!("narrow {loss} wide {wide_loss}")) });
            // Pruned transitions must carry no gradient.
            let g = masked_grad_probs(&mfb, &narrow)?;
            let leak = g
                .entries()
                .filter(|&(kind, t, u, _)| match kind {
                    crate::lattice::Emission::Label => !narrow.label_allowed(t, u + 1),
                    crate::lattice::Emission::Blank => !narrow.blank_allowed(t, u),
                })
                .map(|(_, _, _, v)| v.abs())
                .fold(0.0, f64::max);
            masks_check.record(leak, || FailingCase { masks: Some(narrow.clone()), ..case("masked likelihood vs oracle", format!("gradient {leak} on a pruned transition")) });
        }
        let open = MaskField::all_open(frames, labels);
        let (open_loss, _) = masked_loss(&lattice, &open)?;
        masks_check.record((open_loss + fb.log_likelihood()).abs(), || case("masked likelihood vs oracle", "all-open masks differ from the plain loss".into()));
    }

    for i in 0..config.fd_lattices {
        let Instance { lattice, reference } = instance(config.seed, "fd", i, config.max_frames.min(5), config.max_labels.min(3))?;
        let (frames, labels) = (lattice.frames(), lattice.labels());
        let fb = tables(&lattice, config.perturb_beta)?;
        let grads = loss_grad_probs(&fb, &lattice)?;
        let delays = DelayField::from_reference(&reference, frames, labels)?;
        let dbar = expected_delays(&fb, &delays)?;
        let lat = latency_grads(&fb, &delays, &dbar)?;
        let case = |check: &str, detail: String| FailingCase {
            check: check.into(),
            detail,
            lattice: lattice.clone(),
            reference: Some(reference.clone()),
            masks: None,
        };
        for (kind, t, u, analytic) in grads.entries() {
            let numeric = finite_diff(|l| Ok(transducer_loss(l)?.0), &lattice, (t, u), kind, 1e-6)?;
            let err = rel_err(analytic, numeric, 1e-8, 1e-5);
            loss_fd.record(err, || case("loss gradient fd", format!("{kind:?} ({t},{u}) analytic {analytic} numeric {numeric}")));

            let n = t + u + 1;
            let dbar_n = |l: &EmissionLattice| -> Result<f64> {
                let fb = FbTables::compute(l, None)?;
                Ok(expected_delays(&fb, &delays)?.get(n))
            };
            let analytic = lat.get(kind, t, u);
            let numeric = finite_diff(dbar_n, &lattice, (t, u), kind, 1e-6)?;
            let err = rel_err(analytic, numeric, 1e-8, 1e-5);
            latency_fd.record(err, || case("latency gradient fd", format!("{kind:?} ({t},{u}) analytic {analytic} numeric {numeric}")));
        }

        let lambda = 0.1 * (i % 7) as f64;
        let mlt = mlt_grads(&grads, &delays, &dbar, lambda)?;
        let fe = fastemit_grads(&grads, lambda)?;
        let worst = scaling_error(&grads, &mlt, &fe, &delays, &dbar, lambda);
        scaling.record(worst, || case("mlt/fastemit factorisation", format!("lambda {lambda}, worst {worst:e}")));
    }

    Ok(VerifyReport { checks: vec![likelihood, diagonal, delays_check, masks_check, widening, loss_fd, latency_fd, scaling] })
}

fn scaling_error(
    grads: &crate::lattice::GradientField,
    mlt: &crate::lattice::GradientField,
    fe: &crate::lattice::GradientField,
    delays: &DelayField,
    dbar: &ExpectedDelays,
    lambda: f64,
) -> f64 {
    grads
        .entries()
        .map(|(kind, t, u, g)| {
            let expect_mlt = g * mlt_factor(kind, t, u, delays, dbar, lambda);
            let expect_fe = match kind {
                crate::lattice::Emission::Label => g * (1.0 + lambda),
                crate::lattice::Emission::Blank => g,
            };
            (mlt.get(kind, t, u) - expect_mlt).abs().max((fe.get(kind, t, u) - expect_fe).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_verify(&VerifyConfig { lattices: 60, fd_lattices: 10, ..Default::default() }).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn perturbed_beta_is_caught() {
        let report = run_verify(&VerifyConfig { lattices: 20, fd_lattices: 5, perturb_beta: true, ..Default::default() }).unwrap();
        assert!(!report.passed());
        let names: Vec<_> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"diagonal identity"), "{names:?}");
        assert!(report.first_failure().is_some());
    }
}
