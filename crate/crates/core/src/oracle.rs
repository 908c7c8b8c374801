//! Brute-force ground truth by exhaustive alignment enumeration, and a central
//! finite-difference probe.
//!
//! Nothing here calls into the forward-backward code. Alignments are walked
//! move by move in probability space so that agreement with the dynamic
//! program is evidence, not tautology.

use crate::constraint::MaskField;
use crate::error::{Error, Result};
use crate::latency::DelayField;
use crate::lattice::{Emission, EmissionLattice};

/// Default upper bound on the number of enumerated alignments.
pub const DEFAULT_PATH_CAP: u128 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Blank,
    Label,
}

/// One alignment: `T + U` moves from `(1, 0)` to `(T + 1, U)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub moves: Vec<Move>,
    /// The `T + U + 1` visited cells, origin and virtual terminal included.
    pub cells: Vec<(usize, usize)>,
}

impl AlignmentPath {
    fn from_moves(moves: Vec<Move>) -> Self {
        let mut cells = Vec::with_capacity(moves.len() + 1);
        let (mut t, mut u) = (1, 0);
        cells.push((t, u));
        for m in &moves {
            match m {
                Move::Blank => t += 1,
                Move::Label => u += 1,
            }
            cells.push((t, u));
        }
        AlignmentPath { moves, cells }
    }

    /// Frames at which labels are emitted, in order.
    pub fn label_frames(&self) -> Vec<usize> {
        self.moves
            .iter()
            .zip(&self.cells)
            .filter(|(m, _)| **m == Move::Label)
            .map(|(_, &(t, _))| t)
            .collect()
    }

    /// The cell on diagonal `t + u = n`.
    pub fn cell_on_diagonal(&self, n: usize) -> Option<(usize, usize)> {
        self.cells.iter().copied().find(|&(t, u)| t + u == n)
    }
}

/// `C(n, k)` with overflow reported as `None`.
pub fn binomial(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n.saturating_sub(k));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// All `C(T - 1 + U, U)` alignments under the default cap.
pub fn enumerate_alignments(frames: usize, labels: usize) -> Result<Vec<AlignmentPath>> {
    enumerate_alignments_capped(frames, labels, DEFAULT_PATH_CAP)
}

pub fn enumerate_alignments_capped(frames: usize, labels: usize, cap: u128) -> Result<Vec<AlignmentPath>> {
    if frames == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    let count = binomial((frames - 1 + labels) as u128, labels as u128).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::InstanceTooLarge { count, cap });
    }
    // The last move is always the blank out of (T, U); the first T - 1 + U
    // moves interleave T - 1 blanks with U labels.
    let mut out = Vec::with_capacity(count as usize);
    let mut prefix = Vec::with_capacity(frames + labels);
    interleave(frames - 1, labels, &mut prefix, &mut out);
    Ok(out)
}

fn interleave(blanks: usize, labels: usize, prefix: &mut Vec<Move>, out: &mut Vec<AlignmentPath>) {
    if blanks == 0 && labels == 0 {
        let mut moves = prefix.clone();
        moves.push(Move::Blank);
        out.push(AlignmentPath::from_moves(moves));
        return;
    }
    if labels > 0 {
        prefix.push(Move::Label);
        interleave(blanks, labels - 1, prefix, out);
        prefix.pop();
    }
    if blanks > 0 {
        prefix.push(Move::Blank);
        interleave(blanks - 1, labels, prefix, out);
        prefix.pop();
    }
}

/// Probability of one alignment, or zero if a mask forbids one of its moves.
pub fn path_probability(lattice: &EmissionLattice, path: &AlignmentPath, masks: Option<&MaskField>) -> f64 {
    let mut p = 1.0;
    for (m, &(t, u)) in path.moves.iter().zip(&path.cells) {
        match m {
            Move::Blank => {
                if masks.is_some_and(|mk| !mk.blank_allowed(t, u)) {
                    return 0.0;
                }
                p *= lattice.prob(Emission::Blank, t, u);
            }
            Move::Label => {
                if masks.is_some_and(|mk| !mk.label_allowed(t, u + 1)) {
                    return 0.0;
                }
                p *= lattice.prob(Emission::Label, t, u);
            }
        }
    }
    p
}

/// Compensated sum of non-negative terms, smallest first.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// `P(Y|X)` as an explicit sum over (mask-surviving) alignments.
pub fn oracle_likelihood(lattice: &EmissionLattice, paths: &[AlignmentPath], masks: Option<&MaskField>) -> f64 {
    stable_sum(paths.iter().map(|p| path_probability(lattice, p, masks)).collect())
}

/// Path-weighted expected delay on diagonal `n`.
pub fn oracle_expected_delay(lattice: &EmissionLattice, paths: &[AlignmentPath], delays: &DelayField, n: usize) -> f64 {
    let probs: Vec<f64> = paths.iter().map(|p| path_probability(lattice, p, None)).collect();
    let total = stable_sum(probs.clone());
    let weighted = paths
        .iter()
        .zip(&probs)
        .map(|(path, &p)| {
            let (t, u) = path.cell_on_diagonal(n).expect("every alignment crosses every diagonal");
            p * delays.get(t, u)
        })
        .collect();
    stable_sum(weighted) / total
}

/// Central difference `(f(p + h) - f(p - h)) / 2h` in the raw probability of
/// one entry. The step halves (up to ten times) until `p - h > 0`.
pub fn finite_diff<F>(f: F, lattice: &EmissionLattice, cell: (usize, usize), kind: Emission, step: f64) -> Result<f64>
where
    F: Fn(&EmissionLattice) -> Result<f64>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let (t, u) = cell;
    if !lattice.has_entry(kind, t, u) {
        return Err(Error::invalid(format!("no {kind:?} entry at ({t},{u})")));
    }
    let p = lattice.prob(kind, t, u);
    let mut h = step;
    for _ in 0..=10 {
        if p - h > 0.0 {
            let up = f(&lattice.with_prob(kind, t, u, p + h)?)?;
            let down = f(&lattice.with_prob(kind, t, u, p - h)?)?;
            return Ok((up - down) / (2.0 * h));
        }
        h /= 2.0;
    }
    Err(Error::invalid(format!("probability {p} at ({t},{u}) too small for a central difference")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::{tau_from_reference, delay_matrix, ReferenceAlignment};

    #[test]
    fn path_counts() {
        assert_eq!(enumerate_alignments(2, 1).unwrap().len(), 2);
        assert_eq!(enumerate_alignments(1, 0).unwrap().len(), 1);
        assert_eq!(enumerate_alignments(4, 2).unwrap().len(), 10);
        for frames in 1..7 {
            for labels in 0..5 {
                let n = enumerate_alignments(frames, labels).unwrap().len() as u128;
                assert_eq!(n, binomial((frames - 1 + labels) as u128, labels as u128).unwrap());
            }
        }
    }

    #[test]
    fn paths_are_distinct_and_well_formed() {
        let paths = enumerate_alignments(4, 3).unwrap();
        let set: std::collections::HashSet<_> = paths.iter().map(|p| p.moves.clone()).collect();
        assert_eq!(set.len(), paths.len());
        for p in &paths {
            assert_eq!(p.moves.len(), 4 + 3);
            assert_eq!(*p.moves.last().unwrap(), Move::Blank);
            assert_eq!(*p.cells.last().unwrap(), (5, 3));
            for (n, &(t, u)) in p.cells.iter().enumerate() {
                assert_eq!(t + u, n + 1);
            }
            assert_eq!(p.label_frames().len(), 3);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_alignments_capped(10, 10, 1000).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge { count: 92378, cap: 1000 }));
    }

    #[test]
    fn uniform_likelihood() {
        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let paths = enumerate_alignments(2, 1).unwrap();
        assert!((oracle_likelihood(&l, &paths, None) - 0.25).abs() < 1e-15);
        let open = MaskField::all_open(2, 1);
        assert_eq!(oracle_likelihood(&l, &paths, Some(&open)), oracle_likelihood(&l, &paths, None));
    }

    #[test]
    fn delta_lattice_likelihood_is_one() {
        // only the path blank, label, blank has probability one
        let l = EmissionLattice::from_probs(2, 1, vec![vec![0.0], vec![1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let paths = enumerate_alignments(2, 1).unwrap();
        assert_eq!(oracle_likelihood(&l, &paths, None), 1.0);
    }

    #[test]
    fn expected_delay_small_case() {
        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let paths = enumerate_alignments(2, 1).unwrap();
        let r = ReferenceAlignment { label_times: vec![1], eos_frame: 2 };
        let d = delay_matrix(&tau_from_reference(&r, 2, 1).unwrap(), 2, 1).unwrap();
        assert!((oracle_expected_delay(&l, &paths, &d, 2) - 0.5).abs() < 1e-15);
        assert_eq!(oracle_expected_delay(&l, &paths, &d, 1), 0.0);
    }

    #[test]
    fn finite_diff_of_neg_log() {
        let l = EmissionLattice::from_probs(1, 0, vec![vec![]], vec![vec![0.8]]).unwrap();
        let paths = enumerate_alignments(1, 0).unwrap();
        let f = |x: &EmissionLattice| Ok(-oracle_likelihood(x, &paths, None).ln());
        let g = finite_diff(f, &l, (1, 0), Emission::Blank, 1e-6).unwrap();
        assert!((g + 1.25).abs() < 1e-8);
        let c = finite_diff(|_| Ok(3.0), &l, (1, 0), Emission::Blank, 1e-6).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn finite_diff_halves_step_then_fails() {
        let l = EmissionLattice::from_probs(1, 0, vec![vec![]], vec![vec![1e-4]]).unwrap();
        assert!(finite_diff(|x| Ok(x.prob(Emission::Blank, 1, 0)), &l, (1, 0), Emission::Blank, 1e-3).is_ok());
        let z = EmissionLattice::from_probs(1, 0, vec![vec![]], vec![vec![0.0]]).unwrap();
        assert!(finite_diff(|_| Ok(0.0), &z, (1, 0), Emission::Blank, 1e-3).is_err());
        assert!(finite_diff(|_| Ok(0.0), &l, (1, 0), Emission::Blank, 0.0).is_err());
    }
}
