//! Alignment-restricted masking and FastEmit gradient scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lattice::{diagonal_cells, transition_sensitivity, EmissionLattice, FbTables, GradientField};
use crate::latency::ReferenceAlignment;

/// Binary transition masks.
///
/// `m_blank(t, u)`, `t in 1..=T`, `u in 0..=U`, gates the blank emitted at
/// `(t, u)`; `m_label(t, u)`, `u in 1..=U`, gates emitting `y_u` at frame `t`,
/// i.e. the step `(t, u-1) -> (t, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaskFile", into = "MaskFile")]
pub struct MaskField {
    frames: usize,
    labels: usize,
    m_blank: Grid<bool>,
    /// Column `u - 1` holds `m_label(t, u)`.
    m_label: Grid<bool>,
}

impl MaskField {
    /// Everything allowed; equivalent to passing no mask.
    pub fn all_open(frames: usize, labels: usize) -> Self {
        MaskField {
            frames,
            labels,
            m_blank: Grid::filled(frames, labels + 1, true),
            m_label: Grid::filled(frames, labels, true),
        }
    }

    /// Explicit tables: `m_blank` is `T` rows of `U + 1`, `m_label` is `T`
    /// rows of `U` (column `u - 1`). Fails when no complete path survives.
    pub fn new(m_blank: Vec<Vec<bool>>, m_label: Vec<Vec<bool>>) -> Result<Self> {
        let frames = m_blank.len();
        let labels = m_blank.first().map_or(0, |r| r.len()).saturating_sub(1);
        if frames == 0 || m_blank[0].is_empty() {
            return Err(Error::invalid("mask needs at least one frame and one blank column"));
        }
        let m_label = if labels == 0 && m_label.is_empty() { vec![Vec::new(); frames] } else { m_label };
        let m_blank = Grid::from_rows(frames, labels + 1, m_blank)
            .ok_or_else(|| Error::invalid("m_blank rows must all have U + 1 entries"))?;
        let m_label = Grid::from_rows(frames, labels, m_label)
            .ok_or_else(|| Error::invalid(format!("m_label must be {frames} rows of {labels} entries")))?;
        let mask = MaskField { frames, labels, m_blank, m_label };
        mask.check_feasible()?;
        Ok(mask)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn blank_allowed(&self, t: usize, u: usize) -> bool {
        *self.m_blank.get(t - 1, u)
    }

    /// `m_label(t, u)` for `u in 1..=U`.
    #[inline]
    pub fn label_allowed(&self, t: usize, u: usize) -> bool {
        *self.m_label.get(t - 1, u - 1)
    }

    /// Errors with the first diagonal that no origin-reachable cell touches.
    pub fn check_feasible(&self) -> Result<()> {
        let (frames, labels) = (self.frames, self.labels);
        let mut reach = Grid::filled(frames + 1, labels + 1, false);
        *reach.get_mut(0, 0) = true;
        for t in 1..=frames {
            for u in 0..=labels {
                if t == 1 && u == 0 {
                    continue;
                }
                let from_blank = t > 1 && *reach.get(t - 2, u) && self.blank_allowed(t - 1, u);
                let from_label = u > 0 && *reach.get(t - 1, u - 1) && self.label_allowed(t, u);
                *reach.get_mut(t - 1, u) = from_blank || from_label;
            }
        }
        if *reach.get(frames - 1, labels) && self.blank_allowed(frames, labels) {
            return Ok(());
        }
        let diagonal = (2..=frames + labels)
            .find(|&n| {
                diagonal_cells(frames, labels, n)
                    .into_iter()
                    .all(|(t, u)| !*reach.get(t - 1, u))
            })
            .unwrap_or(frames + labels + 1);
        Err(Error::OverRestricted { diagonal })
    }
}

/// JSON fixture layout `{ "m_blank": [[0|1]], "m_label": [[0|1]] }`.
#[derive(Serialize, Deserialize)]
struct MaskFile {
    m_blank: Vec<Vec<u8>>,
    m_label: Vec<Vec<u8>>,
}

impl TryFrom<MaskFile> for MaskField {
    type Error = Error;

    fn try_from(f: MaskFile) -> Result<Self> {
        let conv = |rows: Vec<Vec<u8>>| -> Result<Vec<Vec<bool>>> {
            rows.into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|v| match v {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(Error::invalid(format!("mask entry {other} is not 0 or 1"))),
                        })
                        .collect()
                })
                .collect()
        };
        MaskField::new(conv(f.m_blank)?, conv(f.m_label)?)
    }
}

impl From<MaskField> for MaskFile {
    fn from(m: MaskField) -> Self {
        let conv = |g: &Grid<bool>| g.to_rows().into_iter().map(|r| r.into_iter().map(u8::from).collect()).collect();
        MaskFile { m_blank: conv(&m.m_blank), m_label: conv(&m.m_label) }
    }
}

/// Band masks around the reference emission times:
///
/// - `m_blank(t, u) = [t_u - b_left <= t < t_u + b_right]`
/// - `m_label(t, u) = [t_u - b_left <= t <= t_u + b_right]`
///
/// with `t_0 = 1` for the blank row before the first label. Fails with
/// [`Error::OverRestricted`] when no complete path survives.
pub fn build_masks(
    reference: &ReferenceAlignment,
    b_left: usize,
    b_right: usize,
    frames: usize,
    labels: usize,
) -> Result<MaskField> {
    let mask = band_masks(reference, b_left, b_right, frames, labels)?;
    mask.check_feasible()?;
    Ok(mask)
}

/// The raw indicator tables of [`build_masks`] without the feasibility check.
pub fn band_masks(
    reference: &ReferenceAlignment,
    b_left: usize,
    b_right: usize,
    frames: usize,
    labels: usize,
) -> Result<MaskField> {
    reference.validate(frames, labels)?;
    let ref_time = |u: usize| if u == 0 { 1 } else { reference.label_times[u - 1] } as i64;
    let (bl, br) = (b_left as i64, b_right as i64);
    let mut mask = MaskField::all_open(frames, labels);
    for t in 1..=frames {
        let ti = t as i64;
        for u in 0..=labels {
            let tu = ref_time(u);
            *mask.m_blank.get_mut(t - 1, u) = tu - bl <= ti && ti < tu + br;
            if u > 0 {
                *mask.m_label.get_mut(t - 1, u - 1) = tu - bl <= ti && ti <= tu + br;
            }
        }
    }
    Ok(mask)
}

/// Loss over mask-surviving alignments only.
pub fn masked_loss(lattice: &EmissionLattice, masks: &MaskField) -> Result<(f64, FbTables)> {
    let fb = FbTables::compute(lattice, Some(masks))?;
    if !fb.log_likelihood().is_finite() {
        masks.check_feasible()?;
        // Masks admit a path, but every surviving path has zero probability.
        return Err(Error::DegenerateLattice("no surviving alignment".into()));
    }
    Ok((-fb.log_likelihood(), fb))
}

/// Loss gradient under masks; pruned transitions get exactly zero.
pub fn masked_grad_probs(fb: &FbTables, masks: &MaskField) -> Result<GradientField> {
    if masks.frames() != fb.frames() || masks.labels() != fb.labels() {
        return Err(Error::invalid("mask and tables disagree in shape"));
    }
    Ok(transition_sensitivity(fb, Some(masks))?.map_entries(|_, _, _, w| -w))
}

/// FastEmit: label entries scaled by `1 + lambda_fe`, blank entries copied.
pub fn fastemit_grads(trans_grads: &GradientField, lambda_fe: f64) -> Result<GradientField> {
    if !(lambda_fe >= 0.0 && lambda_fe.is_finite()) {
        return Err(Error::invalid(format!("lambda_fe must be finite and non-negative, got {lambda_fe}")));
    }
    let scale = 1.0 + lambda_fe;
    Ok(trans_grads.map_entries(|kind, _, _, v| match kind {
        crate::lattice::Emission::Label => v * scale,
        crate::lattice::Emission::Blank => v,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{loss_grad_probs, transducer_loss, Emission};

    fn reference(times: &[usize], eos: usize) -> ReferenceAlignment {
        ReferenceAlignment { label_times: times.to_vec(), eos_frame: eos }
    }

    #[test]
    fn wide_buffers_open_everything() {
        let m = build_masks(&reference(&[2, 3], 4), 4, 4, 4, 2).unwrap();
        assert_eq!(m, MaskField::all_open(4, 2));
    }

    #[test]
    fn indicator_values_small_case() {
        let m = build_masks(&reference(&[2], 2), 2, 1, 2, 1).unwrap();
        assert!(m.label_allowed(1, 1) && m.label_allowed(2, 1));
        assert!(m.blank_allowed(1, 1) && m.blank_allowed(2, 1));
        // u = 0 uses t_0 = 1: blank only while t < 2.
        assert!(m.blank_allowed(1, 0) && !m.blank_allowed(2, 0));
    }

    #[test]
    fn right_buffer_forbids_late_labels() {
        let m = band_masks(&reference(&[1], 4), 4, 1, 4, 1).unwrap();
        let allowed: Vec<bool> = (1..=4).map(|t| m.label_allowed(t, 1)).collect();
        assert_eq!(allowed, vec![true, true, false, false]);
        // The same band also stops blanks in row 1 after t = 1, so no path
        // can reach the end of a 4-frame utterance.
        let err = build_masks(&reference(&[1], 4), 4, 1, 4, 1).unwrap_err();
        assert!(matches!(err, Error::OverRestricted { diagonal: 4 }), "{err:?}");
    }

    #[test]
    fn zero_right_buffer_is_over_restricted() {
        let err = build_masks(&reference(&[], 3), 3, 0, 3, 0).unwrap_err();
        assert!(matches!(err, Error::OverRestricted { diagonal: 2 }), "{err:?}");
    }

    #[test]
    fn open_masks_match_unmasked_loss_exactly() {
        let l = EmissionLattice::uniform(3, 2, 0.4, 0.3).unwrap();
        let (plain, _) = transducer_loss(&l).unwrap();
        let (masked, _) = masked_loss(&l, &MaskField::all_open(3, 2)).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn single_path_mask() {
        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let m = MaskField::new(vec![vec![false, true], vec![false, true]], vec![vec![true], vec![false]]).unwrap();
        let (loss, fb) = masked_loss(&l, &m).unwrap();
        assert!((loss + 0.125f64.ln()).abs() < 1e-14);
        let bwd = fb.log_beta(1, 0);
        assert!((bwd - fb.log_likelihood()).abs() < 1e-14);
        let g = masked_grad_probs(&fb, &m).unwrap();
        assert_eq!(g.blank(1, 0), 0.0);
        assert!((g.label(1, 0) + 1.0 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn explicit_infeasible_mask_is_rejected() {
        let err = MaskField::new(vec![vec![false, true], vec![false, true]], vec![vec![false], vec![false]]);
        assert!(matches!(err, Err(Error::OverRestricted { diagonal: 2 })));
    }

    #[test]
    fn mask_json_round_trip() {
        let m = build_masks(&reference(&[2], 3), 1, 2, 3, 1).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with("{\"m_blank\":[["));
        let back: MaskField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<MaskField>(r#"{"m_blank":[[2]],"m_label":[[]]}"#).is_err());
    }

    #[test]
    fn fastemit_scaling() {
        let l = EmissionLattice::from_probs(1, 0, vec![vec![]], vec![vec![0.8]]).unwrap();
        let (_, fb) = transducer_loss(&l).unwrap();
        let g = loss_grad_probs(&fb, &l).unwrap();
        let fe = fastemit_grads(&g, 0.5).unwrap();
        assert_eq!(fe.blank(1, 0), g.blank(1, 0));

        let l = EmissionLattice::uniform(2, 1, 0.5, 0.5).unwrap();
        let (_, fb) = transducer_loss(&l).unwrap();
        let g = loss_grad_probs(&fb, &l).unwrap();
        let fe = fastemit_grads(&g, 0.5).unwrap();
        assert!((fe.label(1, 0) + 1.5).abs() < 1e-15);
        assert_eq!(fastemit_grads(&g, 0.0).unwrap(), g);
        let scaled = fastemit_grads(&g, 0.015).unwrap();
        for (kind, t, u, v) in scaled.entries() {
            let base = g.get(kind, t, u);
            match kind {
                Emission::Label => assert_eq!(v, base * 1.015),
                Emission::Blank => assert_eq!(v, base),
            }
        }
        assert!(fastemit_grads(&g, -0.1).is_err());
    }
}
