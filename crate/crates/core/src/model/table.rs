use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_seed, CellTableScorer, SyntheticUtterance};
use crate::error::{Error, Result};
use crate::grid::Grid3;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    offset: usize,
    frames: usize,
    labels: usize,
}

/// One free score vector per `(utterance, t, u)`; the predictor context is
/// reduced to the number of labels emitted so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableFile", into = "TableFile")]
pub struct TableModel {
    vocab: usize,
    slots: BTreeMap<String, Slot>,
    params: Vec<f64>,
}

impl TableModel {
    /// Scores drawn from `N(0, init_scale^2)` per utterance stream, with
    /// `blank_bias` added to every blank score.
    pub fn init(corpus: &[SyntheticUtterance], vocab: usize, seed: u64, init_scale: f64, blank_bias: f64) -> Result<Self> {
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be finite and non-negative"));
        }
        let depth = vocab + 1;
        let mut slots = BTreeMap::new();
        let mut params = Vec::new();
        for utt in corpus {
            let (frames, labels) = (utt.frames(), utt.labels.len());
            let slot = Slot { offset: params.len(), frames, labels };
            if slots.insert(utt.id.clone(), slot).is_some() {
                return Err(Error::invalid(format!("duplicate utterance id {}", utt.id)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &utt.id));
            let normal = Normal::new(0.0, init_scale).map_err(|e| Error::invalid(e.to_string()))?;
            for i in 0..frames * (labels + 1) * depth {
                let bias = if i % depth == 0 { blank_bias } else { 0.0 };
                params.push(normal.sample(&mut rng) + bias);
            }
        }
        Ok(TableModel { vocab, slots, params })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn slot(&self, utt: &SyntheticUtterance) -> Result<Slot> {
        let slot = *self.slots.get(&utt.id).ok_or_else(|| Error::invalid(format!("no table for utterance {}", utt.id)))?;
        if slot.frames != utt.frames() || slot.labels != utt.labels.len() {
            return Err(Error::invalid(format!(
                "table for {} is T={} U={}, utterance is T={} U={}",
                utt.id,
                slot.frames,
                slot.labels,
                utt.frames(),
                utt.labels.len()
            )));
        }
        Ok(slot)
    }

    fn table(&self, slot: Slot) -> Grid3 {
        let len = slot.frames * (slot.labels + 1) * (self.vocab + 1);
        Grid3::from_vec(slot.frames, slot.labels + 1, self.vocab + 1, self.params[slot.offset..slot.offset + len].to_vec())
            .expect("slot length")
    }

    pub fn lattice_scores(&self, utt: &SyntheticUtterance) -> Result<Grid3> {
        Ok(self.table(self.slot(utt)?))
    }

    pub fn backprop(&self, utt: &SyntheticUtterance, logits_grad: &Grid3, grad: &mut [f64]) -> Result<()> {
        let slot = self.slot(utt)?;
        let src = logits_grad.as_slice();
        if src.len() != slot.frames * (slot.labels + 1) * (self.vocab + 1) {
            return Err(Error::invalid("logits gradient does not match the table"));
        }
        for (g, d) in grad[slot.offset..slot.offset + src.len()].iter_mut().zip(src) {
            *g += d;
        }
        Ok(())
    }

    pub fn scorer(&self, utt: &SyntheticUtterance) -> Result<CellTableScorer> {
        Ok(CellTableScorer::from_scores(self.table(self.slot(utt)?)))
    }
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "U")]
    labels: usize,
    /// `[t][u][k]`
    scores: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    vocab: usize,
    tables: BTreeMap<String, TableEntry>,
}

impl From<TableModel> for TableFile {
    fn from(m: TableModel) -> Self {
        let tables = m
            .slots
            .iter()
            .map(|(id, &slot)| {
                let g = m.table(slot);
                let scores = (0..slot.frames)
                    .map(|t| (0..=slot.labels).map(|u| g.cell(t, u).to_vec()).collect())
                    .collect();
                (id.clone(), TableEntry { frames: slot.frames, labels: slot.labels, scores })
            })
            .collect();
        TableFile { vocab: m.vocab, tables }
    }
}

impl TryFrom<TableFile> for TableModel {
    type Error = Error;

    fn try_from(f: TableFile) -> Result<Self> {
        let mut slots = BTreeMap::new();
        let mut params = Vec::new();
        for (id, e) in f.tables {
            let ok = e.scores.len() == e.frames
                && e.scores.iter().all(|r| r.len() == e.labels + 1 && r.iter().all(|c| c.len() == f.vocab + 1));
            if !ok {
                return Err(Error::invalid(format!("table {id} does not match its T/U/vocab header")));
            }
            slots.insert(id, Slot { offset: params.len(), frames: e.frames, labels: e.labels });
            params.extend(e.scores.into_iter().flatten().flatten());
        }
        Ok(TableModel { vocab: f.vocab, slots, params })
    }
}
