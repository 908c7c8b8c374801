//! Greedy and beam decoding with emission-time tracking, token error rate and
//! partial-recognition latency percentiles.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::ReferenceAlignment;
use crate::logspace::log_add;
use crate::model::{Model, Scorer, SyntheticUtterance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    /// Frame `t in 1..=T` at which each token was emitted; non-decreasing.
    pub emission_frames: Vec<usize>,
}

impl DecodeResult {
    pub fn last_emission_frame(&self) -> Option<usize> {
        self.emission_frames.last().copied()
    }
}

fn argmax_label(log_probs: &[f64]) -> Option<(usize, f64)> {
    log_probs.iter().copied().enumerate().skip(1).fold(None, |best, (k, v)| match best {
        Some((_, b)) if b >= v => best,
        _ => Some((k, v)),
    })
}

/// Frame-synchronous argmax decoding: at each frame emit labels while one of
/// them strictly beats blank, then advance. At most `2T` labels in total.
pub fn greedy_decode<S: Scorer + ?Sized>(scorer: &S) -> DecodeResult {
    let frames = scorer.frames();
    let cap = 2 * frames;
    let mut out = DecodeResult { tokens: Vec::new(), emission_frames: Vec::new() };
    for t in 1..=frames {
        while out.tokens.len() < cap {
            let lp = scorer.log_probs(t, &out.tokens);
            match argmax_label(&lp) {
                Some((k, v)) if v > lp[0] => {
                    out.tokens.push(k);
                    out.emission_frames.push(t);
                }
                _ => break,
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub result: DecodeResult,
    /// Log of the summed probability of the merged alignments that survived
    /// the beam.
    pub log_score: f64,
}

#[derive(Debug, Clone)]
struct Entry {
    log_score: f64,
    /// Emission frames of the strongest route into this prefix.
    frames: Vec<usize>,
    best_route: f64,
}

fn merge(map: &mut BTreeMap<Vec<usize>, Entry>, prefix: Vec<usize>, log_score: f64, frames: Vec<usize>) {
    match map.get_mut(&prefix) {
        Some(e) => {
            e.log_score = log_add(e.log_score, log_score);
            if log_score > e.best_route {
                e.best_route = log_score;
                e.frames = frames;
            }
        }
        None => {
            map.insert(prefix, Entry { log_score, frames, best_route: log_score });
        }
    }
}

/// Keeps the `beam` highest-scoring entries; ties go to the smaller prefix.
fn prune(entries: Vec<(Vec<usize>, Entry)>, beam: usize) -> Vec<(Vec<usize>, Entry)> {
    let mut entries = entries;
    entries.sort_by(|a, b| b.1.log_score.total_cmp(&a.1.log_score).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(beam);
    entries
}

/// Beam search over label prefixes, merging alignments of the same prefix.
///
/// At each frame, prefixes are extended in order of increasing length, so a
/// prefix is complete before it is expanded; every length level keeps its
/// best `beam` prefixes. Blank closes the frame. Returns hypotheses ranked by
/// score, best first.
pub fn beam_search<S: Scorer + ?Sized>(scorer: &S, beam: usize) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::invalid("beam size must be at least 1"));
    }
    let frames = scorer.frames();
    let cap = 2 * frames;
    let mut current = vec![(Vec::new(), Entry { log_score: 0.0, frames: Vec::new(), best_route: 0.0 })];
    for t in 1..=frames {
        let mut open: BTreeMap<Vec<usize>, Entry> = BTreeMap::new();
        for (prefix, e) in current {
            open.insert(prefix, e);
        }
        let mut closed: BTreeMap<Vec<usize>, Entry> = BTreeMap::new();
        let mut length = open.keys().map(Vec::len).min().unwrap_or(0);
        while !open.is_empty() {
            let level: Vec<_> = {
                let keys: Vec<_> = open.keys().filter(|k| k.len() == length).cloned().collect();
                keys.into_iter().map(|k| {
                    let e = open.remove(&k).expect("key just listed");
                    (k, e)
                }).collect()
            };
            for (prefix, e) in prune(level, beam) {
                let lp = scorer.log_probs(t, &prefix);
                if prefix.len() < cap {
                    for (k, &v) in lp.iter().enumerate().skip(1) {
                        if v == f64::NEG_INFINITY {
                            continue;
                        }
                        let mut next = prefix.clone();
                        next.push(k);
                        let mut f = e.frames.clone();
                        f.push(t);
                        merge(&mut open, next, e.log_score + v, f);
                    }
                }
                if lp[0] > f64::NEG_INFINITY {
                    merge(&mut closed, prefix, e.log_score + lp[0], e.frames);
                }
            }
            length += 1;
        }
        current = prune(closed.into_iter().collect(), beam);
    }
    Ok(current
        .into_iter()
        .map(|(tokens, e)| Hypothesis { result: DecodeResult { tokens, emission_frames: e.frames }, log_score: e.log_score })
        .collect())
}

/// Levenshtein alignment of `hyp` against `reference`. Returns the edit count
/// and the matched `(ref_index, hyp_index)` pairs.
pub fn edit_alignment(reference: &[usize], hyp: &[usize]) -> (usize, Vec<(usize, usize)>) {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let same = reference[i - 1] == hyp[j - 1];
        if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
            if same {
                pairs.push((i - 1, j - 1));
            }
            i -= 1;
            j -= 1;
        } else if d[i][j] == d[i - 1][j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    (d[n][m], pairs)
}

/// One decoded utterance together with what it should have produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedUtterance {
    pub utt_id: String,
    pub labels: Vec<usize>,
    pub reference: ReferenceAlignment,
    pub result: DecodeResult,
}

impl DecodedUtterance {
    pub fn latency_frames(&self) -> Option<i64> {
        self.result.last_emission_frame().map(|t| t as i64 - self.reference.eos_frame as i64)
    }
}

/// Total edits over total reference tokens, in `[0, inf)`.
pub fn token_error_rate(decoded: &[DecodedUtterance]) -> f64 {
    let (edits, total) = decoded.iter().fold((0, 0), |(e, n), d| (e + edit_alignment(&d.labels, &d.result.tokens).0, n + d.labels.len()));
    if total == 0 {
        0.0
    } else {
        edits as f64 / total as f64
    }
}

/// Mean of `emission_frame - reference_time` over tokens matched by the edit
/// alignment; `None` when nothing matched.
pub fn mean_token_delay(decoded: &[DecodedUtterance]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for d in decoded {
        for (i, j) in edit_alignment(&d.labels, &d.result.tokens).1 {
            sum += d.result.emission_frames[j] as f64 - d.reference.label_times[i] as f64;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceLatency {
    pub utt_id: String,
    /// Last emission frame minus end-of-speech frame; `None` for an empty
    /// hypothesis.
    pub latency_frames: Option<i64>,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frame_period_ms: f64,
    pub per_utterance: Vec<UtteranceLatency>,
    /// Nearest-rank percentiles over non-empty hypotheses.
    pub pr50_ms: Option<f64>,
    pub pr90_ms: Option<f64>,
    pub empty_hypotheses: usize,
    pub mean_token_delay_frames: Option<f64>,
    pub token_error_rate: f64,
}

/// Nearest-rank percentile of sorted values: the smallest value with at least
/// `p` percent of the data at or below it.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn pr_latency(decoded: &[DecodedUtterance], frame_period_ms: f64) -> Result<LatencyReport> {
    if decoded.is_empty() {
        return Err(Error::invalid("no decoded utterances"));
    }
    if !(frame_period_ms > 0.0 && frame_period_ms.is_finite()) {
        return Err(Error::invalid(format!("frame period must be positive, got {frame_period_ms}")));
    }
    let per_utterance: Vec<UtteranceLatency> = decoded
        .iter()
        .map(|d| {
            let frames = d.latency_frames();
            UtteranceLatency { utt_id: d.utt_id.clone(), latency_frames: frames, latency_ms: frames.map(|f| f as f64 * frame_period_ms) }
        })
        .collect();
    let mut ms: Vec<f64> = per_utterance.iter().filter_map(|u| u.latency_ms).collect();
    ms.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        frame_period_ms,
        pr50_ms: nearest_rank(&ms, 50.0),
        pr90_ms: nearest_rank(&ms, 90.0),
        empty_hypotheses: per_utterance.len() - ms.len(),
        per_utterance,
        mean_token_delay_frames: mean_token_delay(decoded),
        token_error_rate: token_error_rate(decoded),
    })
}

/// `None` decodes greedily, `Some(beam)` keeps the top beam hypothesis.
pub fn decode_utterance(model: &Model, utt: &SyntheticUtterance, beam: Option<usize>) -> Result<DecodedUtterance> {
    let scorer = model.scorer(utt)?;
    let result = match beam {
        None => greedy_decode(scorer.as_ref()),
        Some(b) => beam_search(scorer.as_ref(), b)?
            .into_iter()
            .next()
            .map(|h| h.result)
            .unwrap_or(DecodeResult { tokens: Vec::new(), emission_frames: Vec::new() }),
    };
    Ok(DecodedUtterance { utt_id: utt.id.clone(), labels: utt.labels.clone(), reference: utt.reference.clone(), result })
}

pub fn decode_corpus(model: &Model, corpus: &[SyntheticUtterance], beam: Option<usize>) -> Result<Vec<DecodedUtterance>> {
    corpus.iter().map(|u| decode_utterance(model, u, beam)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub utt_id: String,
    pub tokens: Vec<usize>,
    pub emission_frames: Vec<usize>,
    pub latency_frames: Option<i64>,
    pub latency_ms: Option<f64>,
}

pub fn write_decode_jsonl(path: &Path, decoded: &[DecodedUtterance], frame_period_ms: f64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for d in decoded {
        let latency_frames = d.latency_frames();
        let record = DecodeRecord {
            utt_id: d.utt_id.clone(),
            tokens: d.result.tokens.clone(),
            emission_frames: d.result.emission_frames.clone(),
            latency_frames,
            latency_ms: latency_frames.map(|f| f as f64 * frame_period_ms),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3;
    use crate::model::CellTableScorer;

    /// Cells put probability `hi` on the given token and share the rest.
    fn peaked(frames: usize, rows: usize, vocab: usize, pick: impl Fn(usize, usize) -> usize) -> CellTableScorer {
        let mut g = Grid3::zeros(frames, rows, vocab);
        for t in 0..frames {
            for u in 0..rows {
                let k = pick(t + 1, u);
                for (i, p) in g.cell_mut(t, u).iter_mut().enumerate() {
                    *p = if i == k { 0.9 } else { 0.1 / (vocab - 1) as f64 };
                }
            }
        }
        CellTableScorer::from_probs(&g)
    }

    #[test]
    fn greedy_follows_delta_path() {
        // labels 2, 1 at frames 2 and 4 out of 5
        let labels = [2, 1];
        let times = [2, 4];
        let s = peaked(5, 3, 3, |t, u| if u < 2 && t == times[u] { labels[u] } else { 0 });
        let r = greedy_decode(&s);
        assert_eq!(r.tokens, vec![2, 1]);
        assert_eq!(r.emission_frames, vec![2, 4]);
    }

    #[test]
    fn greedy_blank_everywhere_is_empty() {
        let s = peaked(4, 1, 3, |_, _| 0);
        assert!(greedy_decode(&s).tokens.is_empty());
    }

    #[test]
    fn greedy_ties_go_to_blank() {
        let g = Grid3::from_vec(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert!(greedy_decode(&CellTableScorer::from_probs(&g)).tokens.is_empty());
    }

    #[test]
    fn greedy_caps_runaway_emission() {
        let s = peaked(3, 1, 2, |_, _| 1);
        let r = greedy_decode(&s);
        assert_eq!(r.tokens.len(), 6);
        assert!(r.emission_frames.iter().all(|&t| t == 1));
    }

    #[test]
    fn beam_on_delta_lattice() {
        let labels = [2, 1];
        let times = [1, 3];
        let s = peaked(4, 3, 3, |t, u| if u < 2 && t == times[u] { labels[u] } else { 0 });
        let hyps = beam_search(&s, 4).unwrap();
        assert_eq!(hyps[0].result.tokens, vec![2, 1]);
        assert_eq!(hyps[0].result.emission_frames, vec![1, 3]);
        let mut prefixes: Vec<_> = hyps.iter().map(|h| h.result.tokens.clone()).collect();
        prefixes.dedup();
        assert_eq!(prefixes.len(), hyps.len());
    }

    #[test]
    fn beam_rejects_zero() {
        let s = peaked(1, 1, 2, |_, _| 0);
        assert!(beam_search(&s, 0).is_err());
    }

    #[test]
    fn edit_alignment_matches() {
        let (e, pairs) = edit_alignment(&[1, 2, 3], &[1, 3, 3]);
        assert_eq!(e, 1);
        assert_eq!(pairs, vec![(0, 0), (2, 2)]);
        assert_eq!(edit_alignment(&[], &[1, 2]).0, 2);
        assert_eq!(edit_alignment(&[4], &[]).0, 1);
    }

    fn decoded(id: &str, last: Option<usize>, eos: usize) -> DecodedUtterance {
        let (tokens, frames) = match last {
            Some(t) => (vec![1], vec![t]),
            None => (vec![], vec![]),
        };
        DecodedUtterance {
            utt_id: id.into(),
            labels: vec![1],
            reference: ReferenceAlignment { label_times: vec![1], eos_frame: eos },
            result: DecodeResult { tokens, emission_frames: frames },
        }
    }

    #[test]
    fn percentiles_by_nearest_rank() {
        let set: Vec<_> = [-1i64, 0, 2, 3, 10]
            .iter()
            .enumerate()
            .map(|(i, &l)| decoded(&format!("u{i}"), Some((20 + l) as usize), 20))
            .collect();
        let r = pr_latency(&set, 60.0).unwrap();
        assert_eq!(r.pr50_ms, Some(120.0));
        assert_eq!(r.pr90_ms, Some(600.0));
        let mut rev = set.clone();
        rev.reverse();
        let r2 = pr_latency(&rev, 60.0).unwrap();
        assert_eq!((r2.pr50_ms, r2.pr90_ms), (r.pr50_ms, r.pr90_ms));
    }

    #[test]
    fn latency_at_eos_is_zero() {
        let r = pr_latency(&[decoded("a", Some(5), 5)], 60.0).unwrap();
        assert_eq!((r.pr50_ms, r.pr90_ms), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn empty_hypotheses_are_tallied() {
        let r = pr_latency(&[decoded("a", Some(5), 4), decoded("b", None, 4)], 10.0).unwrap();
        assert_eq!(r.empty_hypotheses, 1);
        assert_eq!(r.pr90_ms, Some(10.0));
        assert!(pr_latency(&[], 10.0).is_err());
    }
}
