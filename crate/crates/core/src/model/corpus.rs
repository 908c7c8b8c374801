//! Synthetic streaming utterances with exact reference alignments.
//!
//! Each utterance is optional leading silence, `U` contiguous token spans and
//! optional trailing silence. Feature vectors are one-hot over
//! `(silence, token 1, ..., token V)` plus uniform noise. A token's reference
//! emission frame is the first frame of its span; end of speech is the last
//! frame of the last span.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::ReferenceAlignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUtterance {
    pub id: String,
    /// `T` rows of dimension `vocab + 1`.
    pub features: Vec<Vec<f64>>,
    /// Tokens `y_1..y_U`, each in `1..=vocab`.
    pub labels: Vec<usize>,
    pub reference: ReferenceAlignment,
}

impl SyntheticUtterance {
    pub fn frames(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Inclusive range of `T`.
    pub frames: (usize, usize),
    /// Inclusive range of `U`.
    pub labels: (usize, usize),
    pub vocab: usize,
    /// Amplitude of the zero-mean uniform feature noise.
    pub noise: f64,
    /// Upper bound on leading and on trailing silence frames.
    pub silence: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { frames: (8, 12), labels: (2, 4), vocab: 8, noise: 0.1, silence: 2, count: 200, seed: 7 }
    }
}

/// FNV-1a over the seed and a stream name; stable across platforms and releases.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<SyntheticUtterance>> {
    let (t_lo, t_hi) = config.frames;
    let (u_lo, u_hi) = config.labels;
    if t_lo > t_hi || u_lo > u_hi {
        return Err(Error::invalid("corpus ranges must satisfy lo <= hi"));
    }
    if u_lo == 0 {
        return Err(Error::invalid("utterances need at least one label"));
    }
    if u_lo >= t_hi {
        return Err(Error::invalid(format!("no U in {u_lo}..={u_hi} is below some T in {t_lo}..={t_hi}")));
    }
    if config.vocab == 0 {
        return Err(Error::invalid("vocabulary must be non-empty"));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::invalid("noise amplitude must be finite and non-negative"));
    }
    (0..config.count).map(|i| generate_one(config, &format!("utt-{i:05}"))).collect()
}

fn generate_one(config: &CorpusConfig, id: &str) -> Result<SyntheticUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, id));
    // U < T: cap U by the largest frame count.
    let labels = rng.random_range(config.labels.0..=config.labels.1.min(config.frames.1 - 1));
    let frames = rng.random_range(config.frames.0.max(labels + 1)..=config.frames.1);
    let mut lead = rng.random_range(0..=config.silence);
    let mut trail = rng.random_range(0..=config.silence);
    while lead + trail + labels > frames {
        if trail > 0 {
            trail -= 1;
        } else {
            lead -= 1;
        }
    }
    let speech = frames - lead - trail;

    // Split `speech` frames into `labels` non-empty spans.
    let mut cuts: Vec<usize> = sample(&mut rng, speech - 1, labels - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut starts = Vec::with_capacity(labels);
    starts.push(0);
    starts.extend(cuts);

    let mut tokens = Vec::with_capacity(labels);
    for _ in 0..labels {
        let prev = tokens.last().copied();
        let tok = loop {
            let k = rng.random_range(1..=config.vocab);
            if config.vocab == 1 || Some(k) != prev {
                break k;
            }
        };
        tokens.push(tok);
    }

    let dim = config.vocab + 1;
    let mut features = Vec::with_capacity(frames);
    let mut span = 0;
    for f in 0..frames {
        let hot = if f < lead || f >= lead + speech {
            0
        } else {
            let s = f - lead;
            while span + 1 < labels && s >= starts[span + 1] {
                span += 1;
            }
            tokens[span]
        };
        let mut x: Vec<f64> = (0..dim)
            .map(|_| if config.noise > 0.0 { rng.random_range(-config.noise..=config.noise) } else { 0.0 })
            .collect();
        x[hot] += 1.0;
        features.push(x);
    }
    let reference = ReferenceAlignment {
        label_times: starts.iter().map(|s| lead + s + 1).collect(),
        eos_frame: lead + speech,
    };
    Ok(SyntheticUtterance { id: id.to_string(), features, labels: tokens, reference })
}

/// One JSON object per line.
pub fn write_corpus(path: &Path, corpus: &[SyntheticUtterance]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for utt in corpus {
        serde_json::to_writer(&mut w, utt)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<SyntheticUtterance>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: SyntheticUtterance = serde_json::from_str(&line)?;
        utt.reference.validate(utt.frames(), utt.labels.len())?;
        out.push(utt);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus() {
        let c = generate_corpus(&CorpusConfig { count: 0, ..Default::default() }).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = CorpusConfig { count: 20, ..Default::default() };
        assert_eq!(generate_corpus(&cfg).unwrap(), generate_corpus(&cfg).unwrap());
        let other = generate_corpus(&CorpusConfig { seed: 8, ..cfg.clone() }).unwrap();
        assert_ne!(other, generate_corpus(&cfg).unwrap());
    }

    #[test]
    fn default_corpus_invariants() {
        let cfg = CorpusConfig { frames: (8, 12), labels: (2, 4), vocab: 8, noise: 0.1, silence: 2, count: 200, seed: 7 };
        let corpus = generate_corpus(&cfg).unwrap();
        assert_eq!(corpus.len(), 200);
        for utt in &corpus {
            let (t, u) = (utt.frames(), utt.labels.len());
            assert!((8..=12).contains(&t) && (2..=4).contains(&u) && u < t);
            assert_eq!(utt.feature_dim(), 9);
            utt.reference.validate(t, u).unwrap();
            // spans are ordered, non-overlapping and non-empty
            assert!(utt.reference.label_times.windows(2).all(|w| w[0] < w[1]));
            assert!(*utt.reference.label_times.last().unwrap() <= utt.reference.eos_frame);
            assert!(utt.labels.iter().all(|&k| (1..=8).contains(&k)));
            assert!(utt.labels.windows(2).all(|w| w[0] != w[1]));
            // the first frame of each span carries its token
            for (&tok, &start) in utt.labels.iter().zip(&utt.reference.label_times) {
                let x = &utt.features[start - 1];
                let argmax = (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
                assert_eq!(argmax, tok);
            }
            for f in utt.reference.eos_frame..t {
                let x = &utt.features[f];
                let argmax = (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
                assert_eq!(argmax, 0);
            }
        }
    }

    #[test]
    fn infeasible_ranges() {
        let bad = CorpusConfig { frames: (3, 4), labels: (4, 6), ..Default::default() };
        assert!(matches!(generate_corpus(&bad), Err(Error::InvalidInput(_))));
        let zero = CorpusConfig { labels: (0, 2), ..Default::default() };
        assert!(generate_corpus(&zero).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let corpus = generate_corpus(&CorpusConfig { count: 3, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &corpus).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        assert_eq!(read_corpus(&path).unwrap(), corpus);
    }
}
