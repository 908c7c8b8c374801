//! Encoder / predictor / joint network small enough to differentiate by hand.
//!
//! ```text
//! f_t   = W_enc x_t + b_enc                      (encoder, per frame)
//! g_u   = E[c_u]                                 (predictor embedding of the last label, 0 = start)
//! h     = tanh(W_jf f_t + W_jg g_u + b_j)        (joint hidden)
//! z     = W_out h + b_out                        (scores over blank + |V| tokens)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_seed, Scorer, SyntheticUtterance};
use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::logspace::log_softmax_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    /// `d_i`
    pub input: usize,
    /// `d_e`
    pub encoder: usize,
    /// `d_p`
    pub predictor: usize,
    /// `d_j`
    pub joint: usize,
    /// `|V|`, blank excluded.
    pub vocab: usize,
}

impl NetworkDims {
    /// Defaults for a corpus over `vocab` tokens (features are `vocab + 1` wide).
    pub fn for_vocab(vocab: usize) -> Self {
        NetworkDims { input: vocab + 1, encoder: 16, predictor: 16, joint: 16, vocab }
    }

    fn out(&self) -> usize {
        self.vocab + 1
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_enc: usize,
    b_enc: usize,
    emb: usize,
    w_jf: usize,
    w_jg: usize,
    b_j: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(d: &NetworkDims) -> Self {
        let w_enc = 0;
        let b_enc = w_enc + d.encoder * d.input;
        let emb = b_enc + d.encoder;
        let w_jf = emb + (d.vocab + 1) * d.predictor;
        let w_jg = w_jf + d.joint * d.encoder;
        let b_j = w_jg + d.joint * d.predictor;
        let w_out = b_j + d.joint;
        let b_out = w_out + d.out() * d.joint;
        let total = b_out + d.out();
        Layout { w_enc, b_enc, emb, w_jf, w_jg, b_j, w_out, b_out, total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct TinyJointModel {
    dims: NetworkDims,
    params: Vec<f64>,
}

/// `out += W x` for a row-major `rows x x.len()` block.
fn mat_vec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(x.len())) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T y` for a row-major `y.len() x out.len()` block.
fn mat_t_vec_add(w: &[f64], y: &[f64], out: &mut [f64]) {
    for (row, &yi) in w.chunks_exact(out.len()).zip(y) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
}

/// `W += y x^T`.
fn outer_add(w: &mut [f64], y: &[f64], x: &[f64]) {
    for (row, &yi) in w.chunks_exact_mut(x.len()).zip(y) {
        for (a, &xj) in row.iter_mut().zip(x) {
            *a += yi * xj;
        }
    }
}

impl TinyJointModel {
    /// All weights zero: every cell predicts the uniform distribution.
    pub fn zeros(dims: NetworkDims) -> Self {
        TinyJointModel { dims, params: vec![0.0; Layout::new(&dims).total] }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(dims: NetworkDims, seed: u64) -> Self {
        let l = Layout::new(&dims);
        let mut params = vec![0.0; l.total];
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "tiny-joint-init"));
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).expect("positive std");
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        };
        fill(l.w_enc..l.b_enc, dims.input);
        fill(l.emb..l.w_jf, 1);
        fill(l.w_jf..l.w_jg, dims.encoder + dims.predictor);
        fill(l.w_jg..l.b_j, dims.encoder + dims.predictor);
        fill(l.w_out..l.b_out, dims.joint);
        TinyJointModel { dims, params }
    }

    pub fn dims(&self) -> NetworkDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }

    fn check(&self, utt: &SyntheticUtterance) -> Result<()> {
        if utt.feature_dim() != self.dims.input {
            return Err(Error::invalid(format!(
                "{}: feature dimension {} but the encoder expects {}",
                utt.id,
                utt.feature_dim(),
                self.dims.input
            )));
        }
        Ok(())
    }

    fn encode(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let mut f = self.params[l.b_enc..l.emb].to_vec();
        mat_vec_add(&self.params[l.w_enc..l.b_enc], x, &mut f);
        f
    }

    fn embed(&self, context: usize) -> &[f64] {
        let l = self.layout();
        let start = l.emb + context * self.dims.predictor;
        &self.params[start..start + self.dims.predictor]
    }

    fn hidden(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let mut a = self.params[l.b_j..l.w_out].to_vec();
        mat_vec_add(&self.params[l.w_jf..l.w_jg], f, &mut a);
        mat_vec_add(&self.params[l.w_jg..l.b_j], g, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        a
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let mut z = self.params[l.b_out..l.total].to_vec();
        mat_vec_add(&self.params[l.w_out..l.b_out], h, &mut z);
        z
    }

    fn contexts(utt: &SyntheticUtterance) -> Vec<usize> {
        std::iter::once(0).chain(utt.labels.iter().copied()).collect()
    }

    pub fn lattice_scores(&self, utt: &SyntheticUtterance) -> Result<Grid3> {
        self.check(utt)?;
        let ctx = Self::contexts(utt);
        let mut out = Grid3::zeros(utt.frames(), ctx.len(), self.dims.out());
        for (t, x) in utt.features.iter().enumerate() {
            let f = self.encode(x);
            for (u, &c) in ctx.iter().enumerate() {
                let z = self.output(&self.hidden(&f, self.embed(c)));
                out.cell_mut(t, u).copy_from_slice(&z);
            }
        }
        Ok(out)
    }

    pub fn backprop(&self, utt: &SyntheticUtterance, logits_grad: &Grid3, grad: &mut [f64]) -> Result<()> {
        self.check(utt)?;
        let ctx = Self::contexts(utt);
        if logits_grad.rows() != utt.frames() || logits_grad.cols() != ctx.len() || logits_grad.depth() != self.dims.out() {
            return Err(Error::invalid("logits gradient does not match the utterance lattice"));
        }
        let l = self.layout();
        let d = self.dims;
        for (t, x) in utt.features.iter().enumerate() {
            let f = self.encode(x);
            let mut df = vec![0.0; d.encoder];
            for (u, &c) in ctx.iter().enumerate() {
                let dz = logits_grad.cell(t, u);
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let g = self.embed(c).to_vec();
                let h = self.hidden(&f, &g);
                outer_add(&mut grad[l.w_out..l.b_out], dz, &h);
                grad[l.b_out..l.total].iter_mut().zip(dz).for_each(|(a, b)| *a += b);
                let mut dh = vec![0.0; d.joint];
                mat_t_vec_add(&self.params[l.w_out..l.b_out], dz, &mut dh);
                let da: Vec<f64> = dh.iter().zip(&h).map(|(dh, h)| dh * (1.0 - h * h)).collect();
                outer_add(&mut grad[l.w_jf..l.w_jg], &da, &f);
                outer_add(&mut grad[l.w_jg..l.b_j], &da, &g);
                grad[l.b_j..l.w_out].iter_mut().zip(&da).for_each(|(a, b)| *a += b);
                mat_t_vec_add(&self.params[l.w_jf..l.w_jg], &da, &mut df);
                let e = l.emb + c * d.predictor;
                mat_t_vec_add(&self.params[l.w_jg..l.b_j], &da, &mut grad[e..e + d.predictor]);
            }
            outer_add(&mut grad[l.w_enc..l.b_enc], &df, x);
            grad[l.b_enc..l.emb].iter_mut().zip(&df).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn scorer<'a>(&'a self, utt: &'a SyntheticUtterance) -> Result<NetworkScorer<'a>> {
        self.check(utt)?;
        let encoded = utt.features.iter().map(|x| self.encode(x)).collect();
        Ok(NetworkScorer { model: self, encoded })
    }
}

/// Decoding view of one utterance with the encoder outputs cached.
pub struct NetworkScorer<'a> {
    model: &'a TinyJointModel,
    encoded: Vec<Vec<f64>>,
}

impl Scorer for NetworkScorer<'_> {
    fn frames(&self) -> usize {
        self.encoded.len()
    }

    fn vocab_size(&self) -> usize {
        self.model.dims.out()
    }

    fn log_probs(&self, t: usize, prefix: &[usize]) -> Vec<f64> {
        let context = prefix.last().copied().unwrap_or(0);
        let mut z = self.model.output(&self.model.hidden(&self.encoded[t - 1], self.model.embed(context)));
        log_softmax_in_place(&mut z);
        z
    }
}

/// Checkpoint layout: dimension header plus every weight block as a nested table.
#[derive(Serialize, Deserialize)]
struct NetworkFile {
    dims: NetworkDims,
    encoder_weight: Vec<Vec<f64>>,
    encoder_bias: Vec<f64>,
    predictor_embedding: Vec<Vec<f64>>,
    joint_encoder_weight: Vec<Vec<f64>>,
    joint_predictor_weight: Vec<Vec<f64>>,
    joint_bias: Vec<f64>,
    output_weight: Vec<Vec<f64>>,
    output_bias: Vec<f64>,
}

fn rows(block: &[f64], cols: usize) -> Vec<Vec<f64>> {
    block.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

impl From<TinyJointModel> for NetworkFile {
    fn from(m: TinyJointModel) -> Self {
        let l = m.layout();
        let d = m.dims;
        let p = &m.params;
        NetworkFile {
            dims: d,
            encoder_weight: rows(&p[l.w_enc..l.b_enc], d.input),
            encoder_bias: p[l.b_enc..l.emb].to_vec(),
            predictor_embedding: rows(&p[l.emb..l.w_jf], d.predictor),
            joint_encoder_weight: rows(&p[l.w_jf..l.w_jg], d.encoder),
            joint_predictor_weight: rows(&p[l.w_jg..l.b_j], d.predictor),
            joint_bias: p[l.b_j..l.w_out].to_vec(),
            output_weight: rows(&p[l.w_out..l.b_out], d.joint),
            output_bias: p[l.b_out..l.total].to_vec(),
        }
    }
}

impl TryFrom<NetworkFile> for TinyJointModel {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Self> {
        let d = f.dims;
        let blocks: [(&str, Vec<f64>, usize); 8] = [
            ("encoder_weight", f.encoder_weight.concat(), d.encoder * d.input),
            ("encoder_bias", f.encoder_bias, d.encoder),
            ("predictor_embedding", f.predictor_embedding.concat(), (d.vocab + 1) * d.predictor),
            ("joint_encoder_weight", f.joint_encoder_weight.concat(), d.joint * d.encoder),
            ("joint_predictor_weight", f.joint_predictor_weight.concat(), d.joint * d.predictor),
            ("joint_bias", f.joint_bias, d.joint),
            ("output_weight", f.output_weight.concat(), d.out() * d.joint),
            ("output_bias", f.output_bias, d.out()),
        ];
        let mut params = Vec::with_capacity(Layout::new(&d).total);
        for (name, block, expected) in blocks {
            if block.len() != expected {
                return Err(Error::invalid(format!("{name} has {} weights, expected {expected}", block.len())));
            }
            params.extend(block);
        }
        Ok(TinyJointModel { dims: d, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_corpus, CorpusConfig};

    #[test]
    fn zero_model_is_uniform() {
        let corpus = generate_corpus(&CorpusConfig { count: 1, vocab: 3, ..Default::default() }).unwrap();
        let m = TinyJointModel::zeros(NetworkDims::for_vocab(3));
        let scores = m.lattice_scores(&corpus[0]).unwrap();
        assert!(scores.as_slice().iter().all(|&v| v == 0.0));
        let s = m.scorer(&corpus[0]).unwrap();
        for p in s.log_probs(1, &[2]) {
            assert!((p.exp() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = TinyJointModel::init(NetworkDims { input: 4, encoder: 3, predictor: 2, joint: 5, vocab: 3 }, 9);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"encoder_weight\":[["));
        let back: TinyJointModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_wrong_feature_width() {
        let corpus = generate_corpus(&CorpusConfig { count: 1, vocab: 3, ..Default::default() }).unwrap();
        let m = TinyJointModel::zeros(NetworkDims::for_vocab(4));
        assert!(m.lattice_scores(&corpus[0]).is_err());
    }

    #[test]
    fn scorer_matches_lattice_scores_on_reference_prefixes() {
        let corpus = generate_corpus(&CorpusConfig { count: 1, vocab: 3, ..Default::default() }).unwrap();
        let utt = &corpus[0];
        let m = TinyJointModel::init(NetworkDims::for_vocab(3), 2);
        let mut scores = m.lattice_scores(utt).unwrap();
        let s = m.scorer(utt).unwrap();
        for t in 1..=utt.frames() {
            for u in 0..=utt.labels.len() {
                let cell = scores.cell_mut(t - 1, u);
                log_softmax_in_place(cell);
                let got = s.log_probs(t, &utt.labels[..u]);
                for (a, b) in cell.iter().zip(&got) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
