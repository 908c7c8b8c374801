use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::decode::{decode_corpus, pr_latency, write_decode_jsonl, LatencyReport};
use crate::error::{Error, Result};
use crate::model::{train_run, train_run_observed, EpochStats, Method, Model, SyntheticUtterance, TrainingTrace};

pub const TRACE_SCHEMA: &str = "# schema: transducer-latency/trace/v1";
pub const SWEEP_SCHEMA: &str = "# schema: transducer-latency/sweep/v1";
pub const SUMMARY_SCHEMA: &str = "# schema: transducer-latency/sweep-summary/v1";

/// Published WSJ results: (method, WER dev93, WER eval92, PR50 ms, PR90 ms).
/// Kept as labelled metadata only; nothing here reproduces them.
pub const REFERENCE_ROWS: [(&str, f64, f64, f64, f64); 4] = [
    ("baseline", 14.6, 12.1, 143.0, 220.0),
    ("align_restricted", 15.9, 12.6, 33.0, 110.0),
    ("fastemit", 16.0, 12.7, -50.0, 67.0),
    ("mlt", 15.7, 12.8, -53.0, 27.0),
];

fn csv_writer(path: &Path, schema: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{schema}")?;
    Ok(csv::Writer::from_writer(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<EpochStats>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: TrainingTrace,
}

/// Trains on the config's corpus with its method and first seed. Writes
/// `config.json`, `trace.csv` (row by row, so a diverged run keeps its
/// trace) and `checkpoint.json`.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), config)?;
    let corpus = config.load_corpus()?;
    let mut model = config.model.build(&corpus, config.vocab(&corpus), config.seeds[0])?;
    let mut csv = csv_writer(&out.join("trace.csv"), TRACE_SCHEMA)?;
    let mut trace = TrainingTrace::default();
    let result = train_run_observed(&mut model, &corpus, &config.method, &config.optimizer, &mut |stats| {
        csv.serialize(stats)?;
        csv.flush()?;
        trace.epochs.push(stats.clone());
        Ok(())
    });
    csv.flush()?;
    result?;
    write_json(&out.join("checkpoint.json"), &model)?;
    Ok(TrainOutcome { model, trace })
}

/// Decodes every utterance and writes `decode.jsonl` and `latency.json`.
pub fn cmd_decode(model: &Model, corpus: &[SyntheticUtterance], beam: Option<usize>, frame_period_ms: f64, out: &Path) -> Result<LatencyReport> {
    let decoded = decode_corpus(model, corpus, beam)?;
    let report = pr_latency(&decoded, frame_period_ms)?;
    std::fs::create_dir_all(out)?;
    write_decode_jsonl(&out.join("decode.jsonl"), &decoded, frame_period_ms)?;
    write_json(&out.join("latency.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub param: f64,
    pub seed: u64,
    pub ter: Option<f64>,
    pub pr50_ms: Option<f64>,
    pub pr90_ms: Option<f64>,
    pub mean_dbar: Option<f64>,
    pub mean_delay_frames: Option<f64>,
    pub empty_hypotheses: Option<usize>,
    /// `ok`, or the error that stopped this run.
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// `measured`, or `reference` for the static published numbers.
    pub kind: String,
    pub method: String,
    pub param: Option<f64>,
    pub runs: usize,
    pub ter: Option<f64>,
    pub pr50_ms: Option<f64>,
    pub pr90_ms: Option<f64>,
    pub mean_dbar: Option<f64>,
    pub mean_delay_frames: Option<f64>,
    pub wer_dev93: Option<f64>,
    pub wer_eval92: Option<f64>,
    pub note: String,
}

fn sweep_one(config: &RunConfig, corpus: &[SyntheticUtterance], method: &Method, seed: u64) -> Result<SweepRow> {
    let mut model = config.model.build(corpus, config.vocab(corpus), seed)?;
    let trace = train_run(&mut model, corpus, method, &config.optimizer)?;
    let decoded = decode_corpus(&model, corpus, config.beam)?;
    let report = pr_latency(&decoded, config.frame_period_ms)?;
    Ok(SweepRow {
        method: method.name().into(),
        param: method.param(),
        seed,
        ter: Some(report.token_error_rate),
        pr50_ms: report.pr50_ms,
        pr90_ms: report.pr90_ms,
        mean_dbar: trace.last().map(|e| e.mean_dbar),
        mean_delay_frames: report.mean_token_delay_frames,
        empty_hypotheses: Some(report.empty_hypotheses),
        status: "ok".into(),
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Seed-averaged rows in grid order, followed by the static reference rows.
pub fn summarize_sweep(grid: &[Method], rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for method in grid {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| r.ok() && r.method == method.name() && r.param == method.param()).collect();
        if out.iter().any(|s: &SummaryRow| s.method == method.name() && s.param == Some(method.param())) {
            continue;
        }
        out.push(SummaryRow {
            kind: "measured".into(),
            method: method.name().into(),
            param: Some(method.param()),
            runs: group.len(),
            ter: mean(group.iter().map(|r| r.ter)),
            pr50_ms: mean(group.iter().map(|r| r.pr50_ms)),
            pr90_ms: mean(group.iter().map(|r| r.pr90_ms)),
            mean_dbar: mean(group.iter().map(|r| r.mean_dbar)),
            mean_delay_frames: mean(group.iter().map(|r| r.mean_delay_frames)),
            wer_dev93: None,
            wer_eval92: None,
            note: "synthetic toy corpus".into(),
        });
    }
    for (method, dev, eval, pr50, pr90) in REFERENCE_ROWS {
        out.push(SummaryRow {
            kind: "reference".into(),
            method: method.into(),
            param: None,
            runs: 0,
            ter: None,
            pr50_ms: Some(pr50),
            pr90_ms: Some(pr90),
            mean_dbar: None,
            mean_delay_frames: None,
            wer_dev93: Some(dev),
            wer_eval92: Some(eval),
            note: "published WSJ result; not reproduced".into(),
        });
    }
    out
}

/// Trains and decodes every grid point under every seed. Runs execute in
/// parallel; rows are ordered by grid index, then seed. A failed run is
/// recorded in its row and skipped; the sweep fails only if every run does.
/// Writes `config.json`, `sweep.csv` and `sweep_summary.csv`.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<(Vec<SweepRow>, Vec<SummaryRow>)> {
    config.validate()?;
    if config.grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), config)?;
    let corpus = config.load_corpus()?;
    let jobs: Vec<(Method, u64)> = config.grid.iter().flat_map(|m| config.seeds.iter().map(move |&s| (*m, s))).collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(method, seed)| {
            sweep_one(config, &corpus, method, *seed).unwrap_or_else(|e| SweepRow {
                method: method.name().into(),
                param: method.param(),
                seed: *seed,
                ter: None,
                pr50_ms: None,
                pr90_ms: None,
                mean_dbar: None,
                mean_delay_frames: None,
                empty_hypotheses: None,
                status: format!("failed: {e}"),
            })
        })
        .collect();
    let mut csv = csv_writer(&out.join("sweep.csv"), SWEEP_SCHEMA)?;
    for r in &rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    let summary = summarize_sweep(&config.grid, &rows);
    let mut csv = csv_writer(&out.join("sweep_summary.csv"), SUMMARY_SCHEMA)?;
    for r in &summary {
        csv.serialize(r)?;
    }
    csv.flush()?;
    if rows.iter().all(|r| !r.ok()) {
        return Err(Error::invalid(format!("all {} sweep runs failed; first: {}", rows.len(), rows[0].status)));
    }
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CorpusConfig, OptimizerConfig, Reduction};

    fn small() -> RunConfig {
        RunConfig {
            corpus: CorpusConfig { count: 6, ..Default::default() },
            optimizer: OptimizerConfig { learning_rate: 0.5, epochs: 30, momentum: 0.0, reduction: Reduction::Sum, eval_every: 10 },
            seeds: vec![4],
            ..Default::default()
        }
    }

    #[test]
    fn train_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let config = small();
        cmd_train(&config, &dir.path().join("a")).unwrap();
        cmd_train(&config, &dir.path().join("b")).unwrap();
        let a = std::fs::read(dir.path().join("a/trace.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b/trace.csv")).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with(TRACE_SCHEMA));
        let trace = read_trace_csv(&dir.path().join("a/trace.csv")).unwrap();
        assert_eq!(trace.len(), 30);
        let copy: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/config.json")).unwrap()).unwrap();
        assert_eq!(copy, config);
    }

    #[test]
    fn decode_writes_latency_in_ms() {
        let dir = tempfile::tempdir().unwrap();
        let config = small();
        let outcome = cmd_train(&config, dir.path()).unwrap();
        let corpus = config.load_corpus().unwrap();
        let report = cmd_decode(&outcome.model, &corpus, None, 60.0, dir.path()).unwrap();
        for u in &report.per_utterance {
            if let (Some(f), Some(ms)) = (u.latency_frames, u.latency_ms) {
                assert_eq!(ms, f as f64 * 60.0);
            }
        }
        let text = std::fs::read_to_string(dir.path().join("latency.json")).unwrap();
        assert!(text.contains("pr50_ms") && text.contains("pr90_ms"));
        assert_eq!(std::fs::read_to_string(dir.path().join("decode.jsonl")).unwrap().lines().count(), corpus.len());
    }

    #[test]
    fn zero_weight_regularisers_match_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig { grid: vec![Method::Mlt { lambda: 0.0 }, Method::FastEmit { lambda: 0.0 }], ..small() };
        let (rows, summary) = cmd_sweep(&config, dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].ter, rows[0].pr90_ms, rows[0].pr50_ms), (rows[1].ter, rows[1].pr90_ms, rows[1].pr50_ms));
        assert_eq!(summary.iter().filter(|s| s.kind == "reference").count(), 4);
        let text = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
        assert!(text.contains("not reproduced"));
    }

    #[test]
    fn failing_runs_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig { grid: vec![Method::AlignRestricted { b_left: 0, b_right: 0 }, Method::Baseline], ..small() };
        let (rows, _) = cmd_sweep(&config, dir.path()).unwrap();
        assert!(rows[0].status.starts_with("failed"));
        assert!(rows[1].ok());
        let only_bad = RunConfig { grid: vec![Method::AlignRestricted { b_left: 0, b_right: 0 }], ..small() };
        assert!(cmd_sweep(&only_bad, &dir.path().join("bad")).is_err());
    }
}
