//! Command-line front end. Exit codes: 0 success, 1 run or verification
//! failure, 2 invalid configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use transducer_latency::experiment::{cmd_decode, cmd_sweep, cmd_train, run_verify, ModelConfig, RunConfig, VerifyConfig};
use transducer_latency::model::{read_corpus, write_corpus, Method, Model, NetworkDims};
use transducer_latency::{Error, Result};

#[derive(Parser)]
#[command(name = "mlt", about = "Latency-regularised transducer training on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle and finite-difference checks over seeded random lattices.
    Verify {
        #[arg(long = "max-T", default_value_t = 6)]
        max_t: usize,
        #[arg(long = "max-U", default_value_t = 4)]
        max_u: usize,
        #[arg(long, default_value_t = 500)]
        lattices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one backward value (negative control).
        #[arg(long, hide = true)]
        perturb_beta: bool,
        /// Directory for the failing case, if any.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write a synthetic corpus as JSON lines.
    GenCorpus {
        #[command(flatten)]
        run: RunArgs,
    },
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and decode every grid point for every seed.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Seeds per grid point.
        #[arg(long, default_value_t = 3)]
        runs: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Baseline,
    AlignRestricted,
    Fastemit,
    Mlt,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Table,
    Network,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Comma-separated list for sweeps.
    #[arg(long, value_delimiter = ',')]
    lambda_mlt: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_fe: Vec<f64>,
    #[arg(long)]
    b_left: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    b_right: Vec<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    frame_period_ms: Option<f64>,
    /// JSON-lines corpus instead of a generated one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

fn single<T: Copy>(values: &[T], flag: &str) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(Error::InvalidInput(format!("--{flag} takes one value here"))),
    }
}

impl RunArgs {
    fn methods(&self, default_b_left: usize) -> Result<Vec<Method>> {
        let Some(kind) = self.method else { return Ok(Vec::new()) };
        let need = |v: &[f64], flag: &str| -> Result<Vec<f64>> {
            if v.is_empty() {
                Err(Error::InvalidInput(format!("--method needs --{flag}")))
            } else {
                Ok(v.to_vec())
            }
        };
        Ok(match kind {
            MethodArg::Baseline => vec![Method::Baseline],
            MethodArg::Fastemit => need(&self.lambda_fe, "lambda-fe")?.into_iter().map(|lambda| Method::FastEmit { lambda }).collect(),
            MethodArg::Mlt => need(&self.lambda_mlt, "lambda-mlt")?.into_iter().map(|lambda| Method::Mlt { lambda }).collect(),
            MethodArg::AlignRestricted => {
                if self.b_right.is_empty() {
                    return Err(Error::InvalidInput("--method align-restricted needs --b-right".into()));
                }
                let b_left = self.b_left.unwrap_or(default_b_left);
                self.b_right.iter().map(|&b_right| Method::AlignRestricted { b_left, b_right }).collect()
            }
        })
    }

    fn config(&self, sweep_runs: Option<u64>) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.corpus.seed = seed;
            c.seeds = vec![seed];
        }
        if let Some(n) = sweep_runs {
            let first = c.seeds[0];
            c.seeds = (0..n.max(1)).map(|i| first + i).collect();
        }
        let methods = self.methods(20)?;
        match sweep_runs {
            Some(_) if !methods.is_empty() => c.grid = methods,
            Some(_) if c.grid.is_empty() => c.grid = RunConfig::demo_grid(),
            Some(_) => {}
            None => {
                if let Some(m) = single(&methods, "lambda / --b-right")? {
                    c.method = m;
                }
            }
        }
        if let Some(b) = self.beam {
            c.beam = Some(b);
        }
        if let Some(f) = self.frame_period_ms {
            c.frame_period_ms = f;
        }
        if let Some(p) = &self.corpus {
            c.corpus_path = Some(p.clone());
        }
        if let Some(n) = self.count {
            c.corpus.count = n;
        }
        match self.model {
            Some(ModelArg::Table) if !matches!(c.model, ModelConfig::Table { .. }) => c.model = ModelConfig::default(),
            Some(ModelArg::Network) if !matches!(c.model, ModelConfig::Network { .. }) => {
                let d = NetworkDims::for_vocab(c.corpus.vocab);
                c.model = ModelConfig::Network { encoder: d.encoder, predictor: d.predictor, joint: d.joint };
                c.optimizer.reduction = transducer_latency::model::Reduction::Mean;
                c.optimizer.learning_rate = 0.1;
            }
            _ => {}
        }
        if let Some(e) = self.epochs {
            c.optimizer.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            c.optimizer.learning_rate = lr;
        }
        c.validate()?;
        Ok(c)
    }
}

fn verify(max_t: usize, max_u: usize, lattices: usize, seed: u64, perturb_beta: bool, out: &Path) -> Result<bool> {
    let config = VerifyConfig { max_frames: max_t, max_labels: max_u, lattices, fd_lattices: lattices.min(50), seed, perturb_beta };
    if max_t == 0 {
        return Err(Error::InvalidInput("--max-T must be at least 1".into()));
    }
    let report = run_verify(&config)?;
    print!("{report}");
    if let Some(case) = report.first_failure() {
        std::fs::create_dir_all(out)?;
        let path = out.join("failing_case.json");
        std::fs::write(&path, serde_json::to_string_pretty(case)?)?;
        eprintln!("first failing case ({}) written to {}", case.check, path.display());
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify { max_t, max_u, lattices, seed, perturb_beta, out } => verify(max_t, max_u, lattices, seed, perturb_beta, &out),
        Command::GenCorpus { run } => {
            let c = run.config(None)?;
            let corpus = c.load_corpus()?;
            std::fs::create_dir_all(&run.out)?;
            let path = run.out.join("corpus.jsonl");
            write_corpus(&path, &corpus)?;
            println!("{} utterances written to {}", corpus.len(), path.display());
            Ok(true)
        }
        Command::Train { run } => {
            let c = run.config(None)?;
            let outcome = cmd_train(&c, &run.out)?;
            if let Some(last) = outcome.trace.last() {
                println!(
                    "epoch {} loss {:.4} mean_dbar {:.4} ter {} mean_delay {}",
                    last.epoch,
                    last.loss,
                    last.mean_dbar,
                    last.ter.map_or("-".into(), |v| format!("{v:.4}")),
                    last.mean_delay.map_or("-".into(), |v| format!("{v:.3}"))
                );
            }
            Ok(true)
        }
        Command::Decode { checkpoint, run } => {
            let c = run.config(None)?;
            let model: Model = serde_json::from_str(&std::fs::read_to_string(&checkpoint)?)?;
            let corpus = match &c.corpus_path {
                Some(p) => read_corpus(p)?,
                None => c.load_corpus()?,
            };
            let report = cmd_decode(&model, &corpus, c.beam, c.frame_period_ms, &run.out)?;
            let show = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.1}"));
            println!(
                "ter {:.4} pr50 {} ms pr90 {} ms empty {}",
                report.token_error_rate,
                show(report.pr50_ms),
                show(report.pr90_ms),
                report.empty_hypotheses
            );
            Ok(true)
        }
        Command::Sweep { run, runs } => {
            let c = run.config(Some(runs))?;
            let (rows, summary) = cmd_sweep(&c, &run.out)?;
            for r in rows.iter().filter(|r| !r.ok()) {
                eprintln!("{} {} seed {}: {}", r.method, r.param, r.seed, r.status);
            }
            for s in summary.iter().filter(|s| s.kind == "measured") {
                let show = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
                println!(
                    "{:<17} {:>6} runs {} ter {} pr50 {} pr90 {} delay {}",
                    s.method,
                    s.param.map_or("-".into(), |p| p.to_string()),
                    s.runs,
                    show(s.ter),
                    show(s.pr50_ms),
                    show(s.pr90_ms),
                    show(s.mean_delay_frames)
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidInput(_) | Error::OverRestricted { .. } | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
