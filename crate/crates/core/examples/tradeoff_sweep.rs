//! A small latency/accuracy sweep across all four methods, written to a
//! temporary directory as `sweep.csv` and `sweep_summary.csv`.

use transducer_latency::experiment::{cmd_sweep, RunConfig};
use transducer_latency::model::{CorpusConfig, OptimizerConfig, Reduction};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("transducer-latency-sweep-example");
    let config = RunConfig {
        name: "example-sweep".into(),
        corpus: CorpusConfig { count: 20, ..Default::default() },
        optimizer: OptimizerConfig { learning_rate: 0.5, epochs: 100, momentum: 0.0, reduction: Reduction::Sum, eval_every: 100 },
        seeds: vec![1, 2],
        grid: RunConfig::demo_grid(),
        ..Default::default()
    };
    let (_, summary) = cmd_sweep(&config, &out)?;
    println!("{:<10} {:<17} {:>6} {:>7} {:>9} {:>9}", "kind", "method", "param", "ter", "pr50_ms", "pr90_ms");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
    for s in &summary {
        println!(
            "{:<10} {:<17} {:>6} {:>7} {:>9} {:>9}",
            s.kind,
            s.method,
            s.param.map_or("-".to_string(), |p| p.to_string()),
            s.ter.map_or("-".to_string(), |v| format!("{v:.3}")),
            show(s.pr50_ms),
            show(s.pr90_ms)
        );
    }
    println!("written to {}", out.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
