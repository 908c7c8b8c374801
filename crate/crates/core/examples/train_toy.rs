//! Trains the free-table model on a small synthetic corpus with each of the
//! four methods and prints the final loss, token error rate and delay.

use transducer_latency::model::{generate_corpus, train_run, CorpusConfig, Method, Model, OptimizerConfig, Reduction, TableModel};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_corpus(&CorpusConfig { count: 20, ..Default::default() })?;
    let opt = OptimizerConfig { learning_rate: 0.5, epochs: 150, momentum: 0.0, reduction: Reduction::Sum, eval_every: 50 };
    let methods = [
        Method::Baseline,
        Method::AlignRestricted { b_left: 20, b_right: 12 },
        Method::FastEmit { lambda: 0.1 },
        Method::Mlt { lambda: 0.3 },
    ];
    for method in methods {
        let mut model = Model::Table(TableModel::init(&corpus, 8, 1, 0.5, 1.0)?);
        let trace = train_run(&mut model, &corpus, &method, &opt)?;
        let last = trace.last().expect("at least one epoch");
        println!(
            "{:<17} loss {:.3}  mean d_bar {:.3}  ter {:.3}  delay {:.3} frames",
            method.name(),
            last.loss,
            last.mean_dbar,
            last.ter.unwrap_or(f64::NAN),
            last.mean_delay.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
