//! Greedy and beam decoding of a trained table model, then token error rate
//! and partial-recognition latency percentiles.

use transducer_latency::decode::{beam_search, decode_corpus, greedy_decode, pr_latency};
use transducer_latency::model::{generate_corpus, train_run, CorpusConfig, Method, Model, OptimizerConfig, Reduction, TableModel};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_corpus(&CorpusConfig { count: 10, ..Default::default() })?;
    let mut model = Model::Table(TableModel::init(&corpus, 8, 3, 0.5, 1.0)?);
    let opt = OptimizerConfig { learning_rate: 0.5, epochs: 100, momentum: 0.0, reduction: Reduction::Sum, eval_every: 100 };
    train_run(&mut model, &corpus, &Method::Baseline, &opt)?;

    let utt = &corpus[0];
    let scorer = model.scorer(utt)?;
    let greedy = greedy_decode(scorer.as_ref());
    println!("reference {:?} at {:?}", utt.labels, utt.reference.label_times);
    println!("greedy    {:?} at {:?}", greedy.tokens, greedy.emission_frames);
    for h in beam_search(scorer.as_ref(), 4)?.iter().take(3) {
        println!("beam      {:?} at {:?}  log p {:.3}", h.result.tokens, h.result.emission_frames, h.log_score);
    }

    for beam in [None, Some(10)] {
        let report = pr_latency(&decode_corpus(&model, &corpus, beam)?, 60.0)?;
        println!(
            "{:<7} ter {:.3}  PR50 {:?} ms  PR90 {:?} ms  empty {}",
            beam.map_or("greedy".to_string(), |b| format!("beam {b}")),
            report.token_error_rate,
            report.pr50_ms,
            report.pr90_ms,
            report.empty_hypotheses
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
