//! The encoder/predictor/joint network: an end-to-end gradient check of the
//! hand-written backpropagation, then a short training run.

use transducer_latency::model::{
    generate_corpus, parameter_gradient, train_run, utterance_gradient, CorpusConfig, Method, Model, NetworkDims, OptimizerConfig,
    Reduction, TinyJointModel,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tiny = generate_corpus(&CorpusConfig { count: 1, vocab: 3, frames: (3, 3), labels: (1, 1), silence: 0, ..Default::default() })?;
    let dims = NetworkDims { input: 4, encoder: 4, predictor: 4, joint: 4, vocab: 3 };
    let model = Model::Network(TinyJointModel::init(dims, 5));
    let (_, analytic) = parameter_gradient(&model, &tiny[0], &Method::Baseline)?;
    let mut worst = 0.0f64;
    for (i, &exact) in analytic.iter().enumerate() {
        let loss_at = |delta: f64| -> Result<f64, transducer_latency::Error> {
            let mut m = model.clone();
            m.params_mut()[i] += delta;
            Ok(utterance_gradient(&m, &tiny[0], &Method::Baseline)?.loss)
        };
        let numeric = (loss_at(1e-5)? - loss_at(-1e-5)?) / 2e-5;
        worst = worst.max((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-8));
    }
    println!("{} parameters, worst relative gradient error {worst:.2e}", analytic.len());

    let corpus = generate_corpus(&CorpusConfig { count: 20, ..Default::default() })?;
    let mut model = Model::Network(TinyJointModel::init(NetworkDims::for_vocab(8), 1));
    let opt = OptimizerConfig { learning_rate: 0.1, epochs: 60, momentum: 0.0, reduction: Reduction::Mean, eval_every: 20 };
    for e in train_run(&mut model, &corpus, &Method::Mlt { lambda: 0.03 }, &opt)?.epochs.iter().filter(|e| e.ter.is_some()) {
        println!("epoch {:>3} loss {:.3} ter {:.3}", e.epoch, e.loss, e.ter.unwrap_or(f64::NAN));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
