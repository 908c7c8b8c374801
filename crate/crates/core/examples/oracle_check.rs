//! Brute-force ground truth: enumerate every alignment, compare the path sum
//! with forward-backward, and check one gradient entry by central difference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transducer_latency::lattice::{loss_grad_probs, transducer_loss, Emission, EmissionLattice};
use transducer_latency::oracle::{enumerate_alignments, finite_diff, oracle_likelihood};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lattice = EmissionLattice::random(&mut rng, 5, 3)?;
    let paths = enumerate_alignments(5, 3)?;
    println!("{} alignments", paths.len());

    let oracle = oracle_likelihood(&lattice, &paths, None);
    let (loss, fb) = transducer_loss(&lattice)?;
    println!("oracle log P = {:.15}", oracle.ln());
    println!("forward log P = {:.15}", -loss);

    let grads = loss_grad_probs(&fb, &lattice)?;
    let numeric = finite_diff(|l| Ok(transducer_loss(l)?.0), &lattice, (2, 1), Emission::Label, 1e-6)?;
    println!("label (2,1): analytic {:.10} numeric {:.10}", grads.label(2, 1), numeric);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
