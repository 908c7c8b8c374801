//! Transducer loss on a small lattice: forward-backward tables, the diagonal
//! identity and the gradient on every emission probability.
//!
//! ```text
//! cargo run --example forward_backward
//! ```

use transducer_latency::lattice::{diagonal_posteriors, loss_grad_probs, transducer_loss, EmissionLattice};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // T = 3 frames, U = 2 labels; rows are frames, columns label positions.
    let lattice = EmissionLattice::from_probs(
        3,
        2,
        vec![vec![0.6, 0.2], vec![0.5, 0.4], vec![0.3, 0.7]],
        vec![vec![0.4, 0.7, 0.9], vec![0.5, 0.5, 0.8], vec![0.6, 0.3, 0.9]],
    )?;
    let (loss, fb) = transducer_loss(&lattice)?;
    println!("loss = {loss:.6}   P(Y|X) = {:.6}", (-loss).exp());

    // Posteriors on every diagonal t + u = n sum to one.
    for n in 1..=lattice.frames() + lattice.labels() + 1 {
        let post = diagonal_posteriors(&fb, n)?;
        let total: f64 = post.iter().map(|(_, w)| w).sum();
        let cells: Vec<String> = post.iter().map(|((t, u), w)| format!("({t},{u}):{w:.3}")).collect();
        println!("n={n}  sum={total:.12}  {}", cells.join(" "));
    }

    let grads = loss_grad_probs(&fb, &lattice)?;
    for (kind, t, u, g) in grads.entries() {
        println!("dL/dP {kind:?} at ({t},{u}) = {g:+.5}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
