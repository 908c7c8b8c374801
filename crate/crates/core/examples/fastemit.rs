//! FastEmit as a pure gradient transform: label entries grow by `1 + lambda`,
//! blank entries are untouched.

use transducer_latency::constraint::fastemit_grads;
use transducer_latency::lattice::{loss_grad_probs, transducer_loss, EmissionLattice, Emission};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let lattice = EmissionLattice::uniform(3, 1, 0.4, 0.6)?;
    let (_, fb) = transducer_loss(&lattice)?;
    let trans = loss_grad_probs(&fb, &lattice)?;
    let boosted = fastemit_grads(&trans, 0.015)?;
    for (kind, t, u, g) in trans.entries() {
        let b = boosted.get(kind, t, u);
        let ratio = if g != 0.0 { b / g } else { 1.0 };
        let tag = match kind {
            Emission::Label => "label",
            Emission::Blank => "blank",
        };
        println!("{tag} ({t},{u}): {g:+.5} -> {b:+.5}  x{ratio:.3}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
