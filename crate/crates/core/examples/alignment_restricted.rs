//! Alignment-restricted training: band masks around reference label times
//! prune late (and early) alignments before forward-backward runs.

use transducer_latency::constraint::{build_masks, masked_grad_probs, masked_loss};
use transducer_latency::latency::ReferenceAlignment;
use transducer_latency::lattice::{transducer_loss, EmissionLattice};
use transducer_latency::Error;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (frames, labels) = (6, 2);
    let lattice = EmissionLattice::uniform(frames, labels, 0.5, 0.5)?;
    let reference = ReferenceAlignment { label_times: vec![2, 4], eos_frame: 4 };
    let (full, _) = transducer_loss(&lattice)?;
    println!("unrestricted loss {full:.4}");

    for b_right in [6, 4, 3] {
        let masks = build_masks(&reference, 2, b_right, frames, labels)?;
        let (loss, fb) = masked_loss(&lattice, &masks)?;
        let grads = masked_grad_probs(&fb, &masks)?;
        let pruned = grads.entries().filter(|e| e.3 == 0.0).count();
        println!("b_left 2 b_right {b_right}: loss {loss:.4}, {pruned} zero-gradient entries");
    }

    // The final row must reach the last frame within the right buffer.
    match build_masks(&reference, 2, 1, frames, labels) {
        Err(Error::OverRestricted { diagonal }) => println!("b_right 1: no alignment survives past diagonal {diagonal}"),
        other => println!("b_right 1: unexpected {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
