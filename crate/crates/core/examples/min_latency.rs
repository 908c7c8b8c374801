//! Minimum-latency training on one lattice: delays against a reference, the
//! expected delay per diagonal, its gradient, and the rescaled loss gradient.

use transducer_latency::latency::{expected_delays, latency_grads, mlt_grads, mlt_report_loss, DelayField, ReferenceAlignment};
use transducer_latency::lattice::{loss_grad_probs, transducer_loss, EmissionLattice};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (frames, labels) = (4, 2);
    let lattice = EmissionLattice::uniform(frames, labels, 0.5, 0.5)?;
    let reference = ReferenceAlignment { label_times: vec![1, 2], eos_frame: 2 };
    let delays = DelayField::from_reference(&reference, frames, labels)?;
    println!("tau_ref per diagonal: {:?}", delays.tau_ref());
    for t in 1..=frames + 1 {
        let row: Vec<String> = (0..=labels).map(|u| format!("{:.0}", delays.get(t, u))).collect();
        println!("d(t={t}, u=0..) = {}", row.join(" "));
    }

    let (loss, fb) = transducer_loss(&lattice)?;
    let dbar = expected_delays(&fb, &delays)?;
    println!("d_bar per diagonal: {:?}", dbar.d_bar.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>());

    let lambda = 0.03;
    println!("loss {loss:.4}, with latency term {:.4}", mlt_report_loss(loss, &dbar, lambda));
    let lat = latency_grads(&fb, &delays, &dbar)?;
    let trans = loss_grad_probs(&fb, &lattice)?;
    let mlt = mlt_grads(&trans, &delays, &dbar, lambda)?;
    for (kind, t, u, g) in trans.entries() {
        println!("{kind:?} ({t},{u}): trans {g:+.4}  latency {:+.4}  mlt {:+.4}", lat.get(kind, t, u), mlt.get(kind, t, u));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
