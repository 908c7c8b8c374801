//! The verification suite the `verify` subcommand runs, on a reduced set.

use transducer_latency::experiment::{run_verify, VerifyConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let report = run_verify(&VerifyConfig { lattices: 100, fd_lattices: 20, ..Default::default() })?;
    print!("{report}");
    if !report.passed() {
        return Err("verification failed".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
