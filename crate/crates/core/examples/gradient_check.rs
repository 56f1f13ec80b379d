//! Finite-difference check of every layer's backward pass and of the tiny
//! network end to end.

use img2joint::nn::gradcheck::{self, Target};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instances = std::env::args().nth(1).map_or(Ok(20), |a| a.parse())?;
    let mut all = true;
    for t in Target::ALL {
        let r = gradcheck::run(t, instances, 1)?;
        all &= r.passed();
        println!(
            "{:<13} {:>3} instances  {:>6} derivatives  worst relative error {:.2e}  {}",
            t.name(),
            r.instances,
            r.derivatives,
            r.worst,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    if !all {
        std::process::exit(1);
    }
    Ok(())
}
