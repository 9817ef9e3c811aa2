//! Finite-difference check of every loss gradient on seeded random batches.
//!
//!     cargo run --release --example gradcheck

use mtrl::harness::{run_gradcheck, GradcheckConfig};

fn main() -> mtrl::Result<()> {
    let cfg = GradcheckConfig::default();
    let started = std::time::Instant::now();
    let report = run_gradcheck(&cfg)?;
    for t in &report.terms {
        println!(
            "{:<8} max rel err {:.3e}  {}",
            t.term.name(),
            t.max_rel_error,
            if t.passed { "ok" } else { "FAIL" }
        );
    }
    println!("{} batches in {:.2?}", cfg.batches, started.elapsed());
    Ok(())
}
