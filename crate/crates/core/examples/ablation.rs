//! The six-row loss ablation on the reference configuration.
//!
//!     cargo run --release --example ablation -- [seeds]

use mtrl::harness::{cmd_ablate, ExperimentConfig, GridSpec};

fn main() -> mtrl::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.toml").as_ref())?;
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let table = cmd_ablate(&cfg, &GridSpec::table((0..seeds).map(|i| cfg.seed + i).collect()))?;
    println!("{:<12} {:>8} {:>8} {:>8}", "row", "Rank-1", "mAP", "gap");
    for s in &table.summary {
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        println!(
            "{:<12} {:>8} {:>8} {:>8}",
            s.row.name(),
            pct(s.mean_rank1),
            pct(s.mean_map),
            s.mean_gap.map_or("-".to_string(), |g| format!("{g:.3}"))
        );
    }
    Ok(())
}
