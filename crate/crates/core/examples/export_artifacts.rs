//! Distance histogram and 2-D projection CSVs for a trained model.
//!
//!     cargo run --release --example export_artifacts -- [out_dir]

use mtrl::evalkit::{distance_gap, distance_histogram, histogram_csv};
use mtrl::harness::{cmd_eval, cmd_generate, cmd_train, ExperimentConfig};

fn main() -> mtrl::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.toml").as_ref())?;
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/export".into());
    let out = std::path::Path::new(&out);
    let data = cmd_generate(&cfg, Some(&out.join("dataset.mtrl")))?.path;
    let trained = cmd_train(&cfg, &data, out)?;
    let eval = cmd_eval(&trained.checkpoint, &data, &cfg.eval, out)?;
    println!(
        "wrote {}, {}, {}",
        eval.metrics_path.display(),
        eval.histogram_path.display(),
        eval.pca_path.display()
    );

    // The same statistics in memory for the first evaluation trial.
    let dataset = mtrl::synthgen::SyntheticDataset::load(&data)?;
    let rs = mtrl::harness::build_retrieval_set(
        &dataset,
        &trained.state.state,
        cfg.eval.features,
        cfg.eval.direction,
        &mut mtrl::rng::substream(cfg.seed, mtrl::rng::EVAL),
    )?;
    let gap = distance_gap(&rs)?;
    println!(
        "mean pos {:.3}, mean neg {:.3}, gap {:.3}",
        gap.mean_pos, gap.mean_neg, gap.gap
    );
    print!(
        "{}",
        String::from_utf8_lossy(&histogram_csv(&distance_histogram(&rs, 8)?)?)
    );
    Ok(())
}
