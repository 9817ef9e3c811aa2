//! k-reciprocal re-ranking over a trained model's test features, swept
//! over lambda.
//!
//!     cargo run --release --example rerank

use mtrl::evalkit::{cmc_map, k_reciprocal_rerank};
use mtrl::harness::{build_retrieval_set, generate, train_run, ExperimentConfig};
use mtrl::rng;

fn main() -> mtrl::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.toml").as_ref())?;
    let data = generate(&cfg)?;
    let state = train_run(&cfg, &data)?.state;
    let rs = build_retrieval_set(
        &data,
        &state,
        cfg.eval.features,
        cfg.eval.direction,
        &mut rng::substream(cfg.seed, rng::EVAL),
    )?;

    let plain = cmc_map(&rs, None)?;
    println!("no re-rank      Rank-1 {:.4}  mAP {:.4}", plain.rank1, plain.map);
    let k1 = cfg.eval.k1.min(rs.gallery().rows() - 1);
    let k2 = cfg.eval.k2.min(k1 - 1);
    for lambda in [1.0, 0.6, 0.3, 0.0] {
        let d = k_reciprocal_rerank(rs.query(), rs.gallery(), k1, k2, lambda)?;
        let m = cmc_map(&rs, Some(&d))?;
        println!("lambda {lambda:.1}      Rank-1 {:.4}  mAP {:.4}", m.rank1, m.map);
    }
    Ok(())
}
