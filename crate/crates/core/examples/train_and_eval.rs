//! Train on the reference configuration, evaluate both directions, and
//! resume from a checkpoint.
//!
//!     cargo run --release --example train_and_eval

use mtrl::evalkit::Direction;
use mtrl::harness::{evaluate_state, generate, ExperimentConfig};
use mtrl::model::{Checkpoint, Trainer};

fn main() -> mtrl::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.toml").as_ref())?;
    let data = generate(&cfg)?;

    let mut trainer = Trainer::new(&data, cfg.train.clone(), cfg.seed)?;
    let half = cfg.train.steps / 2;
    let first = trainer.run(half)?;
    let bytes = Checkpoint {
        train_config: cfg.train.clone(),
        generator: data.config().clone(),
        seed: cfg.seed,
        state: trainer.into_state(),
    }
    .to_bytes()?;
    println!("checkpoint after {half} steps: {} bytes", bytes.len());

    let restored = Checkpoint::from_bytes(&bytes)?;
    let mut trainer = Trainer::from_state(&data, restored.train_config, restored.state)?;
    let rest = trainer.run(cfg.train.steps - half)?;
    for r in first.iter().chain(&rest).step_by(25) {
        println!(
            "step {:>3} epoch {:>2} lr {:.2e} loss {:.4}",
            r.step, r.epoch, r.lr, r.loss.total
        );
    }

    let state = trainer.into_state();
    for direction in [Direction::I2v, Direction::V2i] {
        let mut eval = cfg.eval.clone();
        eval.direction = direction;
        let (m, _) = evaluate_state(&state, &data, &eval, cfg.seed)?;
        println!(
            "{direction}: Rank-1 {:.2}%  Rank-5 {:.2}%  mAP {:.2}%  gap {:.3}",
            100.0 * m.rank1,
            100.0 * m.rank5,
            100.0 * m.map,
            m.gap.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
