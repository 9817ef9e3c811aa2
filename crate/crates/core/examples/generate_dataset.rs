//! Generate the reference synthetic dataset and inspect the modality gap.
//!
//!     cargo run --release --example generate_dataset -- [out.mtrl]

use mtrl::synthgen::{generate_dataset, GeneratorConfig, Modality};
use mtrl::tensor::euclidean;

fn main() -> mtrl::Result<()> {
    let cfg = GeneratorConfig::default();
    let data = generate_dataset(&cfg)?;
    println!(
        "{} identities ({} train / {} test), {} instances per modality, obs_dim {}",
        data.num_identities(),
        data.train_identities().len(),
        data.test_identities().len(),
        data.instances_per_modality(),
        data.obs_dim()
    );

    // Mean distance from each visible instance to its transition and
    // infrared counterparts.
    let (mut to_g, mut to_i, mut n) = (0.0, 0.0, 0.0);
    for id in 0..data.num_identities() {
        for j in 0..data.instances_per_modality() {
            let v = data.observation(id, Modality::Visible, j);
            to_g += euclidean(v, data.observation(id, Modality::Transition, j));
            to_i += euclidean(v, data.observation(id, Modality::Infrared, j));
            n += 1.0;
        }
    }
    println!("mean |V - G| = {:.3}, mean |V - I| = {:.3}", to_g / n, to_i / n);

    if let Some(path) = std::env::args().nth(1) {
        data.save(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
