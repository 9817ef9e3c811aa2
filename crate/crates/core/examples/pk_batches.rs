//! Identity-balanced P x N sampling with aligned transition rows.
//!
//!     cargo run --release --example pk_batches

use mtrl::batching::{group_labels, pk_sample, BatchSpec};
use mtrl::rng;
use mtrl::synthgen::{generate_dataset, GeneratorConfig};

fn main() -> mtrl::Result<()> {
    let data = generate_dataset(&GeneratorConfig::default())?;
    let spec = BatchSpec::new(4, 3)?;
    let mut stream = rng::substream(0, rng::SAMPLING);
    for step in 0..3 {
        let batch = pk_sample(&data, &spec, &mut stream)?;
        let groups = group_labels(&batch.labels);
        println!("batch {step}: {} rows", batch.labels.len());
        for (label, rows) in groups.labels.iter().zip(&groups.rows) {
            let sources: Vec<usize> = rows.iter().map(|&r| batch.sources[r].1).collect();
            println!("  class {label:>2}: rows {rows:?}, visible instances {sources:?}");
        }
    }
    Ok(())
}
