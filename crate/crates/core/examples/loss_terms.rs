//! Every loss term on one random batch, with the identity distance
//! matrices behind the contrastive term.
//!
//!     cargo run --release --example loss_terms

use mtrl::batching::EmbeddingBatch;
use mtrl::geometry::{id_distance_matrix, positive_query_matrices};
use mtrl::losses::{
    loss_center, loss_mqr, loss_mtc, total_loss, CenterBank, ClassifierSet, LossConfig, LossWeights, TermFlags,
};
use mtrl::rng;
use mtrl::tensor::Matrix;
use rand_distr::{Distribution, StandardNormal};

fn random(rows: usize, cols: usize, stream: &mut rng::Stream) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *stream)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn main() -> mtrl::Result<()> {
    let (p, n, dim) = (4, 2, 8);
    let mut stream = rng::stream(1);
    let labels: Vec<usize> = (0..p).flat_map(|l| [l; 2]).collect();
    let batch = EmbeddingBatch::new(
        random(p * n, dim, &mut stream),
        random(p * n, dim, &mut stream),
        random(p * n, dim, &mut stream),
        labels.clone(),
        true,
    )?;

    let d = id_distance_matrix(&batch.visible, &batch.infrared, &labels, n)?;
    println!("V-I identity distances (k = {}):", d.k());
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| format!("{:6.3}", d.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }

    let w = LossWeights::default();
    let mtc = loss_mtc(&batch, n, &w)?;
    println!(
        "mtc {:.4} (vi {:.4}, vg {:.4}, ig {:.4})",
        mtc.value, mtc.components[0], mtc.components[1], mtc.components[2]
    );
    let bank = CenterBank::random(p, dim, &mut stream);
    println!("center {:.4}", loss_center(&batch, &bank)?.value);
    println!("mqr {:.4}", loss_mqr(&positive_query_matrices(&batch)?).value);

    let mut cls = ClassifierSet::random(p, dim, 0.2, &mut stream);
    let report = total_loss(&batch, &bank, &mut cls, &LossConfig::new(w, TermFlags::default(), n))?;
    let t = report.terms;
    println!("id {:.4}, total {:.4}", t.id, t.total);
    println!(
        "feature gradient norms: V {:.4}, G {:.4}, I {:.4}",
        report.features.visible.frobenius(),
        report.features.transition.frobenius(),
        report.features.infrared.frobenius()
    );
    Ok(())
}
