//! Degenerate-value checks over the public API, one per documented degenerate
//! example. Each returns `Err` with a short reason on failure.

use std::path::Path;

use mtrl::batching::{group_labels, pk_sample, BatchSpec, EmbeddingBatch};
use mtrl::evalkit::{cmc_map, distance_gap, k_reciprocal_rerank, pca2d, RetrievalSet};
use mtrl::geometry::{
    id_distance_matrix, pairwise_euclidean, positive_query_matrices, topk_aggregate, QueryPair, TopkMode,
};
use mtrl::harness::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_train, evaluate_state, generate, run_gradcheck, train_run, AblationRow,
    ExperimentConfig, GradTerm, GradcheckConfig, GridSpec,
};
use mtrl::losses::{
    loss_center, loss_id, loss_mc, loss_mqr, loss_mtc, loss_neg, loss_pos, normalize_features,
    total_loss_fixed_targets, BatchNorm, CenterBank, ClassifierSet, LossConfig, LossWeights, MtcDistances, TermFlags,
};
use mtrl::model::{
    adam_step, encode, train, AdamState, Checkpoint, EncoderParams, ModelConfig, ScheduleConfig, TrainConfig,
    TrainState,
};
use mtrl::rng;
use mtrl::synthgen::{
    generate_dataset, make_identity_latents, modality_params, sample_instance, transition_transform, GeneratorConfig,
    ModalityParams, SyntheticDataset,
};
use mtrl::tensor::Matrix;

pub type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!("failed: {}", stringify!($cond)));
        }
    };
}

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn small_gen() -> GeneratorConfig {
    GeneratorConfig {
        num_identities: 6,
        instances_per_modality: 3,
        latent_dim: 3,
        obs_dim: 5,
        seed: 7,
        train_fraction: 0.5,
        ..GeneratorConfig::default()
    }
}

fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 3,
        ..ExperimentConfig::default()
    };
    cfg.generator = GeneratorConfig {
        num_identities: 12,
        instances_per_modality: 4,
        latent_dim: 3,
        obs_dim: 6,
        train_fraction: 0.5,
        ..GeneratorConfig::default()
    };
    cfg.train.batch = BatchSpec::new(3, 2).unwrap();
    cfg.train.model = ModelConfig {
        hidden: 8,
        feat_dim: 4,
        parts: 1,
    };
    cfg.train.steps = 8;
    cfg.eval.trials = 2;
    cfg
}

fn padded_identity(obs: usize, latent: usize) -> Matrix {
    let mut t = Matrix::zeros(obs, latent);
    for j in 0..latent {
        t[(j, j)] = 1.0;
    }
    t
}

fn coinciding_batch() -> EmbeddingBatch {
    let f = m(&[&[0.0, 0.0], &[1.0, 0.5], &[3.0, 1.0], &[2.5, 2.0]]);
    EmbeddingBatch::new(f.clone(), f.clone(), f, vec![0, 0, 1, 1], true).unwrap()
}

fn coinciding_singletons() -> EmbeddingBatch {
    let f = m(&[&[0.0, 0.0], &[1.0, 2.0], &[3.0, -1.0]]);
    EmbeddingBatch::new(f.clone(), f.clone(), f, vec![0, 1, 2], true).unwrap()
}

fn synth_repeatable() -> Result<(), String> {
    let cfg = small_gen();
    ensure!(make_identity_latents(&cfg) == make_identity_latents(&cfg));
    Ok(())
}

fn synth_empty() -> Result<(), String> {
    ensure!(make_identity_latents(&GeneratorConfig {
        num_identities: 0,
        ..small_gen()
    })
    .is_empty());
    Ok(())
}

fn sample_identity_case() -> Result<(), String> {
    let p = ModalityParams::new(padded_identity(5, 3), vec![0.0; 5]).unwrap();
    let out = sample_instance(&[1.0, -2.0, 0.5], &p, 0.0, &mut rng::stream(1)).unwrap();
    ensure!(out == vec![1.0, -2.0, 0.5, 0.0, 0.0]);
    Ok(())
}

fn sample_zero_case() -> Result<(), String> {
    let shift = vec![0.3, -1.0, 2.0, 0.0];
    let p = ModalityParams::new(padded_identity(4, 2), shift.clone()).unwrap();
    ensure!(sample_instance(&[0.0, 0.0], &p, 0.0, &mut rng::stream(2)).unwrap() == shift);
    Ok(())
}

fn mix_zero() -> Result<(), String> {
    let (v, i) = modality_params(&small_gen()).unwrap();
    let v_obs = v.observe(&[0.2, -0.7, 1.1]).unwrap();
    ensure!(transition_transform(&v_obs, &v, &i, 0.0).unwrap() == v_obs);
    Ok(())
}

fn mix_one() -> Result<(), String> {
    let (v, i) = modality_params(&small_gen()).unwrap();
    let z = [0.2, -0.7, 1.1];
    let g = transition_transform(&v.observe(&z).unwrap(), &v, &i, 1.0).unwrap();
    let want = i.observe(&z).unwrap();
    ensure!(g.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
    Ok(())
}

fn dataset_counts() -> Result<(), String> {
    let d = generate_dataset(&GeneratorConfig {
        num_identities: 50,
        instances_per_modality: 20,
        ..GeneratorConfig::default()
    })
    .unwrap();
    ensure!(d.total_observations() == 50 * 20 * 3);
    Ok(())
}

fn dataset_repeatable() -> Result<(), String> {
    ensure!(
        generate_dataset(&small_gen()).unwrap().to_bytes().unwrap()
            == generate_dataset(&small_gen()).unwrap().to_bytes().unwrap()
    );
    Ok(())
}

fn two_identity_batch() -> Result<(), String> {
    let d = generate_dataset(&GeneratorConfig {
        num_identities: 2,
        train_fraction: 1.0,
        ..small_gen()
    })
    .unwrap();
    let b = pk_sample(&d, &BatchSpec::new(2, 1).unwrap(), &mut rng::stream(3)).unwrap();
    let mut labels = b.labels.clone();
    labels.sort();
    ensure!(labels == vec![0, 1]);
    Ok(())
}

fn label_multiset() -> Result<(), String> {
    let d = generate_dataset(&small_gen()).unwrap();
    let b = pk_sample(&d, &BatchSpec::new(3, 2).unwrap(), &mut rng::stream(4)).unwrap();
    let g = group_labels(&b.labels);
    ensure!(g.len() == 3 && g.rows.iter().all(|r| r.len() == 2));
    Ok(())
}

fn grouping_counts() -> Result<(), String> {
    let g = group_labels(&[4, 9, 4, 9]);
    ensure!(g.len() == 2 && g.rows.iter().all(|r| r.len() == 2));
    Ok(())
}

fn grouping_permuted() -> Result<(), String> {
    let g = group_labels(&[0, 0, 1, 1]);
    let perm = [2, 0, 3, 1];
    let permuted: Vec<usize> = perm.iter().map(|&r| [0, 0, 1, 1][r]).collect();
    let h = group_labels(&permuted);
    for (label, rows) in h.labels.iter().zip(&h.rows) {
        let mut orig: Vec<usize> = rows.iter().map(|&r| perm[r]).collect();
        orig.sort();
        let want = &g.rows[g.labels.iter().position(|l| l == label).unwrap()];
        ensure!(&orig == want);
    }
    Ok(())
}

fn grouping_partition() -> Result<(), String> {
    let mut rows = group_labels(&[3, 1, 3, 2, 1, 2]).flatten();
    rows.sort();
    ensure!(rows == (0..6).collect::<Vec<_>>());
    Ok(())
}

fn pairwise_zero() -> Result<(), String> {
    ensure!(pairwise_euclidean(&m(&[&[0.0, 0.0]]), &m(&[&[0.0, 0.0]])).unwrap()[(0, 0)] == 0.0);
    Ok(())
}

fn pairwise_unit() -> Result<(), String> {
    ensure!(pairwise_euclidean(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]])).unwrap()[(0, 0)] == 2f64.sqrt());
    Ok(())
}

fn topk_full() -> Result<(), String> {
    for mode in [TopkMode::HardestPositive, TopkMode::HardestNegative] {
        ensure!(topk_aggregate(&[1.0, 2.0, 3.0], 3, mode).unwrap() == 2.0);
    }
    Ok(())
}

fn topk_max() -> Result<(), String> {
    ensure!(topk_aggregate(&[1.0, 2.0, 3.0], 1, TopkMode::HardestPositive).unwrap() == 3.0);
    Ok(())
}

fn topk_two_smallest() -> Result<(), String> {
    ensure!(topk_aggregate(&[1.0, 2.0, 3.0], 2, TopkMode::HardestNegative).unwrap() == 1.5);
    Ok(())
}

fn self_distance() -> Result<(), String> {
    let f = m(&[&[0.0, 1.0], &[2.0, 3.0], &[-1.0, 0.5]]);
    let d = id_distance_matrix(&f, &f, &[0, 1, 2], 1).unwrap();
    ensure!((0..3).all(|i| d.get(i, i) == 0.0));
    Ok(())
}

fn query_coinciding() -> Result<(), String> {
    let e = positive_query_matrices(&coinciding_batch()).unwrap();
    for id in 0..e.identities() {
        for pair in [QueryPair::VG, QueryPair::GV] {
            let x = e.get(id, pair);
            ensure!((0..x.rows()).all(|i| x[(i, i)] == 0.0));
            ensure!(*x == x.transpose());
        }
    }
    Ok(())
}

fn query_transpose() -> Result<(), String> {
    let b = EmbeddingBatch::new(
        m(&[&[0.0], &[1.0], &[5.0], &[6.5]]),
        m(&[&[0.2], &[1.4], &[5.1], &[6.0]]),
        m(&[&[-0.3], &[0.9], &[4.4], &[7.0]]),
        vec![0, 0, 1, 1],
        true,
    )
    .unwrap();
    let e = positive_query_matrices(&b).unwrap();
    ensure!((0..2).all(|id| *e.get(id, QueryPair::VI) == e.get(id, QueryPair::IV).transpose()));
    Ok(())
}

fn pos_zero() -> Result<(), String> {
    let f = m(&[&[0.0], &[10.0]]);
    ensure!(loss_pos(&id_distance_matrix(&f, &f, &[0, 1], 1).unwrap()).value == 0.0);
    Ok(())
}

fn pos_mean() -> Result<(), String> {
    let d = id_distance_matrix(&m(&[&[0.0], &[10.0]]), &m(&[&[1.0], &[13.0]]), &[0, 1], 1).unwrap();
    ensure!(loss_pos(&d).value == 2.0);
    Ok(())
}

fn neg_unit() -> Result<(), String> {
    let f = m(&[&[0.0], &[1.0]]);
    ensure!(
        loss_neg(&id_distance_matrix(&f, &f, &[0, 1], 1).unwrap(), 0.0)
            .unwrap()
            .value
            == 1.0
    );
    Ok(())
}

fn neg_far() -> Result<(), String> {
    let f = m(&[&[0.0], &[1e6]]);
    ensure!(
        loss_neg(&id_distance_matrix(&f, &f, &[0, 1], 1).unwrap(), 1e-6)
            .unwrap()
            .value
            < 1e-5
    );
    Ok(())
}

fn mc_zero_weights() -> Result<(), String> {
    let d = id_distance_matrix(
        &m(&[&[0.0, 1.0], &[1.0, 3.0]]),
        &m(&[&[0.5, 1.0], &[2.0, -1.0]]),
        &[0, 1],
        1,
    )
    .unwrap();
    let w = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        ..LossWeights::default()
    };
    let out = loss_mc(&d, &w).unwrap();
    ensure!(out.value == 0.0 && out.d_grad.max_abs() == 0.0);
    Ok(())
}

fn mc_pos_only_zero_diag() -> Result<(), String> {
    let f = m(&[&[0.0, 1.0], &[1.0, 3.0]]);
    let w = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
        ..LossWeights::default()
    };
    ensure!(
        loss_mc(&id_distance_matrix(&f, &f, &[0, 1], 1).unwrap(), &w)
            .unwrap()
            .value
            == 0.0
    );
    Ok(())
}

fn mtc_coinciding() -> Result<(), String> {
    let b = coinciding_singletons();
    let w = LossWeights::default();
    let d = MtcDistances::new(&b, 1).unwrap();
    for x in [&d.vi, &d.vg, &d.ig] {
        ensure!(loss_pos(x).value == 0.0);
    }
    let neg = loss_neg(&d.vi, w.epsilon).unwrap().value;
    ensure!((loss_mtc(&b, 1, &w).unwrap().value - w.lambda2 * neg).abs() < 1e-15);
    Ok(())
}

fn mtc_average() -> Result<(), String> {
    let out = loss_mtc(&coinciding_batch(), 2, &LossWeights::default()).unwrap();
    let c = out.components[0];
    ensure!(out.components.iter().all(|&x| x == c));
    ensure!((out.value - c).abs() <= 1e-15 * c.abs());
    Ok(())
}

fn center_zero() -> Result<(), String> {
    let b = coinciding_batch();
    let bank = CenterBank::new(m(&[&[0.0, 0.0], &[3.0, 1.0]]));
    let on = EmbeddingBatch::new(
        m(&[&[0.0, 0.0], &[0.0, 0.0], &[3.0, 1.0], &[3.0, 1.0]]),
        m(&[&[0.0, 0.0], &[0.0, 0.0], &[3.0, 1.0], &[3.0, 1.0]]),
        m(&[&[0.0, 0.0], &[0.0, 0.0], &[3.0, 1.0], &[3.0, 1.0]]),
        b.labels.clone(),
        true,
    )
    .unwrap();
    ensure!(loss_center(&on, &bank).unwrap().value == 0.0);
    Ok(())
}

fn center_scalar() -> Result<(), String> {
    use mtrl::losses::center_loss_stacked;
    let (value, _, _) = center_loss_stacked(&m(&[&[0.0]]), &[0], &CenterBank::new(m(&[&[1.0]]))).unwrap();
    ensure!(value == 1.0);
    Ok(())
}

fn mqr_coinciding() -> Result<(), String> {
    ensure!(loss_mqr(&positive_query_matrices(&coinciding_batch()).unwrap()).value == 0.0);
    Ok(())
}

fn mqr_transition_is_infrared() -> Result<(), String> {
    let v = m(&[&[0.0, 1.0], &[1.0, 0.0], &[4.0, 4.0], &[5.0, 3.0]]);
    let i = m(&[&[0.5, 1.5], &[1.2, -0.4], &[3.0, 4.5], &[6.0, 2.0]]);
    let e = positive_query_matrices(&EmbeddingBatch::new(v, i.clone(), i, vec![0, 0, 1, 1], true).unwrap()).unwrap();
    for id in 0..2 {
        ensure!(e.get(id, QueryPair::VG) == e.get(id, QueryPair::VI));
        ensure!(e.get(id, QueryPair::GV) == e.get(id, QueryPair::IV));
    }
    Ok(())
}

fn bn_constant_column() -> Result<(), String> {
    let mut bn = BatchNorm::new(2);
    bn.beta = vec![0.7, -0.3];
    bn.gamma = vec![2.0, 3.0];
    let out = normalize_features(
        &m(&[&[5.0, 1.0], &[5.0, 2.0]]),
        &m(&[&[5.0, 3.0], &[5.0, 4.0]]),
        &bn,
        true,
    )
    .unwrap();
    ensure!((0..2).all(|r| out.x_v[(r, 0)] == 0.7 && out.x_i[(r, 0)] == 0.7));
    Ok(())
}

fn bn_standardized() -> Result<(), String> {
    let bn = BatchNorm::new(2);
    let out = normalize_features(
        &m(&[&[1.0, 10.0], &[2.0, 11.0], &[0.5, 7.0]]),
        &m(&[&[3.0, 9.0], &[-1.0, 12.0]]),
        &bn,
        true,
    )
    .unwrap();
    let x = Matrix::vstack(&[&out.x_v, &out.x_i]).unwrap();
    for c in 0..2 {
        let mean = (0..5).map(|r| x[(r, c)]).sum::<f64>() / 5.0;
        let var = (0..5).map(|r| (x[(r, c)] - mean).powi(2)).sum::<f64>() / 5.0;
        ensure!(mean.abs() < 1e-6);
        // The variance guard shrinks the unit variance by about eps / var.
        ensure!((var - 1.0).abs() < 1e-4);
    }
    Ok(())
}

fn single_class() -> Result<(), String> {
    let mut cls = ClassifierSet::random(1, 3, 0.2, &mut rng::stream(0));
    let x = m(&[&[0.1, 0.2, 0.3], &[1.0, -1.0, 0.5]]);
    ensure!(loss_id(&x, &x, &[0, 0], &mut cls).unwrap().value == 0.0);
    Ok(())
}

fn ema_rate() -> Result<(), String> {
    let mut cls = ClassifierSet::random(2, 2, 0.2, &mut rng::stream(0));
    cls.visible = Matrix::filled(2, 2, 1.0);
    cls.shadow_visible = Matrix::zeros(2, 2);
    cls.ema_update();
    ensure!(cls.shadow_visible.as_slice().iter().all(|&x| x == 0.2));
    Ok(())
}

fn total_annihilation() -> Result<(), String> {
    let b = coinciding_batch();
    let bank = CenterBank::new(Matrix::filled(2, 2, 0.5));
    let cls = ClassifierSet::random(2, 2, 0.2, &mut rng::stream(6));
    let w = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        ..LossWeights::default()
    };
    let all = total_loss_fixed_targets(&b, &bank, &cls, &LossConfig::new(w, TermFlags::default(), 2)).unwrap();
    let id = total_loss_fixed_targets(
        &b,
        &bank,
        &cls,
        &LossConfig::new(LossWeights::default(), TermFlags::id_only(), 2),
    )
    .unwrap();
    ensure!(all == id);
    Ok(())
}

fn encoder_identity() -> Result<(), String> {
    let x = m(&[&[0.0, 1.5, 2.0], &[3.0, 0.25, 0.0]]);
    ensure!(encode(&EncoderParams::identity(3), &x, false).unwrap().features == x);
    Ok(())
}

fn encoder_zero() -> Result<(), String> {
    let p = EncoderParams::random(4, 6, 2, &mut rng::stream(1));
    ensure!(encode(&p, &Matrix::zeros(3, 4), false).unwrap().features.max_abs() == 0.0);
    Ok(())
}

fn adam_zero() -> Result<(), String> {
    let mut p = vec![0.5, -1.0];
    let mut s = AdamState::new(&[2]);
    adam_step(&mut [&mut p], &[&[0.0, 0.0]], &mut s, 0.1).unwrap();
    ensure!(p == vec![0.5, -1.0]);
    Ok(())
}

fn lr_epoch_100() -> Result<(), String> {
    let lr = ScheduleConfig::default().lr_at(100).unwrap();
    ensure!((lr - 3.5e-5).abs() < 1e-18);
    Ok(())
}

fn train_config() -> TrainConfig {
    small_experiment().train
}

fn train_zero_steps() -> Result<(), String> {
    let d = generate_dataset(&small_experiment().generator).unwrap();
    let cfg = TrainConfig {
        steps: 0,
        ..train_config()
    };
    ensure!(train(&d, &cfg, 1).unwrap().state == TrainState::init(&d, &cfg, 1).unwrap());
    Ok(())
}

fn train_repeatable() -> Result<(), String> {
    let d = generate_dataset(&small_experiment().generator).unwrap();
    ensure!(train(&d, &train_config(), 1).unwrap().trace == train(&d, &train_config(), 1).unwrap().trace);
    Ok(())
}

fn perfect_retrieval() -> Result<(), String> {
    let f = m(&[&[0.0, 1.0], &[2.0, 0.0], &[-1.0, -1.0]]);
    let r = cmc_map(
        &RetrievalSet::new(f.clone(), vec![0, 1, 2], f, vec![0, 1, 2]).unwrap(),
        None,
    )
    .unwrap();
    ensure!(r.rank1 == 1.0 && r.map == 1.0);
    Ok(())
}

fn rerank_unit_lambda() -> Result<(), String> {
    let q = m(&[&[0.0, 1.0], &[2.0, 0.0], &[-1.0, -1.0], &[0.5, 0.5]]);
    let g = m(&[&[0.1, 0.9], &[2.2, 0.1], &[-1.0, -0.8], &[3.0, 3.0], &[0.0, 0.2]]);
    ensure!(k_reciprocal_rerank(&q, &g, 3, 1, 1.0).unwrap() == pairwise_euclidean(&q, &g).unwrap());
    Ok(())
}

fn rerank_self_minimal() -> Result<(), String> {
    let f = m(&[&[0.0, 1.0], &[2.0, 0.0], &[-1.0, -1.0], &[0.5, 0.5], &[3.0, 2.0]]);
    let d = k_reciprocal_rerank(&f, &f, 3, 1, 0.3).unwrap();
    ensure!((0..5).all(|i| (0..5).all(|j| d[(i, i)] <= d[(i, j)])));
    Ok(())
}

fn gap_degenerate() -> Result<(), String> {
    let f = Matrix::filled(2, 2, 1.5);
    let g = distance_gap(&RetrievalSet::new(f.clone(), vec![0, 1], f, vec![0, 1]).unwrap()).unwrap();
    ensure!(g.mean_pos == 0.0 && g.mean_neg == 0.0 && g.gap == 0.0);
    Ok(())
}

fn gap_two_points() -> Result<(), String> {
    let f = m(&[&[0.0], &[2.0]]);
    let g = distance_gap(&RetrievalSet::new(f.clone(), vec![0, 1], f, vec![0, 1]).unwrap()).unwrap();
    ensure!(g.mean_pos == 0.0 && g.mean_neg == 2.0 && g.gap == 2.0);
    Ok(())
}

fn pca_plane() -> Result<(), String> {
    let (u, w) = ([0.6, 0.0, 0.8, 0.0], [0.0, 0.8, 0.0, -0.6]);
    let rows: Vec<Vec<f64>> = [(0.0, 0.0), (1.0, 2.0), (-2.0, 0.5), (3.0, -1.0), (0.5, 4.0)]
        .iter()
        .map(|&(a, b)| (0..4).map(|j| 1.0 + a * u[j] + b * w[j]).collect())
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let p = pca2d(&x).unwrap();
    let dx = pairwise_euclidean(&x, &x).unwrap();
    let dp = pairwise_euclidean(&p, &p).unwrap();
    ensure!(dx
        .as_slice()
        .iter()
        .zip(dp.as_slice())
        .all(|(a, b)| (a - b).abs() < 1e-10));
    Ok(())
}

fn pca_centered() -> Result<(), String> {
    let p = pca2d(&m(&[
        &[1.0, 2.0, 0.0],
        &[3.0, -1.0, 2.0],
        &[0.5, 0.5, 0.5],
        &[4.0, 1.0, -2.0],
    ]))
    .unwrap();
    ensure!((0..2).all(|c| ((0..4).map(|i| p[(i, c)]).sum::<f64>() / 4.0).abs() < 1e-10));
    Ok(())
}

fn in_temp<T>(f: impl FnOnce(&Path) -> T) -> T {
    let dir = tempfile::tempdir().unwrap();
    f(dir.path())
}

fn generate_round_trip() -> Result<(), String> {
    in_temp(|dir| {
        let cfg = ExperimentConfig::default();
        let s = cmd_generate(&cfg, Some(&dir.join("d.mtrl"))).unwrap();
        ensure!(s.path.exists());
        ensure!(SyntheticDataset::load(&s.path).unwrap() == generate(&cfg).unwrap());
        Ok(())
    })
}

fn generate_invalid_fraction() -> Result<(), String> {
    let mut cfg = ExperimentConfig::default();
    cfg.generator.train_fraction = 1.5;
    let err = generate(&cfg).err().map(|e| e.to_string()).unwrap_or_default();
    ensure!(err.contains("train_fraction"));
    Ok(())
}

fn cmd_train_zero_steps() -> Result<(), String> {
    in_temp(|dir| {
        let mut cfg = small_experiment();
        cfg.train.steps = 0;
        let data = cmd_generate(&cfg, Some(&dir.join("d.mtrl"))).unwrap().path;
        let a = cmd_train(&cfg, &data, dir).unwrap();
        let d = SyntheticDataset::load(&data).unwrap();
        ensure!(Checkpoint::load(&a.checkpoint).unwrap().state == TrainState::init(&d, &cfg.train, cfg.seed).unwrap());
        Ok(())
    })
}

fn cmd_train_id_only() -> Result<(), String> {
    let mut cfg = small_experiment();
    cfg.train.terms = TermFlags::id_only();
    let data = generate(&cfg).unwrap();
    let out = train_run(&cfg, &data).unwrap();
    let mut state = TrainState::init(&data, &cfg.train, cfg.seed).unwrap();
    let batch = pk_sample(&data, &cfg.train.batch, &mut rng::substream(cfg.seed, rng::SAMPLING)).unwrap();
    let v = encode(&state.encoder, &batch.visible, false).unwrap().features;
    let i = encode(&state.encoder, &batch.infrared, false).unwrap().features;
    let norm = normalize_features(&v, &i, &state.classifiers.normalizer, true).unwrap();
    let id = loss_id(&norm.x_v, &norm.x_i, &batch.labels, &mut state.classifiers).unwrap();
    ensure!(out.trace[0].loss.total == id.value);
    ensure!(out.trace.iter().all(|r| r.loss.total == r.loss.id));
    Ok(())
}

fn eval_coinciding() -> Result<(), String> {
    let mut cfg = small_experiment();
    cfg.generator.noise_scale = 0.0;
    cfg.generator.mix_t = 0.0;
    cfg.generator.identical_modalities = true;
    let data = generate(&cfg).unwrap();
    let state = train_run(&cfg, &data).unwrap().state;
    ensure!(evaluate_state(&state, &data, &cfg.eval, cfg.seed).unwrap().0.rank1 == 1.0);
    Ok(())
}

fn eval_unit_lambda() -> Result<(), String> {
    let cfg = small_experiment();
    let data = generate(&cfg).unwrap();
    let state = train_run(&cfg, &data).unwrap().state;
    let mut rr = cfg.eval.clone();
    rr.rerank = true;
    rr.lambda_rr = 1.0;
    ensure!(
        evaluate_state(&state, &data, &rr, cfg.seed).unwrap().0
            == evaluate_state(&state, &data, &cfg.eval, cfg.seed).unwrap().0
    );
    Ok(())
}

fn grid_single_cell() -> Result<(), String> {
    in_temp(|dir| {
        let cfg = small_experiment();
        let data = cmd_generate(&cfg, Some(&dir.join("d.mtrl"))).unwrap().path;
        let t = cmd_train(&cfg, &data, dir).unwrap();
        let e = cmd_eval(&t.checkpoint, &data, &cfg.eval, dir).unwrap();
        let table = cmd_ablate(&cfg, &GridSpec::single(AblationRow::All, cfg.seed)).unwrap();
        ensure!(table.cells[0].record.as_ref().map(|r| r.metrics.clone()) == Some(vec![e.metrics]));
        Ok(())
    })
}

fn gradcheck_negative_control() -> Result<(), String> {
    let cfg = GradcheckConfig {
        batches: 2,
        corrupt: Some(GradTerm::Total),
        ..GradcheckConfig::default()
    };
    ensure!(mtrl::harness::cmd_gradcheck(&cfg).is_err());
    Ok(())
}

fn gradcheck_coverage() -> Result<(), String> {
    let report = run_gradcheck(&GradcheckConfig {
        batches: 1,
        ..GradcheckConfig::default()
    })
    .unwrap();
    ensure!(GradTerm::ALL
        .iter()
        .all(|t| report.terms.iter().filter(|c| c.term == *t).count() == 1));
    ensure!(report.terms.len() == GradTerm::ALL.len());
    Ok(())
}

pub const CHECKS: &[(&str, Check)] = &[
    ("latents repeat under a fixed seed", synth_repeatable),
    ("zero identities give no latents", synth_empty),
    ("noiseless identity observation pads the latent", sample_identity_case),
    ("noiseless zero latent gives the shift", sample_zero_case),
    ("mix_t = 0 returns the visible observation", mix_zero),
    ("mix_t = 1 returns the infrared observation", mix_one),
    ("dataset holds 50*20*3 observations", dataset_counts),
    ("dataset repeats under a fixed seed", dataset_repeatable),
    ("P=2 batch on two identities uses both", two_identity_batch),
    ("each sampled identity appears N times", label_multiset),
    ("grouping counts", grouping_counts),
    ("grouping under permutation", grouping_permuted),
    ("grouping is a partition", grouping_partition),
    ("distance of coincident points is 0", pairwise_zero),
    ("distance of unit basis vectors is sqrt 2", pairwise_unit),
    ("top-3 of [1,2,3] is 2", topk_full),
    ("hardest positive of [1,2,3] is 3", topk_max),
    ("two hardest negatives of [1,2,3] average 1.5", topk_two_smallest),
    ("self distance diagonal is 0", self_distance),
    ("coinciding modalities give symmetric zero-diagonal E", query_coinciding),
    ("E^vi is the transpose of E^iv", query_transpose),
    ("L_pos of zero diagonal is 0", pos_zero),
    ("L_pos of diagonal (1, 3) is 2", pos_mean),
    ("L_neg of unit off-diagonal is 1", neg_unit),
    ("L_neg of distant identities vanishes", neg_far),
    ("L_mc with zero weights is 0", mc_zero_weights),
    ("L_mc positive-only on zero diagonal is 0", mc_pos_only_zero_diag),
    ("L_mtc on coinciding modalities is the negative term", mtc_coinciding),
    ("L_mtc averages equal components", mtc_average),
    ("L_center on centers is 0", center_zero),
    ("L_center of [0] to [1] is 1", center_scalar),
    ("L_mqr on coinciding modalities is 0", mqr_coinciding),
    ("G = I makes E^vg = E^vi and E^gv = E^iv", mqr_transition_is_infrared),
    ("constant column maps to the bias", bn_constant_column),
    ("normalized columns are standardized", bn_standardized),
    ("single class has zero identity loss", single_class),
    ("EMA update with r = 0.2", ema_rate),
    ("zero alpha, beta, gamma leave the identity loss", total_annihilation),
    ("identity layers pass nonnegative input", encoder_identity),
    ("zero input gives zero output", encoder_zero),
    ("Adam leaves parameters at zero gradient", adam_zero),
    ("learning rate at epoch 100 is 3.5e-5", lr_epoch_100),
    ("zero steps leave the initialization", train_zero_steps),
    ("training repeats under a fixed seed", train_repeatable),
    ("perfect retrieval gives Rank-1 and mAP 1", perfect_retrieval),
    ("re-rank with lambda 1 returns the distances", rerank_unit_lambda),
    ("re-rank self match is row minimum", rerank_self_minimal),
    ("identical features have no gap", gap_degenerate),
    ("two labels at 0 and 2 have gap 2", gap_two_points),
    ("planar points project losslessly", pca_plane),
    ("projections are centered", pca_centered),
    ("generated file reloads bit-exactly", generate_round_trip),
    ("train_fraction 1.5 is named", generate_invalid_fraction),
    ("zero-step checkpoint is the initialization", cmd_train_zero_steps),
    ("id-only trace is the identity loss", cmd_train_id_only),
    ("coinciding modalities retrieve at Rank-1 1", eval_coinciding),
    ("re-rank with lambda 1 keeps the metrics", eval_unit_lambda),
    ("single-cell grid is train then eval", grid_single_cell),
    ("corrupted gradient fails the check", gradcheck_negative_control),
    ("gradient report lists each term once", gradcheck_coverage),
];
