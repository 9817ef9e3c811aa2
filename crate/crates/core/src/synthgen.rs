//! Deterministic synthetic cross-modal identity data.
//!
//! Each identity owns a latent vector `z`. A modality observes it through an
//! affine map `A_m z + s_m` plus isotropic noise. The transition modality is
//! not sampled: every transition observation is computed from the visible
//! observation with the same (identity, instance) index by
//! [`TransitionOperator`], so it is instance-aligned with the visible data
//! while drifting toward the infrared distribution as `mix_t` grows.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{decode_container, encode_container, write_atomic};
use crate::rng::{self, Stream};
use crate::tensor::Matrix;

const RANK_TOLERANCE: f64 = 1e-9;
const DATASET_MAGIC: &[u8; 8] = b"MTRLDAT1";

/// Sensing channel of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Visible,
    Transition,
    Infrared,
}

impl Modality {
    /// Storage and file order.
    pub const ALL: [Modality; 3] = [Modality::Visible, Modality::Transition, Modality::Infrared];

    pub fn index(self) -> usize {
        match self {
            Modality::Visible => 0,
            Modality::Transition => 1,
            Modality::Infrared => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visible => "V",
            Modality::Transition => "G",
            Modality::Infrared => "I",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_identities: usize,
    /// Instances per identity per modality.
    pub instances_per_modality: usize,
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub noise_scale: f64,
    /// Interpolation weight of the transition operator, in `[0, 1]`.
    pub mix_t: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of identities assigned to the training split, in `(0, 1]`.
    pub train_fraction: f64,
    /// Use the visible modality parameters for infrared too (no modality gap).
    #[serde(default)]
    pub identical_modalities: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_identities: 70,
            instances_per_modality: 20,
            latent_dim: 8,
            obs_dim: 32,
            noise_scale: 0.05,
            mix_t: 0.7,
            seed: 0,
            train_fraction: 50.0 / 70.0,
            identical_modalities: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(invalid("latent_dim", "must be positive"));
        }
        if self.obs_dim < self.latent_dim {
            return Err(invalid(
                "obs_dim",
                format!("{} is smaller than latent_dim {}", self.obs_dim, self.latent_dim),
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid(
                "noise_scale",
                format!("{} is not a finite nonnegative value", self.noise_scale),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_t) {
            return Err(invalid("mix_t", format!("{} is outside [0, 1]", self.mix_t)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(invalid(
                "train_fraction",
                format!("{} is outside (0, 1]", self.train_fraction),
            ));
        }
        Ok(())
    }

    pub fn num_train_identities(&self) -> usize {
        ((self.num_identities as f64) * self.train_fraction).round() as usize
    }
}

/// Affine observation model of one modality: `transform · z + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityParams {
    transform: Matrix,
    shift: Vec<f64>,
}

impl ModalityParams {
    /// `transform` is `obs_dim × latent_dim` and must have full column rank.
    pub fn new(transform: Matrix, shift: Vec<f64>) -> Result<Self> {
        if shift.len() != transform.rows() {
            return Err(Error::DimensionMismatch {
                context: "ModalityParams::new shift",
                expected: transform.rows(),
                actual: shift.len(),
            });
        }
        let rank = numerical_rank(&transform);
        if rank < transform.cols() {
            return Err(Error::RankDeficient {
                rank,
                required: transform.cols(),
            });
        }
        Ok(Self { transform, shift })
    }

    /// Random orthonormal columns scaled by `scale`, shift drawn from N(0, 0.5²).
    pub fn random(obs_dim: usize, latent_dim: usize, scale: f64, rng: &mut Stream) -> Result<Self> {
        let gaussian: Vec<f64> = (0..obs_dim * latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        let q = DMatrix::from_row_slice(obs_dim, latent_dim, &gaussian).qr().q();
        let mut transform = Matrix::zeros(obs_dim, latent_dim);
        for i in 0..obs_dim {
            for j in 0..latent_dim {
                transform[(i, j)] = scale * q[(i, j)];
            }
        }
        let shift = (0..obs_dim)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(transform, shift)
    }

    pub fn transform(&self) -> &Matrix {
        &self.transform
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn obs_dim(&self) -> usize {
        self.transform.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.transform.cols()
    }

    /// Noiseless observation of `latent`.
    pub fn observe(&self, latent: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "ModalityParams::observe",
                expected: self.latent_dim(),
                actual: latent.len(),
            });
        }
        Ok(self
            .transform
            .row_iter()
            .zip(&self.shift)
            .map(|(row, s)| crate::tensor::dot(row, latent) + s)
            .collect())
    }
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn numerical_rank(m: &Matrix) -> usize {
    if m.rows() == 0 || m.cols() == 0 {
        return 0;
    }
    to_nalgebra(m)
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE)
        .count()
}

/// Draws `num_identities` standard-normal latent vectors from the config seed.
pub fn make_identity_latents(cfg: &GeneratorConfig) -> Vec<Vec<f64>> {
    let mut rng = rng::substream(cfg.seed, "latents");
    (0..cfg.num_identities)
        .map(|_| (0..cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Modality parameters for visible and infrared, derived from the config seed.
pub fn modality_params(cfg: &GeneratorConfig) -> Result<(ModalityParams, ModalityParams)> {
    let mut rng = rng::substream(cfg.seed, "modality-params");
    let visible = ModalityParams::random(cfg.obs_dim, cfg.latent_dim, 1.0, &mut rng)?;
    let infrared = if cfg.identical_modalities {
        visible.clone()
    } else {
        ModalityParams::random(cfg.obs_dim, cfg.latent_dim, 1.3, &mut rng)?
    };
    Ok((visible, infrared))
}

/// `transform · latent + shift + noise_scale · ξ`, with ξ standard normal.
///
/// The noise vector is always drawn, so the stream advances identically for
/// every `noise_scale`.
pub fn sample_instance(
    latent: &[f64],
    params: &ModalityParams,
    noise_scale: f64,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    let mut obs = params.observe(latent)?;
    for x in obs.iter_mut() {
        let xi: f64 = rng.sample(StandardNormal);
        *x += noise_scale * xi;
    }
    Ok(obs)
}

/// Maps visible observations into the transition modality:
/// `(1 − t)·v + t·(A_i · pinv(A_v) · (v − s_v) + s_i)`.
#[derive(Debug, Clone)]
pub struct TransitionOperator {
    mix_t: f64,
    pushforward: Matrix,
    visible_shift: Vec<f64>,
    infrared_shift: Vec<f64>,
}

impl TransitionOperator {
    pub fn new(visible: &ModalityParams, infrared: &ModalityParams, mix_t: f64) -> Result<Self> {
        if visible.obs_dim() != infrared.obs_dim() || visible.latent_dim() != infrared.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "TransitionOperator::new",
                expected: visible.obs_dim(),
                actual: infrared.obs_dim(),
            });
        }
        let rank = numerical_rank(&visible.transform);
        if rank < visible.latent_dim() {
            return Err(Error::RankDeficient {
                rank,
                required: visible.latent_dim(),
            });
        }
        let pinv = to_nalgebra(&visible.transform)
            .pseudo_inverse(RANK_TOLERANCE)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let product = to_nalgebra(&infrared.transform) * pinv;
        let mut pushforward = Matrix::zeros(product.nrows(), product.ncols());
        for i in 0..product.nrows() {
            for j in 0..product.ncols() {
                pushforward[(i, j)] = product[(i, j)];
            }
        }
        Ok(Self {
            mix_t,
            pushforward,
            visible_shift: visible.shift.clone(),
            infrared_shift: infrared.shift.clone(),
        })
    }

    pub fn apply(&self, v_obs: &[f64]) -> Result<Vec<f64>> {
        if v_obs.len() != self.visible_shift.len() {
            return Err(Error::DimensionMismatch {
                context: "TransitionOperator::apply",
                expected: self.visible_shift.len(),
                actual: v_obs.len(),
            });
        }
        let centered: Vec<f64> = v_obs.iter().zip(&self.visible_shift).map(|(v, s)| v - s).collect();
        let t = self.mix_t;
        Ok(self
            .pushforward
            .row_iter()
            .zip(&self.infrared_shift)
            .zip(v_obs)
            .map(|((row, s_i), v)| (1.0 - t) * v + t * (crate::tensor::dot(row, &centered) + s_i))
            .collect())
    }
}

pub fn transition_transform(
    v_obs: &[f64],
    visible: &ModalityParams,
    infrared: &ModalityParams,
    mix_t: f64,
) -> Result<Vec<f64>> {
    TransitionOperator::new(visible, infrared, mix_t)?.apply(v_obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Identities × modalities × instances of observation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    config: GeneratorConfig,
    /// One `instances × obs_dim` matrix per (identity, modality), identity-major.
    observations: Vec<Matrix>,
    split: Vec<Split>,
}

impl SyntheticDataset {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn num_identities(&self) -> usize {
        self.split.len()
    }

    pub fn instances_per_modality(&self) -> usize {
        self.config.instances_per_modality
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    pub fn observations(&self, identity: usize, modality: Modality) -> &Matrix {
        &self.observations[identity * 3 + modality.index()]
    }

    pub fn observation(&self, identity: usize, modality: Modality, instance: usize) -> &[f64] {
        self.observations(identity, modality).row(instance)
    }

    pub fn split(&self, identity: usize) -> Split {
        self.split[identity]
    }

    pub fn identities_in(&self, split: Split) -> Vec<usize> {
        (0..self.split.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn train_identities(&self) -> Vec<usize> {
        self.identities_in(Split::Train)
    }

    pub fn test_identities(&self) -> Vec<usize> {
        self.identities_in(Split::Test)
    }

    pub fn total_observations(&self) -> usize {
        self.observations.iter().map(Matrix::rows).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = DatasetHeader {
            format: "mtrl-dataset".into(),
            version: 1,
            config: self.config.clone(),
            num_identities: self.num_identities(),
            instances_per_modality: self.instances_per_modality(),
            obs_dim: self.obs_dim(),
            modalities: Modality::ALL.iter().map(|m| m.tag().to_string()).collect(),
            order: "identity,modality,instance,coordinate".into(),
            dtype: "f64-le".into(),
            split: self.split.clone(),
        };
        let payload: Vec<f64> = self
            .observations
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect();
        encode_container(DATASET_MAGIC, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (DatasetHeader, Vec<f64>) = decode_container(DATASET_MAGIC, bytes)?;
        if header.format != "mtrl-dataset" || header.version != 1 {
            return Err(Error::Format(format!(
                "unsupported dataset {} v{}",
                header.format, header.version
            )));
        }
        let block = header.instances_per_modality * header.obs_dim;
        let expected = header.num_identities * 3 * block;
        if payload.len() != expected || header.split.len() != header.num_identities {
            return Err(Error::Format(format!(
                "payload holds {} values, header implies {}",
                payload.len(),
                expected
            )));
        }
        let observations = payload
            .chunks(block.max(1))
            .take(header.num_identities * 3)
            .map(|c| Matrix::from_vec(header.instances_per_modality, header.obs_dim, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: header.config,
            observations,
            split: header.split,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    config: GeneratorConfig,
    num_identities: usize,
    instances_per_modality: usize,
    obs_dim: usize,
    modalities: Vec<String>,
    order: String,
    dtype: String,
    split: Vec<Split>,
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let latents = make_identity_latents(cfg);
    let (visible, infrared) = modality_params(cfg)?;
    let transition = TransitionOperator::new(&visible, &infrared, cfg.mix_t)?;
    let mut rng = rng::substream(cfg.seed, "instances");
    let n = cfg.instances_per_modality;

    let mut observations = Vec::with_capacity(cfg.num_identities * 3);
    for latent in &latents {
        let mut v_rows = Vec::with_capacity(n);
        let mut g_rows = Vec::with_capacity(n);
        for _ in 0..n {
            let v = sample_instance(latent, &visible, cfg.noise_scale, &mut rng)?;
            g_rows.push(transition.apply(&v)?);
            v_rows.push(v);
        }
        let i_rows = (0..n)
            .map(|_| sample_instance(latent, &infrared, cfg.noise_scale, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        for rows in [v_rows, g_rows, i_rows] {
            observations.push(if rows.is_empty() {
                Matrix::zeros(0, cfg.obs_dim)
            } else {
                Matrix::from_rows(&rows)?
            });
        }
    }

    let mut order: Vec<usize> = (0..cfg.num_identities).collect();
    order.shuffle(&mut rng::substream(cfg.seed, "split"));
    let mut split = vec![Split::Test; cfg.num_identities];
    for &id in order.iter().take(cfg.num_train_identities()) {
        split[id] = Split::Train;
    }

    Ok(SyntheticDataset {
        config: cfg.clone(),
        observations,
        split,
    })
}
