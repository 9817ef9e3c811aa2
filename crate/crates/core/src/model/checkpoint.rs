//! Checkpoint file: the shared container layout (see [`crate::io`]) with a
//! JSON manifest and every tensor of the training state, including Adam
//! moments, EMA shadows, normalizer running statistics and the sampler
//! position, so that a loaded run continues bit-exactly.
//!
//! Payload order is the order of `manifest.tensors`; each entry is a
//! row-major block of `rows × cols` values.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{decode_container, encode_container, write_atomic};
use crate::losses::{BatchNorm, CenterBank, ClassifierSet};
use crate::model::adam::AdamState;
use crate::model::encoder::EncoderParams;
use crate::model::train::{TrainConfig, TrainState};
use crate::rng::Stream;
use crate::synthgen::GeneratorConfig;
use crate::tensor::Matrix;

const CHECKPOINT_MAGIC: &[u8; 8] = b"MTRLCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    train_config: TrainConfig,
    generator: GeneratorConfig,
    seed: u64,
    step: u64,
    adam_step: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    norm_momentum: f64,
    norm_eps: f64,
    sampler_seed: String,
    sampler_stream: u64,
    sampler_word_pos: String,
    tensors: Vec<TensorShape>,
}

/// A training state together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub state: TrainState,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 {
        return Err(Error::Format("sampler seed must be 64 hex digits".into()));
    }
    let mut out = [0u8; 32];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, usize, usize, Vec<f64>)> {
        let s = &self.state;
        let cls = &s.classifiers;
        let bn = &cls.normalizer;
        let m = |name: &str, x: &Matrix| (name.to_string(), x.rows(), x.cols(), x.as_slice().to_vec());
        let v = |name: &str, x: &[f64]| (name.to_string(), 1, x.len(), x.to_vec());
        let mut out = vec![
            m("encoder.w1", &s.encoder.w1),
            v("encoder.b1", &s.encoder.b1),
            m("encoder.w2", &s.encoder.w2),
            v("encoder.b2", &s.encoder.b2),
            m("centers", s.centers.centers()),
            v("norm.gamma", &bn.gamma),
            v("norm.beta", &bn.beta),
            v("norm.running_mean", &bn.running_mean),
            v("norm.running_var", &bn.running_var),
            m("cls.shared", &cls.shared),
            m("cls.visible", &cls.visible),
            m("cls.infrared", &cls.infrared),
            m("cls.shadow_visible", &cls.shadow_visible),
            m("cls.shadow_infrared", &cls.shadow_infrared),
        ];
        for (i, x) in s.adam.first.iter().enumerate() {
            out.push(v(&format!("adam.first.{i}"), x));
        }
        for (i, x) in s.adam.second.iter().enumerate() {
            out.push(v(&format!("adam.second.{i}"), x));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let sampler = &self.state.sampler;
        let manifest = Manifest {
            format: "mtrl-checkpoint".into(),
            version: 1,
            train_config: self.train_config.clone(),
            generator: self.generator.clone(),
            seed: self.seed,
            step: self.state.step,
            adam_step: self.state.adam.step,
            adam_beta1: self.state.adam.beta1,
            adam_beta2: self.state.adam.beta2,
            adam_eps: self.state.adam.eps,
            norm_momentum: self.state.classifiers.normalizer.momentum,
            norm_eps: self.state.classifiers.normalizer.eps,
            sampler_seed: hex(&sampler.get_seed()),
            sampler_stream: sampler.get_stream(),
            sampler_word_pos: sampler.get_word_pos().to_string(),
            tensors: tensors
                .iter()
                .map(|(name, rows, cols, _)| TensorShape {
                    name: name.clone(),
                    rows: *rows,
                    cols: *cols,
                })
                .collect(),
        };
        let payload: Vec<f64> = tensors.into_iter().flat_map(|t| t.3).collect();
        encode_container(CHECKPOINT_MAGIC, &manifest, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, payload): (Manifest, Vec<f64>) = decode_container(CHECKPOINT_MAGIC, bytes)?;
        if manifest.format != "mtrl-checkpoint" || manifest.version != 1 {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            )));
        }
        let expected: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
        if expected != payload.len() {
            return Err(Error::Format(format!(
                "payload holds {} values, manifest implies {expected}",
                payload.len()
            )));
        }
        let mut offset = 0;
        let mut blocks = std::collections::HashMap::new();
        for t in &manifest.tensors {
            let n = t.rows * t.cols;
            blocks.insert(t.name.clone(), (t.rows, t.cols, payload[offset..offset + n].to_vec()));
            offset += n;
        }
        let mut take = |name: &str| -> Result<(usize, usize, Vec<f64>)> {
            blocks
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
        };
        let mut matrix = |name: &str| -> Result<Matrix> {
            let (r, c, data) = take(name)?;
            Matrix::from_vec(r, c, data)
        };
        let encoder = EncoderParams {
            w1: matrix("encoder.w1")?,
            b1: matrix("encoder.b1")?.into_vec(),
            w2: matrix("encoder.w2")?,
            b2: matrix("encoder.b2")?.into_vec(),
        };
        let centers = CenterBank::new(matrix("centers")?);
        let normalizer = BatchNorm {
            gamma: matrix("norm.gamma")?.into_vec(),
            beta: matrix("norm.beta")?.into_vec(),
            running_mean: matrix("norm.running_mean")?.into_vec(),
            running_var: matrix("norm.running_var")?.into_vec(),
            momentum: manifest.norm_momentum,
            eps: manifest.norm_eps,
        };
        let classifiers = ClassifierSet {
            shared: matrix("cls.shared")?,
            visible: matrix("cls.visible")?,
            infrared: matrix("cls.infrared")?,
            shadow_visible: matrix("cls.shadow_visible")?,
            shadow_infrared: matrix("cls.shadow_infrared")?,
            normalizer,
            rate: manifest.train_config.ema_rate,
            cross_assign: manifest.train_config.cross_assign_shadows,
        };
        let count = manifest
            .tensors
            .iter()
            .filter(|t| t.name.starts_with("adam.first."))
            .count();
        let mut first = Vec::with_capacity(count);
        let mut second = Vec::with_capacity(count);
        for i in 0..count {
            first.push(matrix(&format!("adam.first.{i}"))?.into_vec());
            second.push(matrix(&format!("adam.second.{i}"))?.into_vec());
        }
        let adam = AdamState {
            beta1: manifest.adam_beta1,
            beta2: manifest.adam_beta2,
            eps: manifest.adam_eps,
            step: manifest.adam_step,
            first,
            second,
        };
        let mut sampler = Stream::from_seed(unhex(&manifest.sampler_seed)?);
        sampler.set_stream(manifest.sampler_stream);
        sampler.set_word_pos(
            manifest
                .sampler_word_pos
                .parse::<u128>()
                .map_err(|e| Error::Format(e.to_string()))?,
        );
        let state = TrainState {
            encoder,
            centers,
            classifiers,
            adam,
            step: manifest.step,
            sampler,
        };
        if state.adam.sizes() != state.parameter_sizes() {
            return Err(Error::Format("optimizer moments do not match parameter shapes".into()));
        }
        Ok(Self {
            train_config: manifest.train_config,
            generator: manifest.generator,
            seed: manifest.seed,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
