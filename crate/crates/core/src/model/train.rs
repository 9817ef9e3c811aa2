use serde::{Deserialize, Serialize};

use crate::batching::{pk_sample, BatchSpec, EmbeddingBatch, ObservationBatch};
use crate::error::{invalid, Error, Result};
use crate::losses::{
    total_loss, CenterBank, ClassifierSet, LossConfig, LossReport, LossWeights, TermFlags, TermValues,
};
use crate::model::adam::{adam_step, AdamState};
use crate::model::encoder::{encode, EncoderGrads, EncoderParams};
use crate::model::schedule::ScheduleConfig;
use crate::rng::{self, Stream};
use crate::synthgen::SyntheticDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub feat_dim: usize,
    /// Number of feature chunks the metric losses treat separately.
    pub parts: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            feat_dim: 16,
            parts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: BatchSpec,
    pub weights: LossWeights,
    pub terms: TermFlags,
    /// Top-k count; `None` uses the batch's instances per identity.
    pub k: Option<usize>,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub steps: u64,
    /// Compute transition features without gradient.
    pub stopgrad: bool,
    pub ema_rate: f64,
    /// Cross-assign EMA shadows in the consistency term.
    pub cross_assign_shadows: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: BatchSpec::default(),
            weights: LossWeights::default(),
            terms: TermFlags::default(),
            k: None,
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            steps: 200,
            stopgrad: true,
            ema_rate: 0.2,
            cross_assign_shadows: true,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            weights: self.weights,
            terms: self.terms,
            k: self.k.unwrap_or(self.batch.instances),
            parts: self.model.parts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        self.schedule.validate()?;
        self.loss_config().validate(self.model.feat_dim)?;
        if self.model.hidden == 0 || self.model.feat_dim == 0 {
            return Err(invalid("model", "hidden and feat_dim must be positive"));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate < 1.0) {
            return Err(invalid("ema_rate", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub encoder: EncoderParams,
    pub centers: CenterBank,
    pub classifiers: ClassifierSet,
    pub adam: AdamState,
    pub step: u64,
    pub sampler: Stream,
}

impl TrainState {
    /// Fresh state. Parameters come from the `init` sub-stream of `seed`,
    /// batch sampling from the `sampling` sub-stream.
    pub fn init(dataset: &SyntheticDataset, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let classes = dataset.train_identities().len();
        let mut init = rng::substream(seed, rng::INIT);
        let m = &config.model;
        let encoder = EncoderParams::random(dataset.obs_dim(), m.hidden, m.feat_dim, &mut init);
        let centers = CenterBank::random(classes, m.feat_dim, &mut init);
        let mut classifiers = ClassifierSet::random(classes, m.feat_dim, config.ema_rate, &mut init);
        classifiers.cross_assign = config.cross_assign_shadows;
        let mut state = Self {
            encoder,
            centers,
            classifiers,
            adam: AdamState::new(&[]),
            step: 0,
            sampler: rng::substream(seed, rng::SAMPLING),
        };
        state.adam = AdamState::new(&state.parameter_sizes());
        Ok(state)
    }

    /// Optimizer-visible tensors in fixed order: encoder w1, b1, w2, b2;
    /// centers; normalizer gamma, beta; classifiers shared, visible, infrared.
    /// EMA shadows and running statistics are not among them.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.encoder.w1.as_mut_slice(),
            &mut self.encoder.b1,
            self.encoder.w2.as_mut_slice(),
            &mut self.encoder.b2,
            self.centers.centers_mut().as_mut_slice(),
            &mut self.classifiers.normalizer.gamma,
            &mut self.classifiers.normalizer.beta,
            self.classifiers.shared.as_mut_slice(),
            self.classifiers.visible.as_mut_slice(),
            self.classifiers.infrared.as_mut_slice(),
        ]
    }

    pub fn parameter_sizes(&self) -> Vec<usize> {
        let mut copy = self.clone();
        copy.parameters_mut().iter().map(|p| p.len()).collect()
    }
}

/// Per-step loss record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: TermValues,
}

pub struct Trainer<'a> {
    dataset: &'a SyntheticDataset,
    config: TrainConfig,
    state: TrainState,
    steps_per_epoch: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a SyntheticDataset, config: TrainConfig, seed: u64) -> Result<Self> {
        let state = TrainState::init(dataset, &config, seed)?;
        Self::from_state(dataset, config, state)
    }

    pub fn from_state(dataset: &'a SyntheticDataset, config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if state.encoder.obs_dim() != dataset.obs_dim() {
            return Err(Error::DimensionMismatch {
                context: "trainer dataset obs_dim",
                expected: state.encoder.obs_dim(),
                actual: dataset.obs_dim(),
            });
        }
        let classes = dataset.train_identities().len();
        if state.classifiers.classes() != classes || state.centers.len() != classes {
            return Err(Error::DimensionMismatch {
                context: "trainer training identities",
                expected: state.classifiers.classes(),
                actual: classes,
            });
        }
        let p = config.batch.identities as u64;
        let steps_per_epoch = (classes as u64).div_ceil(p).max(1);
        Ok(Self {
            dataset,
            config,
            state,
            steps_per_epoch,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn epoch(&self) -> usize {
        (self.state.step / self.steps_per_epoch) as usize
    }

    pub fn sample_batch(&mut self) -> Result<ObservationBatch> {
        pk_sample(self.dataset, &self.config.batch, &mut self.state.sampler)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.sample_batch()?;
        self.step_on_batch(batch, |_| {})
    }

    /// One optimizer step on `batch`. `after_extract` runs once all features
    /// have been computed and before any gradient is propagated into the
    /// encoder; it may rewrite the observations.
    pub fn step_on_batch(
        &mut self,
        mut batch: ObservationBatch,
        after_extract: impl FnOnce(&mut ObservationBatch),
    ) -> Result<StepRecord> {
        let epoch = self.epoch();
        let lr = self.config.schedule.lr_at(epoch)?;
        let stopgrad = self.config.stopgrad;
        let enc = &self.state.encoder;
        let v = encode(enc, &batch.visible, true)?;
        let i = encode(enc, &batch.infrared, true)?;
        let g = encode(enc, &batch.transition, !stopgrad)?;

        after_extract(&mut batch);

        let features = EmbeddingBatch::new(v.features, g.features, i.features, batch.labels.clone(), stopgrad)?;
        let report = total_loss(
            &features,
            &self.state.centers,
            &mut self.state.classifiers,
            &self.config.loss_config(),
        )?;
        if !report.terms.total.is_finite() {
            return Err(Error::NonFiniteLoss(self.state.step));
        }

        let mut enc_grads = EncoderGrads::zeros(enc);
        let traced = [
            (v.trace, &batch.visible, &report.features.visible),
            (i.trace, &batch.infrared, &report.features.infrared),
            (g.trace, &batch.transition, &report.features.transition),
        ];
        for (trace, obs, grad) in traced {
            // The transition trace is absent under stop-gradient.
            if let Some(trace) = trace {
                enc_grads.add(&trace.backward(enc, obs, grad)?);
            }
        }
        self.apply(&enc_grads, &report, lr)?;

        let record = StepRecord {
            step: self.state.step,
            epoch,
            lr,
            loss: report.terms,
        };
        self.state.step += 1;
        Ok(record)
    }

    fn apply(&mut self, enc: &EncoderGrads, report: &LossReport, lr: f64) -> Result<()> {
        let grads: [&[f64]; 10] = [
            enc.w1.as_slice(),
            &enc.b1,
            enc.w2.as_slice(),
            &enc.b2,
            report.centers.as_slice(),
            &report.norm_gamma,
            &report.norm_beta,
            report.classifiers.shared.as_slice(),
            report.classifiers.visible.as_slice(),
            report.classifiers.infrared.as_slice(),
        ];
        let mut adam = std::mem::replace(&mut self.state.adam, AdamState::new(&[]));
        let result = adam_step(&mut self.state.parameters_mut(), &grads, &mut adam, lr);
        self.state.adam = adam;
        result
    }

    pub fn run(&mut self, steps: u64) -> Result<Vec<StepRecord>> {
        (0..steps).map(|_| self.step()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub trace: Vec<StepRecord>,
}

/// Runs `config.steps` optimizer steps from a fresh state.
pub fn train(dataset: &SyntheticDataset, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config.clone(), seed)?;
    let trace = trainer.run(config.steps)?;
    Ok(TrainOutcome {
        state: trainer.into_state(),
        trace,
    })
}
