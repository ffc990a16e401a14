//! Joint training, baseline training, evaluation and modulation sweeps.

mod eval;

pub use eval::{eval_seed, evaluate, modulation_sweep, EvalReport, EvalRow, SweepFrame, CSV_HEADER};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{DegradationSpace, DegradationSpec, Image, ImageError};
use crate::model::{forward, save_checkpoint, ArchConfig, CheckpointError, ForwardOptions, Model, ModelError};
use crate::rng::derive_seed;
use crate::sampler::{make_batch, BetaParams, SamplePlan, SamplerError, TrainBatch};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at iteration {iteration} (lr {lr})")]
    NonFinite { iteration: usize, lr: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Everything a training run depends on besides the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub space: DegradationSpace,
    /// Defaults to Beta(0.5, 1) on every dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplePlan>,
    pub crop: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_halving_interval: usize,
    pub iterations: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            arch: ArchConfig::desk(),
            space: DegradationSpace::desk_2d(),
            sampling: None,
            crop: 48,
            batch: 8,
            lr: 5e-4,
            lr_halving_interval: 2_000,
            iterations: 10_000,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_interval: 0,
            checkpoint_path: None,
            log_path: None,
        }
    }

    /// Full-size configuration: 64×64 crops, batch 16, 1e6 iterations.
    pub fn paper() -> Self {
        Self {
            arch: ArchConfig::full(),
            space: DegradationSpace::full_2d(),
            crop: 64,
            batch: 16,
            lr_halving_interval: 200_000,
            iterations: 1_000_000,
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn plan(&self) -> SamplePlan {
        self.sampling
            .clone()
            .unwrap_or_else(|| SamplePlan::new(self.space.len(), BetaParams::mild()))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.arch.validate()?;
        self.space.validate()?;
        if self.space.len() != self.arch.condition_dim {
            return bad(format!(
                "space has {} dimensions but arch.condition_dim is {}",
                self.space.len(),
                self.arch.condition_dim
            ));
        }
        self.plan().validate(&self.space)?;
        if self.crop < crate::model::MIN_SIZE || self.crop % 2 != 0 {
            return bad(format!("crop {} must be even and at least {}", self.crop, crate::model::MIN_SIZE));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.lr_halving_interval == 0 {
            return bad("lr_halving_interval must be positive".into());
        }
        Ok(())
    }

    /// `lr0 · 2^-floor(t / interval)`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        lr_schedule(self.lr, self.lr_halving_interval, iteration)
    }
}

pub fn lr_schedule(lr0: f64, interval: usize, iteration: usize) -> f64 {
    let halvings = (iteration / interval).min(i32::MAX as usize) as i32;
    lr0 * 2f64.powi(-halvings)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterLog {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

impl std::fmt::Display for IterLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{:.6e},{:e}", self.iteration, self.loss, self.lr)
    }
}

/// Mean L1 loss over the batch and the batch-averaged parameter gradients.
///
/// Each element runs on its own tape; gradients are summed in element order so
/// the result does not depend on thread scheduling.
pub fn batch_gradients(model: &Model<f32>, batch: &TrainBatch) -> Result<(f64, Vec<Vec<f32>>), TrainError> {
    let per_elem = (0..batch.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<Vec<f32>>), TrainError> {
            let mut tape = Tape::new();
            let w = model.bind(&mut tape, true);
            let x = tape.leaf_owned(batch.degraded[i].to_tensor(), false);
            let target = tape.leaf_owned(batch.clean[i].to_tensor(), false);
            let z = (!model.is_baseline()).then(|| {
                let c = &batch.conditions[i];
                tape.leaf_owned(Tensor::from_fn([c.len()], |k| c[k] as f32), false)
            });
            let y = forward(&mut tape, &model.arch, &w, x, z, ForwardOptions::default())?;
            let loss = tape.l1_loss(y, target)?;
            let value = tape.value(loss)?[0] as f64;
            tape.backward(loss)?;
            let grads = w
                .leaves()
                .into_iter()
                .map(|&v| tape.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tape.shape(v).iter().product()]))
                .collect();
            Ok((value, grads))
        })
        .collect::<Vec<_>>();
    let mut loss = 0.0;
    let mut total: Option<Vec<Vec<f32>>> = None;
    for r in per_elem {
        let (l, g) = r?;
        loss += l;
        match &mut total {
            None => total = Some(g),
            Some(t) => {
                for (a, b) in t.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
    }
    let n = batch.len() as f32;
    let mut grads = total.unwrap_or_default();
    for g in grads.iter_mut().flatten() {
        *g /= n;
    }
    Ok((loss / batch.len() as f64, grads))
}

fn run(
    config: &TrainConfig,
    dataset: &[Image],
    mut model: Model<f32>,
    plan: &SamplePlan,
    log: &mut dyn FnMut(IterLog),
) -> Result<Model<f32>, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = AdamState::new(config.adam, model.weights.leaves());
    for t in 0..config.iterations {
        let lr = config.lr_at(t);
        let batch = make_batch(
            dataset,
            plan,
            &config.space,
            config.crop,
            config.batch,
            derive_seed(config.seed, t as u64),
        )?;
        let (loss, grads) = match batch_gradients(&model, &batch) {
            Err(TrainError::Tensor(TensorError::NonFinite { .. }))
            | Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))) => {
                return Err(TrainError::NonFinite { iteration: t, lr });
            }
            r => r?,
        };
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { iteration: t, lr });
        }
        let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| Some(g.as_slice())).collect();
        adam.step(&mut model.weights.leaves_mut(), &grad_refs, lr)?;
        log(IterLog {
            iteration: t,
            loss,
            lr,
        });
        if config.checkpoint_interval > 0 && (t + 1) % config.checkpoint_interval == 0 {
            if let Some(path) = &config.checkpoint_path {
                save_checkpoint(path, &model)?;
            }
        }
    }
    Ok(model)
}

/// Trains the base and condition networks jointly with L1 loss and Adam.
/// Initialization derives from the master seed; the result is bitwise
/// reproducible from `(config, dataset)`.
pub fn train(config: &TrainConfig, dataset: &[Image], log: &mut dyn FnMut(IterLog)) -> Result<Model<f32>, TrainError> {
    config.validate()?;
    let model = Model::new(config.arch, config.space.clone(), derive_seed(config.seed, u64::MAX))?;
    run(config, dataset, model, &config.plan(), log)
}

/// Trains the plain base network (all connection weights 1) on one fixed
/// degradation, as an upper bound for that spec.
pub fn train_baseline(
    config: &TrainConfig,
    dataset: &[Image],
    spec: DegradationSpec,
    log: &mut dyn FnMut(IterLog),
) -> Result<Model<f32>, TrainError> {
    config.validate()?;
    config.space.check(&spec)?;
    let model = Model::baseline(config.arch, config.space.clone(), derive_seed(config.seed, u64::MAX))?;
    let plan = SamplePlan::fixed(config.space.len(), spec);
    run(config, dataset, model, &plan, log)
}
