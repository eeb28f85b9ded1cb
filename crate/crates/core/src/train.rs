//! Minibatch training and validation of a [`Network`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::DilationGenome;
use crate::globalsearch::{Evaluation, FitnessEvaluator};
use crate::model::{HeadSpec, Network, NetworkSpec};
use crate::rng::{derive_rng, Rng};
use crate::tasks::{framewise_accuracy, Dataset, Targets};
use crate::tensorops::{mse_loss, softmax_nll_loss, AdamConfig, AdamState, SeqBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning rate for branch coefficients; `None` uses `adam.learning_rate`.
    pub coefficient_lr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            adam: AdamConfig::default(),
            coefficient_lr: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        self.adam.validate()?;
        if let Some(lr) = self.coefficient_lr {
            AdamConfig {
                learning_rate: lr,
                ..self.adam
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics {
    pub loss: f64,
    /// Framewise accuracy for classification heads.
    pub accuracy: Option<f64>,
}

impl ValidationMetrics {
    /// Higher is better: accuracy when available, otherwise negative loss.
    pub fn fitness(&self) -> f64 {
        self.accuracy.unwrap_or(-self.loss)
    }
}

fn loss_and_grad(net: &Network, out: &SeqBatch, targets: &Targets) -> Result<(f64, SeqBatch)> {
    match (targets, net.spec().head) {
        (Targets::Classes(l), HeadSpec::Classifier { .. }) => softmax_nll_loss(out, l),
        (Targets::Values(v), HeadSpec::Regressor { .. }) => mse_loss(out, v),
        _ => Err(Error::invalid(
            "dataset targets do not match the network head",
        )),
    }
}

fn has_active_frames(targets: &Targets) -> bool {
    match targets {
        Targets::Classes(l) => l.active_frames() > 0,
        Targets::Values(v) => v.mask.iter().any(|&m| m),
    }
}

/// Adam over a network, with a separate moment set for branch coefficients.
pub struct Optimizer {
    kernels: AdamState,
    coefficients: AdamState,
    coefficient_idx: Vec<usize>,
    kernel_idx: Vec<usize>,
}

impl Optimizer {
    pub fn new(net: &Network, cfg: &TrainConfig) -> Result<Self> {
        let n = net.param_count();
        let mut is_coef = vec![false; n];
        for r in net.coefficient_ranges() {
            is_coef[r].iter_mut().for_each(|v| *v = true);
        }
        let coefficient_idx: Vec<usize> = (0..n).filter(|&i| is_coef[i]).collect();
        let kernel_idx: Vec<usize> = (0..n).filter(|&i| !is_coef[i]).collect();
        let coef_cfg = AdamConfig {
            learning_rate: cfg.coefficient_lr.unwrap_or(cfg.adam.learning_rate),
            ..cfg.adam
        };
        Ok(Self {
            kernels: AdamState::new(cfg.adam, kernel_idx.len())?,
            coefficients: AdamState::new(coef_cfg, coefficient_idx.len())?,
            coefficient_idx,
            kernel_idx,
        })
    }

    pub fn step(&mut self, net: &mut Network, grads: &[f64]) -> Result<()> {
        let mut params = net.params();
        for (idx, state) in [
            (&self.kernel_idx, &mut self.kernels),
            (&self.coefficient_idx, &mut self.coefficients),
        ] {
            if idx.is_empty() {
                continue;
            }
            let mut p: Vec<f64> = idx.iter().map(|&i| params[i]).collect();
            let g: Vec<f64> = idx.iter().map(|&i| grads[i]).collect();
            state.step(&mut p, &g)?;
            for (&i, v) in idx.iter().zip(p) {
                params[i] = v;
            }
        }
        net.set_params(&params)
    }
}

/// Trains for `epochs` passes over `data`, returning the mean minibatch loss per epoch.
pub fn train_epochs(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut opt = Optimizer::new(net, cfg)?;
    train_epochs_with(net, &mut opt, data, cfg, epochs, rng)
}

pub fn train_epochs_with(
    net: &mut Network,
    opt: &mut Optimizer,
    data: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            if !has_active_frames(&batch.targets) {
                continue;
            }
            let (out, cache) = net.forward_cached(&batch.inputs)?;
            let (loss, grad) = loss_and_grad(net, &out, &batch.targets)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            let grads = net.backward(&cache, &grad)?;
            opt.step(net, &grads)?;
            sum += loss;
            batches += 1;
        }
        history.push(if batches > 0 {
            sum / batches as f64
        } else {
            0.0
        });
    }
    Ok(history)
}

/// Loss and accuracy over the whole dataset (frames weighted equally).
pub fn validate(net: &Network, data: &Dataset) -> Result<ValidationMetrics> {
    const CHUNK: usize = 64;
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut frames, mut hits) = (0.0, 0usize, 0.0);
    let classifier = matches!(data.targets, Targets::Classes(_));
    for chunk in order.chunks(CHUNK) {
        let batch = data.select(chunk);
        if !has_active_frames(&batch.targets) {
            continue;
        }
        let out = net.forward(&batch.inputs)?;
        let (loss, _) = loss_and_grad(net, &out, &batch.targets)?;
        let active = match &batch.targets {
            Targets::Classes(l) => l.active_frames(),
            Targets::Values(v) => v.mask.iter().filter(|&&m| m).count(),
        };
        loss_sum += loss * active as f64;
        if let Targets::Classes(l) = &batch.targets {
            hits += framewise_accuracy(&out, l)? * active as f64;
        }
        frames += active;
    }
    if frames == 0 {
        return Err(Error::invalid("validation set has no labelled frames"));
    }
    let loss = loss_sum / frames as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged("non-finite validation loss".into()));
    }
    Ok(ValidationMetrics {
        loss,
        accuracy: classifier.then(|| hits / frames as f64),
    })
}

/// Early-stopped training fitness: fresh seeded network, `epochs` of training, validation metric.
#[derive(Debug, Clone)]
pub struct TrainedEvaluator {
    pub network: NetworkSpec,
    pub train: Arc<Dataset>,
    pub val: Arc<Dataset>,
    pub config: TrainConfig,
}

impl TrainedEvaluator {
    pub fn new(network: NetworkSpec, train: Dataset, val: Dataset, config: TrainConfig) -> Self {
        Self {
            network,
            train: Arc::new(train),
            val: Arc::new(val),
            config,
        }
    }

    /// Builds and trains the network for `genome`, returning it with its validation metrics.
    pub fn fit(
        &self,
        genome: &DilationGenome,
        epochs: usize,
        seed: u64,
    ) -> Result<(Network, ValidationMetrics)> {
        let mut net = Network::new(&self.network, genome, &mut derive_rng(seed, "init", &[]))?;
        train_epochs(
            &mut net,
            &self.train,
            &self.config,
            epochs,
            &mut derive_rng(seed, "shuffle", &[]),
        )?;
        let m = validate(&net, &self.val)?;
        Ok((net, m))
    }
}

impl FitnessEvaluator for TrainedEvaluator {
    fn evaluate(&self, genome: &DilationGenome, epochs: usize, seed: u64) -> Result<Evaluation> {
        let (_, m) = self.fit(genome, epochs, seed)?;
        let mut metrics = BTreeMap::new();
        metrics.insert("val_loss".to_string(), m.loss);
        if let Some(a) = m.accuracy {
            metrics.insert("val_accuracy".to_string(), a);
        }
        Ok(Evaluation {
            fitness: m.fitness(),
            metrics,
        })
    }
}
