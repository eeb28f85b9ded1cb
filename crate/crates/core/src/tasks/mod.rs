//! Synthetic sequence tasks with known receptive-field requirements.

mod cache;
mod generate;
pub mod idx;
mod metrics;

pub use cache::{read_dataset, spec_hash, write_dataset, DatasetSidecar};
pub use generate::{gen_lagged_copy, gen_multiscale_sum, gen_noisy_event_span, generate};
pub use metrics::framewise_accuracy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadSpec;
use crate::tensorops::{FrameLabels, FrameTargets, SeqBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskKind {
    /// Target at `t` is the input symbol at `t - lag`.
    LaggedCopy {
        lag: usize,
        #[serde(default = "default_vocab")]
        vocab: usize,
    },
    /// Label bit `j` is the sign of the causal running sum over `windows[j]` steps.
    MultiscaleSum { windows: Vec<usize> },
    /// Label is 1 when an event occurred within the last `span` steps of a noisy signal.
    NoisyEventSpan {
        span: usize,
        #[serde(default = "default_event_rate")]
        event_rate: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

fn default_vocab() -> usize {
    4
}

fn default_event_rate() -> f64 {
    0.02
}

fn default_noise() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default = "default_length")]
    pub sequence_length: usize,
    #[serde(default = "default_train")]
    pub train_size: usize,
    #[serde(default = "default_val")]
    pub val_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_length() -> usize {
    256
}

fn default_train() -> usize {
    2000
}

fn default_val() -> usize {
    500
}

impl TaskSpec {
    pub fn new(
        kind: TaskKind,
        sequence_length: usize,
        train_size: usize,
        val_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            kind,
            sequence_length,
            train_size,
            val_size,
            seed,
        }
    }

    /// Smallest causal receptive field that can solve the task.
    pub fn minimal_receptive_field(&self) -> usize {
        match &self.kind {
            TaskKind::LaggedCopy { lag, .. } => lag + 1,
            TaskKind::MultiscaleSum { windows } => windows.iter().copied().max().unwrap_or(1),
            TaskKind::NoisyEventSpan { span, .. } => *span,
        }
    }

    pub fn input_channels(&self) -> usize {
        match &self.kind {
            TaskKind::LaggedCopy { vocab, .. } => *vocab,
            _ => 1,
        }
    }

    pub fn classes(&self) -> usize {
        match &self.kind {
            TaskKind::LaggedCopy { vocab, .. } => *vocab,
            TaskKind::MultiscaleSum { windows } => 1 << windows.len(),
            TaskKind::NoisyEventSpan { .. } => 2,
        }
    }

    pub fn head(&self) -> HeadSpec {
        HeadSpec::Classifier {
            classes: self.classes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 || self.train_size == 0 || self.val_size == 0 {
            return Err(Error::invalid(
                "sequence length and dataset sizes must be positive",
            ));
        }
        match &self.kind {
            TaskKind::LaggedCopy { lag, vocab } => {
                if *lag >= self.sequence_length {
                    return Err(Error::invalid(format!(
                        "lag {lag} must be shorter than the sequence length {}",
                        self.sequence_length
                    )));
                }
                if *vocab < 2 {
                    return Err(Error::invalid(
                        "lagged copy needs a vocabulary of at least 2 symbols",
                    ));
                }
            }
            TaskKind::MultiscaleSum { windows } => {
                if windows.is_empty() || windows.len() > 8 {
                    return Err(Error::invalid(
                        "multiscale sum needs between 1 and 8 windows",
                    ));
                }
                if windows.contains(&0) || windows.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid(
                        "windows must be positive and strictly increasing",
                    ));
                }
                if *windows.last().unwrap() > self.sequence_length {
                    return Err(Error::invalid("largest window exceeds the sequence length"));
                }
            }
            TaskKind::NoisyEventSpan {
                span,
                event_rate,
                noise,
            } => {
                if *span == 0 || *span > self.sequence_length {
                    return Err(Error::invalid("event span must be in [1, sequence_length]"));
                }
                if !(0.0..=1.0).contains(event_rate) || noise.is_nan() || *noise < 0.0 {
                    return Err(Error::invalid(
                        "event rate must be in [0, 1] and noise >= 0",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(FrameLabels),
    Values(FrameTargets),
}

impl Targets {
    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(l) => Targets::Classes(l.select(indices)),
            Targets::Values(v) => {
                let nt = v.values.length();
                let mask = indices
                    .iter()
                    .flat_map(|&i| v.mask[i * nt..(i + 1) * nt].iter().copied())
                    .collect();
                Targets::Values(FrameTargets {
                    values: v.values.select(indices),
                    mask,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: SeqBatch,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(indices),
            targets: self.targets.select(indices),
        }
    }
}
