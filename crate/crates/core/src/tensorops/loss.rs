use serde::{Deserialize, Serialize};

use super::SeqBatch;
use crate::error::{Error, Result};

/// Integer class labels per `(batch, time)`; `None` frames are excluded from loss and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    batch: usize,
    length: usize,
    labels: Vec<Option<usize>>,
}

impl FrameLabels {
    pub fn new(batch: usize, length: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != batch * length {
            return Err(Error::invalid(format!(
                "expected {} labels, got {}",
                batch * length,
                labels.len()
            )));
        }
        Ok(Self {
            batch,
            length,
            labels,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize) -> Option<usize> {
        self.labels[b * self.length + t]
    }

    pub fn select(&self, indices: &[usize]) -> FrameLabels {
        let mut labels = Vec::with_capacity(indices.len() * self.length);
        for &i in indices {
            labels.extend_from_slice(&self.labels[i * self.length..(i + 1) * self.length]);
        }
        FrameLabels {
            batch: indices.len(),
            length: self.length,
            labels,
        }
    }

    pub fn active_frames(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Mean per-frame negative log softmax probability over labelled frames.
pub fn softmax_nll_loss(logits: &SeqBatch, targets: &FrameLabels) -> Result<(f64, SeqBatch)> {
    let (nb, nc, nt) = logits.shape();
    if targets.batch != nb || targets.length != nt {
        return Err(Error::invalid(format!(
            "labels ({}, {}) do not match logits ({nb}, {nt})",
            targets.batch, targets.length
        )));
    }
    if let Some(bad) = targets.labels.iter().flatten().find(|&&l| l >= nc) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {nc} classes"
        )));
    }
    let active = targets.active_frames();
    if active == 0 {
        return Err(Error::invalid("no labelled frames"));
    }
    let inv = 1.0 / active as f64;
    let mut grad = SeqBatch::zeros(nb, nc, nt);
    let mut total = 0.0;
    let mut probs = vec![0.0; nc];
    for b in 0..nb {
        for t in 0..nt {
            let Some(label) = targets.get(b, t) else {
                continue;
            };
            let max = (0..nc)
                .map(|c| logits.get(b, c, t))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (logits.get(b, c, t) - max).exp();
                z += *p;
            }
            total += z.ln() + max - logits.get(b, label, t);
            for (c, p) in probs.iter().enumerate() {
                let ind = if c == label { 1.0 } else { 0.0 };
                grad.set(b, c, t, (p / z - ind) * inv);
            }
        }
    }
    Ok((total * inv, grad))
}

/// Per-frame real-valued targets for the regression head; `mask` selects scored frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTargets {
    pub values: SeqBatch,
    pub mask: Vec<bool>,
}

/// Mean squared error over masked frames, averaged over frames and channels.
pub fn mse_loss(pred: &SeqBatch, targets: &FrameTargets) -> Result<(f64, SeqBatch)> {
    let (nb, nc, nt) = pred.shape();
    if !pred.same_shape(&targets.values) || targets.mask.len() != nb * nt {
        return Err(Error::invalid("prediction and target shapes differ"));
    }
    let active = targets.mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::invalid("no scored frames"));
    }
    let inv = 1.0 / (active * nc) as f64;
    let mut grad = SeqBatch::zeros(nb, nc, nt);
    let mut total = 0.0;
    for b in 0..nb {
        for t in 0..nt {
            if !targets.mask[b * nt + t] {
                continue;
            }
            for c in 0..nc {
                let diff = pred.get(b, c, t) - targets.values.get(b, c, t);
                total += diff * diff;
                grad.set(b, c, t, 2.0 * diff * inv);
            }
        }
    }
    Ok((total * inv, grad))
}
