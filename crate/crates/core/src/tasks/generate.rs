use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Targets, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, Rng as SeededRng};
use crate::tensorops::{FrameLabels, SeqBatch};

fn split_rngs(spec: &TaskSpec) -> (SeededRng, SeededRng) {
    (
        derive_rng(spec.seed, "task.train", &[]),
        derive_rng(spec.seed, "task.val", &[]),
    )
}

/// Generates `(train, val)` for any task kind.
pub fn generate(spec: &TaskSpec) -> Result<(Dataset, Dataset)> {
    match spec.kind {
        TaskKind::LaggedCopy { .. } => gen_lagged_copy(spec),
        TaskKind::MultiscaleSum { .. } => gen_multiscale_sum(spec),
        TaskKind::NoisyEventSpan { .. } => gen_noisy_event_span(spec),
    }
}

pub fn gen_lagged_copy(spec: &TaskSpec) -> Result<(Dataset, Dataset)> {
    let TaskKind::LaggedCopy { lag, vocab } = spec.kind else {
        return Err(Error::invalid("task spec is not a lagged copy"));
    };
    spec.validate()?;
    let (mut tr, mut va) = split_rngs(spec);
    let make = |n: usize, rng: &mut SeededRng| -> Result<Dataset> {
        let len = spec.sequence_length;
        let mut inputs = SeqBatch::zeros(n, vocab, len);
        let mut labels = Vec::with_capacity(n * len);
        for b in 0..n {
            let symbols: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            for (t, &s) in symbols.iter().enumerate() {
                inputs.set(b, s, t, 1.0);
                labels.push((t >= lag).then(|| symbols[t - lag]));
            }
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Classes(FrameLabels::new(n, len, labels)?),
        })
    };
    Ok((
        make(spec.train_size, &mut tr)?,
        make(spec.val_size, &mut va)?,
    ))
}

pub fn gen_multiscale_sum(spec: &TaskSpec) -> Result<(Dataset, Dataset)> {
    let TaskKind::MultiscaleSum { windows } = &spec.kind else {
        return Err(Error::invalid("task spec is not a multiscale sum"));
    };
    spec.validate()?;
    let widest = *windows.last().unwrap();
    let (mut tr, mut va) = split_rngs(spec);
    let make = |n: usize, rng: &mut SeededRng| -> Result<Dataset> {
        let len = spec.sequence_length;
        let mut inputs = SeqBatch::zeros(n, 1, len);
        let mut labels = Vec::with_capacity(n * len);
        for b in 0..n {
            let x: Vec<f64> = (0..len)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            inputs.row_mut(b, 0).copy_from_slice(&x);
            // prefix sums; window j at t covers x[t - w + 1 ..= t]
            let mut prefix = vec![0.0; len + 1];
            for t in 0..len {
                prefix[t + 1] = prefix[t] + x[t];
            }
            for t in 0..len {
                if t + 1 < widest {
                    labels.push(None);
                    continue;
                }
                let mut label = 0;
                for (j, &w) in windows.iter().enumerate() {
                    if prefix[t + 1] - prefix[t + 1 - w] > 0.0 {
                        label |= 1 << j;
                    }
                }
                labels.push(Some(label));
            }
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Classes(FrameLabels::new(n, len, labels)?),
        })
    };
    Ok((
        make(spec.train_size, &mut tr)?,
        make(spec.val_size, &mut va)?,
    ))
}

pub fn gen_noisy_event_span(spec: &TaskSpec) -> Result<(Dataset, Dataset)> {
    let TaskKind::NoisyEventSpan {
        span,
        event_rate,
        noise,
    } = spec.kind
    else {
        return Err(Error::invalid("task spec is not a noisy event span"));
    };
    spec.validate()?;
    let normal = Normal::new(0.0, noise).map_err(|e| Error::invalid(e.to_string()))?;
    let (mut tr, mut va) = split_rngs(spec);
    let make = |n: usize, rng: &mut SeededRng| -> Result<Dataset> {
        let len = spec.sequence_length;
        let mut inputs = SeqBatch::zeros(n, 1, len);
        let mut labels = Vec::with_capacity(n * len);
        for b in 0..n {
            let mut last_event: Option<usize> = None;
            for t in 0..len {
                let event = rng.gen_bool(event_rate);
                if event {
                    last_event = Some(t);
                }
                let v = normal.sample(rng) + if event { 1.0 } else { 0.0 };
                inputs.set(b, 0, t, v);
                labels.push(if t + 1 < span {
                    None
                } else {
                    Some(usize::from(last_event.is_some_and(|e| t - e < span)))
                });
            }
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Classes(FrameLabels::new(n, len, labels)?),
        })
    };
    Ok((
        make(spec.train_size, &mut tr)?,
        make(spec.val_size, &mut va)?,
    ))
}
