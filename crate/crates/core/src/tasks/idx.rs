//! IDX (MNIST-style) reader producing permuted-pixel sequence datasets.
//!
//! Each image becomes a one-channel sequence of `rows * cols` pixels scaled
//! to `[0, 1]`, reordered by a fixed seeded permutation. The class label is
//! attached to the last frame only.

use std::path::Path;

use rand::seq::SliceRandom;

use super::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensorops::{FrameLabels, SeqBatch};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::invalid("truncated IDX header"))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    if be_u32(bytes, 0)? != IMAGES_MAGIC {
        return Err(Error::invalid("not an IDX ubyte image file"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::invalid(
            "IDX image payload size does not match its header",
        ));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    if be_u32(bytes, 0)? != LABELS_MAGIC {
        return Err(Error::invalid("not an IDX ubyte label file"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::invalid(
            "IDX label payload size does not match its header",
        ));
    }
    Ok(body)
}

pub fn permuted_sequences(
    images: &[u8],
    labels: &[u8],
    permutation_seed: u64,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::invalid("image and label counts differ"));
    }
    let n = limit.map_or(n, |l| l.min(n));
    if n == 0 {
        return Err(Error::invalid("no images"));
    }
    let len = rows * cols;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut derive_rng(permutation_seed, "idx.permutation", &[]));
    let mut inputs = SeqBatch::zeros(n, 1, len);
    let mut frame_labels = vec![None; n * len];
    for i in 0..n {
        let img = &pixels[i * len..(i + 1) * len];
        let row = inputs.row_mut(i, 0);
        for (t, &src) in perm.iter().enumerate() {
            row[t] = f64::from(img[src]) / 255.0;
        }
        frame_labels[i * len + len - 1] = Some(usize::from(labels[i]));
    }
    Ok(Dataset {
        inputs,
        targets: Targets::Classes(FrameLabels::new(n, len, frame_labels)?),
    })
}

pub fn load_permuted(
    images: &Path,
    labels: &Path,
    permutation_seed: u64,
    limit: Option<usize>,
) -> Result<Dataset> {
    permuted_sequences(
        &std::fs::read(images)?,
        &std::fs::read(labels)?,
        permutation_seed,
        limit,
    )
}
