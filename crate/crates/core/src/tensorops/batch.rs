use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `(batch, channel, time)` tensor of 64-bit reals, time-major innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqBatch {
    batch: usize,
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl SeqBatch {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self {
            batch,
            channels,
            length,
            data: vec![0.0; batch * channels * length],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if batch == 0 || channels == 0 || length == 0 {
            return Err(Error::invalid(format!(
                "batch dimensions must be positive, got ({batch}, {channels}, {length})"
            )));
        }
        if data.len() != batch * channels * length {
            return Err(Error::invalid(format!(
                "expected {} values for shape ({batch}, {channels}, {length}), got {}",
                batch * channels * length,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("batch contains non-finite values"));
        }
        Ok(Self {
            batch,
            channels,
            length,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.channels + c) * self.length + t
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[self.index(b, c, t)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, v: f64) {
        let i = self.index(b, c, t);
        self.data[i] = v;
    }

    /// The time series of one `(batch, channel)` pair.
    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.length;
        &self.data[start..start + self.length]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.channels + c) * self.length;
        &mut self.data[start..start + self.length]
    }

    /// Copies the listed batch entries into a new batch, in order.
    pub fn select(&self, indices: &[usize]) -> SeqBatch {
        let stride = self.channels * self.length;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        SeqBatch {
            batch: indices.len(),
            channels: self.channels,
            length: self.length,
            data,
        }
    }

    pub fn same_shape(&self, other: &SeqBatch) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &SeqBatch) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled_add_assign(&mut self, scale: f64, other: &SeqBatch) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn dot(&self, other: &SeqBatch) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
