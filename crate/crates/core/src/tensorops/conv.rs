//! Batched 1-D dilated convolution with exact adjoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SeqBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Left pad by `(kernel_size - 1) * dilation`; output at `t` sees `[t - span, t]`.
    #[default]
    Causal,
    /// Symmetric pad of `(kernel_size - 1) * dilation / 2`; odd kernels only.
    Centered,
}

/// Convolution weights `(out, in, tap)` and per-output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_size: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_size,
            weights: vec![0.0; out_channels * in_channels * kernel_size],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_size == 0 {
            return Err(Error::invalid("kernel dimensions must be positive"));
        }
        if weights.len() != out_channels * in_channels * kernel_size || bias.len() != out_channels {
            return Err(Error::invalid(format!(
                "kernel ({out_channels}, {in_channels}, {kernel_size}) needs {} weights and {out_channels} biases, got {} and {}",
                out_channels * in_channels * kernel_size,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel contains non-finite values"));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_size,
            weights,
            bias,
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init_uniform<R: Rng + ?Sized>(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel_size) as f64).sqrt();
        let mut k = Self::zeros(out_channels, in_channels, kernel_size);
        for w in k.weights.iter_mut().chain(k.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        k
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, j: usize) -> f64 {
        self.weights[(o * self.in_channels + i) * self.kernel_size + j]
    }

    #[inline]
    fn weight_index(&self, o: usize, i: usize, j: usize) -> usize {
        (o * self.in_channels + i) * self.kernel_size + j
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn same_shape(&self, other: &ConvKernel) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel_size == other.kernel_size
    }
}

/// Time offset of tap `j` relative to the output position.
#[inline]
fn tap_offset(j: usize, kernel_size: usize, dilation: usize, padding: PaddingMode) -> isize {
    let (j, k, d) = (j as isize, kernel_size as isize, dilation as isize);
    match padding {
        PaddingMode::Causal => (j - (k - 1)) * d,
        PaddingMode::Centered => (j - (k - 1) / 2) * d,
    }
}

/// Output range `[lo, hi)` whose shifted input index `t + off` lies inside `[0, len)`.
#[inline]
fn valid_range(off: isize, len: usize) -> (usize, usize) {
    let len = len as isize;
    let lo = (-off).max(0).min(len);
    let hi = (len - off).clamp(0, len);
    (lo as usize, hi.max(lo) as usize)
}

pub(crate) fn check_conv_args(
    x: &SeqBatch,
    k: &ConvKernel,
    dilation: usize,
    padding: PaddingMode,
) -> Result<()> {
    if dilation == 0 {
        return Err(Error::invalid("dilation must be >= 1"));
    }
    if x.channels() != k.in_channels {
        return Err(Error::invalid(format!(
            "input has {} channels but kernel expects {}",
            x.channels(),
            k.in_channels
        )));
    }
    if padding == PaddingMode::Centered {
        if k.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "centered padding needs an odd kernel size, got {}",
                k.kernel_size
            )));
        }
        if (k.kernel_size - 1) * dilation >= x.length() {
            return Err(Error::invalid(format!(
                "centered span {} must be shorter than the sequence length {}",
                (k.kernel_size - 1) * dilation,
                x.length()
            )));
        }
    }
    Ok(())
}

/// `out += scale * conv(x, k, dilation)`, bias included.
pub(crate) fn conv_accumulate(
    x: &SeqBatch,
    k: &ConvKernel,
    dilation: usize,
    padding: PaddingMode,
    scale: f64,
    out: &mut SeqBatch,
) {
    let len = x.length();
    for b in 0..x.batch() {
        for o in 0..k.out_channels {
            let bias = scale * k.bias[o];
            let row = out.row_mut(b, o);
            row.iter_mut().for_each(|v| *v += bias);
            for i in 0..k.in_channels {
                let xr = x.row(b, i);
                for j in 0..k.kernel_size {
                    let w = scale * k.weight(o, i, j);
                    if w == 0.0 {
                        continue;
                    }
                    let off = tap_offset(j, k.kernel_size, dilation, padding);
                    let (lo, hi) = valid_range(off, len);
                    if lo == hi {
                        continue;
                    }
                    let src_lo = (lo as isize + off) as usize;
                    let src = &xr[src_lo..src_lo + (hi - lo)];
                    for (y, xv) in row[lo..hi].iter_mut().zip(src) {
                        *y += w * xv;
                    }
                }
            }
        }
    }
}

/// Accumulates the adjoint of `scale * conv(x, k, dilation)` applied to `grad_out`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_adjoint_accumulate(
    x: &SeqBatch,
    k: &ConvKernel,
    dilation: usize,
    padding: PaddingMode,
    scale: f64,
    grad_out: &SeqBatch,
    grad_x: Option<&mut SeqBatch>,
    grad_k: &mut ConvKernel,
) {
    let len = x.length();
    for b in 0..x.batch() {
        for o in 0..k.out_channels {
            let g = grad_out.row(b, o);
            grad_k.bias[o] += scale * g.iter().sum::<f64>();
            for i in 0..k.in_channels {
                let xr = x.row(b, i);
                for j in 0..k.kernel_size {
                    let off = tap_offset(j, k.kernel_size, dilation, padding);
                    let (lo, hi) = valid_range(off, len);
                    if lo == hi {
                        continue;
                    }
                    let src_lo = (lo as isize + off) as usize;
                    let src = &xr[src_lo..src_lo + (hi - lo)];
                    let acc: f64 = g[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum();
                    let wi = grad_k.weight_index(o, i, j);
                    grad_k.weights[wi] += scale * acc;
                }
            }
        }
    }
    if let Some(grad_x) = grad_x {
        for b in 0..x.batch() {
            for o in 0..k.out_channels {
                for i in 0..k.in_channels {
                    for j in 0..k.kernel_size {
                        let w = scale * k.weight(o, i, j);
                        if w == 0.0 {
                            continue;
                        }
                        let off = tap_offset(j, k.kernel_size, dilation, padding);
                        let (lo, hi) = valid_range(off, len);
                        if lo == hi {
                            continue;
                        }
                        let dst_lo = (lo as isize + off) as usize;
                        // split borrow: read grad_out row, write grad_x row
                        let g = &grad_out.row(b, o)[lo..hi];
                        let gx = &mut grad_x.row_mut(b, i)[dst_lo..dst_lo + (hi - lo)];
                        for (dst, gv) in gx.iter_mut().zip(g) {
                            *dst += w * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Cached state of one convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvTape {
    input: SeqBatch,
    kernel: ConvKernel,
    dilation: usize,
    padding: PaddingMode,
}

impl ConvTape {
    pub fn input(&self) -> &SeqBatch {
        &self.input
    }
}

/// Same-length dilated convolution.
pub fn dilated_conv1d_forward(
    x: &SeqBatch,
    k: &ConvKernel,
    dilation: usize,
    padding: PaddingMode,
) -> Result<SeqBatch> {
    check_conv_args(x, k, dilation, padding)?;
    let mut out = SeqBatch::zeros(x.batch(), k.out_channels, x.length());
    conv_accumulate(x, k, dilation, padding, 1.0, &mut out);
    Ok(out)
}

/// Forward pass that also records what the backward pass needs.
pub fn dilated_conv1d_forward_taped(
    x: &SeqBatch,
    k: &ConvKernel,
    dilation: usize,
    padding: PaddingMode,
) -> Result<(SeqBatch, ConvTape)> {
    let out = dilated_conv1d_forward(x, k, dilation, padding)?;
    let tape = ConvTape {
        input: x.clone(),
        kernel: k.clone(),
        dilation,
        padding,
    };
    Ok((out, tape))
}

/// Gradients with respect to the input and the kernel.
pub fn dilated_conv1d_backward(
    tape: &ConvTape,
    grad_out: &SeqBatch,
) -> Result<(SeqBatch, ConvKernel)> {
    let x = &tape.input;
    let k = &tape.kernel;
    if grad_out.shape() != (x.batch(), k.out_channels, x.length()) {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match forward output ({}, {}, {})",
            grad_out.shape(),
            x.batch(),
            k.out_channels,
            x.length()
        )));
    }
    let mut grad_x = SeqBatch::zeros(x.batch(), x.channels(), x.length());
    let mut grad_k = ConvKernel::zeros(k.out_channels, k.in_channels, k.kernel_size);
    conv_adjoint_accumulate(
        x,
        k,
        tape.dilation,
        tape.padding,
        1.0,
        grad_out,
        Some(&mut grad_x),
        &mut grad_k,
    );
    Ok((grad_x, grad_k))
}
