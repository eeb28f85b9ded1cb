//! Desk-scale dilated convolutional network.
//!
//! A stack of `conv -> ReLU (+ residual)` layers followed by a 1x1 head.
//! Layers with kernel size > 1 are the searched ones; each is either a plain
//! dilated convolution or a shared-weight multi-dilated layer.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::DilationGenome;
use crate::localsearch::{
    multi_dilated_backward_impl, multi_dilated_forward_taped, MultiDilatedLayerState,
    MultiDilatedTape, PmfKind,
};
use crate::tensorops::{
    check_conv_args, conv_accumulate, conv_adjoint_accumulate, relu_backward, ConvKernel,
    PaddingMode, SeqBatch,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kernel_size: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadSpec {
    /// Framewise softmax classifier.
    Classifier { classes: usize },
    /// Framewise regression trained with squared error.
    Regressor { outputs: usize },
}

impl HeadSpec {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadSpec::Classifier { classes } => classes,
            HeadSpec::Regressor { outputs } => outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_true")]
    pub residual: bool,
    pub head: HeadSpec,
    #[serde(default)]
    pub padding: PaddingMode,
}

fn default_true() -> bool {
    true
}

impl NetworkSpec {
    /// `layers` identical layers of the given kernel size and width.
    pub fn uniform(
        input_channels: usize,
        layers: usize,
        kernel_size: usize,
        channels: usize,
        head: HeadSpec,
    ) -> Self {
        Self {
            input_channels,
            layers: vec![
                LayerSpec {
                    kernel_size,
                    channels
                };
                layers
            ],
            residual: true,
            head,
            padding: PaddingMode::Causal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.layers.is_empty() || self.head.outputs() == 0 {
            return Err(Error::invalid(
                "network needs input channels, at least one layer and a non-empty head",
            ));
        }
        if self
            .layers
            .iter()
            .any(|l| l.kernel_size == 0 || l.channels == 0)
        {
            return Err(Error::invalid("layer kernel sizes and widths must be >= 1"));
        }
        if self.padding == PaddingMode::Centered
            && self.layers.iter().any(|l| l.kernel_size % 2 == 0)
        {
            return Err(Error::invalid("centered padding needs odd kernel sizes"));
        }
        Ok(())
    }

    /// Indices of the layers a genome binds to (kernel size > 1).
    pub fn searchable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kernel_size > 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn searched_kernel_sizes(&self) -> Vec<usize> {
        self.searchable_layers()
            .iter()
            .map(|&i| self.layers[i].kernel_size)
            .collect()
    }

    /// All-ones genome: the undilated network.
    pub fn baseline_genome(&self) -> Result<DilationGenome> {
        let map = self.searchable_layers();
        if map.is_empty() {
            return Err(Error::invalid("network has no searchable layers"));
        }
        DilationGenome::new(vec![1; map.len()])?.with_layer_map(map)
    }

    fn widths(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ins =
            std::iter::once(self.input_channels).chain(self.layers.iter().map(|l| l.channels));
        ins.zip(self.layers.iter().map(|l| l.channels))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerOp {
    Single { kernel: ConvKernel, dilation: usize },
    Multi(MultiDilatedLayerState),
}

impl LayerOp {
    pub fn kernel(&self) -> &ConvKernel {
        match self {
            LayerOp::Single { kernel, .. } => kernel,
            LayerOp::Multi(st) => st.shared_kernel(),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            LayerOp::Single { kernel, .. } => kernel.param_count(),
            LayerOp::Multi(st) => st.shared_kernel().param_count() + st.branches(),
        }
    }
}

enum LayerCache {
    Single {
        input: SeqBatch,
        activated: SeqBatch,
    },
    Multi {
        tape: Box<MultiDilatedTape>,
        activated: SeqBatch,
    },
}

/// Everything `Network::backward` needs from one forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    head_input: SeqBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<LayerOp>,
    head: ConvKernel,
}

impl Network {
    /// Fresh network with the genome's dilations on the searched layers.
    pub fn new<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        genome: &DilationGenome,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_dilations(spec, genome.dilations(), rng)
    }

    /// As [`Network::new`] from a raw dilation list; empty when no layer is searchable.
    pub fn with_dilations<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        dilations: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let searched = spec.searchable_layers();
        if dilations.len() != searched.len() {
            return Err(Error::invalid(format!(
                "genome has {} genes but the network has {} searchable layers",
                dilations.len(),
                searched.len()
            )));
        }
        if dilations.contains(&0) {
            return Err(Error::invalid("dilations must be >= 1"));
        }
        let mut dilation_of = vec![1usize; spec.layers.len()];
        for (&layer, &d) in searched.iter().zip(dilations) {
            dilation_of[layer] = d;
        }
        let layers = spec
            .widths()
            .zip(&spec.layers)
            .zip(dilation_of)
            .map(|(((cin, cout), l), dilation)| LayerOp::Single {
                kernel: ConvKernel::init_uniform(cout, cin, l.kernel_size, rng),
                dilation,
            })
            .collect();
        let last = spec
            .layers
            .last()
            .map(|l| l.channels)
            .unwrap_or(spec.input_channels);
        let head = ConvKernel::init_uniform(spec.head.outputs(), last, 1, rng);
        Ok(Self {
            spec: spec.clone(),
            layers,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerOp] {
        &self.layers
    }

    pub fn head(&self) -> &ConvKernel {
        &self.head
    }

    /// Current dilations of the searched layers; multi-dilated layers report `None`.
    pub fn searched_dilations(&self) -> Vec<Option<usize>> {
        self.spec
            .searchable_layers()
            .into_iter()
            .map(|i| match &self.layers[i] {
                LayerOp::Single { dilation, .. } => Some(*dilation),
                LayerOp::Multi(_) => None,
            })
            .collect()
    }

    /// Replaces layer `index` with a multi-dilated layer sharing its current kernel.
    pub fn set_branches(
        &mut self,
        index: usize,
        dilations: Vec<usize>,
        coefficients: Vec<f64>,
        kind: PmfKind,
    ) -> Result<()> {
        let kernel = self.layer_kernel_owned(index)?;
        self.layers[index] = LayerOp::Multi(MultiDilatedLayerState::new(
            kernel,
            dilations,
            coefficients,
            kind,
        )?);
        Ok(())
    }

    /// Makes layer `index` a plain convolution at `dilation`, keeping its kernel.
    pub fn set_single(&mut self, index: usize, dilation: usize) -> Result<()> {
        if dilation == 0 {
            return Err(Error::invalid("dilation must be >= 1"));
        }
        let kernel = self.layer_kernel_owned(index)?;
        self.layers[index] = LayerOp::Single { kernel, dilation };
        Ok(())
    }

    fn layer_kernel_owned(&self, index: usize) -> Result<ConvKernel> {
        let op = self
            .layers
            .get(index)
            .ok_or_else(|| Error::invalid(format!("no layer {index}")))?;
        Ok(match op.clone() {
            LayerOp::Single { kernel, .. } => kernel,
            LayerOp::Multi(st) => st.into_kernel(),
        })
    }

    pub fn layer(&self, index: usize) -> Option<&LayerOp> {
        self.layers.get(index)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerOp::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Flat parameter vector: per layer weights, bias, coefficients; then the head.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for op in &self.layers {
            p.extend_from_slice(op.kernel().weights());
            p.extend_from_slice(op.kernel().bias());
            if let LayerOp::Multi(st) = op {
                p.extend_from_slice(st.coefficients());
            }
        }
        p.extend_from_slice(self.head.weights());
        p.extend_from_slice(self.head.bias());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let mut rest = p;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for op in &mut self.layers {
            match op {
                LayerOp::Single { kernel, .. } => {
                    take(kernel.weights_mut());
                    take(kernel.bias_mut());
                }
                LayerOp::Multi(st) => {
                    take(st.shared_kernel_mut().weights_mut());
                    take(st.shared_kernel_mut().bias_mut());
                    take(st.coefficients_mut());
                }
            }
        }
        take(self.head.weights_mut());
        take(self.head.bias_mut());
        Ok(())
    }

    /// Positions of branch coefficients inside the flat parameter vector.
    pub fn coefficient_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::new();
        let mut at = 0;
        for op in &self.layers {
            at += op.kernel().param_count();
            if let LayerOp::Multi(st) = op {
                ranges.push(at..at + st.branches());
                at += st.branches();
            }
        }
        ranges
    }

    pub fn forward(&self, x: &SeqBatch) -> Result<SeqBatch> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &SeqBatch) -> Result<(SeqBatch, ForwardCache)> {
        if x.channels() != self.spec.input_channels {
            return Err(Error::invalid(format!(
                "input has {} channels, network expects {}",
                x.channels(),
                self.spec.input_channels
            )));
        }
        let padding = self.spec.padding;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for op in &self.layers {
            let (pre, cache_input) = match op {
                LayerOp::Single { kernel, dilation } => {
                    check_conv_args(&h, kernel, *dilation, padding)?;
                    let mut y = SeqBatch::zeros(h.batch(), kernel.out_channels(), h.length());
                    conv_accumulate(&h, kernel, *dilation, padding, 1.0, &mut y);
                    (y, None)
                }
                LayerOp::Multi(st) => {
                    let (y, tape) = multi_dilated_forward_taped(&h, st, padding)?;
                    (y, Some(tape))
                }
            };
            let mut activated = pre;
            activated
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = v.max(0.0));
            let mut out = activated.clone();
            if self.spec.residual && h.channels() == out.channels() {
                out.add_assign(&h);
            }
            caches.push(match cache_input {
                None => LayerCache::Single {
                    input: h,
                    activated,
                },
                Some(tape) => LayerCache::Multi {
                    tape: Box::new(tape),
                    activated,
                },
            });
            h = out;
        }
        let mut logits = SeqBatch::zeros(h.batch(), self.head.out_channels(), h.length());
        conv_accumulate(&h, &self.head, 1, PaddingMode::Causal, 1.0, &mut logits);
        Ok((
            logits,
            ForwardCache {
                layers: caches,
                head_input: h,
            },
        ))
    }

    /// Gradient of the loss with respect to the flat parameter vector.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &SeqBatch) -> Result<Vec<f64>> {
        let mut head_grad = ConvKernel::zeros(self.head.out_channels(), self.head.in_channels(), 1);
        let hin = &cache.head_input;
        if grad_out.shape() != (hin.batch(), self.head.out_channels(), hin.length()) {
            return Err(Error::invalid("output gradient shape mismatch"));
        }
        let mut g = SeqBatch::zeros(hin.batch(), hin.channels(), hin.length());
        conv_adjoint_accumulate(
            hin,
            &self.head,
            1,
            PaddingMode::Causal,
            1.0,
            grad_out,
            Some(&mut g),
            &mut head_grad,
        );

        let padding = self.spec.padding;
        let mut per_layer: Vec<(ConvKernel, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for (idx, (op, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_input = idx > 0;
            let (activated, in_channels) = match lc {
                LayerCache::Single { input, activated } => (activated, input.channels()),
                LayerCache::Multi { activated, .. } => (activated, op.kernel().in_channels()),
            };
            let residual = self.spec.residual && in_channels == activated.channels();
            let g_pre = relu_backward(activated, &g);
            let (gx, gk, gw) = match (op, lc) {
                (LayerOp::Single { kernel, dilation }, LayerCache::Single { input, .. }) => {
                    let mut gk = ConvKernel::zeros(
                        kernel.out_channels(),
                        kernel.in_channels(),
                        kernel.kernel_size(),
                    );
                    let mut gx = SeqBatch::zeros(input.batch(), input.channels(), input.length());
                    conv_adjoint_accumulate(
                        input,
                        kernel,
                        *dilation,
                        padding,
                        1.0,
                        &g_pre,
                        need_input.then_some(&mut gx),
                        &mut gk,
                    );
                    (gx, gk, Vec::new())
                }
                (LayerOp::Multi(_), LayerCache::Multi { tape, .. }) => {
                    let grads = multi_dilated_backward_impl(tape, &g_pre, need_input)?;
                    (grads.input, grads.kernel, grads.coefficients)
                }
                _ => return Err(Error::invalid("forward cache does not match the network")),
            };
            let mut next = gx;
            if residual {
                next.add_assign(&g);
            }
            g = next;
            per_layer.push((gk, gw));
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gk, gw) in per_layer {
            flat.extend_from_slice(gk.weights());
            flat.extend_from_slice(gk.bias());
            flat.extend_from_slice(&gw);
        }
        flat.extend_from_slice(head_grad.weights());
        flat.extend_from_slice(head_grad.bias());
        Ok(flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            input_channels: 2,
            layers: vec![
                LayerSpec {
                    kernel_size: 3,
                    channels: 4,
                },
                LayerSpec {
                    kernel_size: 1,
                    channels: 4,
                },
                LayerSpec {
                    kernel_size: 2,
                    channels: 4,
                },
            ],
            residual: true,
            head: HeadSpec::Classifier { classes: 3 },
            padding: PaddingMode::Causal,
        }
    }

    #[test]
    fn genome_binds_to_wide_kernels_only() {
        let s = spec();
        assert_eq!(s.searchable_layers(), vec![0, 2]);
        assert_eq!(s.searched_kernel_sizes(), vec![3, 2]);
        let g = DilationGenome::new(vec![4, 8]).unwrap();
        let net = Network::new(&s, &g, &mut rng_from_seed(0)).unwrap();
        assert_eq!(net.searched_dilations(), vec![Some(4), Some(8)]);
        assert!(Network::new(
            &s,
            &DilationGenome::new(vec![1]).unwrap(),
            &mut rng_from_seed(0)
        )
        .is_err());
    }

    #[test]
    fn params_round_trip_and_branch_count() {
        let s = spec();
        let g = DilationGenome::new(vec![2, 3]).unwrap();
        let mut net = Network::new(&s, &g, &mut rng_from_seed(1)).unwrap();
        let base = net.param_count();
        net.set_branches(0, vec![1, 2, 3], vec![1.0; 3], PmfKind::AbsNormalize)
            .unwrap();
        assert_eq!(net.param_count(), base + 3);
        assert_eq!(net.coefficient_ranges().len(), 1);
        let p = net.params();
        assert_eq!(&p[net.coefficient_ranges()[0].clone()], &[1.0, 1.0, 1.0]);
        let mut other = net.clone();
        other.set_params(&vec![0.0; p.len()]).unwrap();
        other.set_params(&p).unwrap();
        assert_eq!(other, net);
        net.set_single(0, 2).unwrap();
        assert_eq!(net.param_count(), base);
    }
}
