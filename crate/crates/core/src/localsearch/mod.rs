//! Expectation-guided iterative local search.
//!
//! Each iteration samples a few dilations around every layer's current
//! value, trains a shared-weight multi-dilated layer whose branch
//! coefficients act as a probability mass over those dilations, and moves
//! the layer to the floor of the expected dilation.

mod multidilated;
mod pmf;

pub(crate) use multidilated::multi_dilated_backward_impl;
pub use multidilated::{
    mixed_dilation_forward, multi_dilated_backward, multi_dilated_forward,
    multi_dilated_forward_taped, MultiDilatedGrads, MultiDilatedLayerState, MultiDilatedTape,
};
pub use pmf::{pmf, pmf_backward, PmfKind};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::DilationGenome;
use crate::model::{Network, NetworkSpec};
use crate::rng::Rng;
use crate::tasks::Dataset;
use crate::train::{train_epochs, TrainConfig};

/// Added before flooring the expectation so that sums such as
/// `9/3 + 10/3 + 11/3` that land a few ulps under an integer are not pushed down.
const FLOOR_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalConfig {
    /// `Delta D_l = max(1, round(delta_fraction * D_l))`.
    pub delta_fraction: f64,
    /// Sampled dilations per layer, `S`.
    pub branches: usize,
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub w_init: f64,
    pub finalize_parallel: bool,
    pub pmf: PmfKind,
    pub max_dilation_cap: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            delta_fraction: 0.1,
            branches: 3,
            iterations: 6,
            epochs_per_iteration: 3,
            w_init: 1.0,
            finalize_parallel: false,
            pmf: PmfKind::AbsNormalize,
            max_dilation_cap: 255,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_fraction > 0.0 && self.delta_fraction <= 1.0) {
            return Err(Error::invalid("delta_fraction must lie in (0, 1]"));
        }
        if self.branches < 2
            || self.iterations < 1
            || self.epochs_per_iteration < 1
            || self.max_dilation_cap < 1
        {
            return Err(Error::invalid(
                "local search needs S >= 2, iterations >= 1, epochs_per_iteration >= 1 and a positive cap",
            ));
        }
        if !self.w_init.is_finite() || (self.pmf == PmfKind::AbsNormalize && self.w_init == 0.0) {
            return Err(Error::invalid(
                "w_init must be finite (and non-zero for abs normalisation)",
            ));
        }
        Ok(())
    }
}

/// `S` dilations evenly spread over `[D - dD, D + dD]`, rounded, clamped to
/// `[1, cap]` and deduplicated in order.
pub fn sample_dilation_set(
    center: usize,
    delta_fraction: f64,
    branches: usize,
    cap: usize,
) -> Result<Vec<usize>> {
    if branches < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 sampled dilations, got {branches}"
        )));
    }
    if center == 0 || cap == 0 {
        return Err(Error::invalid("dilation and cap must be >= 1"));
    }
    let delta = ((delta_fraction * center as f64).round() as usize).max(1) as f64;
    let step = 2.0 * delta / (branches - 1) as f64;
    let mut set: Vec<usize> = Vec::with_capacity(branches);
    for i in 0..branches {
        let raw = center as f64 - delta + i as f64 * step;
        let d = (raw.round().max(1.0) as usize).min(cap);
        if set.last() != Some(&d) {
            set.push(d);
        }
    }
    Ok(set)
}

/// `max(1, floor(sum_i alpha_i * d_i))`.
pub fn expected_dilation(dilations: &[usize], alphas: &[f64]) -> Result<usize> {
    if dilations.len() != alphas.len() || dilations.is_empty() {
        return Err(Error::invalid(
            "dilations and PMF must be non-empty and equally long",
        ));
    }
    let e: f64 = dilations
        .iter()
        .zip(alphas)
        .map(|(&d, &a)| a * d as f64)
        .sum();
    Ok(((e + FLOOR_GUARD).floor() as usize).max(1))
}

/// What a local-search trainer is asked to do in one iteration.
pub struct IterationRequest<'a> {
    pub iteration: usize,
    /// Branch dilations per searched layer; `None` keeps the layer at `current`.
    pub sets: &'a [Option<Vec<usize>>],
    pub current: &'a DilationGenome,
    pub w_init: f64,
    pub pmf: PmfKind,
    pub epochs: usize,
}

/// Fits branch coefficients for the requested dilation sets.
pub trait CoefficientTrainer {
    /// Returns the trained coefficient vector of every layer that had a set.
    fn train_iteration(&mut self, req: &IterationRequest<'_>) -> Result<Vec<Option<Vec<f64>>>>;
}

/// Trains a real network whose searched layers become multi-dilated layers.
///
/// The shared kernels persist across iterations; only the coefficients are
/// reset.
pub struct SupernetTrainer<'d> {
    pub network: Network,
    pub data: &'d Dataset,
    pub config: TrainConfig,
    pub rng: Rng,
}

impl<'d> SupernetTrainer<'d> {
    pub fn new(
        spec: &NetworkSpec,
        initial: &DilationGenome,
        data: &'d Dataset,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let network = Network::new(
            spec,
            initial,
            &mut crate::rng::derive_rng(seed, "local.init", &[]),
        )?;
        Ok(Self {
            network,
            data,
            config,
            rng: crate::rng::derive_rng(seed, "local.shuffle", &[]),
        })
    }
}

impl CoefficientTrainer for SupernetTrainer<'_> {
    fn train_iteration(&mut self, req: &IterationRequest<'_>) -> Result<Vec<Option<Vec<f64>>>> {
        let layers = self.network.spec().searchable_layers();
        if layers.len() != req.sets.len() {
            return Err(Error::invalid(
                "dilation sets do not match the searchable layers",
            ));
        }
        for ((&idx, set), &d) in layers.iter().zip(req.sets).zip(req.current.dilations()) {
            match set {
                Some(set) => self.network.set_branches(
                    idx,
                    set.clone(),
                    vec![req.w_init; set.len()],
                    req.pmf,
                )?,
                None => self.network.set_single(idx, d)?,
            }
        }
        train_epochs(
            &mut self.network,
            self.data,
            &self.config,
            req.epochs,
            &mut self.rng,
        )?;
        Ok(layers
            .iter()
            .map(|&idx| match self.network.layer(idx) {
                Some(crate::model::LayerOp::Multi(st)) => Some(st.coefficients().to_vec()),
                _ => None,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalIterationLog {
    pub iteration: usize,
    pub layer_index: usize,
    pub dilations: Vec<usize>,
    pub alphas: Vec<f64>,
    pub new_dilation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelLayer {
    pub dilations: Vec<usize>,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub coefficients: Vec<f64>,
}

/// Searched layers that keep all their sampled branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelStructure {
    /// Keyed by searched-layer index (gene position).
    pub parallel: BTreeMap<usize, ParallelLayer>,
    pub kernel_sizes: Vec<usize>,
    pub pmf: PmfKind,
}

impl ParallelStructure {
    /// Single-dilation fallback for each gene: the branch with the largest weight.
    pub fn dominant_genome(&self) -> Result<DilationGenome> {
        let dil = self
            .parallel
            .values()
            .map(|l| {
                l.dilations
                    .iter()
                    .zip(&l.alphas)
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(&d, _)| d)
                    .unwrap_or(1)
            })
            .collect();
        DilationGenome::new(dil)
    }

    /// Fresh network realising this structure; branch coefficients start at
    /// their searched values and stay trainable.
    pub fn build_network(&self, spec: &NetworkSpec, rng: &mut Rng) -> Result<Network> {
        let layers = spec.searchable_layers();
        if layers.len() != self.parallel.len() {
            return Err(Error::invalid(
                "parallel structure does not match the network",
            ));
        }
        let mut net = Network::new(spec, &self.dominant_genome()?, rng)?;
        for (&idx, layer) in layers.iter().zip(self.parallel.values()) {
            if layer.dilations.len() >= 2 {
                let coefficients = if layer.coefficients.len() == layer.dilations.len() {
                    layer.coefficients.clone()
                } else {
                    layer.alphas.clone()
                };
                net.set_branches(idx, layer.dilations.clone(), coefficients, self.pmf)?;
            }
        }
        Ok(net)
    }
}

/// Extra parameters of a parallel structure over the single-branch network:
/// one coefficient per kept branch. Layers reduced to one branch are plain
/// convolutions and add nothing.
pub fn parallel_param_count(structure: &ParallelStructure) -> usize {
    structure
        .parallel
        .values()
        .filter(|l| l.dilations.len() >= 2)
        .map(|l| l.dilations.len())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchOutcome {
    /// Layers merged to their expected dilations.
    pub genome: DilationGenome,
    /// Present when `finalize_parallel` is set: the last iteration's branches, unmerged.
    pub parallel: Option<ParallelStructure>,
    pub trajectory: Vec<LocalIterationLog>,
}

pub fn run_local_search<T: CoefficientTrainer + ?Sized>(
    initial: &DilationGenome,
    kernel_sizes: &[usize],
    cfg: &LocalConfig,
    trainer: &mut T,
) -> Result<LocalSearchOutcome> {
    cfg.validate()?;
    if kernel_sizes.len() != initial.len() {
        return Err(Error::invalid("kernel sizes must match the genome length"));
    }
    if !initial.is_valid_for(cfg.max_dilation_cap) {
        return Err(Error::invalid(format!(
            "initial genome {initial} exceeds the dilation cap {}",
            cfg.max_dilation_cap
        )));
    }
    let mut genome = initial.clone();
    let mut trajectory = Vec::new();
    let mut parallel = None;
    for iteration in 1..=cfg.iterations {
        let sets: Vec<Option<Vec<usize>>> = genome
            .dilations()
            .iter()
            .map(|&d| {
                sample_dilation_set(d, cfg.delta_fraction, cfg.branches, cfg.max_dilation_cap)
                    .map(|s| (s.len() >= 2).then_some(s))
            })
            .collect::<Result<_>>()?;
        let coefficients = trainer.train_iteration(&IterationRequest {
            iteration,
            sets: &sets,
            current: &genome,
            w_init: cfg.w_init,
            pmf: cfg.pmf,
            epochs: cfg.epochs_per_iteration,
        })?;
        if coefficients.len() != sets.len() {
            return Err(Error::invalid(
                "trainer returned the wrong number of layers",
            ));
        }
        let last = iteration == cfg.iterations;
        let mut kept = BTreeMap::new();
        let mut next = genome.clone();
        for (layer, (set, w)) in sets.iter().zip(&coefficients).enumerate() {
            let (Some(set), Some(w)) = (set, w) else {
                if last {
                    let d = genome.dilations()[layer];
                    kept.insert(
                        layer,
                        ParallelLayer {
                            dilations: vec![d],
                            alphas: vec![1.0],
                            coefficients: vec![],
                        },
                    );
                }
                continue;
            };
            let alphas = pmf(w, cfg.pmf)?;
            let d = expected_dilation(set, &alphas)?.min(cfg.max_dilation_cap);
            next.set(layer, d);
            trajectory.push(LocalIterationLog {
                iteration,
                layer_index: layer,
                dilations: set.clone(),
                alphas: alphas.clone(),
                new_dilation: d,
            });
            if last {
                kept.insert(
                    layer,
                    ParallelLayer {
                        dilations: set.clone(),
                        alphas,
                        coefficients: w.clone(),
                    },
                );
            }
        }
        if last && cfg.finalize_parallel {
            parallel = Some(ParallelStructure {
                parallel: kept,
                kernel_sizes: kernel_sizes.to_vec(),
                pmf: cfg.pmf,
            });
        }
        genome = next;
    }
    Ok(LocalSearchOutcome {
        genome,
        parallel,
        trajectory,
    })
}
