//! Search space, dilation genomes and receptive-field accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradually sparse candidate set `{k^0, k^1, ..., k^T}`, clamped to a cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    k: usize,
    max_exponent: u32,
    cap: usize,
    candidates: Vec<usize>,
}

impl SearchSpace {
    pub fn build(k: usize, max_exponent: u32, cap: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!(
                "sparsity controller k must be >= 2, got {k}"
            )));
        }
        if cap < 1 {
            return Err(Error::invalid("dilation cap must be >= 1"));
        }
        let mut candidates: Vec<usize> = Vec::with_capacity(max_exponent as usize + 1);
        for i in 0..=max_exponent {
            let d = k.checked_pow(i).unwrap_or(usize::MAX).min(cap);
            if candidates.last() != Some(&d) {
                candidates.push(d);
            }
        }
        Ok(Self {
            k,
            max_exponent,
            cap,
            candidates,
        })
    }

    /// An explicit candidate list, used by tests and by hand-written experiment configs.
    pub fn from_candidates(mut candidates: Vec<usize>) -> Result<Self> {
        candidates.sort_unstable();
        candidates.dedup();
        if candidates.is_empty() || candidates[0] == 0 {
            return Err(Error::invalid(
                "candidate dilations must be non-empty and >= 1",
            ));
        }
        let cap = *candidates.last().unwrap();
        Ok(Self {
            k: 0,
            max_exponent: 0,
            cap,
            candidates,
        })
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, d: usize) -> bool {
        self.candidates.binary_search(&d).is_ok()
    }

    /// Number of genomes of length `layers`, as a float to survive overflow.
    pub fn size(&self, layers: usize) -> f64 {
        (self.candidates.len() as f64).powi(layers as i32)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.candidates[rng.gen_range(0..self.candidates.len())]
    }
}

pub fn build_space(k: usize, max_exponent: u32, cap: usize) -> Result<SearchSpace> {
    SearchSpace::build(k, max_exponent, cap)
}

/// Per-layer dilation rates of the searched convolutions.
///
/// `layer_map[i]` is the network layer index that gene `i` binds to. Ordering
/// and equality look at the dilations only; the map is bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DilationGenome {
    dilations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    layer_map: Vec<usize>,
}

impl PartialEq for DilationGenome {
    fn eq(&self, other: &Self) -> bool {
        self.dilations == other.dilations
    }
}

impl Eq for DilationGenome {}

impl std::hash::Hash for DilationGenome {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.dilations.hash(state);
    }
}

impl PartialOrd for DilationGenome {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DilationGenome {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dilations.cmp(&other.dilations)
    }
}

impl DilationGenome {
    pub fn new(dilations: Vec<usize>) -> Result<Self> {
        if dilations.is_empty() {
            return Err(Error::invalid("genome must have at least one gene"));
        }
        if dilations.contains(&0) {
            return Err(Error::invalid("dilations must be >= 1"));
        }
        let layer_map = (0..dilations.len()).collect();
        Ok(Self {
            dilations,
            layer_map,
        })
    }

    pub fn with_layer_map(mut self, layer_map: Vec<usize>) -> Result<Self> {
        if layer_map.len() != self.dilations.len() {
            return Err(Error::invalid(
                "layer map length must equal the genome length",
            ));
        }
        self.layer_map = layer_map;
        Ok(self)
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    pub fn layer_map(&self) -> &[usize] {
        &self.layer_map
    }

    pub fn len(&self) -> usize {
        self.dilations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dilations.is_empty()
    }

    pub(crate) fn set(&mut self, i: usize, d: usize) {
        debug_assert!(d >= 1);
        self.dilations[i] = d;
    }

    pub fn is_valid_for(&self, cap: usize) -> bool {
        !self.dilations.is_empty() && self.dilations.iter().all(|&d| d >= 1 && d <= cap)
    }
}

impl fmt::Display for DilationGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dilations.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses the `d1,d2,...,dL` form.
impl FromStr for DilationGenome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dilations = s
            .split(',')
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| {
                    Error::invalid(format!("bad dilation {p:?} in genome string {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DilationGenome::new(dilations)
    }
}

pub fn random_genome<R: Rng + ?Sized>(
    space: &SearchSpace,
    layers: usize,
    rng: &mut R,
) -> DilationGenome {
    let dilations = (0..layers).map(|_| space.sample(rng)).collect();
    DilationGenome {
        dilations,
        layer_map: (0..layers).collect(),
    }
}

/// Causal receptive field of the stacked layers: `1 + sum (k_l - 1) * d_l`.
pub fn receptive_field(genome: &DilationGenome, kernel_sizes: &[usize]) -> Result<usize> {
    if kernel_sizes.len() != genome.len() {
        return Err(Error::invalid(format!(
            "{} kernel sizes for a genome of length {}",
            kernel_sizes.len(),
            genome.len()
        )));
    }
    Ok(1 + genome
        .dilations
        .iter()
        .zip(kernel_sizes)
        .map(|(&d, &k)| k.saturating_sub(1) * d)
        .sum::<usize>())
}

/// Outcome of evaluating one genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub genome: DilationGenome,
    pub fitness: f64,
    pub epochs_trained: usize,
    pub seed: u64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// On-disk genome artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenomeFile {
    pub dilations: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub fitness: Option<f64>,
    pub seed: Option<u64>,
}

impl GenomeFile {
    pub fn new(
        genome: &DilationGenome,
        kernel_sizes: &[usize],
        fitness: Option<f64>,
        seed: Option<u64>,
    ) -> Self {
        Self {
            dilations: genome.dilations.clone(),
            kernel_sizes: kernel_sizes.to_vec(),
            fitness,
            seed,
        }
    }

    pub fn genome(&self) -> Result<DilationGenome> {
        if !self.kernel_sizes.is_empty() && self.kernel_sizes.len() != self.dilations.len() {
            return Err(Error::invalid(
                "genome file has mismatched dilations and kernel_sizes",
            ));
        }
        DilationGenome::new(self.dilations.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
