//! Experiment configuration: strict JSON with defaults echoed back.

use std::path::{Path, PathBuf};

use rfsearch_core::genome::build_space;
use rfsearch_core::globalsearch::{GlobalConfig, MutationMode};
use rfsearch_core::model::NetworkSpec;
use rfsearch_core::oracle::random_target;
use rfsearch_core::{DilationGenome, LocalConfig, SearchSpace, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: Option<TaskSpec>,
    /// Defaults to four causal kernel-3 layers of width 16 sized for the task.
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Epochs used by the `train` subcommand.
    #[serde(default = "default_train_epochs")]
    pub train_epochs: usize,
    #[serde(default)]
    pub global: Option<GlobalSection>,
    #[serde(default)]
    pub local: Option<LocalConfig>,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    /// Directory for generated datasets; regenerated when absent or stale.
    #[serde(default)]
    pub data_cache: Option<PathBuf>,
}

fn default_train_epochs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    /// Early-stopped training on the task.
    #[default]
    Trained,
    /// Closed-form fitness around a hidden genome; drawn from the space when `target` is absent.
    Surrogate {
        #[serde(default)]
        target: Option<String>,
        #[serde(default)]
        layers: Option<usize>,
        #[serde(default)]
        decoy: Option<String>,
        #[serde(default = "default_decoy_penalty")]
        decoy_penalty: f64,
    },
}

fn default_decoy_penalty() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalSection {
    pub iterations: usize,
    pub population: usize,
    pub p_m: f64,
    pub p_s: f64,
    pub epochs: usize,
    /// Candidates are `k^0 ..= k^max_exponent`, capped at `max_dilation_cap`.
    pub k: usize,
    pub max_exponent: u32,
    pub max_dilation_cap: usize,
    pub mutation_mode: MutationMode,
    pub revisit_retries: usize,
}

impl Default for GlobalSection {
    fn default() -> Self {
        let desk = GlobalConfig::desk(
            SearchSpace::from_candidates(vec![1]).expect("singleton space"),
            1,
            0,
        );
        Self {
            iterations: desk.iterations,
            population: desk.population,
            p_m: desk.p_m,
            p_s: desk.p_s,
            epochs: desk.epochs,
            k: 2,
            max_exponent: 10,
            max_dilation_cap: 1024,
            mutation_mode: desk.mutation_mode,
            revisit_retries: desk.revisit_retries,
        }
    }
}

impl GlobalSection {
    pub fn space(&self) -> Result<SearchSpace, CliError> {
        build_space(self.k, self.max_exponent, self.max_dilation_cap).map_err(CliError::usage)
    }

    pub fn to_config(&self, layers: usize, master_seed: u64) -> Result<GlobalConfig, CliError> {
        let cfg = GlobalConfig {
            iterations: self.iterations,
            population: self.population,
            p_m: self.p_m,
            p_s: self.p_s,
            epochs: self.epochs,
            space: self.space()?,
            layers,
            master_seed,
            mutation_mode: self.mutation_mode,
            revisit_retries: self.revisit_retries,
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Random-search evaluations; defaults to the global search's candidate budget.
    pub budget: Option<usize>,
    /// Rows written to `exhaustive.csv` when the space is small enough to enumerate.
    pub exhaustive_top: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            budget: None,
            exhaustive_top: 10,
        }
    }
}

fn parse_genome(s: &str, what: &str) -> Result<DilationGenome, CliError> {
    s.parse()
        .map_err(|e| CliError::Usage(format!("invalid {what} genome {s:?}: {e}")))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Fills defaults that depend on other fields and validates everything.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if self.global.is_none() && self.local.is_none() {
            return Err(CliError::Usage(
                "config needs a `global` or a `local` section".into(),
            ));
        }
        if let Some(task) = &self.task {
            task.validate().map_err(CliError::usage)?;
            if self.network.is_none() {
                self.network = Some(NetworkSpec::uniform(
                    task.input_channels(),
                    4,
                    3,
                    16,
                    task.head(),
                ));
            }
        }
        if let Some(net) = &self.network {
            net.validate().map_err(CliError::usage)?;
            if let Some(task) = &self.task {
                if net.input_channels != task.input_channels()
                    || net.head.outputs() != task.classes()
                {
                    return Err(CliError::Usage(format!(
                        "network expects {} inputs and {} outputs but the task has {} and {}",
                        net.input_channels,
                        net.head.outputs(),
                        task.input_channels(),
                        task.classes()
                    )));
                }
            }
        }
        self.train.validate().map_err(CliError::usage)?;
        if let Some(local) = &self.local {
            local.validate().map_err(CliError::usage)?;
        }
        let seed = self.master_seed;
        let global = self.global.clone();
        let network_layers = self.network.as_ref().map(|n| n.searchable_layers().len());
        match &mut self.evaluator {
            EvaluatorConfig::Trained => {
                if self.task.is_none() {
                    return Err(CliError::Usage(
                        "the trained evaluator needs a `task`".into(),
                    ));
                }
            }
            EvaluatorConfig::Surrogate {
                target,
                layers,
                decoy,
                decoy_penalty,
            } => {
                let resolved = match target {
                    Some(t) => parse_genome(t, "surrogate target")?,
                    None => {
                        let n = layers.or(network_layers).ok_or_else(|| {
                            CliError::Usage(
                                "surrogate needs `target`, `layers` or a network".into(),
                            )
                        })?;
                        let space = global.as_ref().map(|g| g.space()).transpose()?.ok_or_else(|| {
                            CliError::Usage("a random surrogate target needs a `global` section for its space".into())
                        })?;
                        random_target(&space, n, seed)
                    }
                };
                if layers.is_some_and(|n| n != resolved.len()) {
                    return Err(CliError::Usage(
                        "surrogate `layers` disagrees with `target`".into(),
                    ));
                }
                if let Some(d) = decoy {
                    if parse_genome(d, "decoy")?.len() != resolved.len() {
                        return Err(CliError::Usage("decoy and target lengths differ".into()));
                    }
                    if decoy_penalty.is_nan() || *decoy_penalty <= 0.0 {
                        return Err(CliError::Usage("decoy_penalty must be positive".into()));
                    }
                }
                *target = Some(resolved.to_string());
                *layers = Some(resolved.len());
            }
        }
        Ok(self)
    }

    pub fn network(&self) -> Result<&NetworkSpec, CliError> {
        self.network
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs a `network` or a `task`".into()))
    }

    pub fn task(&self) -> Result<&TaskSpec, CliError> {
        self.task
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs a `task`".into()))
    }

    /// Genome length seen by the global search.
    pub fn search_layers(&self) -> Result<usize, CliError> {
        match &self.evaluator {
            EvaluatorConfig::Surrogate {
                layers: Some(n), ..
            } => Ok(*n),
            _ => Ok(self.network()?.searchable_layers().len()),
        }
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.network
            .as_ref()
            .map(|n| n.searched_kernel_sizes())
            .unwrap_or_default()
    }

    pub fn surrogate(&self) -> Result<Option<rfsearch_core::oracle::SurrogateFitness>, CliError> {
        let EvaluatorConfig::Surrogate {
            target,
            decoy,
            decoy_penalty,
            ..
        } = &self.evaluator
        else {
            return Ok(None);
        };
        let target = parse_genome(target.as_deref().unwrap_or_default(), "surrogate target")?;
        Ok(Some(match decoy {
            Some(d) => rfsearch_core::oracle::SurrogateFitness::deceptive(
                &target,
                &parse_genome(d, "decoy")?,
                *decoy_penalty,
            )
            .map_err(CliError::usage)?,
            None => rfsearch_core::oracle::SurrogateFitness::new(&target),
        }))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::runtime)?;
        text.push('\n');
        std::fs::write(dir.join("config.json"), text).map_err(CliError::runtime)
    }
}
