//! Receptive-field search for dilated convolutional networks.
//!
//! Two stages: a genetic [`globalsearch`] over a gradually sparse set of
//! dilation rates, followed by an expectation-guided [`localsearch`] that
//! refines each layer's dilation with a shared-weight multi-dilated layer.
//! [`tensorops`] and [`model`] provide the small training engine used to score
//! candidates, [`tasks`] the synthetic sequence problems, and [`oracle`] the
//! brute-force and random-search references.

pub mod error;
pub mod genome;
pub mod globalsearch;
pub mod localsearch;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod tasks;
pub mod tensorops;
pub mod train;

pub use error::{Error, Result};
pub use genome::{
    build_space, random_genome, receptive_field, DilationGenome, EvalRecord, GenomeFile,
    SearchSpace,
};
pub use globalsearch::{run_global_search, FitnessEvaluator, GlobalConfig, Population};
pub use localsearch::{
    run_local_search, LocalConfig, MultiDilatedLayerState, ParallelStructure, PmfKind,
};
pub use model::{HeadSpec, LayerSpec, Network, NetworkSpec};
pub use tasks::{Dataset, TaskKind, TaskSpec};
pub use tensorops::{ConvKernel, PaddingMode, SeqBatch};
pub use train::{TrainConfig, TrainedEvaluator};
