//! Subcommand implementations. Every run writes its resolved config to the output directory.

use std::cell::RefCell;
use std::fs;
use std::path::Path;

use rfsearch_core::globalsearch::{
    evaluate, run_global_search_with, CandidateLog, FitnessEvaluator, Population, WORST_FITNESS,
};
use rfsearch_core::localsearch::{run_local_search, ParallelStructure, PmfKind, SupernetTrainer};
use rfsearch_core::oracle::{exhaustive_rank, random_search, EXHAUSTIVE_LIMIT};
use rfsearch_core::rng::derive_rng;
use rfsearch_core::tasks::{generate, read_dataset, write_dataset};
use rfsearch_core::train::{train_epochs, validate};
use rfsearch_core::{Dataset, DilationGenome, GenomeFile, Network, TrainedEvaluator};
use serde::Serialize;

use crate::config::{EvaluatorConfig, ExperimentConfig};
use crate::{CliError, RunArgs};

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    budget: usize,
    running_best_fitness: f64,
    seed: u64,
    method: &'a str,
}

#[derive(Serialize)]
struct LocalRow {
    iteration: usize,
    layer_index: usize,
    dilations: String,
    alphas: String,
    new_dilation: usize,
}

#[derive(Serialize)]
struct ExhaustiveRow {
    rank: usize,
    genome: String,
    fitness: f64,
}

#[derive(Serialize)]
struct TrainReport {
    structure: String,
    parallel: bool,
    param_count: usize,
    epochs: usize,
    seed: u64,
    val_loss: f64,
    val_accuracy: Option<f64>,
    epoch_losses: Vec<f64>,
}

fn prepare(
    run: &RunArgs,
    adjust: impl FnOnce(&mut ExperimentConfig),
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &run.output {
        cfg.output_dir = out.clone();
    }
    if run.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    adjust(&mut cfg);
    let cfg = cfg.resolve()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", cfg.output_dir.display()))
    })?;
    cfg.write_resolved(&cfg.output_dir)?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    let task = cfg.task()?;
    let Some(dir) = &cfg.data_cache else {
        return generate(task).map_err(CliError::runtime);
    };
    if let (Some(tr), Some(va)) = (
        read_dataset(dir, "train", task).map_err(CliError::runtime)?,
        read_dataset(dir, "val", task).map_err(CliError::runtime)?,
    ) {
        return Ok((tr, va));
    }
    let (tr, va) = generate(task).map_err(CliError::runtime)?;
    fs::create_dir_all(dir).map_err(CliError::runtime)?;
    write_dataset(dir, "train", task, &tr).map_err(CliError::runtime)?;
    write_dataset(dir, "val", task, &va).map_err(CliError::runtime)?;
    Ok((tr, va))
}

fn evaluator(cfg: &ExperimentConfig) -> Result<Box<dyn FitnessEvaluator>, CliError> {
    if let Some(s) = cfg.surrogate()? {
        return Ok(Box::new(s));
    }
    let (tr, va) = load_data(cfg)?;
    Ok(Box::new(TrainedEvaluator::new(
        cfg.network()?.clone(),
        tr,
        va,
        cfg.train,
    )))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn join(values: impl IntoIterator<Item = impl ToString>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn global(run: &RunArgs) -> Result<(), CliError> {
    let cfg = prepare(run, |_| {})?;
    let section = cfg
        .global
        .clone()
        .ok_or_else(|| CliError::Usage("config has no `global` section".into()))?;
    let gcfg = section.to_config(cfg.search_layers()?, cfg.master_seed)?;
    let eval = evaluator(&cfg)?;
    let out = cfg.output_dir.clone();
    let kernel_sizes = cfg.kernel_sizes();

    let mut population_csv = csv_writer(&out.join("population.csv"))?;
    let mut trajectory_csv = csv_writer(&out.join("trajectory.csv"))?;
    let mut io_error: Option<CliError> = None;
    let on_generation = |p: &Population, rows: &[CandidateLog]| {
        if io_error.is_some() {
            return;
        }
        let best = &p.members[0].record;
        let mut step = || -> Result<(), CliError> {
            for row in rows {
                population_csv.serialize(row).map_err(CliError::runtime)?;
            }
            population_csv.flush().map_err(CliError::runtime)?;
            trajectory_csv
                .serialize(TrajectoryRow {
                    budget: p.capacity * (p.generation + 1),
                    running_best_fitness: best.fitness,
                    seed: gcfg.master_seed,
                    method: "ga",
                })
                .map_err(CliError::runtime)?;
            trajectory_csv.flush().map_err(CliError::runtime)?;
            GenomeFile::new(
                &best.genome,
                &kernel_sizes,
                Some(best.fitness),
                Some(gcfg.master_seed),
            )
            .write(&out.join("best.json"))
            .map_err(CliError::runtime)
        };
        if let Err(e) = step() {
            io_error = Some(e);
        }
    };
    let result = run_global_search_with(&gcfg, eval.as_ref(), run.jobs, on_generation)
        .map_err(CliError::runtime)?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let best = &result.population.members[0].record;
    println!(
        "best genome {} fitness {} ({} candidates, {} trained) -> {}",
        best.genome,
        best.fitness,
        result.log.len(),
        result.trainer_calls,
        out.display()
    );
    Ok(())
}

enum Structure {
    Genome(DilationGenome),
    Parallel(ParallelStructure),
}

fn resolve_init(cfg: &ExperimentConfig, init: Option<&str>) -> Result<Structure, CliError> {
    let net = cfg.network()?;
    let structure = match init {
        None | Some("baseline") => {
            Structure::Genome(net.baseline_genome().map_err(CliError::usage)?)
        }
        Some(arg) => {
            let path = Path::new(arg);
            if path.is_file() {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                match GenomeFile::from_json(&text) {
                    Ok(file) => Structure::Genome(file.genome().map_err(CliError::usage)?),
                    Err(_) => Structure::Parallel(serde_json::from_str(&text).map_err(|e| {
                        CliError::Usage(format!(
                            "{} is neither a genome nor a parallel structure: {e}",
                            path.display()
                        ))
                    })?),
                }
            } else {
                Structure::Genome(arg.parse().map_err(|e| {
                    CliError::Usage(format!(
                        "--init {arg:?} is not a file, `baseline` or a genome: {e}"
                    ))
                })?)
            }
        }
    };
    let expected = net.searchable_layers().len();
    let got = match &structure {
        Structure::Genome(g) => g.len(),
        Structure::Parallel(p) => p.parallel.len(),
    };
    if got != expected {
        return Err(CliError::Usage(format!(
            "initial structure has {got} genes but the network has {expected} searchable layers"
        )));
    }
    Ok(structure)
}

fn require_trained(cfg: &ExperimentConfig, what: &str) -> Result<(), CliError> {
    match cfg.evaluator {
        EvaluatorConfig::Trained => Ok(()),
        EvaluatorConfig::Surrogate { .. } => Err(CliError::Usage(format!(
            "`{what}` needs the trained evaluator"
        ))),
    }
}

pub fn local(
    run: &RunArgs,
    init: Option<&str>,
    parallel: bool,
    pmf: Option<PmfKind>,
) -> Result<(), CliError> {
    let cfg = prepare(run, |c| {
        if let Some(local) = &mut c.local {
            local.finalize_parallel |= parallel;
            if let Some(kind) = pmf {
                local.pmf = kind;
            }
        }
    })?;
    let local = cfg
        .local
        .clone()
        .ok_or_else(|| CliError::Usage("config has no `local` section".into()))?;
    require_trained(&cfg, "local")?;
    let Structure::Genome(initial) = resolve_init(&cfg, init)? else {
        return Err(CliError::Usage(
            "local search starts from a genome, not a parallel structure".into(),
        ));
    };
    if !initial.is_valid_for(local.max_dilation_cap) {
        return Err(CliError::Usage(format!(
            "initial genome {initial} exceeds max_dilation_cap {}",
            local.max_dilation_cap
        )));
    }
    let out = cfg.output_dir.clone();
    let kernel_sizes = cfg.kernel_sizes();
    GenomeFile::new(&initial, &kernel_sizes, None, Some(cfg.master_seed))
        .write(&out.join("initial.json"))
        .map_err(CliError::runtime)?;

    let (tr, _) = load_data(&cfg)?;
    let mut trainer =
        SupernetTrainer::new(cfg.network()?, &initial, &tr, cfg.train, cfg.master_seed)
            .map_err(CliError::runtime)?;
    let outcome = run_local_search(&initial, &kernel_sizes, &local, &mut trainer)
        .map_err(CliError::runtime)?;

    let mut csv = csv_writer(&out.join("local_trajectory.csv"))?;
    for r in &outcome.trajectory {
        csv.serialize(LocalRow {
            iteration: r.iteration,
            layer_index: r.layer_index,
            dilations: join(&r.dilations),
            alphas: join(&r.alphas),
            new_dilation: r.new_dilation,
        })
        .map_err(CliError::runtime)?;
    }
    csv.flush().map_err(CliError::runtime)?;
    match &outcome.parallel {
        Some(p) => write_json(&out.join("final.json"), p)?,
        None => GenomeFile::new(&outcome.genome, &kernel_sizes, None, Some(cfg.master_seed))
            .write(&out.join("final.json"))
            .map_err(CliError::runtime)?,
    }
    println!(
        "local search {} -> {}{} -> {}",
        initial,
        outcome.genome,
        if outcome.parallel.is_some() {
            " (parallel branches kept)"
        } else {
            ""
        },
        out.display()
    );
    Ok(())
}

pub fn train(run: &RunArgs, init: Option<&str>) -> Result<(), CliError> {
    let cfg = prepare(run, |_| {})?;
    require_trained(&cfg, "train")?;
    let structure = resolve_init(&cfg, init)?;
    let spec = cfg.network()?;
    let mut init_rng = derive_rng(cfg.master_seed, "init", &[]);
    let (mut net, label, parallel) = match &structure {
        Structure::Genome(g) => (
            Network::new(spec, g, &mut init_rng).map_err(CliError::usage)?,
            g.to_string(),
            false,
        ),
        Structure::Parallel(p) => {
            let label = p
                .parallel
                .values()
                .map(|l| format!("[{}]", join(&l.dilations)))
                .collect::<Vec<_>>()
                .join(",");
            (
                p.build_network(spec, &mut init_rng)
                    .map_err(CliError::usage)?,
                label,
                true,
            )
        }
    };
    let (tr, va) = load_data(&cfg)?;
    let losses = train_epochs(
        &mut net,
        &tr,
        &cfg.train,
        cfg.train_epochs,
        &mut derive_rng(cfg.master_seed, "shuffle", &[]),
    )
    .map_err(CliError::runtime)?;
    let m = validate(&net, &va).map_err(CliError::runtime)?;
    let report = TrainReport {
        structure: label,
        parallel,
        param_count: net.param_count(),
        epochs: cfg.train_epochs,
        seed: cfg.master_seed,
        val_loss: m.loss,
        val_accuracy: m.accuracy,
        epoch_losses: losses,
    };
    write_json(&cfg.output_dir.join("train_metrics.json"), &report)?;
    println!(
        "{} ({} params): val loss {:.6}{}",
        report.structure,
        report.param_count,
        report.val_loss,
        report
            .val_accuracy
            .map(|a| format!(", val accuracy {a:.4}"))
            .unwrap_or_default()
    );
    Ok(())
}

pub fn oracle(run: &RunArgs) -> Result<(), CliError> {
    let cfg = prepare(run, |_| {})?;
    let section = cfg.global.clone().ok_or_else(|| {
        CliError::Usage("the oracle needs a `global` section for its search space".into())
    })?;
    let oracle = cfg.oracle.clone().unwrap_or_default();
    let space = section.space()?;
    let layers = cfg.search_layers()?;
    let budget = oracle
        .budget
        .unwrap_or(section.population * (section.iterations + 1));
    if budget == 0 {
        return Err(CliError::Usage("oracle budget must be >= 1".into()));
    }
    let eval = evaluator(&cfg)?;
    let eval_seed = section
        .to_config(layers, cfg.master_seed)?
        .evaluation_seed();
    let failure: RefCell<Option<String>> = RefCell::new(None);
    let fitness = |g: &DilationGenome| match evaluate(g, eval.as_ref(), section.epochs, eval_seed) {
        Ok(r) => r.fitness,
        Err(e) => {
            failure.borrow_mut().get_or_insert_with(|| e.to_string());
            WORST_FITNESS
        }
    };
    let out = &cfg.output_dir;

    let trace = random_search(&space, layers, budget, fitness, cfg.master_seed)
        .map_err(CliError::runtime)?;
    if let Some(e) = failure.take() {
        return Err(CliError::Runtime(e));
    }
    let mut csv = csv_writer(&out.join("trajectory.csv"))?;
    for (i, &best) in trace.trajectory.iter().enumerate() {
        csv.serialize(TrajectoryRow {
            budget: i + 1,
            running_best_fitness: best,
            seed: cfg.master_seed,
            method: "random",
        })
        .map_err(CliError::runtime)?;
    }
    csv.flush().map_err(CliError::runtime)?;
    GenomeFile::new(
        &trace.best_genome,
        &cfg.kernel_sizes(),
        Some(trace.best_fitness),
        Some(cfg.master_seed),
    )
    .write(&out.join("best.json"))
    .map_err(CliError::runtime)?;
    println!(
        "random search: best {} fitness {} after {budget} evaluations",
        trace.best_genome, trace.best_fitness
    );

    let surrogate = matches!(cfg.evaluator, EvaluatorConfig::Surrogate { .. });
    if surrogate && space.size(layers) <= EXHAUSTIVE_LIMIT as f64 {
        let ranked = exhaustive_rank(&space, layers, fitness).map_err(CliError::runtime)?;
        let mut csv = csv_writer(&out.join("exhaustive.csv"))?;
        for (rank, (g, f)) in ranked.iter().take(oracle.exhaustive_top).enumerate() {
            csv.serialize(ExhaustiveRow {
                rank: rank + 1,
                genome: g.to_string(),
                fitness: *f,
            })
            .map_err(CliError::runtime)?;
        }
        csv.flush().map_err(CliError::runtime)?;
        println!(
            "exhaustive optimum {} fitness {} over {} genomes",
            ranked[0].0,
            ranked[0].1,
            ranked.len()
        );
    }
    Ok(())
}
