//! Genetic global search over coarse dilation combinations.
//!
//! One generation: fitness-proportional parent selection, segment crossover
//! on consecutive parent pairs, sparse mutation, early-stopped evaluation of
//! the new genomes, then truncation of parents + offspring to the best `M`.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{random_genome, DilationGenome, EvalRecord, SearchSpace};
use crate::rng::{derive_rng, derive_seed};

/// Fitness recorded for candidates whose evaluation failed or diverged.
pub const WORST_FITNESS: f64 = f64::MIN;

const SHIFT_EPSILON: f64 = 1e-9;

/// Result of one candidate evaluation, before it is wrapped into an [`EvalRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl Evaluation {
    pub fn new(fitness: f64) -> Self {
        Self {
            fitness,
            metrics: BTreeMap::new(),
        }
    }
}

/// Candidate scorer: trains (or emulates training of) a genome for `epochs`.
pub trait FitnessEvaluator: Sync {
    fn evaluate(&self, genome: &DilationGenome, epochs: usize, seed: u64) -> Result<Evaluation>;
}

impl<F> FitnessEvaluator for F
where
    F: Fn(&DilationGenome) -> f64 + Sync,
{
    fn evaluate(&self, genome: &DilationGenome, _epochs: usize, _seed: u64) -> Result<Evaluation> {
        Ok(Evaluation::new(self(genome)))
    }
}

fn worst_record(genome: &DilationGenome, epochs: usize, seed: u64, flag: &str) -> EvalRecord {
    let mut metrics = BTreeMap::new();
    metrics.insert(flag.to_string(), 1.0);
    EvalRecord {
        genome: genome.clone(),
        fitness: WORST_FITNESS,
        epochs_trained: epochs,
        seed,
        metrics,
    }
}

/// Early-stopped evaluation. Divergence becomes a worst-fitness record flagged `diverged`.
pub fn evaluate<E: FitnessEvaluator + ?Sized>(
    genome: &DilationGenome,
    evaluator: &E,
    epochs: usize,
    seed: u64,
) -> Result<EvalRecord> {
    if epochs == 0 {
        return Err(Error::invalid("early-stop epochs must be >= 1"));
    }
    match evaluator.evaluate(genome, epochs, seed) {
        Ok(e) if e.fitness.is_finite() => Ok(EvalRecord {
            genome: genome.clone(),
            fitness: e.fitness,
            epochs_trained: epochs,
            seed,
            metrics: e.metrics,
        }),
        Ok(_) | Err(Error::TrainingDiverged(_)) => {
            Ok(worst_record(genome, epochs, seed, "diverged"))
        }
        Err(e) => Err(e),
    }
}

/// Crossover probabilities proportional to fitness.
///
/// Non-positive fitness is shifted: `E' = E - min(E) + 1e-9`. Worst-fitness
/// sentinels are left out of the shift and get zero weight, unless every
/// member is a sentinel (then the result is uniform).
pub fn selection_probabilities(fitness: &[f64]) -> Result<Vec<f64>> {
    if fitness.is_empty() {
        return Err(Error::invalid("empty population"));
    }
    if fitness.iter().any(|f| f.is_nan()) {
        return Err(Error::invalid("fitness values must not be NaN"));
    }
    let live = |f: f64| f > WORST_FITNESS && f.is_finite();
    let uniform = || vec![1.0 / fitness.len() as f64; fitness.len()];
    if !fitness.iter().any(|&f| live(f)) {
        return Ok(uniform());
    }
    let min = fitness
        .iter()
        .copied()
        .filter(|&f| live(f))
        .fold(f64::INFINITY, f64::min);
    let shift = min <= 0.0;
    let weights: Vec<f64> = fitness
        .iter()
        .map(|&f| match (live(f), shift) {
            (false, _) => 0.0,
            (true, true) => f - min + SHIFT_EPSILON,
            (true, false) => f,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Ok(uniform());
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Swaps genes `[u, v)` between two parents.
pub fn crossover_at(
    a: &DilationGenome,
    b: &DilationGenome,
    u: usize,
    v: usize,
) -> (DilationGenome, DilationGenome) {
    let (mut x, mut y) = (a.clone(), b.clone());
    for i in u..v {
        x.set(i, b.dilations()[i]);
        y.set(i, a.dilations()[i]);
    }
    (x, y)
}

/// Segment crossover with anchors `u < v`, the pair drawn uniformly from `{0, ..., L}`.
/// A single-gene genome has only the whole-genome segment.
pub fn crossover_segments<R: Rng + ?Sized>(
    a: &DilationGenome,
    b: &DilationGenome,
    rng: &mut R,
) -> Result<(DilationGenome, DilationGenome)> {
    if a.len() != b.len() {
        return Err(Error::invalid("crossover parents differ in length"));
    }
    let l = a.len();
    let u = rng.gen_range(0..=l);
    let mut v = rng.gen_range(0..l);
    if v >= u {
        v += 1;
    }
    Ok(crossover_at(a, b, u.min(v), u.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationMode {
    /// Resample uniformly from the whole candidate set.
    #[default]
    Uniform,
    /// Step to an adjacent candidate (one power up or down).
    Neighbor,
}

pub fn mutate<R: Rng + ?Sized>(
    g: &DilationGenome,
    space: &SearchSpace,
    p_m: f64,
    p_s: f64,
    mode: MutationMode,
    rng: &mut R,
) -> DilationGenome {
    let mut out = g.clone();
    if !rng.gen_bool(p_m.clamp(0.0, 1.0)) {
        return out;
    }
    let c = space.candidates();
    for i in 0..out.len() {
        if !rng.gen_bool(p_s.clamp(0.0, 1.0)) {
            continue;
        }
        let d = match mode {
            MutationMode::Uniform => space.sample(rng),
            MutationMode::Neighbor => {
                let at = c
                    .partition_point(|&v| v < out.dilations()[i])
                    .min(c.len() - 1);
                let lo = at.saturating_sub(1);
                let hi = (at + 1).min(c.len() - 1);
                c[rng.gen_range(lo..=hi)]
            }
        };
        out.set(i, d);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    /// Generations `N`.
    pub iterations: usize,
    /// Population size `M`.
    pub population: usize,
    pub p_m: f64,
    pub p_s: f64,
    /// Early-stop epochs `n`.
    pub epochs: usize,
    pub space: SearchSpace,
    /// Genome length `L`.
    pub layers: usize,
    pub master_seed: u64,
    pub mutation_mode: MutationMode,
    /// Extra forced-mutation passes for an offspring that repeats an
    /// already-evaluated genome; 0 keeps repeats as drawn.
    #[serde(default = "default_revisit_retries")]
    pub revisit_retries: usize,
}

fn default_revisit_retries() -> usize {
    8
}

impl GlobalConfig {
    /// Desk-scale defaults: `N = 20`, `M = 12`, `n = 3`, `p_m = p_s = 0.2`.
    pub fn desk(space: SearchSpace, layers: usize, master_seed: u64) -> Self {
        Self {
            iterations: 20,
            population: 12,
            p_m: 0.2,
            p_s: 0.2,
            epochs: 3,
            space,
            layers,
            master_seed,
            mutation_mode: MutationMode::Uniform,
            revisit_retries: default_revisit_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.population < 2 || self.epochs < 1 || self.layers < 1 {
            return Err(Error::invalid(
                "global search needs N >= 1, M >= 2, n >= 1 and L >= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.p_m) || !(0.0..=1.0).contains(&self.p_s) {
            return Err(Error::invalid("mutation probabilities must lie in [0, 1]"));
        }
        if self.space.is_empty() {
            return Err(Error::invalid("empty search space"));
        }
        Ok(())
    }

    /// Training seed shared by every candidate of a run, so equal genomes score equally.
    pub fn evaluation_seed(&self) -> u64 {
        derive_seed(self.master_seed, "evaluate", &[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: u64,
    pub record: EvalRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Member>,
    pub capacity: usize,
    pub generation: usize,
}

impl Population {
    pub fn best(&self) -> Option<&Member> {
        self.members.first()
    }

    pub fn fitness(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.record.fitness).collect()
    }
}

/// Fitness descending, then genome lexicographic ascending, then id ascending.
pub fn rank_order(a: &Member, b: &Member) -> std::cmp::Ordering {
    b.record
        .fitness
        .total_cmp(&a.record.fitness)
        .then_with(|| a.record.genome.cmp(&b.record.genome))
        .then_with(|| a.id.cmp(&b.id))
}

/// Two distinct member indices: the first by `probs`, the second by `probs`
/// restricted to the remaining members.
pub fn draw_pair<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<(usize, usize)> {
    if probs.len() < 2 {
        return Err(Error::invalid("crossover needs at least two members"));
    }
    let first = WeightedIndex::new(probs)
        .map_err(|e| Error::invalid(e.to_string()))?
        .sample(rng);
    let mut rest = probs.to_vec();
    rest[first] = 0.0;
    if rest.iter().sum::<f64>() <= 0.0 {
        rest = (0..probs.len())
            .map(|i| if i == first { 0.0 } else { 1.0 })
            .collect();
    }
    let second = WeightedIndex::new(&rest)
        .map_err(|e| Error::invalid(e.to_string()))?
        .sample(rng);
    Ok((first, second))
}

/// One row of the per-generation candidate log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    pub generation: usize,
    pub candidate_id: u64,
    pub genome: String,
    pub fitness: f64,
    pub epochs: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    /// Candidates created so far (initial population included).
    pub budget: usize,
    pub trainer_calls: usize,
    pub best_fitness: f64,
    pub best_genome: DilationGenome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSearchResult {
    pub population: Population,
    pub generations: Vec<GenerationSummary>,
    pub log: Vec<CandidateLog>,
    pub trainer_calls: usize,
}

struct Evaluated {
    record: EvalRecord,
    wall_time_s: f64,
}

fn evaluate_batch<E: FitnessEvaluator + ?Sized>(
    genomes: &[DilationGenome],
    evaluator: &E,
    cfg: &GlobalConfig,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Evaluated>> {
    let seed = cfg.evaluation_seed();
    pool.install(|| {
        genomes
            .par_iter()
            .map(|g| {
                let start = Instant::now();
                let record = evaluate(g, evaluator, cfg.epochs, seed)?;
                Ok(Evaluated {
                    record,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })
            })
            .collect()
    })
}

/// Runs the genetic search with `jobs` evaluation workers.
///
/// The result depends only on `cfg` (and the evaluator), never on `jobs`.
pub fn run_global_search<E: FitnessEvaluator + ?Sized>(
    cfg: &GlobalConfig,
    evaluator: &E,
    jobs: usize,
) -> Result<GlobalSearchResult> {
    run_global_search_with(cfg, evaluator, jobs, |_, _| {})
}

/// As [`run_global_search`], calling `on_generation` after each generation is ranked.
pub fn run_global_search_with<E, F>(
    cfg: &GlobalConfig,
    evaluator: &E,
    jobs: usize,
    mut on_generation: F,
) -> Result<GlobalSearchResult>
where
    E: FitnessEvaluator + ?Sized,
    F: FnMut(&Population, &[CandidateLog]),
{
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    let m = cfg.population;
    let mut cache: HashMap<DilationGenome, EvalRecord> = HashMap::new();
    let mut log = Vec::new();
    let mut generations = Vec::with_capacity(cfg.iterations + 1);
    let mut next_id = 0u64;

    // Scores `genomes` (candidate order), reusing cached records for repeats.
    // every cache entry is exactly one trainer invocation
    let score = |genomes: Vec<DilationGenome>,
                 generation: usize,
                 cache: &mut HashMap<DilationGenome, EvalRecord>,
                 log: &mut Vec<CandidateLog>,
                 next_id: &mut u64|
     -> Result<Vec<Member>> {
        let mut fresh: Vec<DilationGenome> = Vec::new();
        for g in &genomes {
            if !cache.contains_key(g) && !fresh.contains(g) {
                fresh.push(g.clone());
            }
        }
        let mut times: HashMap<DilationGenome, f64> = HashMap::new();
        for (g, ev) in fresh
            .iter()
            .zip(evaluate_batch(&fresh, evaluator, cfg, &pool)?)
        {
            times.insert(g.clone(), ev.wall_time_s);
            cache.insert(g.clone(), ev.record);
        }
        let members = genomes
            .into_iter()
            .map(|g| {
                let record = cache[&g].clone();
                let id = *next_id;
                *next_id += 1;
                log.push(CandidateLog {
                    generation,
                    candidate_id: id,
                    genome: g.to_string(),
                    fitness: record.fitness,
                    epochs: record.epochs_trained,
                    seed: record.seed,
                    wall_time_s: times.remove(&g).unwrap_or(0.0),
                });
                Member { id, record }
            })
            .collect::<Vec<_>>();
        Ok(members)
    };

    let mut init_rng = derive_rng(cfg.master_seed, "init_population", &[]);
    let initial: Vec<DilationGenome> = (0..m)
        .map(|_| random_genome(&cfg.space, cfg.layers, &mut init_rng))
        .collect();
    let mut members = score(initial, 0, &mut cache, &mut log, &mut next_id)?;
    members.sort_by(rank_order);
    members.truncate(m);
    let mut population = Population {
        members,
        capacity: m,
        generation: 0,
    };
    let summarize = |p: &Population, calls: usize| GenerationSummary {
        generation: p.generation,
        budget: m * (p.generation + 1),
        trainer_calls: calls,
        best_fitness: p.members[0].record.fitness,
        best_genome: p.members[0].record.genome.clone(),
    };
    generations.push(summarize(&population, cache.len()));
    on_generation(&population, &log);

    for generation in 1..=cfg.iterations {
        let mut rng = derive_rng(cfg.master_seed, "variation", &[generation as u64]);
        let probs = selection_probabilities(&population.fitness())?;
        let mut offspring = Vec::with_capacity(m + 1);
        for _ in 0..m.div_ceil(2) {
            let (i, j) = draw_pair(&probs, &mut rng)?;
            let (a, b) = crossover_segments(
                &population.members[i].record.genome,
                &population.members[j].record.genome,
                &mut rng,
            )?;
            offspring.push(a);
            offspring.push(b);
        }
        offspring.truncate(m);
        let mut batch: Vec<DilationGenome> = Vec::with_capacity(m);
        for g in &offspring {
            let mut child = mutate(g, &cfg.space, cfg.p_m, cfg.p_s, cfg.mutation_mode, &mut rng);
            for _ in 0..cfg.revisit_retries {
                if !cache.contains_key(&child) && !batch.contains(&child) {
                    break;
                }
                child = mutate(
                    &child,
                    &cfg.space,
                    1.0,
                    cfg.p_s,
                    cfg.mutation_mode,
                    &mut rng,
                );
            }
            batch.push(child);
        }
        let gen_start = log.len();
        let new_members = score(batch, generation, &mut cache, &mut log, &mut next_id)?;
        let mut pool_members = std::mem::take(&mut population.members);
        pool_members.extend(new_members);
        pool_members.sort_by(rank_order);
        pool_members.truncate(m);
        population = Population {
            members: pool_members,
            capacity: m,
            generation,
        };
        generations.push(summarize(&population, cache.len()));
        on_generation(&population, &log[gen_start..]);
    }
    Ok(GlobalSearchResult {
        population,
        generations,
        log,
        trainer_calls: cache.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::build_space;
    use crate::rng::rng_from_seed;

    fn g(v: &[usize]) -> DilationGenome {
        DilationGenome::new(v.to_vec()).unwrap()
    }

    #[test]
    fn draw_pair_never_pairs_a_member_with_itself() {
        let mut rng = rng_from_seed(3);
        let mut counts = [[0usize; 3]; 3];
        for _ in 0..30_000 {
            let (a, b) = draw_pair(&[0.5, 0.3, 0.2], &mut rng).unwrap();
            assert_ne!(a, b);
            counts[a][b] += 1;
        }
        // P(0 then 1) = 0.5 * 0.3 / 0.5
        assert!((counts[0][1] as f64 / 30_000.0 - 0.3).abs() < 0.015);
        // all mass on one member: the partner is uniform over the rest
        let (a, b) = draw_pair(&[1.0, 0.0, 0.0], &mut rng).unwrap();
        assert_eq!(a, 0);
        assert!(b == 1 || b == 2);
        assert!(draw_pair(&[1.0], &mut rng).is_err());
    }

    #[test]
    fn crossover_anchors_are_strict_and_cover_every_segment() {
        let a = g(&[1, 1, 1]);
        let b = g(&[2, 2, 2]);
        let mut rng = rng_from_seed(4);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            let (x, _) = crossover_segments(&a, &b, &mut rng).unwrap();
            assert_ne!(x, a, "u == v would clone the parent");
            seen.insert(x.dilations().to_vec());
        }
        // the 6 pairs u < v in {0..3} give 6 distinct children
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn selection_examples() {
        let p = selection_probabilities(&[0.2, 0.3, 0.5]).unwrap();
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = selection_probabilities(&[4.0, 4.0, 4.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let p = selection_probabilities(&[-1.0, 0.0, 1.0]).unwrap();
        let total = 3.0 + 3.0 * SHIFT_EPSILON;
        let expected = [
            SHIFT_EPSILON / total,
            (1.0 + SHIFT_EPSILON) / total,
            (2.0 + SHIFT_EPSILON) / total,
        ];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = selection_probabilities(&[-3.0, -3.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn sentinels_get_no_weight() {
        let p = selection_probabilities(&[WORST_FITNESS, 0.5, 0.5]).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-12);
        let p = selection_probabilities(&[WORST_FITNESS, WORST_FITNESS]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(selection_probabilities(&[]).is_err());
    }

    #[test]
    fn crossover_examples() {
        let (x, y) = crossover_at(&g(&[1; 5]), &g(&[4; 5]), 1, 4);
        assert_eq!(x.dilations(), &[1, 4, 4, 4, 1]);
        assert_eq!(y.dilations(), &[4, 1, 1, 1, 4]);
        let a = g(&[2, 8, 16]);
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let (x, y) = crossover_segments(&a, &a, &mut rng).unwrap();
            assert_eq!((x, y), (a.clone(), a.clone()));
        }
        assert!(crossover_segments(&a, &g(&[1]), &mut rng).is_err());
    }

    #[test]
    fn mutation_edge_cases() {
        let space = build_space(2, 4, 16).unwrap();
        let one = build_space(2, 0, 16).unwrap();
        let mut rng = rng_from_seed(5);
        let a = g(&[2, 8, 16, 1]);
        for _ in 0..100 {
            assert_eq!(
                mutate(&a, &space, 0.0, 1.0, MutationMode::Uniform, &mut rng),
                a
            );
        }
        assert_eq!(
            mutate(&a, &one, 1.0, 1.0, MutationMode::Uniform, &mut rng).dilations(),
            &[1; 4]
        );
        for _ in 0..200 {
            let m = mutate(&a, &space, 1.0, 1.0, MutationMode::Neighbor, &mut rng);
            for (old, new) in a.dilations().iter().zip(m.dilations()) {
                let (i, j) = (old.trailing_zeros() as i32, new.trailing_zeros() as i32);
                assert!((i - j).abs() <= 1);
            }
        }
    }

    #[test]
    fn evaluate_absorbs_divergence() {
        struct Diverges;
        impl FitnessEvaluator for Diverges {
            fn evaluate(&self, _: &DilationGenome, _: usize, _: u64) -> Result<Evaluation> {
                Err(Error::TrainingDiverged("nan".into()))
            }
        }
        let r = evaluate(&g(&[1]), &Diverges, 3, 0).unwrap();
        assert_eq!(r.fitness, WORST_FITNESS);
        assert_eq!(r.metrics.get("diverged"), Some(&1.0));
        let nan = |_: &DilationGenome| f64::NAN;
        assert_eq!(
            evaluate(&g(&[1]), &nan, 1, 0).unwrap().fitness,
            WORST_FITNESS
        );
        assert!(evaluate(&g(&[1]), &nan, 0, 0).is_err());
    }

    #[test]
    fn singleton_space_run() {
        let space = build_space(2, 0, 8).unwrap();
        let cfg = GlobalConfig {
            iterations: 1,
            population: 2,
            ..GlobalConfig::desk(space, 3, 0)
        };
        let f = |_: &DilationGenome| 1.0;
        let r = run_global_search(&cfg, &f, 1).unwrap();
        assert_eq!(r.population.members.len(), 2);
        assert!(r
            .population
            .members
            .iter()
            .all(|m| m.record.genome.dilations() == [1, 1, 1]));
        assert_eq!(r.trainer_calls, 1);
    }
}
