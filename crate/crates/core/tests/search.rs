//! Search operators and both search stages on closed-form fitness landscapes.

use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use rfsearch_core::genome::{build_space, random_genome, DilationGenome, SearchSpace};
use rfsearch_core::globalsearch::{
    crossover_segments, mutate, run_global_search, Evaluation, FitnessEvaluator, GlobalConfig,
    MutationMode,
};
use rfsearch_core::localsearch::{
    parallel_param_count, pmf, run_local_search, CoefficientTrainer, IterationRequest, LocalConfig,
    ParallelLayer, ParallelStructure, PmfKind,
};
use rfsearch_core::model::{HeadSpec, Network, NetworkSpec};
use rfsearch_core::oracle::{exhaustive_rank, SurrogateFitness};
use rfsearch_core::rng::rng_from_seed;
use rfsearch_core::Result;

fn g(v: &[usize]) -> DilationGenome {
    DilationGenome::new(v.to_vec()).unwrap()
}

struct Counting<'a> {
    inner: &'a SurrogateFitness,
    calls: AtomicUsize,
}

impl FitnessEvaluator for Counting<'_> {
    fn evaluate(&self, genome: &DilationGenome, _: usize, _: u64) -> Result<Evaluation> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Evaluation::new(self.inner.fitness(genome)))
    }
}

#[test]
fn crossover_preserves_per_position_multisets() {
    let space = build_space(2, 10, 1024).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..1000 {
        let a = random_genome(&space, 8, &mut rng);
        let b = random_genome(&space, 8, &mut rng);
        let (c, d) = crossover_segments(&a, &b, &mut rng).unwrap();
        for i in 0..8 {
            let mut parents = [a.dilations()[i], b.dilations()[i]];
            let mut kids = [c.dilations()[i], d.dilations()[i]];
            parents.sort_unstable();
            kids.sort_unstable();
            assert_eq!(parents, kids);
        }
    }
}

#[test]
fn mutation_changes_the_expected_fraction_of_genes() {
    let space = build_space(2, 10, 1024).unwrap();
    let mut rng = rng_from_seed(9);
    let trials = 100_000;
    let mut changed = 0usize;
    for _ in 0..trials {
        let a = random_genome(&space, 10, &mut rng);
        let m = mutate(&a, &space, 0.2, 0.2, MutationMode::Uniform, &mut rng);
        changed += a
            .dilations()
            .iter()
            .zip(m.dilations())
            .filter(|(x, y)| x != y)
            .count();
    }
    let rate = changed as f64 / (trials * 10) as f64;
    let expected = 0.2 * 0.2 * (1.0 - 1.0 / 11.0);
    assert!((rate - expected).abs() < 0.005, "rate {rate} vs {expected}");
}

#[test]
fn surrogate_evaluation_is_the_closed_form() {
    let s = SurrogateFitness::new(&g(&[4, 16]));
    let r = rfsearch_core::globalsearch::evaluate(&g(&[2, 16]), &s, 3, 0).unwrap();
    assert_eq!(r.fitness, -1.0);
    assert_eq!(r.epochs_trained, 3);
}

fn tiny_config(seed: u64) -> GlobalConfig {
    GlobalConfig {
        iterations: 10,
        population: 8,
        ..GlobalConfig::desk(build_space(2, 2, 1024).unwrap(), 3, seed)
    }
}

#[test]
fn genetic_search_finds_the_enumerated_optimum() {
    let space = build_space(2, 2, 1024).unwrap();
    let mut hits = 0;
    for seed in 0..100 {
        let target = rfsearch_core::oracle::random_target(&space, 3, seed);
        let s = SurrogateFitness::new(&target);
        let best = exhaustive_rank(&space, 3, |x| s.fitness(x)).unwrap()[0]
            .0
            .clone();
        let res = run_global_search(&tiny_config(seed), &s, 1).unwrap();
        if res.population.best().unwrap().record.genome == best {
            hits += 1;
        }
        assert!(res
            .generations
            .windows(2)
            .all(|w| w[1].best_fitness >= w[0].best_fitness));
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn global_search_is_independent_of_worker_count() {
    let space = build_space(2, 10, 1024).unwrap();
    let target = rfsearch_core::oracle::random_target(&space, 8, 3);
    let s = SurrogateFitness::new(&target);
    let cfg = GlobalConfig::desk(space, 8, 3);
    let a = run_global_search(&cfg, &s, 1).unwrap();
    let b = run_global_search(&cfg, &s, 4).unwrap();
    assert_eq!(a.population, b.population);
    assert_eq!(a.generations, b.generations);
    let strip = |r: &rfsearch_core::globalsearch::GlobalSearchResult| {
        r.log
            .iter()
            .map(|c| {
                (
                    c.generation,
                    c.candidate_id,
                    c.genome.clone(),
                    c.fitness.to_bits(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

fn small_space() -> impl Strategy<Value = SearchSpace> {
    (2usize..4, 0u32..5, 1usize..40).prop_map(|(k, t, cap)| build_space(k, t, cap).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn global_search_invariants(space in small_space(), layers in 1usize..5, m in 2usize..9, n in 1usize..6, seed in any::<u64>()) {
        let target = random_genome(&space, layers, &mut rng_from_seed(seed ^ 0xabc));
        let s = SurrogateFitness::new(&target);
        let counting = Counting { inner: &s, calls: AtomicUsize::new(0) };
        let cfg = GlobalConfig { iterations: n, population: m, ..GlobalConfig::desk(space.clone(), layers, seed) };
        let res = run_global_search(&cfg, &counting, 2).unwrap();
        prop_assert_eq!(res.population.members.len(), m);
        for member in &res.population.members {
            prop_assert_eq!(member.record.genome.len(), layers);
            prop_assert!(member.record.genome.dilations().iter().all(|d| space.contains(*d)));
            prop_assert!(member.record.fitness.is_finite());
        }
        // elitism
        prop_assert!(res.generations.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
        // one trainer call per distinct genome, one log row per created candidate
        prop_assert_eq!(res.log.len(), m * (n + 1));
        prop_assert_eq!(res.trainer_calls, counting.calls.load(Ordering::SeqCst));
        prop_assert!(res.trainer_calls <= res.log.len());
        for (i, summary) in res.generations.iter().enumerate() {
            prop_assert_eq!(summary.budget, m * (i + 1));
        }
        let again = run_global_search(&cfg, &s, 3).unwrap();
        prop_assert_eq!(&again.population, &res.population);
    }
}

/// Replaces training with a direct evaluation of `(d - best)^2` per branch.
struct Landscape {
    best: Vec<usize>,
    temperature: f64,
}

impl CoefficientTrainer for Landscape {
    fn train_iteration(&mut self, req: &IterationRequest<'_>) -> Result<Vec<Option<Vec<f64>>>> {
        Ok(req
            .sets
            .iter()
            .zip(&self.best)
            .map(|(set, &best)| {
                set.as_ref().map(|set| {
                    let loss: Vec<f64> = set
                        .iter()
                        .map(|&d| (d as f64 - best as f64).powi(2))
                        .collect();
                    let floor = loss.iter().copied().fold(f64::INFINITY, f64::min);
                    let w: Vec<f64> = loss
                        .iter()
                        .map(|l| (-(l - floor) / self.temperature).exp())
                        .collect();
                    let total: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / total).collect()
                })
            })
            .collect())
    }
}

struct Frozen;

impl CoefficientTrainer for Frozen {
    fn train_iteration(&mut self, req: &IterationRequest<'_>) -> Result<Vec<Option<Vec<f64>>>> {
        Ok(req
            .sets
            .iter()
            .map(|s| s.as_ref().map(|s| vec![req.w_init; s.len()]))
            .collect())
    }
}

#[test]
fn frozen_coefficients_keep_the_genome() {
    let start = g(&[1, 10, 100, 37]);
    let cfg = LocalConfig {
        iterations: 1,
        ..LocalConfig::default()
    };
    let out = run_local_search(&start, &[3; 4], &cfg, &mut Frozen).unwrap();
    // dilation 1 samples {1, 2}, whose uniform mean 1.5 floors back to 1
    assert_eq!(out.genome, start);
    for kind in [PmfKind::Softmax, PmfKind::Sigmoid] {
        let cfg = LocalConfig {
            iterations: 3,
            pmf: kind,
            ..LocalConfig::default()
        };
        assert_eq!(
            run_local_search(&start, &[3; 4], &cfg, &mut Frozen)
                .unwrap()
                .genome,
            start
        );
    }
}

#[test]
fn landscape_search_walks_down_to_the_minimiser() {
    let mut t = Landscape {
        best: vec![12, 50],
        temperature: 0.5,
    };
    let cfg = LocalConfig {
        iterations: 12,
        ..LocalConfig::default()
    };
    let out = run_local_search(&g(&[14, 60]), &[2, 3], &cfg, &mut t).unwrap();
    assert!(out.parallel.is_none());
    assert_eq!(out.trajectory.len(), 24);
    let first: Vec<_> = out.trajectory.iter().filter(|r| r.iteration == 1).collect();
    assert_eq!(first[0].dilations, vec![13, 14, 15]);
    assert_eq!(first[1].dilations, vec![54, 60, 66]);
    assert_eq!(out.genome.dilations()[0], 12);
    // overshoots by one, then the flooring keeps it there
    assert_eq!(out.genome.dilations()[1], 49);
}

#[test]
fn flooring_needs_nearly_all_mass_on_the_top_branch_to_move_up() {
    let mut t = Landscape {
        best: vec![12],
        temperature: 0.5,
    };
    let cfg = LocalConfig {
        iterations: 6,
        ..LocalConfig::default()
    };
    let out = run_local_search(&g(&[10]), &[2], &cfg, &mut t).unwrap();
    let last = out.trajectory.last().unwrap();
    assert!(last.alphas[2] > 0.99);
    assert_eq!(out.genome.dilations()[0], 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn one_step_never_moves_away_from_the_minimiser(d in 1usize..300, best in 1usize..300, temp in 0.05f64..200.0, frac in 0.05f64..0.5) {
        let cfg = LocalConfig { iterations: 1, delta_fraction: frac, max_dilation_cap: 1000, ..LocalConfig::default() };
        let mut t = Landscape { best: vec![best], temperature: temp };
        let out = run_local_search(&g(&[d]), &[3], &cfg, &mut t).unwrap();
        let next = out.genome.dilations()[0];
        prop_assert!(next.abs_diff(best) <= d.abs_diff(best), "{} -> {} (best {})", d, next, best);
    }
}

#[test]
fn parallel_structure_counts_one_extra_parameter_per_branch() {
    let mut t = Landscape {
        best: vec![5, 5, 5, 5, 5, 5, 5, 5],
        temperature: 2.0,
    };
    let cfg = LocalConfig {
        iterations: 2,
        finalize_parallel: true,
        ..LocalConfig::default()
    };
    let start = g(&[10, 20, 30, 40, 50, 60, 70, 80]);
    let out = run_local_search(&start, &[3; 8], &cfg, &mut t).unwrap();
    let parallel = out.parallel.unwrap();
    assert_eq!(parallel.parallel.len(), 8);
    assert!(parallel.parallel.values().all(|l| l.dilations.len() == 3));
    assert_eq!(parallel_param_count(&parallel), 24);

    // parameter-enumeration oracle on a real network, with some layers collapsed
    let spec = NetworkSpec::uniform(2, 4, 3, 4, HeadSpec::Classifier { classes: 3 });
    let layers = [vec![1usize, 2], vec![9, 10, 11], vec![4], vec![2, 3, 4, 5]];
    let structure = ParallelStructure {
        parallel: layers
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let w = vec![1.0; d.len()];
                (
                    i,
                    ParallelLayer {
                        dilations: d.clone(),
                        alphas: pmf(&w, PmfKind::AbsNormalize).unwrap(),
                        coefficients: w,
                    },
                )
            })
            .collect(),
        kernel_sizes: vec![3; 4],
        pmf: PmfKind::AbsNormalize,
    };
    let mut rng = rng_from_seed(1);
    let single = Network::new(&spec, &structure.dominant_genome().unwrap(), &mut rng).unwrap();
    let multi = structure.build_network(&spec, &mut rng).unwrap();
    assert_eq!(multi.param_count() - single.param_count(), 2 + 3 + 4);
    assert_eq!(parallel_param_count(&structure), 9);
    let none = ParallelStructure {
        parallel: [(
            0,
            ParallelLayer {
                dilations: vec![3],
                alphas: vec![1.0],
                coefficients: vec![],
            },
        )]
        .into(),
        kernel_sizes: vec![3],
        pmf: PmfKind::AbsNormalize,
    };
    assert_eq!(parallel_param_count(&none), 0);
}
