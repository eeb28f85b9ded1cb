//! Ground truth for the search stages: a closed-form surrogate fitness,
//! exhaustive ranking of small spaces, and a random-search baseline.

use crate::error::{Error, Result};
use crate::genome::{random_genome, DilationGenome, SearchSpace};
use crate::globalsearch::FitnessEvaluator;
use crate::rng::derive_rng;

/// Largest space `exhaustive_rank` will enumerate.
pub const EXHAUSTIVE_LIMIT: usize = 1_000_000;

/// Negative squared distance to a hidden genome in log2-dilation space.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFitness {
    target: Vec<f64>,
    decoy: Option<(Vec<f64>, f64)>,
}

impl SurrogateFitness {
    pub fn new(hidden_target: &DilationGenome) -> Self {
        Self {
            target: log2_all(hidden_target),
            decoy: None,
        }
    }

    /// Adds a local optimum at `decoy` whose peak sits `penalty` below the
    /// global one.
    pub fn deceptive(
        hidden_target: &DilationGenome,
        decoy: &DilationGenome,
        penalty: f64,
    ) -> Result<Self> {
        if decoy.len() != hidden_target.len() {
            return Err(Error::invalid("decoy and target must have the same length"));
        }
        if !(penalty > 0.0 && penalty.is_finite()) {
            return Err(Error::invalid("decoy penalty must be positive"));
        }
        Ok(Self {
            target: log2_all(hidden_target),
            decoy: Some((log2_all(decoy), penalty)),
        })
    }

    pub fn layers(&self) -> usize {
        self.target.len()
    }

    pub fn fitness(&self, g: &DilationGenome) -> f64 {
        assert_eq!(
            g.len(),
            self.target.len(),
            "genome length does not match the surrogate"
        );
        // adding 0.0 turns -0.0 into 0.0
        let main = 0.0 - sq_dist(g, &self.target);
        match &self.decoy {
            Some((decoy, penalty)) => main.max(-penalty - sq_dist(g, decoy)),
            None => main,
        }
    }
}

impl FitnessEvaluator for SurrogateFitness {
    fn evaluate(
        &self,
        genome: &DilationGenome,
        _epochs: usize,
        _seed: u64,
    ) -> Result<crate::globalsearch::Evaluation> {
        if genome.len() != self.target.len() {
            return Err(Error::invalid(format!(
                "genome has {} genes, surrogate expects {}",
                genome.len(),
                self.target.len()
            )));
        }
        Ok(crate::globalsearch::Evaluation::new(self.fitness(genome)))
    }
}

fn log2_all(g: &DilationGenome) -> Vec<f64> {
    g.dilations().iter().map(|&d| (d as f64).log2()).collect()
}

fn sq_dist(g: &DilationGenome, logs: &[f64]) -> f64 {
    g.dilations()
        .iter()
        .zip(logs)
        .map(|(&d, &t)| {
            let e = (d as f64).log2() - t;
            e * e
        })
        .sum()
}

/// Every genome of `space^layers` in lexicographic order of candidate index.
pub fn enumerate_genomes(space: &SearchSpace, layers: usize) -> Result<Vec<DilationGenome>> {
    if layers == 0 {
        return Err(Error::invalid("genome length must be >= 1"));
    }
    let size = space.size(layers);
    if size > EXHAUSTIVE_LIMIT as f64 {
        return Err(Error::SpaceTooLarge {
            size,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let c = space.candidates();
    let mut idx = vec![0usize; layers];
    let mut out = Vec::with_capacity(size as usize);
    loop {
        out.push(DilationGenome::new(idx.iter().map(|&i| c[i]).collect())?);
        let mut pos = layers;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < c.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Full enumeration sorted by fitness descending, ties by genome ascending.
pub fn exhaustive_rank<F: Fn(&DilationGenome) -> f64>(
    space: &SearchSpace,
    layers: usize,
    fitness: F,
) -> Result<Vec<(DilationGenome, f64)>> {
    let mut ranked: Vec<(DilationGenome, f64)> = enumerate_genomes(space, layers)?
        .into_iter()
        .map(|g| {
            let f = fitness(&g);
            (g, f)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub best_genome: DilationGenome,
    pub best_fitness: f64,
    /// Running best after each evaluation.
    pub trajectory: Vec<f64>,
}

fn trace<I: IntoIterator<Item = DilationGenome>, F: Fn(&DilationGenome) -> f64>(
    genomes: I,
    fitness: F,
) -> Option<SearchTrace> {
    let mut best: Option<(DilationGenome, f64)> = None;
    let mut trajectory = Vec::new();
    for g in genomes {
        let f = fitness(&g);
        let better = match &best {
            None => true,
            Some((bg, bf)) => f > *bf || (f == *bf && g < *bg),
        };
        if better {
            best = Some((g, f));
        }
        trajectory.push(best.as_ref().map(|b| b.1).unwrap_or(f));
    }
    best.map(|(best_genome, best_fitness)| SearchTrace {
        best_genome,
        best_fitness,
        trajectory,
    })
}

/// `budget` i.i.d. uniform genomes.
pub fn random_search<F: Fn(&DilationGenome) -> f64>(
    space: &SearchSpace,
    layers: usize,
    budget: usize,
    fitness: F,
    seed: u64,
) -> Result<SearchTrace> {
    if budget == 0 || layers == 0 {
        return Err(Error::invalid(
            "random search needs budget >= 1 and layers >= 1",
        ));
    }
    let mut rng = derive_rng(seed, "random_search", &[]);
    let genomes: Vec<DilationGenome> = (0..budget)
        .map(|_| random_genome(space, layers, &mut rng))
        .collect();
    trace(genomes, fitness).ok_or_else(|| Error::invalid("empty search"))
}

/// Seedless variant: visits the first `budget` genomes of the enumeration.
pub fn enumeration_search<F: Fn(&DilationGenome) -> f64>(
    space: &SearchSpace,
    layers: usize,
    budget: usize,
    fitness: F,
) -> Result<SearchTrace> {
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    let all = enumerate_genomes(space, layers)?;
    trace(all.into_iter().take(budget), fitness).ok_or_else(|| Error::invalid("empty search"))
}

/// Hidden target drawn uniformly from the space.
pub fn random_target(space: &SearchSpace, layers: usize, seed: u64) -> DilationGenome {
    let mut rng = derive_rng(seed, "surrogate.target", &[]);
    random_genome(space, layers, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::build_space;

    fn g(v: &[usize]) -> DilationGenome {
        DilationGenome::new(v.to_vec()).unwrap()
    }

    #[test]
    fn surrogate_peaks_at_target() {
        let s = SurrogateFitness::new(&g(&[2, 4, 1]));
        assert_eq!(s.fitness(&g(&[2, 4, 1])), 0.0);
        assert_eq!(s.fitness(&g(&[1, 4, 1])), -1.0);
        assert_eq!(s.fitness(&g(&[4, 1, 4])), -1.0 - 4.0 - 4.0);
    }

    #[test]
    fn deceptive_has_local_optimum() {
        let s = SurrogateFitness::deceptive(&g(&[1, 1]), &g(&[16, 16]), 1.0).unwrap();
        assert_eq!(s.fitness(&g(&[1, 1])), 0.0);
        assert_eq!(s.fitness(&g(&[16, 16])), -1.0);
        // neighbours of the decoy are worse than the decoy
        assert!(s.fitness(&g(&[8, 16])) < -1.0);
        assert!(s.fitness(&g(&[16, 8])) < -1.0);
    }

    #[test]
    fn singleton_space_ranks_one_genome() {
        let space = build_space(2, 0, 1).unwrap();
        let r = exhaustive_rank(&space, 3, |_| 0.0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, g(&[1, 1, 1]));
    }

    #[test]
    fn ranking_is_a_permutation_topped_by_target() {
        let space = build_space(2, 2, 1024).unwrap();
        let target = g(&[4, 1, 2]);
        let s = SurrogateFitness::new(&target);
        let r = exhaustive_rank(&space, 3, |x| s.fitness(x)).unwrap();
        assert_eq!(r.len(), 27);
        assert_eq!(r[0].0, target);
        let mut seen: Vec<_> = r.iter().map(|x| x.0.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 27);
        assert!(r.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn too_large_space_is_refused() {
        let space = build_space(2, 10, 1024).unwrap();
        match exhaustive_rank(&space, 8, |_| 0.0) {
            Err(Error::SpaceTooLarge { size, .. }) => assert_eq!(size, 11f64.powi(8)),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn random_search_budget_and_coverage() {
        let space = build_space(2, 2, 1024).unwrap();
        let s = SurrogateFitness::new(&g(&[4, 4, 4]));
        let one = random_search(&space, 3, 1, |x| s.fitness(x), 7).unwrap();
        assert_eq!(one.trajectory.len(), 1);
        let full = enumeration_search(&space, 3, 27, |x| s.fitness(x)).unwrap();
        assert_eq!(full.best_genome, g(&[4, 4, 4]));
        assert_eq!(full.best_fitness, 0.0);
        let r = random_search(&space, 3, 50, |x| s.fitness(x), 3).unwrap();
        assert!(r.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(
            r,
            random_search(&space, 3, 50, |x| s.fitness(x), 3).unwrap()
        );
    }

    #[test]
    fn random_search_hit_rate_matches_closed_form() {
        // P(optimum among 27 uniform draws from 27 genomes) = 1 - (26/27)^27
        let space = build_space(2, 2, 1024).unwrap();
        let s = SurrogateFitness::new(&g(&[1, 2, 4]));
        let reps = 10_000;
        let hits = (0..reps)
            .filter(|&seed| {
                random_search(&space, 3, 27, |x| s.fitness(x), seed)
                    .unwrap()
                    .best_fitness
                    == 0.0
            })
            .count();
        let p = 1.0 - (26.0f64 / 27.0).powi(27);
        let rate = hits as f64 / reps as f64;
        // 4 binomial standard deviations
        let tol = 4.0 * (p * (1.0 - p) / reps as f64).sqrt();
        assert!((rate - p).abs() < tol, "rate {rate} vs {p}");
    }
}
