//! Population-based tuning of [`WeightVector`] schedulers.
//!
//! Each generation is evaluated (optionally in parallel), sorted by
//! fitness with ties broken by the weights themselves, truncated to the
//! elites, and refilled with Gaussian mutations of the elites taken
//! round-robin. Every random draw comes from a stream keyed by
//! `(seed, generation, slot)`, so results do not depend on evaluation order.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{fitness, run, EngineConfig, EngineError, Objective};
use crate::rng;
use crate::scenario::Scenario;
use crate::scheduler::{Builtin, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub population_size: usize,
    pub elite_count: usize,
    pub generations: usize,
    pub mutation_sigma: f64,
    pub sigma_decay: f64,
    pub objective: Objective,
    pub seed: u64,
    pub engine: EngineConfig,
    /// Evaluate candidates on the rayon pool.
    pub parallel: bool,
    /// Seeds slot 0 of generation 0, e.g. from an earlier result.
    pub warm_start: Option<WeightVector>,
    /// Names of the scenarios in `batch`, kept in saved results.
    pub batch_names: Vec<String>,
    #[serde(skip)]
    pub batch: Vec<Scenario>,
}

impl TrainingConfig {
    pub fn new(batch: Vec<Scenario>, generations: usize, seed: u64) -> Self {
        Self {
            population_size: 16,
            elite_count: 4,
            generations,
            mutation_sigma: 0.1,
            sigma_decay: 0.95,
            objective: Objective::default(),
            seed,
            engine: EngineConfig::default(),
            parallel: true,
            warm_start: None,
            batch_names: batch.iter().map(|s| s.name.clone()).collect(),
            batch,
        }
    }

    pub fn check(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if self.elite_count == 0 || self.elite_count > self.population_size {
            return bad("need 1 <= elite_count <= population_size");
        }
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma >= 0.0) {
            return bad("mutation_sigma must be >= 0");
        }
        if !(self.sigma_decay.is_finite() && self.sigma_decay >= 0.0) {
            return bad("sigma_decay must be >= 0");
        }
        if self.batch.is_empty() {
            return bad("scenario batch is empty");
        }
        if self.warm_start.is_some_and(|w| !w.is_valid()) {
            return bad("warm_start components must lie in [0, 1]");
        }
        let o = &self.objective;
        if [o.alpha, o.beta, o.gamma, o.delta].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("objective weights must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub best: WeightVector,
    pub best_fitness: f64,
    /// Generation 0 first; length is `generations + 1`.
    pub history: Vec<GenerationStats>,
    /// Candidate evaluations performed (elites are not re-evaluated).
    pub evaluations: u64,
}

/// Saved form of a training run: the result plus the exact config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDocument {
    pub best: WeightVector,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    pub evaluations: u64,
    pub config: TrainingConfig,
}

impl TrainingDocument {
    pub fn new(result: TrainingResult, config: TrainingConfig) -> Self {
        Self {
            best: result.best,
            best_fitness: result.best_fitness,
            history: result.history,
            evaluations: result.evaluations,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Mean fitness of the weighted scheduler over the batch.
pub fn evaluate_candidate(
    w: &WeightVector,
    batch: &[Scenario],
    objective: &Objective,
    engine: &EngineConfig,
) -> Result<f64, EngineError> {
    if batch.is_empty() {
        return Err(EngineError::InvalidConfig("empty scenario batch".into()));
    }
    let mut total = 0.0;
    for scenario in batch {
        let mut scheduler = Builtin::Weighted(*w);
        total += fitness(&run(scenario, &mut scheduler, engine)?.report, objective);
    }
    Ok(total / batch.len() as f64)
}

/// Adds N(0, σ²) noise to every component and clamps to [0, 1].
pub fn mutate_weights(w: &WeightVector, sigma: f64, rng: &mut impl Rng) -> WeightVector {
    if sigma <= 0.0 {
        return *w;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    WeightVector::from_array(w.to_array().map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)))
}

fn uniform_weights(rng: &mut impl Rng) -> WeightVector {
    WeightVector::from_array(std::array::from_fn(|_| rng.random::<f64>()))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    w: WeightVector,
    fitness: Option<f64>,
}

fn evaluate_all(pop: &mut [Candidate], cfg: &TrainingConfig) -> Result<u64, EngineError> {
    let eval = |c: &Candidate| match c.fitness {
        Some(f) => Ok((f, false)),
        None => evaluate_candidate(&c.w, &cfg.batch, &cfg.objective, &cfg.engine).map(|f| (f, true)),
    };
    let results: Vec<Result<(f64, bool), EngineError>> = if cfg.parallel {
        pop.par_iter().map(eval).collect()
    } else {
        pop.iter().map(eval).collect()
    };
    let mut fresh = 0;
    for (c, r) in pop.iter_mut().zip(results) {
        let (f, new) = r?;
        c.fitness = Some(f);
        fresh += u64::from(new);
    }
    Ok(fresh)
}

fn rank(pop: &mut [Candidate]) {
    pop.sort_by(|a, b| {
        let (fa, fb) = (a.fitness.expect("evaluated"), b.fitness.expect("evaluated"));
        fb.total_cmp(&fa).then_with(|| a.w.lexicographic_cmp(&b.w))
    });
}

fn stats(pop: &[Candidate]) -> GenerationStats {
    let f: Vec<f64> = pop.iter().map(|c| c.fitness.expect("evaluated")).collect();
    GenerationStats {
        best: f[0],
        mean: f.iter().sum::<f64>() / f.len() as f64,
        worst: f[f.len() - 1],
    }
}

pub fn train_population(cfg: &TrainingConfig) -> Result<TrainingResult, TrainingError> {
    cfg.check()?;
    let p = cfg.population_size;
    let mu = cfg.elite_count;
    let mut pop: Vec<Candidate> = (0..p)
        .map(|slot| {
            let w = match (slot, cfg.warm_start) {
                (0, Some(w)) => w,
                _ => uniform_weights(&mut rng::stream(cfg.seed, &[0, slot as u64])),
            };
            Candidate { w, fitness: None }
        })
        .collect();
    let mut evaluations = evaluate_all(&mut pop, cfg)?;
    rank(&mut pop);
    let mut history = vec![stats(&pop)];
    log::info!("generation 0: best {:.6}", history[0].best);

    let mut sigma = cfg.mutation_sigma;
    for generation in 1..=cfg.generations {
        pop.truncate(mu);
        for slot in mu..p {
            let parent = pop[(slot - mu) % mu].w;
            let mut r = rng::stream(cfg.seed, &[generation as u64, slot as u64]);
            pop.push(Candidate {
                w: mutate_weights(&parent, sigma, &mut r),
                fitness: None,
            });
        }
        evaluations += evaluate_all(&mut pop, cfg)?;
        rank(&mut pop);
        history.push(stats(&pop));
        log::info!("generation {generation}: best {:.6} (sigma {sigma:.4})", history[generation].best);
        sigma *= cfg.sigma_decay;
    }

    Ok(TrainingResult {
        best: pop[0].w,
        best_fitness: pop[0].fitness.expect("evaluated"),
        history,
        evaluations,
    })
}

#[cfg(test)]
mod tests;
