use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scenario::{generate_synthetic, SynthesisParams};

fn batch() -> Vec<Scenario> {
    let params = SynthesisParams {
        job_count: 12,
        ..SynthesisParams::default()
    };
    (0..2).map(|s| generate_synthetic(&params, 100 + s).unwrap()).collect()
}

fn small_config(generations: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        population_size: 6,
        elite_count: 2,
        ..TrainingConfig::new(batch(), generations, seed)
    }
}

#[test]
fn evaluate_candidate_is_mean_fitness() {
    let b = batch();
    let w = WeightVector::default();
    let engine = EngineConfig::default();
    let objective = Objective::default();
    let expected: f64 = b
        .iter()
        .map(|s| fitness(&run(s, &mut Builtin::Weighted(w), &engine).unwrap().report, &objective))
        .sum::<f64>()
        / 2.0;
    assert_eq!(evaluate_candidate(&w, &b, &objective, &engine).unwrap(), expected);
    assert!(evaluate_candidate(&w, &[], &objective, &engine).is_err());
}

#[test]
fn mutation_with_zero_sigma_is_identity() {
    let w = WeightVector::new(0.1, 0.2, 0.3, 0.4, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(mutate_weights(&w, 0.0, &mut rng), w);
}

#[test]
fn mutation_is_deterministic_per_stream() {
    let w = WeightVector::default();
    let a = mutate_weights(&w, 0.2, &mut rng::stream(9, &[1, 2]));
    let b = mutate_weights(&w, 0.2, &mut rng::stream(9, &[1, 2]));
    let c = mutate_weights(&w, 0.2, &mut rng::stream(9, &[1, 3]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn mutation_saturates_at_the_bounds() {
    let w = WeightVector::new(0.95, 0.95, 0.05, 0.05, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hit_top = false;
    let mut hit_bottom = false;
    for _ in 0..200 {
        let m = mutate_weights(&w, 0.3, &mut rng).to_array();
        hit_top |= m[0] == 1.0 || m[1] == 1.0;
        hit_bottom |= m[2] == 0.0 || m[3] == 0.0;
    }
    assert!(hit_top && hit_bottom);
}

proptest! {
    #[test]
    fn mutation_stays_in_unit_box(
        w in proptest::array::uniform5(0.0f64..=1.0),
        sigma in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let m = mutate_weights(&WeightVector::from_array(w), sigma, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(m.is_valid());
    }
}

#[test]
fn zero_generations_evaluate_only_the_initial_population() {
    let cfg = small_config(0, 4);
    let r = train_population(&cfg).unwrap();
    assert_eq!(r.history.len(), 1);
    assert_eq!(r.evaluations, 6);
    assert_eq!(r.best_fitness, r.history[0].best);
}

#[test]
fn elitism_and_evaluation_count() {
    let cfg = small_config(3, 4);
    let r = train_population(&cfg).unwrap();
    assert_eq!(r.history.len(), 4);
    // P initial evaluations, then P − μ fresh children per generation.
    assert_eq!(r.evaluations, 6 + 3 * 4);
    for pair in r.history.windows(2) {
        assert!(pair[1].best >= pair[0].best);
    }
    for g in &r.history {
        assert!(g.worst <= g.mean && g.mean <= g.best);
    }
    let recheck = evaluate_candidate(&r.best, &cfg.batch, &cfg.objective, &cfg.engine).unwrap();
    assert_eq!(recheck, r.best_fitness);
}

#[test]
fn serial_and_parallel_agree() {
    let mut serial = small_config(2, 8);
    serial.parallel = false;
    let mut parallel = serial.clone();
    parallel.parallel = true;
    assert_eq!(train_population(&serial).unwrap(), train_population(&parallel).unwrap());
}

#[test]
fn same_seed_same_result() {
    let cfg = small_config(2, 21);
    assert_eq!(train_population(&cfg).unwrap(), train_population(&cfg).unwrap());
    let other = train_population(&small_config(2, 22)).unwrap();
    assert_ne!(train_population(&cfg).unwrap().history[0], other.history[0]);
}

#[test]
fn warm_start_is_never_lost() {
    let mut cfg = small_config(1, 5);
    let warm = WeightVector::new(1.0, 0.0, 0.0, 0.0, 1.0);
    cfg.warm_start = Some(warm);
    let warm_fitness = evaluate_candidate(&warm, &cfg.batch, &cfg.objective, &cfg.engine).unwrap();
    let r = train_population(&cfg).unwrap();
    assert!(r.best_fitness >= warm_fitness);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config(1, 1);
    let cases = [
        TrainingConfig { elite_count: 0, ..base.clone() },
        TrainingConfig { elite_count: 7, ..base.clone() },
        TrainingConfig { mutation_sigma: -1.0, ..base.clone() },
        TrainingConfig { batch: vec![], ..base.clone() },
        TrainingConfig { warm_start: Some(WeightVector::new(2.0, 0.0, 0.0, 0.0, 0.0)), ..base.clone() },
    ];
    for cfg in cases {
        assert!(matches!(train_population(&cfg), Err(TrainingError::InvalidConfig(_))));
    }
}

#[test]
fn document_round_trips_without_scenarios() {
    let cfg = small_config(0, 2);
    let r = train_population(&cfg).unwrap();
    let doc = TrainingDocument::new(r, cfg.clone());
    let text = serde_json::to_string(&doc).unwrap();
    let back: TrainingDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(back.best, doc.best);
    assert_eq!(back.history, doc.history);
    assert_eq!(back.config.batch_names, cfg.batch_names);
    assert!(back.config.batch.is_empty());
}
