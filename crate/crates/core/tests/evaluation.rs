mod common;

use common::*;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use varirt::baselines::{fit_mle, MleConfig};
use varirt::data::{generate_synthetic, holdout_split, GroundTruth, ResponseDataset};
use varirt::evaluation::*;
use varirt::models::{Family, GenerativeModel, ResponseKind};
use varirt::posterior::{PosteriorDraw, PosteriorSamples};
use varirt::variational::*;

fn classical(family: Family, k: usize) -> GenerativeModel {
    GenerativeModel::new(family, k, ResponseKind::Bernoulli, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn truth_probabilities(truth: &GroundTruth) -> Array2<f64> {
    let k = truth.abilities.ncols();
    let blocks = truth.items.to_blocks(truth.family).unwrap();
    point_probabilities(&classical(truth.family, k), &truth.abilities, &blocks).unwrap()
}

#[test]
fn oracle_imputation_matches_the_bayes_rate() {
    let (ds, truth) = generate_synthetic(10_000, 100, 1, Family::TwoPl, 21).unwrap();
    let (train, held) = holdout_split(&ds, 0.1, 21).unwrap();
    let p = truth_probabilities(&truth);
    let report = impute(&ds, &train, &held, &p, "oracle").unwrap();
    let q: Vec<f64> = held
        .indexed_iter()
        .filter(|(_, &h)| h)
        .map(|(ij, _)| if p[ij] >= 0.5 { p[ij] } else { 1.0 - p[ij] })
        .collect();
    let n = q.len() as f64;
    let bayes = q.iter().sum::<f64>() / n;
    let se = (q.iter().map(|x| x * (1.0 - x)).sum::<f64>()).sqrt() / n;
    assert_eq!(report.heldout, q.len());
    assert!((report.accuracy - bayes).abs() < 3.0 * se, "{} vs {bayes} (se {se})", report.accuracy);
}

#[test]
fn all_zero_predictor_is_at_chance_on_balanced_data() {
    // Difficulties are symmetric around zero, so responses are balanced.
    let (ds, _) = generate_synthetic(2000, 50, 1, Family::TwoPl, 22).unwrap();
    let (train, held) = holdout_split(&ds, 0.1, 22).unwrap();
    let zeros = Array2::zeros(ds.values.dim());
    let report = impute(&ds, &train, &held, &zeros, "zero").unwrap();
    let n = report.heldout as f64;
    assert!((report.accuracy - 0.5).abs() < 3.0 * (0.25 / n).sqrt() + 0.02, "{}", report.accuracy);
}

#[test]
fn imputation_is_deterministic() {
    let (ds, truth) = generate_synthetic(200, 20, 1, Family::TwoPl, 23).unwrap();
    let (train, held) = holdout_split(&ds, 0.1, 23).unwrap();
    let p = truth_probabilities(&truth);
    assert_eq!(impute(&ds, &train, &held, &p, "x").unwrap(), impute(&ds, &train, &held, &p, "x").unwrap());
}

#[test]
fn noisy_abilities_correlate_at_the_analytic_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let truth = Array2::from_shape_fn((10_000, 1), |_| StandardNormal.sample(&mut rng));
    let noisy = truth.mapv(|t: f64| {
        let e: f64 = StandardNormal.sample(&mut rng);
        t + 0.5 * e
    });
    let r = ability_correlation(&noisy, &truth).unwrap()[0];
    assert!((r - 1.0 / 1.25f64.sqrt()).abs() < 0.01, "{r}");
    let flipped = truth.mapv(|t| -t);
    assert!((ability_correlation(&flipped, &truth).unwrap()[0] - 1.0).abs() < 1e-12);
}

fn one_person_model(family: Family, posterior: PosteriorFamily, seed: u64) -> VariationalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = GenerativeModel::new(family, 1, ResponseKind::Bernoulli, &mut rng).unwrap();
    VariationalModel::new(model, posterior, 1, 1, &mut rng).unwrap()
}

#[test]
fn importance_sampling_recovers_the_quadrature_marginal() {
    let ds = binary_row(&[1.0]);
    let truth = single_person_log_marginal(Family::OnePl, &[1.0]);
    let cfg = TrainConfig {
        iterations: 1500,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let fit = fit_vibo(&ds, one_person_model(Family::OnePl, PosteriorFamily::Amortized, 1).model, PosteriorFamily::Amortized, &cfg).unwrap();
    let est = log_marginal_is(&fit.model, &ds, 1000, 3).unwrap();
    assert!((est.total - truth).abs() < 0.01, "{} vs {truth}", est.total);
}

#[test]
fn single_sample_estimate_averages_to_the_bound() {
    let values = ndarray::array![[1.0, 0.0, 1.0]];
    let ds = ResponseDataset::fully_observed(values, varirt::data::DataKind::Binary).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let model = GenerativeModel::new(Family::TwoPl, 1, ResponseKind::Bernoulli, &mut rng).unwrap();
    let vm = VariationalModel::new(model, PosteriorFamily::Amortized, 1, 3, &mut rng).unwrap();
    let reps = 10_000;
    let is1: Vec<f64> = (0..reps).map(|s| log_marginal_is(&vm, &ds, 1, s as u64).unwrap().total).collect();
    let bound: Vec<f64> = (0..reps).map(|_| vm.vibo_forward(&ds, 0, &mut rng).unwrap().vibo).collect();
    let (a, sa) = mean_and_se(&is1);
    let (b, sb) = mean_and_se(&bound);
    assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");

    let big: Vec<f64> = (0..200).map(|s| log_marginal_is(&vm, &ds, 1000, s as u64).unwrap().total).collect();
    assert!(mean_and_se(&big).0 >= a);
}

#[test]
fn estimate_ignores_sample_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let w: Vec<f64> = (0..1000).map(|_| 30.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng) - 400.0).collect();
    let forward = log_mean_exp(&mut w.clone()).unwrap();
    let mut rev = w.clone();
    rev.reverse();
    assert_eq!(forward, log_mean_exp(&mut rev).unwrap());
    assert!(log_mean_exp(&mut [1.0, f64::NAN]).is_err());
}

#[test]
fn dataset_estimate_is_deterministic_and_above_the_bound() {
    let (ds, _) = generate_synthetic(40, 5, 1, Family::TwoPl, 27).unwrap();
    let cfg = TrainConfig {
        iterations: 300,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let model = GenerativeModel::new(Family::TwoPl, 1, ResponseKind::Bernoulli, &mut rng).unwrap();
    let fit = fit_vibo(&ds, model, PosteriorFamily::Amortized, &cfg).unwrap();
    let a = dataset_log_marginal_is(&fit.model, &ds, 20, 20, 4).unwrap();
    assert_eq!(a, dataset_log_marginal_is(&fit.model, &ds, 20, 20, 4).unwrap());
    // Full-data bound: reconstruction and ability terms per person, item term once.
    let persons: Vec<usize> = (0..40).collect();
    let reps = 200;
    let mut bound = 0.0;
    for _ in 0..reps {
        let noise = Noise::sample(&mut rng, fit.model.item_shape(), (40, 1));
        let parts = fit.model.bound_parts(&ds, &persons, &noise).unwrap();
        bound += parts.iter().map(|p| p.recon - p.d_ability).sum::<f64>() - parts[0].d_item;
    }
    assert!(a.total >= bound / reps as f64, "{} vs {}", a.total, bound / reps as f64);
}

fn truth_samples(truth: &GroundTruth, draws: usize) -> PosteriorSamples {
    let blocks = truth.items.to_blocks(truth.family).unwrap();
    PosteriorSamples {
        family: truth.family,
        draws: vec![
            PosteriorDraw {
                abilities: truth.abilities.clone(),
                blocks,
            };
            draws
        ],
        stats: None,
    }
}

#[test]
fn self_comparison_agrees_exactly() {
    let (ds, truth) = generate_synthetic(100, 10, 1, Family::TwoPl, 28).unwrap();
    let s = truth_samples(&truth, 20);
    let model = classical(Family::TwoPl, 1);
    let ppc = posterior_predictive_check(&s, &model, &s, &model, &ds, 5).unwrap();
    assert_eq!(ppc.person_correlation, 1.0);
    assert_eq!(ppc.item_correlation, 1.0);
    assert_eq!(ppc.a.per_person.len(), 100);
    assert_eq!(ppc.a.per_item.len(), 10);
    let empty = PosteriorSamples {
        draws: vec![],
        ..s.clone()
    };
    assert!(posterior_predictive_check(&empty, &model, &s, &model, &ds, 5).is_err());
}

#[test]
fn truth_statistics_match_the_observed_data() {
    let (full, truth) = generate_synthetic(1000, 50, 1, Family::TwoPl, 29).unwrap();
    // Hide some cells to check that only observed cells are aggregated.
    let (train, _) = holdout_split(&full, 0.2, 29).unwrap();
    let ds = full.with_mask(&train).unwrap();
    let p = truth_probabilities(&truth);
    let stats = predictive_statistics(&truth_samples(&truth, 200), &classical(Family::TwoPl, 1), &ds, 6).unwrap();
    let observed = observed_statistics(&ds);
    let expected_person: Vec<f64> = (0..1000)
        .map(|i| (0..50).filter(|&j| train[[i, j]]).map(|j| p[[i, j]]).sum())
        .collect();
    let var_person: Vec<f64> = (0..1000)
        .map(|i| (0..50).filter(|&j| train[[i, j]]).map(|j| p[[i, j]] * (1.0 - p[[i, j]])).sum())
        .collect();
    let (mut outside, mut simulated_outside) = (0, 0);
    for i in 0..1000 {
        let se = var_person[i].sqrt().max(1e-3);
        if (observed.per_person[i] - expected_person[i]).abs() > 3.0 * se {
            outside += 1;
        }
        // Simulated averages over 200 draws sit much closer to the expectation.
        if (stats.per_person[i] - expected_person[i]).abs() > 3.0 * se / 200f64.sqrt() {
            simulated_outside += 1;
        }
    }
    // About 0.3% of persons fall outside 3 SE by chance.
    assert!(outside <= 10, "{outside} persons outside 3 SE");
    assert!(simulated_outside <= 10, "{simulated_outside} simulated averages outside 3 SE");
    let total_obs: f64 = observed.per_item.iter().sum();
    let total_exp: f64 = expected_person.iter().sum();
    let total_se = var_person.iter().sum::<f64>().sqrt();
    assert!((total_obs - total_exp).abs() < 3.0 * total_se);
    assert!((stats.per_item.iter().sum::<f64>() - total_exp).abs() < 3.0 * total_se / 200f64.sqrt());
}

#[test]
fn mle_imputes_no_better_than_vibo_on_sparse_data() {
    let (ds, _) = generate_synthetic(500, 40, 1, Family::TwoPl, 30).unwrap();
    let (train, held) = holdout_split(&ds, 0.5, 30).unwrap();
    let train_ds = ds.with_mask(&train).unwrap();
    let mle = fit_mle(&train_ds, Family::TwoPl, 1, ResponseKind::Bernoulli, &MleConfig::default()).unwrap();
    let model = classical(Family::TwoPl, 1);
    let p_mle = point_probabilities(&model, &mle.abilities, &mle.blocks).unwrap();
    let cfg = TrainConfig {
        iterations: 3000,
        ..TrainConfig::default()
    };
    let fit = fit_vibo(&train_ds, model.clone(), PosteriorFamily::Amortized, &cfg).unwrap();
    let draws = fit.model.sample_posterior(&train_ds, 100, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
    let p_vibo = draws.predictive_probabilities(&fit.model.model).unwrap();
    let mle_acc = impute(&ds, &train, &held, &p_mle, "mle").unwrap().accuracy;
    let vibo_acc = impute(&ds, &train, &held, &p_vibo, "vibo").unwrap().accuracy;
    assert!(mle_acc <= vibo_acc, "mle {mle_acc} vs vibo {vibo_acc}");
}
