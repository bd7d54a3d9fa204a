//! Imputation accuracy, ability recovery, importance-sampled log marginals
//! and posterior predictive checks.

use std::io::Write;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::models::{self, GenerativeModel};
use crate::posterior::PosteriorSamples;
use crate::rng;
use crate::variational::{Batch, Noise, VariationalModel};

/// Probabilities at or above this are imputed as a correct response.
pub const IMPUTE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub algorithm: String,
    pub heldout: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Scores thresholded predictions against held-out responses. Polytomous
/// truths are binarized at the same threshold.
pub fn impute(
    ds: &ResponseDataset,
    train_mask: &Array2<bool>,
    heldout_mask: &Array2<bool>,
    probabilities: &Array2<f64>,
    algorithm: &str,
) -> Result<ImputationReport> {
    let dim = ds.values.dim();
    if train_mask.dim() != dim || heldout_mask.dim() != dim || probabilities.dim() != dim {
        return Err(Error::Shape(format!(
            "masks {:?}/{:?} and probabilities {:?} for data {dim:?}",
            train_mask.dim(),
            heldout_mask.dim(),
            probabilities.dim()
        )));
    }
    let mut heldout = 0;
    let mut correct = 0;
    for ((ij, &h), &t) in heldout_mask.indexed_iter().zip(train_mask.iter()) {
        if !h {
            continue;
        }
        if t {
            return Err(Error::InvalidArgument(format!("cell {ij:?} is both trained on and held out")));
        }
        if !ds.mask[ij] {
            return Err(Error::InvalidArgument(format!("held-out cell {ij:?} has no observed response")));
        }
        heldout += 1;
        let predicted = probabilities[ij] >= IMPUTE_THRESHOLD;
        let truth = ds.values[ij] >= IMPUTE_THRESHOLD;
        if predicted == truth {
            correct += 1;
        }
    }
    if heldout == 0 {
        return Err(Error::InvalidArgument("no held-out cells".into()));
    }
    Ok(ImputationReport {
        algorithm: algorithm.to_string(),
        heldout,
        correct,
        accuracy: correct as f64 / heldout as f64,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("correlation of lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidArgument("correlation with a zero-variance column".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Per-dimension absolute Pearson correlation after matching inferred
/// dimensions to true ones: the permutation maximizing the mean absolute
/// correlation wins, and each matched dimension's sign is flipped to agree.
/// Entry `c` is the correlation for true dimension `c`.
pub fn ability_correlation(inferred: &Array2<f64>, truth: &Array2<f64>) -> Result<Vec<f64>> {
    if inferred.dim() != truth.dim() {
        return Err(Error::Shape(format!("inferred {:?} vs truth {:?}", inferred.dim(), truth.dim())));
    }
    let k = truth.ncols();
    if k > 8 {
        return Err(Error::InvalidArgument(format!("alignment search over {k} dimensions is too large")));
    }
    let mut table = vec![vec![0.0; k]; k];
    for (t, row) in table.iter_mut().enumerate() {
        for (s, cell) in row.iter_mut().enumerate() {
            *cell = pearson(&inferred.column(s).to_vec(), &truth.column(t).to_vec())?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let score: f64 = perm.iter().enumerate().map(|(t, &s)| table[t][s].abs()).sum();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    Ok(perm.iter().enumerate().map(|(t, &s)| table[t][s].abs()).collect())
}

/// Max-shifted `log(mean(exp(w)))`, summed in descending order so the
/// result does not depend on the order of the samples.
pub fn log_mean_exp(weights: &mut [f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no importance weights".into()));
    }
    if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Divergence(format!("non-finite importance weight {bad}")));
    }
    weights.sort_by(|a, b| b.total_cmp(a));
    let top = weights[0];
    let sum: f64 = weights.iter().map(|w| (w - top).exp()).sum();
    Ok(top + sum.ln() - (weights.len() as f64).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMarginalReport {
    pub samples: usize,
    pub per_person: Vec<f64>,
    pub total: f64,
    /// `total` divided by the number of observed responses.
    pub per_response: f64,
}

const IS_CHUNK: usize = 512;

/// Per person, `log (1/S) sum_s p(r_i, a_s, d_s) / q(a_s, d_s | r_i)` with
/// joint draws from the variational posterior.
///
/// Item noise for draw `s` comes from its own substream, so every chunk of
/// persons sees the same item draws regardless of chunking.
pub fn log_marginal_is(vm: &VariationalModel, ds: &ResponseDataset, samples: usize, seed: u64) -> Result<LogMarginalReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("importance sampling needs at least one sample".into()));
    }
    let n = ds.num_persons();
    let k = vm.k_dim();
    let mut per_person = vec![0.0; n];
    let all: Vec<usize> = (0..n).collect();
    for (c, chunk) in all.chunks(IS_CHUNK).enumerate() {
        let batch = Batch::new(ds, chunk)?;
        let mut weights = Array2::zeros((chunk.len(), samples));
        for s in 0..samples {
            let noise = is_noise(vm, seed, c, s, chunk.len(), k);
            let w = vm.log_importance_weights(&batch, &noise)?;
            weights.column_mut(s).assign(&w);
        }
        for (b, &i) in chunk.iter().enumerate() {
            let mut row = weights.row(b).to_vec();
            per_person[i] = log_mean_exp(&mut row).map_err(|e| Error::Divergence(format!("person {i}: {e}")))?;
        }
    }
    Ok(summarize(samples, per_person, ds))
}

fn is_noise(vm: &VariationalModel, seed: u64, chunk: usize, s: usize, len: usize, k: usize) -> Noise {
    let mut item_rng = rng::substream(seed, "is-items", s as u64);
    let mut ability_rng = rng::substream(seed, "is-abilities", ((chunk as u64) << 32) | s as u64);
    let items = Array2::from_shape_fn(vm.item_shape(), |_| StandardNormal.sample(&mut item_rng));
    let abilities = Array2::from_shape_fn((len, k), |_| StandardNormal.sample(&mut ability_rng));
    Noise { items, abilities }
}

fn summarize(samples: usize, per_person: Vec<f64>, ds: &ResponseDataset) -> LogMarginalReport {
    let total: f64 = per_person.iter().sum();
    LogMarginalReport {
        samples,
        total,
        per_response: total / ds.observed_count().max(1) as f64,
        per_person,
    }
}

/// Log marginal of the whole dataset with the items integrated once:
/// `log (1/S) sum_s [p(d_s) / q(d_s) prod_i (1/T) sum_t p(r_i, a_t | d_s) / q(a_t | d_s, r_i)]`.
/// `per_person` holds each person's inner estimate averaged over item draws.
pub fn dataset_log_marginal_is(
    vm: &VariationalModel,
    ds: &ResponseDataset,
    item_samples: usize,
    ability_samples: usize,
    seed: u64,
) -> Result<LogMarginalReport> {
    if item_samples == 0 || ability_samples == 0 {
        return Err(Error::InvalidArgument("importance sampling needs at least one sample".into()));
    }
    let n = ds.num_persons();
    let k = vm.k_dim();
    let all: Vec<usize> = (0..n).collect();
    let batches: Vec<Batch> = all.chunks(IS_CHUNK).map(|c| Batch::new(ds, c)).collect::<Result<_>>()?;
    let mut outer = Vec::with_capacity(item_samples);
    let mut per_person = vec![0.0; n];
    for s in 0..item_samples {
        let mut item_rng = rng::substream(seed, "is-items", s as u64);
        let item_noise: Array2<f64> = Array2::from_shape_fn(vm.item_shape(), |_| StandardNormal.sample(&mut item_rng));
        let mut item_term = 0.0;
        let mut log_lik = 0.0;
        for (c, batch) in batches.iter().enumerate() {
            let mut inner = Array2::zeros((batch.len(), ability_samples));
            for t in 0..ability_samples {
                let index = ((c as u64) << 40) | ((s as u64) << 20) | t as u64;
                let mut ability_rng = rng::substream(seed, "is-abilities", index);
                let noise = Noise {
                    items: item_noise.clone(),
                    abilities: Array2::from_shape_fn((batch.len(), k), |_| StandardNormal.sample(&mut ability_rng)),
                };
                let w = vm.importance_weights(batch, &noise)?;
                item_term = w.item;
                inner.column_mut(t).assign(&w.person);
            }
            for (b, &i) in batch.persons.iter().enumerate() {
                let mut row = inner.row(b).to_vec();
                let v = log_mean_exp(&mut row)?;
                per_person[i] += v / item_samples as f64;
                log_lik += v;
            }
        }
        outer.push(item_term + log_lik);
    }
    let total = log_mean_exp(&mut outer)?;
    Ok(LogMarginalReport {
        samples: item_samples * ability_samples,
        total,
        per_response: total / ds.observed_count().max(1) as f64,
        per_person,
    })
}

/// Expected per-person and per-item totals of simulated responses over
/// observed cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveStatistics {
    pub per_person: Vec<f64>,
    pub per_item: Vec<f64>,
}

/// Simulates one response matrix per draw over the observed cells and
/// averages the row and column totals across draws.
pub fn predictive_statistics(
    samples: &PosteriorSamples,
    model: &GenerativeModel,
    ds: &ResponseDataset,
    seed: u64,
) -> Result<PredictiveStatistics> {
    samples.validate()?;
    let (n, m) = (ds.num_persons(), ds.num_items());
    if samples.draws[0].abilities.nrows() != n || samples.draws[0].blocks.nrows() != m {
        return Err(Error::Shape("posterior draws do not match the dataset".into()));
    }
    let mut r = rng::substream(seed, "ppc", 0);
    let mut person = vec![0.0; n];
    let mut item = vec![0.0; m];
    for d in &samples.draws {
        let p = model.probabilities(&d.abilities, &d.blocks)?;
        for ((i, j), &pij) in p.indexed_iter() {
            if ds.mask[[i, j]] {
                let x = models::sample_response(model.kind, pij, &mut r);
                person[i] += x;
                item[j] += x;
            }
        }
    }
    let s = samples.len() as f64;
    Ok(PredictiveStatistics {
        per_person: person.into_iter().map(|x| x / s).collect(),
        per_item: item.into_iter().map(|x| x / s).collect(),
    })
}

/// Observed per-person and per-item totals.
pub fn observed_statistics(ds: &ResponseDataset) -> PredictiveStatistics {
    let masked = Array2::from_shape_fn(ds.values.dim(), |ij| if ds.mask[ij] { ds.values[ij] } else { 0.0 });
    let sum_axis = |axis| -> Vec<f64> { masked.sum_axis(axis).to_vec() };
    PredictiveStatistics {
        per_person: sum_axis(ndarray::Axis(1)),
        per_item: sum_axis(ndarray::Axis(0)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcSummary {
    pub a: PredictiveStatistics,
    pub b: PredictiveStatistics,
    pub person_correlation: f64,
    pub item_correlation: f64,
}

/// Compares two algorithms' predictive statistics. Both use the same
/// simulation stream, so identical inputs agree exactly.
pub fn posterior_predictive_check(
    samples_a: &PosteriorSamples,
    model_a: &GenerativeModel,
    samples_b: &PosteriorSamples,
    model_b: &GenerativeModel,
    ds: &ResponseDataset,
    seed: u64,
) -> Result<PpcSummary> {
    let a = predictive_statistics(samples_a, model_a, ds, seed)?;
    let b = predictive_statistics(samples_b, model_b, ds, seed)?;
    Ok(PpcSummary {
        person_correlation: pearson(&a.per_person, &b.per_person)?,
        item_correlation: pearson(&a.per_item, &b.per_item)?,
        a,
        b,
    })
}

/// Success probabilities at point estimates.
pub fn point_probabilities(model: &GenerativeModel, abilities: &Array2<f64>, blocks: &Array2<f64>) -> Result<Array2<f64>> {
    model.probabilities(abilities, blocks)
}

/// One line of a run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub algorithm: Option<String>,
    pub fingerprint: String,
    pub seed: u64,
}

pub fn write_report<W: Write>(records: &[ReportRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
