//! Python module `varirt_py`. The `run_*` functions hold the logic in plain
//! Rust types; the Python functions only convert arguments and results.

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use varirt::baselines::{fit_em, fit_mle, hmc_fit, EmConfig, HmcConfig, MleConfig};
use varirt::data::{generate_synthetic, DataKind, ResponseDataset};
use varirt::evaluation::ability_correlation;
use varirt::models::{Family, GenerativeModel};
use varirt::posterior::PosteriorSamples;
use varirt::variational::{fit_vibo, PosteriorFamily, TrainConfig};
use varirt::{rng, Error, Result};

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("rows differ in length".into()));
    }
    Ok(Array2::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j]))
}

/// `None` and NaN mark missing responses.
pub fn dataset_from_rows(rows: &[Vec<Option<f64>>], kind: &str) -> Result<ResponseDataset> {
    let kind: DataKind = kind.parse()?;
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("rows differ in length".into()));
    }
    let cell = |i: usize, j: usize| rows[i][j].filter(|v| !v.is_nan());
    let values = Array2::from_shape_fn((rows.len(), width), |(i, j)| cell(i, j).unwrap_or(0.0));
    let mask = Array2::from_shape_fn((rows.len(), width), |(i, j)| cell(i, j).is_some());
    ResponseDataset::new(values, mask, kind)
}

/// Responses and true abilities of a synthetic dataset.
pub fn run_simulate(n: usize, m: usize, k: usize, family: &str, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (ds, truth) = generate_synthetic(n, m, k, family.parse()?, seed)?;
    Ok((rows_of(&ds.values), rows_of(&truth.abilities)))
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    /// Posterior mean (or point estimate) per person.
    pub abilities: Vec<Vec<f64>>,
    /// Item parameter blocks in the family's layout.
    pub items: Vec<Vec<f64>>,
    /// Predicted probability of a correct response for every cell.
    pub probabilities: Vec<Vec<f64>>,
    /// Training objective by recorded step; empty for the sampler.
    pub trace: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_fit(
    rows: &[Vec<Option<f64>>],
    kind: &str,
    algorithm: &str,
    family: &str,
    k: usize,
    iterations: Option<usize>,
    draws: usize,
    seed: u64,
) -> Result<FitSummary> {
    let ds = dataset_from_rows(rows, kind)?;
    let family: Family = family.parse()?;
    let response = ds.response_kind();
    let posterior = match algorithm {
        "vibo" => Some(PosteriorFamily::Amortized),
        "vibo-independent" => Some(PosteriorFamily::Independent),
        "vibo-unamortized" => Some(PosteriorFamily::Unamortized),
        "mle" | "em" | "hmc" => None,
        other => return Err(Error::InvalidArgument(format!("unknown algorithm '{other}'"))),
    };
    let fresh = || GenerativeModel::new(family, k, response, &mut rng::stream(seed, rng::INIT));
    let point = |abilities: Array2<f64>, blocks: Array2<f64>| PosteriorSamples {
        family,
        draws: vec![varirt::posterior::PosteriorDraw { abilities, blocks }],
        stats: None,
    };
    let (samples, model, trace) = match (posterior, algorithm) {
        (Some(p), _) => {
            let cfg = TrainConfig {
                seed,
                iterations: iterations.unwrap_or(TrainConfig::default().iterations),
                ..TrainConfig::default()
            };
            let fit = fit_vibo(&ds, fresh()?, p, &cfg)?;
            let samples = fit.model.sample_posterior(&ds, draws, &mut rng::stream(seed, rng::EVALUATION))?;
            (samples, fit.model.model, fit.trace.iter().map(|t| t.vibo).collect())
        }
        (None, "mle") => {
            let cfg = MleConfig {
                seed,
                iterations: iterations.unwrap_or(MleConfig::default().iterations),
                ..MleConfig::default()
            };
            let fit = fit_mle(&ds, family, k, response, &cfg)?;
            let trace = fit.trace.iter().map(|t| t.log_lik).collect();
            (point(fit.abilities, fit.blocks), fresh()?, trace)
        }
        (None, "em") => {
            if k != 1 {
                return Err(Error::InvalidArgument("em integrates a scalar ability; use k = 1".into()));
            }
            let cfg = EmConfig {
                max_cycles: iterations.unwrap_or(EmConfig::default().max_cycles),
                ..EmConfig::default()
            };
            let fit = fit_em(&ds, family, &cfg)?;
            let trace = fit.trace.iter().map(|t| t.log_marginal).collect();
            (point(fit.abilities, fit.blocks), fresh()?, trace)
        }
        _ => {
            let cfg = HmcConfig {
                seed,
                ..HmcConfig::default()
            };
            (hmc_fit(&ds, family, k, response, &cfg)?, fresh()?, Vec::new())
        }
    };
    Ok(FitSummary {
        abilities: rows_of(&samples.mean_abilities()?),
        items: rows_of(&samples.mean_blocks()?),
        probabilities: rows_of(&samples.predictive_probabilities(&model)?),
        trace,
    })
}

pub fn run_correlation(inferred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<f64>> {
    ability_correlation(&matrix(inferred)?, &matrix(truth)?)
}

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Divergence(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Simulate a dataset; returns `(responses, abilities)` as nested lists.
#[pyfunction]
#[pyo3(signature = (n, m, k=1, family="2pl", seed=0))]
fn simulate(n: usize, m: usize, k: usize, family: &str, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    run_simulate(n, m, k, family, seed).map_err(to_py)
}

/// Fit a model to a response matrix (`None` or NaN for missing cells) and
/// return a dict with `abilities`, `items`, `probabilities` and `trace`.
#[pyfunction]
#[pyo3(signature = (responses, algorithm="vibo", family="2pl", k=1, kind="binary", iterations=None, draws=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    responses: Vec<Vec<Option<f64>>>,
    algorithm: &str,
    family: &str,
    k: usize,
    kind: &str,
    iterations: Option<usize>,
    draws: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let summary = py
        .detach(|| run_fit(&responses, kind, algorithm, family, k, iterations, draws, seed))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("abilities", summary.abilities)?;
    out.set_item("items", summary.items)?;
    out.set_item("probabilities", summary.probabilities)?;
    out.set_item("trace", summary.trace)?;
    Ok(out)
}

/// Per-dimension correlation of inferred with true abilities after the
/// best matching of dimensions and signs.
#[pyfunction]
fn correlation(inferred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    run_correlation(&inferred, &truth).map_err(to_py)
}

#[pymodule]
fn varirt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    Ok(())
}
