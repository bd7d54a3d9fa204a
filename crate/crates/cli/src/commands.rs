use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use varirt::baselines::{fit_em, fit_mle, hmc_fit, EmConfig, HmcConfig, MleConfig};
use varirt::data::{generate_synthetic, holdout_split, load_matrix, DataKind, GroundTruth, LoadOptions, ResponseDataset};
use varirt::evaluation::{ability_correlation, impute, log_marginal_is, posterior_predictive_check, write_report, ReportRecord};
use varirt::models::{Family, GenerativeModel};
use varirt::nn::TensorRecord;
use varirt::posterior::{PosteriorDraw, PosteriorSamples};
use varirt::variational::{fit_vibo, PosteriorFamily, TrainConfig, VariationalModel};
use varirt::{rng, Error, Result};

use crate::config::{Algorithm, Metric, RunConfig};

const RESPONSES: &str = "responses.csv";
const TRUTH: &str = "truth.csv";
const FIT_INFO: &str = "fit.json";
const TRACE: &str = "trace.jsonl";
const POSTERIOR: &str = "posterior.jsonl";
const PARAMS: &str = "params.json";
const REPORT: &str = "report.jsonl";

/// Description of a fit, written next to its artifacts.
#[derive(Debug, Serialize, Deserialize)]
struct FitInfo {
    fingerprint: String,
    /// Fingerprint of the training split the fit saw.
    dataset: String,
    algorithm: Algorithm,
    family: Family,
    k: usize,
    kind: DataKind,
    config: RunConfig,
}

/// Learned parameters of a variational fit.
#[derive(Serialize, Deserialize)]
struct Params {
    fingerprint: String,
    posterior: PosteriorFamily,
    theta: Vec<TensorRecord>,
    phi: Vec<TensorRecord>,
}

fn prepare_output(cfg: &RunConfig) -> Result<std::path::PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One record per line, each tagged with the run fingerprint.
fn write_tagged_lines<T: Serialize>(path: &Path, fingerprint: &str, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let mut v = serde_json::to_value(r)?;
        if let Value::Object(map) = &mut v {
            map.insert("fingerprint".into(), Value::String(fingerprint.into()));
        }
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn with_fingerprint(fingerprint: &str, text: &str) -> String {
    format!("# fingerprint={fingerprint}\n{text}")
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let (ds, truth) = generate_synthetic(cfg.n, cfg.m, cfg.k, cfg.family, cfg.seed)?;
    let dir = prepare_output(cfg)?;
    let fp = cfg.fingerprint();
    fs::write(dir.join(RESPONSES), with_fingerprint(&fp, &ds.to_text()))?;
    fs::write(dir.join(TRUTH), with_fingerprint(&fp, &truth.to_text()?))?;
    println!(
        "wrote {} persons x {} items to {}",
        ds.num_persons(),
        ds.num_items(),
        dir.display()
    );
    Ok(())
}

/// The full dataset and, when known, its generating parameters.
fn load_data(cfg: &RunConfig) -> Result<(ResponseDataset, Option<GroundTruth>)> {
    match &cfg.data {
        Some(path) => {
            let ds = load_matrix(
                path,
                &LoadOptions {
                    kind: cfg.kind,
                    header: cfg.header,
                },
            )?;
            let truth = match &cfg.truth {
                Some(t) => Some(GroundTruth::from_text(&fs::read_to_string(t)?)?),
                None => None,
            };
            Ok((ds, truth))
        }
        None => {
            if cfg.kind != DataKind::Binary {
                return Err(Error::InvalidArgument("synthetic data is binary; pass --data for polytomous responses".into()));
            }
            let (ds, truth) = generate_synthetic(cfg.n, cfg.m, cfg.k, cfg.generator, cfg.seed)?;
            Ok((ds, Some(truth)))
        }
    }
}

struct Split {
    full: ResponseDataset,
    train: ResponseDataset,
    /// `(train mask, held-out mask)` when a fraction is held out.
    masks: Option<(Array2<bool>, Array2<bool>)>,
    truth: Option<GroundTruth>,
}

fn split(cfg: &RunConfig) -> Result<Split> {
    let (full, truth) = load_data(cfg)?;
    if cfg.holdout == 0.0 {
        return Ok(Split {
            train: full.clone(),
            full,
            masks: None,
            truth,
        });
    }
    let (train_mask, held) = holdout_split(&full, cfg.holdout, cfg.seed)?;
    Ok(Split {
        train: full.with_mask(&train_mask)?,
        full,
        masks: Some((train_mask, held)),
        truth,
    })
}

fn point_draw(abilities: Array2<f64>, blocks: Array2<f64>, family: Family) -> PosteriorSamples {
    PosteriorSamples {
        family,
        draws: vec![PosteriorDraw { abilities, blocks }],
        stats: None,
    }
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let data = split(cfg)?;
    let train = &data.train;
    let kind = train.response_kind();
    let dir = prepare_output(cfg)?;
    let fp = cfg.fingerprint();
    let samples = match cfg.algorithm.posterior() {
        Some(posterior) => {
            let model = GenerativeModel::new(cfg.family, cfg.k, kind, &mut rng::stream(cfg.seed, rng::INIT))?;
            let tc = TrainConfig {
                seed: cfg.seed,
                iterations: cfg.iterations.unwrap_or(TrainConfig::default().iterations),
                learning_rate: cfg.learning_rate,
                batch_size: cfg.batch_size,
                ..TrainConfig::default()
            };
            let fit = fit_vibo(train, model, posterior, &tc)?;
            write_tagged_lines(&dir.join(TRACE), &fp, &fit.trace)?;
            write_json(
                &dir.join(PARAMS),
                &Params {
                    fingerprint: fp.clone(),
                    posterior,
                    theta: fit.model.model.theta_records(),
                    phi: fit.model.phi.to_records(),
                },
            )?;
            fit.model.sample_posterior(train, cfg.draws, &mut rng::stream(cfg.seed, rng::EVALUATION))?
        }
        None => match cfg.algorithm {
            Algorithm::Mle => {
                let mc = MleConfig {
                    seed: cfg.seed,
                    iterations: cfg.iterations.unwrap_or(MleConfig::default().iterations),
                    learning_rate: cfg.learning_rate,
                    ..MleConfig::default()
                };
                let fit = fit_mle(train, cfg.family, cfg.k, kind, &mc)?;
                write_tagged_lines(&dir.join(TRACE), &fp, &fit.trace)?;
                point_draw(fit.abilities, fit.blocks, cfg.family)
            }
            Algorithm::Em => {
                let ec = EmConfig {
                    max_cycles: cfg.iterations.unwrap_or(EmConfig::default().max_cycles),
                    ..EmConfig::default()
                };
                let fit = fit_em(train, cfg.family, &ec)?;
                write_tagged_lines(&dir.join(TRACE), &fp, &fit.trace)?;
                point_draw(fit.abilities, fit.blocks, cfg.family)
            }
            _ => {
                let hc = HmcConfig {
                    seed: cfg.seed,
                    ..HmcConfig::default()
                };
                let samples = hmc_fit(train, cfg.family, cfg.k, kind, &hc)?;
                write_tagged_lines(&dir.join(TRACE), &fp, &[&samples.stats])?;
                samples
            }
        },
    };
    samples.write_jsonl_tagged(BufWriter::new(File::create(dir.join(POSTERIOR))?), Some(&fp))?;
    write_json(
        &dir.join(FIT_INFO),
        &FitInfo {
            fingerprint: fp,
            dataset: train.fingerprint(),
            algorithm: cfg.algorithm,
            family: cfg.family,
            k: cfg.k,
            kind: train.kind,
            config: cfg.clone(),
        },
    )?;
    println!(
        "{} fit on {} observed responses: {} posterior draws in {}",
        cfg.algorithm.as_str(),
        train.observed_count(),
        samples.len(),
        dir.display()
    );
    Ok(())
}

/// A fit read back from disk.
struct Fitted {
    info: FitInfo,
    samples: PosteriorSamples,
    model: GenerativeModel,
    variational: Option<VariationalModel>,
}

fn load_fit(dir: &Path, expected_dataset: &str) -> Result<Fitted> {
    let info: FitInfo = read_json(&dir.join(FIT_INFO))?;
    if info.dataset != expected_dataset {
        return Err(Error::InvalidArgument(format!(
            "{} was fitted to dataset {}, but this configuration gives {expected_dataset}; \
             check the data, seed and holdout settings",
            dir.display(),
            info.dataset
        )));
    }
    let samples = PosteriorSamples::read_jsonl(BufReader::new(File::open(dir.join(POSTERIOR))?))?;
    let kind = match info.kind {
        DataKind::Binary => varirt::models::ResponseKind::Bernoulli,
        DataKind::Polytomous => varirt::models::ResponseKind::truncated_normal(),
    };
    // Parameter values are overwritten below, so the initializer stream is
    // irrelevant.
    let mut scratch = rng::stream(0, rng::INIT);
    let mut model = GenerativeModel::new(info.family, info.k, kind, &mut scratch)?;
    let variational = match info.algorithm.posterior() {
        Some(_) => {
            let params: Params = read_json(&dir.join(PARAMS))?;
            model.params.load_records(&params.theta)?;
            let n = samples.draws[0].abilities.nrows();
            let m = samples.draws[0].blocks.nrows();
            let mut vm = VariationalModel::new(model.clone(), params.posterior, n, m, &mut scratch)?;
            vm.phi.load_records(&params.phi)?;
            Some(vm)
        }
        None => None,
    };
    Ok(Fitted {
        info,
        samples,
        model,
        variational,
    })
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let data = split(cfg)?;
    let dir = cfg.output_dir();
    let dataset = data.train.fingerprint();
    let fitted = load_fit(&dir, &dataset)?;
    let other = match &cfg.compare {
        Some(path) => Some(load_fit(path, &dataset)?),
        None => None,
    };
    let mut metrics = cfg.metrics.clone();
    metrics.sort();
    metrics.dedup();
    let fp = cfg.fingerprint();
    let ctx = Context {
        cfg,
        data: &data,
        fitted: &fitted,
        other: other.as_ref(),
        fingerprint: &fp,
    };
    // Metrics are independent; run up to `workers` of them at once and keep
    // the reports in metric order.
    let mut records = Vec::new();
    for chunk in metrics.chunks(cfg.workers()) {
        let results: Vec<Result<Vec<ReportRecord>>> = std::thread::scope(|s| {
            let ctx = &ctx;
            let handles: Vec<_> = chunk.iter().map(|&m| s.spawn(move || ctx.run(m))).collect();
            handles.into_iter().map(|h| h.join().expect("metric thread panicked")).collect()
        });
        for r in results {
            records.extend(r?);
        }
    }
    write_report(&records, BufWriter::new(File::create(dir.join(REPORT))?))?;
    write_report(&records, std::io::stdout().lock())?;
    Ok(())
}

struct Context<'a> {
    cfg: &'a RunConfig,
    data: &'a Split,
    fitted: &'a Fitted,
    other: Option<&'a Fitted>,
    fingerprint: &'a str,
}

impl Context<'_> {
    fn record(&self, metric: &str, value: f64, algorithm: &str) -> ReportRecord {
        ReportRecord {
            metric: metric.into(),
            value,
            algorithm: Some(algorithm.into()),
            fingerprint: self.fingerprint.into(),
            seed: self.cfg.seed,
        }
    }

    fn run(&self, metric: Metric) -> Result<Vec<ReportRecord>> {
        let f = self.fitted;
        let alg = f.info.algorithm.as_str();
        match metric {
            Metric::Impute => {
                let (train_mask, held) = self.data.masks.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("imputation needs held-out responses; set a holdout fraction above 0".into())
                })?;
                let p = f.samples.predictive_probabilities(&f.model)?;
                let rep = impute(&self.data.full, train_mask, held, &p, alg)?;
                Ok(vec![
                    self.record("imputation_accuracy", rep.accuracy, alg),
                    self.record("heldout_count", rep.heldout as f64, alg),
                ])
            }
            Metric::Correlation => {
                let truth = self.data.truth.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(
                        "ability correlation needs the generating abilities, which real data does not have; \
                         pass --truth with the file written by simulate"
                            .into(),
                    )
                })?;
                let r = ability_correlation(&f.samples.mean_abilities()?, &truth.abilities)?;
                Ok(r.iter()
                    .enumerate()
                    .map(|(d, &v)| {
                        let name = if r.len() == 1 { "ability_correlation".to_string() } else { format!("ability_correlation_{d}") };
                        self.record(&name, v, alg)
                    })
                    .collect())
            }
            Metric::LogMarginal => {
                let vm = f.variational.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("the log marginal estimate needs a variational fit, not {alg}"))
                })?;
                let rep = log_marginal_is(vm, &self.data.train, self.cfg.is_samples, self.cfg.seed)?;
                Ok(vec![
                    self.record("log_marginal", rep.total, alg),
                    self.record("log_marginal_per_response", rep.per_response, alg),
                ])
            }
            Metric::Ppc => {
                let o = self.other.unwrap_or(f);
                let pair = format!("{alg}-vs-{}", o.info.algorithm.as_str());
                let s = posterior_predictive_check(&f.samples, &f.model, &o.samples, &o.model, &self.data.train, self.cfg.seed)?;
                Ok(vec![
                    self.record("ppc_person_correlation", s.person_correlation, &pair),
                    self.record("ppc_item_correlation", s.item_correlation, &pair),
                ])
            }
        }
    }
}
