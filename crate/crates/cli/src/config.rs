use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varirt::data::DataKind;
use varirt::models::Family;
use varirt::variational::PosteriorFamily;
use varirt::{Error, Result};

/// Environment variable that replaces the output directory of a run.
pub const OUTPUT_ENV: &str = "VARIRT_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Vibo,
    ViboIndependent,
    ViboUnamortized,
    Mle,
    Em,
    Hmc,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Vibo => "vibo",
            Algorithm::ViboIndependent => "vibo-independent",
            Algorithm::ViboUnamortized => "vibo-unamortized",
            Algorithm::Mle => "mle",
            Algorithm::Em => "em",
            Algorithm::Hmc => "hmc",
        }
    }

    pub fn posterior(self) -> Option<PosteriorFamily> {
        match self {
            Algorithm::Vibo => Some(PosteriorFamily::Amortized),
            Algorithm::ViboIndependent => Some(PosteriorFamily::Independent),
            Algorithm::ViboUnamortized => Some(PosteriorFamily::Unamortized),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Impute,
    Correlation,
    LogMarginal,
    Ppc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Fit,
    Evaluate,
}

/// Everything that determines a run. Read from an optional TOML file, then
/// overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub command: Command,
    /// Response matrix; synthetic data is generated when absent.
    pub data: Option<PathBuf>,
    /// Whether the first row of `data` holds item names.
    pub header: bool,
    pub kind: DataKind,
    /// Generating parameters for `data`, enabling the correlation metric.
    pub truth: Option<PathBuf>,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Family of the fitted model, and of the generator under `simulate`.
    pub family: Family,
    /// Family that synthesizes data for `fit` and `evaluate` without `data`.
    pub generator: Family,
    pub algorithm: Algorithm,
    /// Optimizer steps; each algorithm has its own default.
    pub iterations: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout: f64,
    /// Posterior draws kept from a variational fit.
    pub draws: usize,
    pub is_samples: usize,
    pub metrics: Vec<Metric>,
    /// Another fit directory to compare against in the predictive check.
    pub compare: Option<PathBuf>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Fit,
            data: None,
            header: false,
            kind: DataKind::Binary,
            truth: None,
            n: 1000,
            m: 100,
            k: 1,
            family: Family::TwoPl,
            generator: Family::TwoPl,
            algorithm: Algorithm::Vibo,
            iterations: None,
            learning_rate: 5e-3,
            batch_size: 128,
            holdout: 0.10,
            draws: 200,
            is_samples: 1000,
            metrics: vec![Metric::Impute, Metric::Correlation, Metric::LogMarginal, Metric::Ppc],
            compare: None,
            seed: 0,
            output: None,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("varirt-out"))
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1)
    }

    /// Hex SHA-256 of the canonical JSON form. Output location and worker
    /// count do not affect results and are left out.
    pub fn fingerprint(&self) -> String {
        let canonical = RunConfig {
            output: None,
            workers: None,
            ..self.clone()
        };
        let json = serde_json::to_value(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Rejects incompatible settings before any work starts.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return invalid("n, m and k must all be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return invalid(format!("holdout fraction {} outside [0, 1)", self.holdout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.draws == 0 || self.is_samples == 0 || self.iterations == Some(0) {
            return invalid("batch size, iterations, draws and is-samples must be positive".into());
        }
        if self.workers == Some(0) {
            return invalid("at least one worker is needed".into());
        }
        if self.command == Command::Simulate {
            if self.family == Family::ThreePl {
                return invalid(
                    "3pl generation is not supported: guessing parameters make the model hard to \
                     identify on small and medium datasets; use 2pl"
                        .into(),
                );
            }
            return self.family.check_dim(self.k);
        }
        self.family.check_dim(self.k)?;
        if self.data.is_none() {
            self.generator.check_dim(self.k)?;
        }
        let classical = self.family.is_classical();
        match self.algorithm {
            Algorithm::Em if self.k > 1 => invalid("em integrates a scalar ability; use k = 1".into()),
            Algorithm::Em if !matches!(self.family, Family::OnePl | Family::TwoPl) => {
                invalid(format!("em supports 1pl and 2pl, not {}", self.family))
            }
            Algorithm::Em if self.kind != DataKind::Binary => invalid("em needs binary responses".into()),
            Algorithm::Hmc | Algorithm::Mle if !classical => invalid(format!(
                "{} supports the classical families only, not {}",
                self.algorithm.as_str(),
                self.family
            )),
            _ => Ok(()),
        }
    }
}
