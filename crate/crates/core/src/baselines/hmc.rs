//! Hamiltonian Monte Carlo with a fixed number of leapfrog steps, step size
//! tuned by dual averaging and a diagonal mass matrix estimated during
//! warmup.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::classical::ClassicalLikelihood;
use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::models::{Family, ResponseKind};
use crate::posterior::{PosteriorDraw, PosteriorSamples, SamplerStats};
use crate::rng;

/// A differentiable log density.
pub trait Target {
    fn dim(&self) -> usize;
    /// Log density at `q` (up to a constant); overwrites `grad`.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub num_samples: usize,
    pub warmup: usize,
    pub leapfrog_steps: usize,
    /// Starting step size; found by a doubling search when absent.
    pub step_size: Option<f64>,
    pub target_accept: f64,
    pub adapt_mass: bool,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            num_samples: 200,
            warmup: 100,
            leapfrog_steps: 10,
            step_size: None,
            target_accept: 0.65,
            adapt_mass: true,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.warmup == 0 {
            return Err(Error::InvalidArgument("num_samples and warmup must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::InvalidArgument("at least one leapfrog step is needed".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument(format!("target acceptance {} outside (0, 1)", self.target_accept)));
        }
        if let Some(e) = self.step_size {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument(format!("step size {e} must be positive")));
            }
        }
        Ok(())
    }
}

/// Kinetic plus potential energy.
pub fn hamiltonian(log_density: f64, momentum: &[f64], inv_mass: &[f64]) -> f64 {
    let kinetic: f64 = momentum.iter().zip(inv_mass).map(|(p, m)| m * p * p).sum();
    -log_density + 0.5 * kinetic
}

/// `steps` leapfrog steps from `(q, p)`. `grad` must hold the gradient at
/// `q` on entry and holds the gradient at the end point on exit. Returns the
/// log density at the end point.
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    step_size: f64,
    steps: usize,
    inv_mass: &[f64],
) -> f64 {
    let mut logp = f64::NAN;
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += 0.5 * step_size * gi;
    }
    for s in 0..steps {
        for ((qi, pi), m) in q.iter_mut().zip(p.iter()).zip(inv_mass) {
            *qi += step_size * m * pi;
        }
        logp = target.log_density_grad(q, grad);
        let scale = if s + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += scale * step_size * gi;
        }
    }
    logp
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    fn new(eps: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    fn update(&mut self, accept: f64, target: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target - accept);
        let log_eps = self.mu - m.sqrt() / GAMMA * self.h_bar;
        let eta = m.powf(-KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

fn sample_momentum<R: Rng + ?Sized>(rng: &mut R, inv_mass: &[f64]) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|m| {
            let e: f64 = StandardNormal.sample(rng);
            e / m.sqrt()
        })
        .collect()
}

/// Doubles or halves the step size until one leapfrog step's acceptance
/// crosses one half.
fn initial_step_size<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let mut eps = 1.0;
    let p0 = sample_momentum(rng, inv_mass);
    let h0 = hamiltonian(logp, &p0, inv_mass);
    let log_ratio = |eps: f64| {
        let (mut q1, mut p1, mut g1) = (q.to_vec(), p0.clone(), grad.to_vec());
        let lp = leapfrog(target, &mut q1, &mut p1, &mut g1, eps, 1, inv_mass);
        let d = h0 - hamiltonian(lp, &p1, inv_mass);
        if d.is_finite() {
            d
        } else {
            f64::NEG_INFINITY
        }
    };
    let half = 0.5f64.ln();
    let dir = if log_ratio(eps) > half { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let r = log_ratio(eps);
        if dir * r <= dir * half {
            break;
        }
        eps *= 2f64.powf(dir);
    }
    eps
}

/// Draws `cfg.num_samples` states after `cfg.warmup` adaptation iterations.
pub fn hmc_sample<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: Vec<f64>,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, SamplerStats)> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::Shape(format!("initial state of length {} for dimension {dim}", init.len())));
    }
    let mut q = init;
    let mut grad = vec![0.0; dim];
    let mut logp = target.log_density_grad(&q, &mut grad);
    if !logp.is_finite() {
        return Err(Error::Divergence("log density is not finite at the initial state".into()));
    }
    let mut inv_mass = vec![1.0; dim];
    let mut eps = cfg
        .step_size
        .unwrap_or_else(|| initial_step_size(target, &q, logp, &grad, &inv_mass, rng));
    let mut adapt = DualAveraging::new(eps);

    // Mass-matrix window: after an initial fast phase, before a final
    // step-size-only phase.
    let (mass_start, mass_end) = if cfg.adapt_mass && cfg.warmup >= 20 {
        ((cfg.warmup * 15) / 100, (cfg.warmup * 85) / 100)
    } else {
        (cfg.warmup, cfg.warmup)
    };
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut seen = 0.0;

    let mut samples = Vec::with_capacity(cfg.num_samples);
    let mut accept_sum = 0.0;
    let mut divergences = 0;
    for it in 0..cfg.warmup + cfg.num_samples {
        let warm = it < cfg.warmup;
        let mut p = sample_momentum(rng, &inv_mass);
        let h0 = hamiltonian(logp, &p, &inv_mass);
        let (mut q1, mut g1) = (q.clone(), grad.clone());
        let lp1 = leapfrog(target, &mut q1, &mut p, &mut g1, eps, cfg.leapfrog_steps, &inv_mass);
        let h1 = hamiltonian(lp1, &p, &inv_mass);
        let accept = if h1.is_finite() && q1.iter().all(|x| x.is_finite()) {
            (h0 - h1).min(0.0).exp()
        } else {
            divergences += 1;
            if !warm {
                eps *= 0.5;
            }
            0.0
        };
        if rng.random::<f64>() < accept {
            q = q1;
            grad = g1;
            logp = lp1;
        }
        if warm {
            eps = adapt.update(accept, cfg.target_accept);
            if it >= mass_start && it < mass_end {
                seen += 1.0;
                for c in 0..dim {
                    let d = q[c] - mean[c];
                    mean[c] += d / seen;
                    m2[c] += d * (q[c] - mean[c]);
                }
            }
            if it + 1 == mass_end && seen > 1.0 {
                // Regularized toward the unit metric, as in common practice.
                for c in 0..dim {
                    let var = m2[c] / (seen - 1.0);
                    inv_mass[c] = (seen / (seen + 5.0)) * var + 1e-3 * (5.0 / (seen + 5.0));
                }
                eps = initial_step_size(target, &q, logp, &grad, &inv_mass, rng);
                adapt = DualAveraging::new(eps);
            }
            if it + 1 == cfg.warmup {
                eps = adapt.final_step();
            }
        } else {
            accept_sum += accept;
            samples.push(q.clone());
        }
    }
    let stats = SamplerStats {
        acceptance_rate: accept_sum / cfg.num_samples as f64,
        step_size: eps,
        divergences,
    };
    Ok((samples, stats))
}

/// Joint posterior over abilities and item parameters of a classical model
/// under standard Normal priors on every coordinate.
pub struct IrtPosterior {
    lik: ClassicalLikelihood,
    num_persons: usize,
    num_items: usize,
}

impl IrtPosterior {
    pub fn new(ds: &ResponseDataset, family: Family, k_dim: usize, kind: ResponseKind) -> Result<Self> {
        Ok(IrtPosterior {
            lik: ClassicalLikelihood::new(ds, family, k_dim, kind)?,
            num_persons: ds.num_persons(),
            num_items: ds.num_items(),
        })
    }

    fn split(&self, q: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let na = self.num_persons * self.lik.k_dim;
        let a = Array2::from_shape_vec((self.num_persons, self.lik.k_dim), q[..na].to_vec()).expect("ability block");
        let b = Array2::from_shape_vec((self.num_items, self.lik.block_width()), q[na..].to_vec()).expect("item block");
        (a, b)
    }
}

impl Target for IrtPosterior {
    fn dim(&self) -> usize {
        self.num_persons * self.lik.k_dim + self.num_items * self.lik.block_width()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let (a, b) = self.split(q);
        let mut ga = Array2::zeros(a.dim());
        let mut gb = Array2::zeros(b.dim());
        let ll = self.lik.eval(&a, &b, Some((&mut ga, &mut gb)));
        let na = ga.len();
        for (g, v) in grad[..na].iter_mut().zip(ga.iter()) {
            *g = *v;
        }
        for (g, v) in grad[na..].iter_mut().zip(gb.iter()) {
            *g = *v;
        }
        let mut prior = 0.0;
        for (g, x) in grad.iter_mut().zip(q) {
            *g -= x;
            prior -= 0.5 * x * x;
        }
        ll + prior
    }
}

pub fn hmc_fit(
    ds: &ResponseDataset,
    family: Family,
    k_dim: usize,
    kind: ResponseKind,
    cfg: &HmcConfig,
) -> Result<PosteriorSamples> {
    ds.validate()?;
    let target = IrtPosterior::new(ds, family, k_dim, kind)?;
    let mut init_rng = rng::stream(cfg.seed, rng::INIT);
    let init: Vec<f64> = (0..target.dim())
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut init_rng);
            0.1 * e
        })
        .collect();
    let mut rng = rng::stream(cfg.seed, rng::TRAINING);
    let (states, stats) = hmc_sample(&target, init, cfg, &mut rng)?;
    let draws = states
        .iter()
        .map(|q| {
            let (abilities, blocks) = target.split(q);
            PosteriorDraw { abilities, blocks }
        })
        .collect();
    let samples = PosteriorSamples {
        family,
        draws,
        stats: Some(stats),
    };
    samples.validate()?;
    Ok(samples)
}
