//! Oracle and gradient checks shared by the focused suites and the
//! acceptance run. Each returns the measured quantity; callers decide the
//! tolerance.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use varirt::autodiff::{sigmoid, Graph};
use varirt::baselines::*;
use varirt::data::{generate_synthetic, DataKind, ResponseDataset};
use varirt::gradcheck::{check, DEFAULT_STEP};
use varirt::models::{Cells, Family, GenerativeModel, ResponseKind};
use varirt::variational::{kl_diag_gaussian, poe_combine, Batch, DiagGaussian, Noise, PosteriorFamily, VariationalModel};

use super::{batch_means_se, mean_and_se, normal_pdf, trapezoid};

/// Largest pointwise gap between the closed-form product of experts and the
/// grid-normalized product of the factor densities.
pub fn poe_grid_max_deviation() -> f64 {
    let cases: [(&[(f64, f64)], bool); 3] = [
        (&[(1.0, 1.0), (3.0, 1.0)], false),
        (&[(1.5, 0.3)], true),
        (&[(-0.4, 2.0), (0.9, 0.5), (2.5, 4.0)], true),
    ];
    let mut worst: f64 = 0.0;
    for (experts, with_prior) in cases {
        let factors: Vec<DiagGaussian> = experts
            .iter()
            .map(|&(m, v)| DiagGaussian::new(vec![m], vec![v.ln()]).unwrap())
            .collect();
        let prior = DiagGaussian::standard(1);
        let q = poe_combine(&factors, with_prior.then_some(&prior)).unwrap();
        let product = |x: f64| {
            let mut d: f64 = factors.iter().map(|f| f.log_pdf(&[x]).unwrap()).sum();
            if with_prior {
                d += prior.log_pdf(&[x]).unwrap();
            }
            d.exp()
        };
        let (lo, hi, n) = (-15.0, 15.0, 200_000);
        let z = trapezoid(product, lo, hi, n);
        for i in 0..=2000 {
            let x = lo + (hi - lo) * i as f64 / 2000.0;
            let closed = q.log_pdf(&[x]).unwrap().exp();
            worst = worst.max((closed - product(x) / z).abs());
        }
    }
    worst
}

/// `|closed form - Monte Carlo|` for a two-dimensional diagonal KL.
pub fn kl_monte_carlo_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = DiagGaussian::new(vec![0.5, -1.0], vec![(0.6f64).ln(), (2.0f64).ln()]).unwrap();
    let p = DiagGaussian::new(vec![0.0, 0.3], vec![0.0, (1.5f64).ln()]).unwrap();
    let closed = kl_diag_gaussian(&q, &p).unwrap();
    let sd: Vec<f64> = q.variance().iter().map(|v| v.sqrt()).collect();
    let mut acc = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..2)
            .map(|c| {
                let e: f64 = StandardNormal.sample(&mut rng);
                q.mean[c] + sd[c] * e
            })
            .collect();
        acc += q.log_pdf(&x).unwrap() - p.log_pdf(&x).unwrap();
    }
    (acc / samples as f64 - closed).abs()
}

pub fn two_item_dataset() -> ResponseDataset {
    let values = ndarray::array![[1.0, 0.0], [1.0, 1.0], [0.0, 0.0], [0.0, 1.0]];
    ResponseDataset::fully_observed(values, DataKind::Binary).unwrap()
}

/// Largest gap between per-person Gauss-Hermite marginals from the E-step
/// and trapezoid integration, over 1PL and 2PL item settings.
pub fn e_step_trapezoid_max_error() -> f64 {
    let ds = two_item_dataset();
    let rule = gauss_hermite_rule(DEFAULT_NODES).unwrap();
    let mut worst: f64 = 0.0;
    for (family, blocks) in [
        (Family::TwoPl, ndarray::array![[1.3, -0.4], [-0.7, 0.9]]),
        (Family::OnePl, ndarray::array![[0.5], [-1.2]]),
    ] {
        let e = em_e_step(&ds, family, &blocks, &rule).unwrap();
        for i in 0..ds.num_persons() {
            let integrand = |a: f64| {
                let mut p = normal_pdf(a);
                for j in 0..2 {
                    let z = match family {
                        Family::OnePl => a - blocks[[j, 0]],
                        _ => blocks[[j, 0]] * a + blocks[[j, 1]],
                    };
                    p *= if ds.values[[i, j]] == 1.0 { sigmoid(z) } else { 1.0 - sigmoid(z) };
                }
                p
            };
            let truth = trapezoid(integrand, -12.0, 12.0, 10_000).ln();
            worst = worst.max((e.person_log_marginal[i] - truth).abs());
        }
    }
    worst
}

/// Largest decrease of the marginal log-likelihood between consecutive EM
/// cycles (negative when every cycle ascended), and whether every run
/// converged.
pub fn em_worst_decrease() -> (f64, bool) {
    let mut worst = f64::NEG_INFINITY;
    let mut converged = true;
    for (family, seed) in [(Family::TwoPl, 1), (Family::OnePl, 2), (Family::TwoPl, 3)] {
        let (ds, _) = generate_synthetic(400, 12, 1, family, seed).unwrap();
        let fit = fit_em(&ds, family, &EmConfig::default()).unwrap();
        for w in fit.trace.windows(2) {
            worst = worst.max(w[0].log_marginal - w[1].log_marginal);
        }
        converged &= fit.converged;
    }
    (worst, converged)
}

/// Independent Gaussian target with the given scales.
pub struct Quadratic {
    pub scales: Vec<f64>,
}

impl Target for Quadratic {
    fn dim(&self) -> usize {
        self.scales.len()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for ((g, x), s) in grad.iter_mut().zip(q).zip(&self.scales) {
            *g = -x / (s * s);
            lp -= 0.5 * x * x / (s * s);
        }
        lp
    }
}

/// Log-log slope of the leapfrog energy error against the step size over a
/// fixed integration time.
pub fn leapfrog_energy_slope() -> f64 {
    let target = Quadratic {
        scales: vec![1.0, 0.7, 1.6, 0.9],
    };
    let inv_mass = vec![1.0; 4];
    let q0 = vec![0.8, -0.5, 1.2, 0.3];
    let p0 = vec![-0.4, 1.1, 0.2, -0.9];
    let mut grad0 = vec![0.0; 4];
    let lp0 = target.log_density_grad(&q0, &mut grad0);
    let h0 = hamiltonian(lp0, &p0, &inv_mass);
    let mut pts = Vec::new();
    for steps in [20usize, 40, 80, 160, 320] {
        let eps = 1.0 / steps as f64;
        let (mut q, mut p, mut g) = (q0.clone(), p0.clone(), grad0.clone());
        let lp = leapfrog(&target, &mut q, &mut p, &mut g, eps, steps, &inv_mass);
        let err = (hamiltonian(lp, &p, &inv_mass) - h0).abs();
        pts.push((eps.ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

/// HMC on a dataset with nothing observed samples the N(0, 1) prior. Returns
/// the largest standardized deviation of any coordinate's mean from 0 or
/// second moment from 1, using batch-means standard errors.
pub fn hmc_prior_recovery_max_z() -> f64 {
    let ds = ResponseDataset::new(Array2::zeros((3, 2)), Array2::from_elem((3, 2), false), DataKind::Binary).unwrap();
    let cfg = HmcConfig {
        num_samples: 2000,
        warmup: 200,
        seed: 4,
        ..HmcConfig::default()
    };
    let s = hmc_fit(&ds, Family::TwoPl, 1, ResponseKind::Bernoulli, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..7 {
        let xs: Vec<f64> = s
            .draws
            .iter()
            .map(|d| if c < 3 { d.abilities[[c, 0]] } else { d.blocks[[(c - 3) / 2, (c - 3) % 2]] })
            .collect();
        let (m, _) = mean_and_se(&xs);
        worst = worst.max(m.abs() / batch_means_se(&xs, 20));
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (v, _) = mean_and_se(&sq);
        worst = worst.max((v - 1.0).abs() / batch_means_se(&sq, 20));
    }
    worst
}

pub const GRAD_FLOOR: f64 = 1e-2;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn response(rng: &mut ChaCha8Rng, kind: ResponseKind) -> f64 {
    match kind {
        ResponseKind::Bernoulli => (rng.random::<f64>() < 0.5) as u8 as f64,
        ResponseKind::TruncatedNormal { .. } => 0.02 + 0.96 * rng.random::<f64>(),
    }
}

fn data_kind(kind: ResponseKind) -> DataKind {
    match kind {
        ResponseKind::Bernoulli => DataKind::Binary,
        ResponseKind::TruncatedNormal { .. } => DataKind::Polytomous,
    }
}

fn sampled_coords(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        index::sample(rng, len, max).into_vec()
    }
}

/// Log-likelihood of a set of cells as a function of theta, abilities and
/// blocks laid end to end.
fn cell_objective(model: &GenerativeModel, cells: &Cells, n: usize, m: usize, x: &[f64]) -> (f64, Vec<f64>) {
    let nt = model.params.num_scalars();
    let na = n * model.k_dim;
    let mut model = model.clone();
    model.params.set_flat(&x[..nt]).unwrap();
    let mut g = Graph::new();
    let theta = model.params.bind(&mut g);
    let a = g.leaf(Array2::from_shape_vec((n, model.k_dim), x[nt..nt + na].to_vec()).unwrap());
    let b = g.leaf(Array2::from_shape_vec((m, model.block_width()), x[nt + na..].to_vec()).unwrap());
    let out = model.cell_output(&mut g, &theta, a, b, cells).unwrap();
    let ll = model.cell_log_lik(&mut g, out, cells).unwrap();
    let total = g.sum(ll);
    g.backward(total).unwrap();
    model.params.zero_grad();
    model.params.accumulate(&g, &theta);
    let mut grad = model.params.grads_flat();
    grad.extend(g.grad(a).unwrap().iter());
    grad.extend(g.grad(b).unwrap().iter());
    (g.scalar_value(total), grad)
}

/// Worst relative error of the generative model gradient (network weights,
/// abilities and item blocks) over `configs` random configurations, per
/// family and response kind.
pub fn generative_gradient_errors(configs: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for family in Family::ALL {
        for kind in [ResponseKind::Bernoulli, ResponseKind::truncated_normal()] {
            let mut worst: f64 = 0.0;
            for _ in 0..configs {
                let k = if family == Family::OnePl { 1 } else { rng.random_range(1..=2) };
                let (n, m) = (3, 4);
                let mut model = GenerativeModel::new(family, k, kind, &mut rng).unwrap();
                // Move the residual head off zero so its gradient path is exercised.
                let flat: Vec<f64> = model
                    .params
                    .to_flat()
                    .iter()
                    .map(|v| v + 0.05 * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                model.params.set_flat(&flat).unwrap();
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
                let cells = Cells::new(
                    pairs.iter().map(|c| c.0).collect(),
                    pairs.iter().map(|c| c.1).collect(),
                    pairs.iter().map(|_| response(&mut rng, kind)).collect(),
                );
                let mut x = model.params.to_flat();
                x.extend(random_matrix(&mut rng, n, k, 1.5).iter());
                x.extend(random_matrix(&mut rng, m, model.block_width(), 1.5).iter());
                let nt = model.params.num_scalars();
                let mut coords = sampled_coords(&mut rng, nt, 30);
                coords.extend(nt..x.len());
                let (_, grad) = cell_objective(&model, &cells, n, m, &x);
                let c = check(|p| cell_objective(&model, &cells, n, m, p).0, &x, &grad, &coords, DEFAULT_STEP, GRAD_FLOOR).unwrap();
                worst = worst.max(c.max_relative_error);
            }
            out.push((format!("{family} {kind:?}"), worst));
        }
    }
    out
}

fn vibo_objective(vm: &VariationalModel, batch: &Batch, noise: &Noise, n: usize, x: &[f64]) -> (f64, Vec<f64>) {
    let nt = vm.model.params.num_scalars();
    let mut vm = vm.clone();
    vm.model.params.set_flat(&x[..nt]).unwrap();
    vm.phi.set_flat(&x[nt..]).unwrap();
    let mut g = Graph::new();
    let theta = vm.model.params.bind(&mut g);
    let phi = vm.phi.bind(&mut g);
    let f = vm.forward(&mut g, &theta, &phi, batch, noise).unwrap();
    let obj = vm.objective(&mut g, &f, n).unwrap();
    g.backward(obj).unwrap();
    vm.model.params.zero_grad();
    vm.phi.zero_grad();
    vm.model.params.accumulate(&g, &theta);
    vm.phi.accumulate(&g, &phi);
    let mut grad = vm.model.params.grads_flat();
    grad.extend(vm.phi.grads_flat());
    (g.scalar_value(obj), grad)
}

/// Worst relative error of the training objective's gradient with respect
/// to the generative and variational parameters, per posterior family, over
/// `configs` configurations cycling through the trainable families. Batches
/// include missing cells and a person with nothing observed.
pub fn objective_gradient_errors(configs: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = [Family::OnePl, Family::TwoPl, Family::ThreePl, Family::Link, Family::Deep, Family::Residual];
    let mut out = Vec::new();
    for posterior in [PosteriorFamily::Amortized, PosteriorFamily::Independent, PosteriorFamily::Unamortized] {
        let mut worst: f64 = 0.0;
        for (c, &family) in families.iter().cycle().take(configs).enumerate() {
            let kind = if c % 2 == 0 { ResponseKind::Bernoulli } else { ResponseKind::truncated_normal() };
            let k = if family == Family::OnePl { 1 } else { 1 + c % 2 };
            let (n, m) = (4, 3);
            let model = GenerativeModel::new(family, k, kind, &mut rng).unwrap();
            let vm = VariationalModel::new(model, posterior, n, m, &mut rng).unwrap();
            let values = Array2::from_shape_fn((n, m), |_| response(&mut rng, kind));
            let mask = Array2::from_shape_fn((n, m), |(i, j)| i != 3 && (i + j) % 4 != 1);
            let ds = ResponseDataset::new(values, mask, data_kind(kind)).unwrap();
            let batch = Batch::new(&ds, &[0, 1, 2, 3]).unwrap();
            let noise = Noise::sample(&mut rng, vm.item_shape(), (n, k));
            let mut x = vm.model.params.to_flat();
            x.extend(vm.phi.to_flat());
            let (_, grad) = vibo_objective(&vm, &batch, &noise, n, &x);
            let coords = sampled_coords(&mut rng, x.len(), 40);
            let r = check(|p| vibo_objective(&vm, &batch, &noise, n, p).0, &x, &grad, &coords, DEFAULT_STEP, GRAD_FLOOR).unwrap();
            worst = worst.max(r.max_relative_error);
        }
        out.push((format!("{posterior:?}"), worst));
    }
    out
}

/// Worst relative error of the hand-coded classical likelihood gradients
/// over `configs` configurations.
pub fn classical_gradient_error(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = [Family::OnePl, Family::TwoPl, Family::ThreePl, Family::Mirt2Pl];
    let mut worst: f64 = 0.0;
    for (c, &family) in families.iter().cycle().take(configs).enumerate() {
        let kind = if c % 3 == 0 { ResponseKind::truncated_normal() } else { ResponseKind::Bernoulli };
        let k = match family {
            Family::OnePl => 1,
            Family::Mirt2Pl => 2,
            _ => 1 + c % 2,
        };
        let (n, m) = (5, 4);
        let values = Array2::from_shape_fn((n, m), |_| response(&mut rng, kind));
        let mask = Array2::from_shape_fn((n, m), |(i, j)| (i * 7 + j) % 5 != 0);
        let ds = ResponseDataset::new(values, mask, data_kind(kind)).unwrap();
        let lik = ClassicalLikelihood::new(&ds, family, k, kind).unwrap();
        let w = lik.block_width();
        let split = |x: &[f64]| {
            (
                Array2::from_shape_vec((n, k), x[..n * k].to_vec()).unwrap(),
                Array2::from_shape_vec((m, w), x[n * k..].to_vec()).unwrap(),
            )
        };
        let mut x: Vec<f64> = random_matrix(&mut rng, n, k, 2.0).into_iter().collect();
        x.extend(random_matrix(&mut rng, m, w, 2.0));
        let (a, b) = split(&x);
        let mut ga = Array2::zeros(a.dim());
        let mut gb = Array2::zeros(b.dim());
        lik.eval(&a, &b, Some((&mut ga, &mut gb)));
        let grad: Vec<f64> = ga.iter().chain(gb.iter()).copied().collect();
        let coords: Vec<usize> = (0..x.len()).collect();
        let r = check(
            |p| {
                let (a, b) = split(p);
                lik.eval(&a, &b, None)
            },
            &x,
            &grad,
            &coords,
            DEFAULT_STEP,
            GRAD_FLOOR,
        )
        .unwrap();
        worst = worst.max(r.max_relative_error);
    }
    worst
}
