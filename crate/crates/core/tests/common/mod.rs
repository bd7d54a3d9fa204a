#![allow(dead_code)]

pub mod checks;

use ndarray::Array2;
use varirt::autodiff::sigmoid;
use varirt::baselines::gauss_hermite_rule;
use varirt::data::{DataKind, ResponseDataset};
use varirt::models::Family;

/// `log p(r)` for one person with standard Normal priors on the ability and
/// every item parameter. Given the ability, items are independent, so the
/// item integrals nest inside the ability integral.
pub fn single_person_log_marginal(family: Family, responses: &[f64]) -> f64 {
    let rule = gauss_hermite_rule(61).unwrap();
    let lik = |r: f64, p: f64| if r == 1.0 { p } else { 1.0 - p };
    let mut total = 0.0;
    for (&a, &wa) in rule.nodes.iter().zip(&rule.weights) {
        let mut prod = 1.0;
        for &r in responses {
            let item = match family {
                Family::OnePl => rule.expect(|d| lik(r, sigmoid(a - d))),
                Family::TwoPl => rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&k, &wk)| wk * rule.expect(|d| lik(r, sigmoid(k * a + d))))
                    .sum(),
                other => panic!("no oracle for {other}"),
            };
            prod *= item;
        }
        total += wa * prod;
    }
    total.ln()
}

pub fn binary_row(responses: &[f64]) -> ResponseDataset {
    let values = Array2::from_shape_vec((1, responses.len()), responses.to_vec()).unwrap();
    ResponseDataset::fully_observed(values, DataKind::Binary).unwrap()
}

/// Composite trapezoid rule on `[lo, hi]` with `n` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * f(lo) + inner + 0.5 * f(hi))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Standard error of the mean of an autocorrelated chain by batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let len = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    mean_and_se(&means).1
}
