//! Marginal maximum likelihood by EM over a Gauss-Hermite grid of scalar
//! abilities, for binary 1PL and 2PL models.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mle::PARAM_CLAMP;
use super::quadrature::{gauss_hermite_rule, QuadratureRule, DEFAULT_NODES};
use crate::autodiff::{log_sigmoid, sigmoid};
use crate::data::{DataKind, ResponseDataset};
use crate::error::{Error, Result};
use crate::models::{Family, ItemBank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_cycles: usize,
    /// Stop once the marginal log-likelihood improves by less than this.
    pub tolerance: f64,
    pub nodes: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_cycles: 500,
            tolerance: 1e-6,
            nodes: DEFAULT_NODES,
        }
    }
}

/// Posterior node weights per person under fixed item parameters.
#[derive(Clone, Debug)]
pub struct EStep {
    /// `N x Q`, each row sums to one.
    pub weights: Array2<f64>,
    pub person_log_marginal: Vec<f64>,
    pub log_marginal: f64,
}

#[derive(Clone, Debug)]
pub struct MStep {
    pub blocks: Array2<f64>,
    /// Items that hit the parameter bound or needed gradient fallback.
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmTraceRecord {
    pub cycle: usize,
    pub log_marginal: f64,
    pub flagged_items: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub family: Family,
    pub blocks: Array2<f64>,
    pub items: ItemBank,
    /// Posterior mean ability of each person under the final items.
    pub abilities: Array2<f64>,
    pub trace: Vec<EmTraceRecord>,
    pub converged: bool,
}

fn check_inputs(ds: &ResponseDataset, family: Family, blocks: &Array2<f64>) -> Result<()> {
    if !matches!(family, Family::OnePl | Family::TwoPl) {
        return Err(Error::InvalidArgument(format!(
            "EM supports 1pl and 2pl with scalar ability, not {family}"
        )));
    }
    if ds.kind != DataKind::Binary {
        return Err(Error::InvalidArgument("EM needs binary responses".into()));
    }
    if blocks.dim() != (ds.num_items(), family.block_width(1)) {
        return Err(Error::Shape(format!(
            "item parameters {:?} for {} items of {family}",
            blocks.dim(),
            ds.num_items()
        )));
    }
    Ok(())
}

fn logit(family: Family, theta: &[f64], x: f64) -> f64 {
    match family {
        Family::OnePl => x - theta[0],
        _ => theta[0] * x + theta[1],
    }
}

/// `log p(r = 1 | x_q)` and `log p(r = 0 | x_q)`, `M x Q` each.
fn node_log_probs(family: Family, blocks: &Array2<f64>, rule: &QuadratureRule) -> (Array2<f64>, Array2<f64>) {
    let (m, q) = (blocks.nrows(), rule.count());
    let mut pos = Array2::zeros((m, q));
    let mut neg = Array2::zeros((m, q));
    for j in 0..m {
        let theta = blocks.row(j).to_vec();
        for (t, &x) in rule.nodes.iter().enumerate() {
            let z = logit(family, &theta, x);
            pos[[j, t]] = log_sigmoid(z);
            neg[[j, t]] = log_sigmoid(-z);
        }
    }
    (pos, neg)
}

pub fn em_e_step(ds: &ResponseDataset, family: Family, blocks: &Array2<f64>, rule: &QuadratureRule) -> Result<EStep> {
    check_inputs(ds, family, blocks)?;
    let (n, q) = (ds.num_persons(), rule.count());
    let (pos, neg) = node_log_probs(family, blocks, rule);
    let log_w: Vec<f64> = rule.weights.iter().map(|w| w.ln()).collect();
    let mut weights = Array2::zeros((n, q));
    let mut person = Vec::with_capacity(n);
    let mut acc = vec![0.0; q];
    for i in 0..n {
        acc.copy_from_slice(&log_w);
        for j in 0..ds.num_items() {
            if !ds.mask[[i, j]] {
                continue;
            }
            let table = if ds.values[[i, j]] == 1.0 { pos.row(j) } else { neg.row(j) };
            for (a, l) in acc.iter_mut().zip(table.iter()) {
                *a += l;
            }
        }
        let top = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = acc.iter().map(|a| (a - top).exp()).sum();
        let lm = top + total.ln();
        for (t, a) in acc.iter().enumerate() {
            weights[[i, t]] = (a - lm).exp();
        }
        person.push(lm);
    }
    let log_marginal = person.iter().sum();
    Ok(EStep {
        weights,
        person_log_marginal: person,
        log_marginal,
    })
}

/// Expected correct counts and expected totals per item and node.
fn expected_counts(ds: &ResponseDataset, e: &EStep) -> (Array2<f64>, Array2<f64>) {
    let (m, q) = (ds.num_items(), e.weights.ncols());
    let mut correct = Array2::zeros((m, q));
    let mut total = Array2::zeros((m, q));
    for i in 0..ds.num_persons() {
        let w = e.weights.row(i);
        for j in 0..m {
            if !ds.mask[[i, j]] {
                continue;
            }
            let r = ds.values[[i, j]];
            for t in 0..q {
                total[[j, t]] += w[t];
                correct[[j, t]] += r * w[t];
            }
        }
    }
    (correct, total)
}

fn item_objective(family: Family, theta: &[f64], correct: &[f64], total: &[f64], rule: &QuadratureRule) -> f64 {
    rule.nodes
        .iter()
        .enumerate()
        .map(|(t, &x)| {
            let z = logit(family, theta, x);
            correct[t] * log_sigmoid(z) + (total[t] - correct[t]) * log_sigmoid(-z)
        })
        .sum()
}

/// Damped Newton ascent on one item's expected complete-data
/// log-likelihood. Returns the new parameters and whether the item was
/// flagged.
fn maximize_item(family: Family, start: &[f64], correct: &[f64], total: &[f64], rule: &QuadratureRule) -> (Vec<f64>, bool) {
    let dim = start.len();
    let mut theta = start.to_vec();
    let mut value = item_objective(family, &theta, correct, total, rule);
    let mut flagged = false;
    for _ in 0..100 {
        let mut grad = [0.0; 2];
        let mut info = [[0.0; 2]; 2];
        for (t, &x) in rule.nodes.iter().enumerate() {
            let z = logit(family, &theta, x);
            let s = sigmoid(z);
            let dz: [f64; 2] = match family {
                Family::OnePl => [-1.0, 0.0],
                _ => [x, 1.0],
            };
            let resid = correct[t] - total[t] * s;
            let curv = total[t] * s * (1.0 - s);
            for a in 0..dim {
                grad[a] += resid * dz[a];
                for b in 0..dim {
                    info[a][b] += curv * dz[a] * dz[b];
                }
            }
        }
        let step: Vec<f64> = if dim == 1 {
            if info[0][0] > 1e-12 {
                vec![grad[0] / info[0][0]]
            } else {
                flagged = true;
                vec![grad[0]]
            }
        } else {
            let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
            if det > 1e-12 * (info[0][0] * info[1][1]).max(1e-300) {
                vec![
                    (info[1][1] * grad[0] - info[0][1] * grad[1]) / det,
                    (info[0][0] * grad[1] - info[1][0] * grad[0]) / det,
                ]
            } else {
                flagged = true;
                grad[..2].to_vec()
            }
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(p, s)| (p + scale * s).clamp(-PARAM_CLAMP, PARAM_CLAMP))
                .collect();
            let v = item_objective(family, &cand, correct, total, rule);
            if v >= value {
                accepted = Some((cand, v));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, v)) = accepted else { break };
        let moved = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = cand;
        value = v;
        if moved < 1e-10 {
            break;
        }
    }
    if theta.iter().any(|p| p.abs() >= PARAM_CLAMP) {
        flagged = true;
    }
    (theta, flagged)
}

pub fn em_m_step(
    ds: &ResponseDataset,
    family: Family,
    blocks: &Array2<f64>,
    e: &EStep,
    rule: &QuadratureRule,
) -> Result<MStep> {
    check_inputs(ds, family, blocks)?;
    if e.weights.dim() != (ds.num_persons(), rule.count()) {
        return Err(Error::Shape("E-step weights do not match the dataset and rule".into()));
    }
    let (correct, total) = expected_counts(ds, e);
    let mut next = blocks.clone();
    let mut flagged = Vec::new();
    for j in 0..ds.num_items() {
        let (c, t) = (correct.row(j).to_vec(), total.row(j).to_vec());
        let (theta, flag) = maximize_item(family, &blocks.row(j).to_vec(), &c, &t, rule);
        for (a, v) in theta.into_iter().enumerate() {
            next[[j, a]] = v;
        }
        if flag {
            flagged.push(j);
        }
    }
    Ok(MStep { blocks: next, flagged })
}

/// Expected complete-data log-likelihood of `blocks` under E-step weights.
pub fn expected_complete_log_lik(
    ds: &ResponseDataset,
    family: Family,
    blocks: &Array2<f64>,
    e: &EStep,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_inputs(ds, family, blocks)?;
    let (correct, total) = expected_counts(ds, e);
    Ok((0..ds.num_items())
        .map(|j| {
            item_objective(
                family,
                &blocks.row(j).to_vec(),
                correct.row(j).as_slice().expect("contiguous"),
                total.row(j).as_slice().expect("contiguous"),
                rule,
            )
        })
        .sum())
}

/// Posterior mean ability per person, `N x 1`.
pub fn posterior_mean_abilities(e: &EStep, rule: &QuadratureRule) -> Array2<f64> {
    let n = e.weights.nrows();
    Array2::from_shape_fn((n, 1), |(i, _)| {
        e.weights.row(i).iter().zip(&rule.nodes).map(|(w, x)| w * x).sum()
    })
}

pub fn fit_em(ds: &ResponseDataset, family: Family, cfg: &EmConfig) -> Result<EmFit> {
    ds.validate()?;
    let rule = gauss_hermite_rule(cfg.nodes)?;
    let mut blocks = match family {
        Family::OnePl => Array2::zeros((ds.num_items(), 1)),
        _ => Array2::from_shape_fn((ds.num_items(), 2), |(_, c)| if c == 0 { 1.0 } else { 0.0 }),
    };
    check_inputs(ds, family, &blocks)?;
    let mut e = em_e_step(ds, family, &blocks, &rule)?;
    let mut trace = vec![EmTraceRecord {
        cycle: 0,
        log_marginal: e.log_marginal,
        flagged_items: vec![],
    }];
    let mut converged = false;
    for cycle in 1..=cfg.max_cycles {
        let m = em_m_step(ds, family, &blocks, &e, &rule)?;
        blocks = m.blocks;
        let next = em_e_step(ds, family, &blocks, &rule)?;
        if !next.log_marginal.is_finite() {
            return Err(Error::Divergence(format!("marginal likelihood became {} in cycle {cycle}", next.log_marginal)));
        }
        let gain = next.log_marginal - e.log_marginal;
        trace.push(EmTraceRecord {
            cycle,
            log_marginal: next.log_marginal,
            flagged_items: m.flagged,
        });
        e = next;
        if gain < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let abilities = posterior_mean_abilities(&e, &rule);
    let items = ItemBank::from_blocks(family, 1, &blocks)?;
    Ok(EmFit {
        family,
        blocks,
        items,
        abilities,
        trace,
        converged,
    })
}
