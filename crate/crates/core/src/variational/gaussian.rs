use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Normal distribution with diagonal covariance, parameterized by mean and
/// log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::Shape(format!(
                "mean of length {} with log-variance of length {}",
                mean.len(),
                log_variance.len()
            )));
        }
        if mean.iter().chain(&log_variance).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("gaussian parameters must be finite".into()));
        }
        Ok(DiagGaussian { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_variance.iter().map(|lv| lv.exp()).collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point of dimension {} for {}", x.len(), self.dim())));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.log_variance)
            .map(|((x, m), lv)| -0.5 * (LN_2PI + lv + (x - m).powi(2) / lv.exp()))
            .sum())
    }
}

/// Normalized product of Gaussian experts: precisions add and the mean is the
/// precision-weighted average. `prior = None` contributes nothing (a flat
/// expert); an empty factor list then has no proper product.
pub fn poe_combine(factors: &[DiagGaussian], prior: Option<&DiagGaussian>) -> Result<DiagGaussian> {
    let dim = match (prior, factors.first()) {
        (Some(p), _) => p.dim(),
        (None, Some(f)) => f.dim(),
        (None, None) => {
            return Err(Error::InvalidArgument("product of zero experts is improper".into()))
        }
    };
    if let Some(bad) = factors.iter().find(|f| f.dim() != dim) {
        return Err(Error::Shape(format!("expert of dimension {} in a product of dimension {dim}", bad.dim())));
    }
    let mut precision = vec![0.0; dim];
    let mut weighted = vec![0.0; dim];
    for expert in prior.into_iter().chain(factors) {
        for c in 0..dim {
            let p = (-expert.log_variance[c]).exp();
            precision[c] += p;
            weighted[c] += p * expert.mean[c];
        }
    }
    let mean = weighted.iter().zip(&precision).map(|(w, p)| w / p).collect();
    let log_variance = precision.iter().map(|p| -p.ln()).collect();
    DiagGaussian::new(mean, log_variance)
}

/// `KL(q || p)` summed over dimensions.
pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Shape(format!("KL between dimensions {} and {}", q.dim(), p.dim())));
    }
    Ok((0..q.dim())
        .map(|c| {
            let (mq, lq) = (q.mean[c], q.log_variance[c]);
            let (mp, lp) = (p.mean[c], p.log_variance[c]);
            0.5 * (lp - lq + ((lq.exp() + (mq - mp).powi(2)) / lp.exp()) - 1.0)
        })
        .sum())
}

/// `mean + exp(log_variance / 2) * noise`.
pub fn reparam_sample(q: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != q.dim() {
        return Err(Error::Shape(format!("noise of dimension {} for {}", noise.len(), q.dim())));
    }
    Ok(noise
        .iter()
        .zip(&q.mean)
        .zip(&q.log_variance)
        .map(|((e, m), lv)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Row-wise `KL(N(mean, exp(logvar)) || N(0, I))` as an `n x 1` node.
pub(crate) fn kl_to_standard(g: &mut Graph, mean: Var, logvar: Var) -> Result<Var> {
    let m2 = g.square(mean);
    let var = g.exp(logvar);
    let s = g.add(m2, var)?;
    let s = g.sub(s, logvar)?;
    let s = g.add_scalar(s, -1.0);
    let s = g.row_sum(s);
    Ok(g.scale(s, 0.5))
}

/// Reparameterized draw in the graph.
pub(crate) fn reparam(g: &mut Graph, mean: Var, logvar: Var, noise: Var) -> Result<Var> {
    let half = g.scale(logvar, 0.5);
    let sd = g.exp(half);
    let step = g.mul(sd, noise)?;
    g.add(mean, step)
}

/// Row-wise diagonal Gaussian log density of `x`, `n x 1`.
pub(crate) fn log_density(g: &mut Graph, x: Var, mean: Var, logvar: Var) -> Result<Var> {
    let diff = g.sub(x, mean)?;
    let sq = g.square(diff);
    let neg_lv = g.neg(logvar);
    let prec = g.exp(neg_lv);
    let quad = g.mul(sq, prec)?;
    let t = g.add(quad, logvar)?;
    let t = g.add_scalar(t, LN_2PI);
    let t = g.row_sum(t);
    Ok(g.scale(t, -0.5))
}
