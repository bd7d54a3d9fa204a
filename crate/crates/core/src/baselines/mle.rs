//! Joint maximum likelihood over abilities and item parameters.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::classical::ClassicalLikelihood;
use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::models::{Family, ItemBank, ResponseKind};
use crate::nn::{Adam, ParamStore};
use crate::rng;

/// Bound on every logit-scale parameter; without a prior, separable
/// persons and items would otherwise drift off to infinity.
pub const PARAM_CLAMP: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub trace_every: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            seed: 0,
            iterations: 2000,
            learning_rate: 5e-3,
            trace_every: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleTraceRecord {
    pub iteration: usize,
    pub log_lik: f64,
}

#[derive(Clone, Debug)]
pub struct MleFit {
    pub family: Family,
    pub abilities: Array2<f64>,
    pub blocks: Array2<f64>,
    pub items: ItemBank,
    pub trace: Vec<MleTraceRecord>,
}

pub fn fit_mle(
    ds: &ResponseDataset,
    family: Family,
    k_dim: usize,
    kind: ResponseKind,
    cfg: &MleConfig,
) -> Result<MleFit> {
    if !(cfg.learning_rate > 0.0) || cfg.trace_every == 0 {
        return Err(Error::InvalidArgument("learning rate and trace interval must be positive".into()));
    }
    ds.validate()?;
    let lik = ClassicalLikelihood::new(ds, family, k_dim, kind)?;
    let mut init = rng::stream(cfg.seed, rng::INIT);
    let mut small = |shape: (usize, usize)| {
        Array2::from_shape_fn(shape, |_| {
            let e: f64 = StandardNormal.sample(&mut init);
            0.1 * e
        })
    };
    let mut store = ParamStore::new();
    let a_id = store.add("abilities", small((ds.num_persons(), k_dim)));
    let b_id = store.add("items", small((ds.num_items(), lik.block_width())));
    let mut opt = Adam::new(cfg.learning_rate);
    let mut trace = Vec::new();
    for it in 0..cfg.iterations {
        let mut ga = Array2::zeros(store.get(a_id).dim());
        let mut gb = Array2::zeros(store.get(b_id).dim());
        let ll = lik.eval(store.get(a_id), store.get(b_id), Some((&mut ga, &mut gb)));
        if !ll.is_finite() {
            return Err(Error::Divergence(format!("log-likelihood became {ll} at iteration {it}")));
        }
        // Adam minimizes; ascend the likelihood.
        *store.grad_mut(a_id) = -ga;
        *store.grad_mut(b_id) = -gb;
        opt.step(&mut store);
        for id in [a_id, b_id] {
            store.get_mut(id).mapv_inplace(|x| x.clamp(-PARAM_CLAMP, PARAM_CLAMP));
        }
        if !store.all_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after iteration {it}")));
        }
        if it % cfg.trace_every == 0 || it + 1 == cfg.iterations {
            trace.push(MleTraceRecord { iteration: it, log_lik: ll });
        }
    }
    let abilities = store.get(a_id).clone();
    let blocks = store.get(b_id).clone();
    let items = ItemBank::from_blocks(family, k_dim, &blocks)?;
    Ok(MleFit {
        family,
        abilities,
        blocks,
        items,
        trace,
    })
}
