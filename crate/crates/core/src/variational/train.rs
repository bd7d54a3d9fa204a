use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::vibo::{Batch, Noise, PosteriorFamily, VariationalModel};
use crate::autodiff::Graph;
use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::models::GenerativeModel;
use crate::nn::Adam;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Record the objective every this many iterations.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            iterations: 10_000,
            learning_rate: 5e-3,
            batch_size: 128,
            trace_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidArgument("trace interval must be positive".into()));
        }
        Ok(())
    }
}

/// One minibatch estimate. `vibo` is the full-data objective divided by the
/// number of persons; `recon` and `d_ability` are batch means; `d_item` is the
/// whole item divergence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub vibo: f64,
    pub recon: f64,
    pub d_ability: f64,
    pub d_item: f64,
}

#[derive(Clone, Debug)]
pub struct VariationalFit {
    pub model: VariationalModel,
    pub trace: Vec<TraceRecord>,
}

pub fn write_trace<W: Write>(trace: &[TraceRecord], mut w: W) -> Result<()> {
    for t in trace {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Builds the variational posterior around `model` and maximizes the bound.
pub fn fit_vibo(
    ds: &ResponseDataset,
    model: GenerativeModel,
    posterior: PosteriorFamily,
    cfg: &TrainConfig,
) -> Result<VariationalFit> {
    cfg.validate()?;
    ds.validate()?;
    let mut init = rng::stream(cfg.seed, rng::INIT);
    let vm = VariationalModel::new(model, posterior, ds.num_persons(), ds.num_items(), &mut init)?;
    train(ds, vm, cfg)
}

/// Continues training an existing variational model.
pub fn train(ds: &ResponseDataset, mut vm: VariationalModel, cfg: &TrainConfig) -> Result<VariationalFit> {
    cfg.validate()?;
    if ds.num_items() != vm.num_items() {
        return Err(Error::Shape(format!("dataset has {} items, model {}", ds.num_items(), vm.num_items())));
    }
    if vm.posterior == PosteriorFamily::Unamortized && ds.num_persons() != vm.num_persons() {
        return Err(Error::Shape(format!(
            "dataset has {} persons, posterior table {}",
            ds.num_persons(),
            vm.num_persons()
        )));
    }
    vm.model.kind.check_dataset(ds)?;
    let n = ds.num_persons();
    let k = vm.k_dim();
    let mut rng = rng::stream(cfg.seed, rng::TRAINING);
    let mut theta_opt = Adam::new(cfg.learning_rate);
    let mut phi_opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let bs = cfg.batch_size.min(n);
    let mut trace = Vec::new();
    for it in 0..cfg.iterations {
        if cursor + bs > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let persons = &order[cursor..cursor + bs];
        cursor += bs;
        let batch = Batch::new(ds, persons)?;
        let noise = Noise::sample(&mut rng, vm.item_shape(), (bs, k));

        let mut g = Graph::new();
        let theta = vm.model.params.bind(&mut g);
        let phi = vm.phi.bind(&mut g);
        let f = vm.forward(&mut g, &theta, &phi, &batch, &noise)?;
        let obj = vm.objective(&mut g, &f, n)?;
        let value = g.scalar_value(obj);
        if !value.is_finite() {
            return Err(Error::Divergence(format!("objective became {value} at iteration {it}")));
        }
        let loss = g.neg(obj);
        g.backward(loss)?;
        vm.model.params.zero_grad();
        vm.phi.zero_grad();
        vm.model.params.accumulate(&g, &theta);
        vm.phi.accumulate(&g, &phi);
        if !(vm.model.params.grads_finite() && vm.phi.grads_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at iteration {it}")));
        }
        theta_opt.step(&mut vm.model.params);
        phi_opt.step(&mut vm.phi);
        if !(vm.model.params.all_finite() && vm.phi.all_finite()) {
            return Err(Error::Divergence(format!("non-finite parameters after iteration {it}")));
        }
        if it % cfg.trace_every == 0 || it + 1 == cfg.iterations {
            trace.push(TraceRecord {
                iteration: it,
                vibo: value,
                recon: g.value(f.recon).mean().unwrap_or(0.0),
                d_ability: g.value(f.d_ability).mean().unwrap_or(0.0),
                d_item: g.scalar_value(f.d_item),
            });
        }
    }
    Ok(VariationalFit { model: vm, trace })
}
