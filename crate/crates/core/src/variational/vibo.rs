//! The variational bound for item response models.
//!
//! Items get free diagonal Gaussian posteriors. A person's ability posterior
//! is a product of Gaussian experts, one per observed response, each produced
//! by a shared encoder from the sampled item parameters and the response;
//! the standard Normal prior is always one of the experts, and missing
//! responses contribute nothing. The bound per person is
//! `E[log p(r | a, d)] - E_d[KL(q(a | d, r) || p(a))] - KL(q(d) || p(d))`.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gaussian::{kl_to_standard, log_density, reparam, DiagGaussian};
use crate::autodiff::{Graph, Var};
use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::models::{Cells, GenerativeModel};
use crate::nn::{Bound, Mlp, OutputTransform, ParamId, ParamStore};
use crate::posterior::{PosteriorDraw, PosteriorSamples};

pub const ENCODER_HIDDEN: usize = 64;

/// How the ability posterior is parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorFamily {
    /// Product of experts over `(sampled item, response)` pairs.
    Amortized,
    /// Product of experts over responses alone; ignores the sampled items.
    Independent,
    /// One free Gaussian per person.
    Unamortized,
}

#[derive(Clone, Debug)]
enum AbilityPosterior {
    Encoder(Mlp),
    Table { mean: ParamId, logvar: ParamId },
}

/// Variational posterior `q(a, d | r)` paired with its generative model.
#[derive(Clone, Debug)]
pub struct VariationalModel {
    pub model: GenerativeModel,
    pub posterior: PosteriorFamily,
    /// Variational parameters.
    pub phi: ParamStore,
    num_persons: usize,
    num_items: usize,
    item_mean: ParamId,
    item_logvar: ParamId,
    ability: AbilityPosterior,
}

/// Observed cells of a set of persons.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Dataset row of each batch member.
    pub persons: Vec<usize>,
    /// `person` indexes into `persons`.
    pub cells: Cells,
}

impl Batch {
    pub fn new(ds: &ResponseDataset, persons: &[usize]) -> Result<Self> {
        let mut p = Vec::new();
        let mut it = Vec::new();
        let mut r = Vec::new();
        for (b, &i) in persons.iter().enumerate() {
            if i >= ds.num_persons() {
                return Err(Error::InvalidArgument(format!(
                    "person {i} not in a dataset of {}",
                    ds.num_persons()
                )));
            }
            for j in 0..ds.num_items() {
                if ds.mask[[i, j]] {
                    p.push(b);
                    it.push(j);
                    r.push(ds.values[[i, j]]);
                }
            }
        }
        Ok(Batch {
            persons: persons.to_vec(),
            cells: Cells::new(p, it, r),
        })
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }
}

/// Standard Normal draws driving one forward pass.
#[derive(Clone, Debug)]
pub struct Noise {
    /// `M x P`.
    pub items: Array2<f64>,
    /// `B x K`.
    pub abilities: Array2<f64>,
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, items: (usize, usize), abilities: (usize, usize)) -> Self {
        let mut draw = |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng));
        let items = draw(items);
        let abilities = draw(abilities);
        Noise { items, abilities }
    }

    pub fn zeros(items: (usize, usize), abilities: (usize, usize)) -> Self {
        Noise {
            items: Array2::zeros(items),
            abilities: Array2::zeros(abilities),
        }
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Per person `log p(r | a, d)`, `B x 1`.
    pub recon: Var,
    /// Per person `KL(q(a | d, r) || N(0, I))`, `B x 1`.
    pub d_ability: Var,
    /// `KL(q(d) || N(0, I))`, `1 x 1`.
    pub d_item: Var,
    pub ability_mean: Var,
    pub ability_logvar: Var,
    pub abilities: Var,
    pub items: Var,
    pub item_mean: Var,
    pub item_logvar: Var,
}

/// The bound and its parts for one person.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParts {
    pub vibo: f64,
    pub recon: f64,
    pub d_ability: f64,
    pub d_item: f64,
}

/// See [`VariationalModel::importance_weights`].
#[derive(Clone, Debug)]
pub struct ImportanceWeights {
    pub person: Array1<f64>,
    pub item: f64,
}

/// Encoder input rows, deduplicated: cells sharing an item and response
/// value share a row.
struct EncoderRows {
    item: Arc<[usize]>,
    response: Array2<f64>,
    cell_row: Arc<[usize]>,
}

fn encoder_rows(cells: &Cells, num_items: usize, use_item: bool) -> EncoderRows {
    let mut item = Vec::new();
    let mut response = Vec::new();
    let mut cell_row = Vec::with_capacity(cells.len());
    let binary = cells.response.iter().all(|&r| r == 0.0 || r == 1.0);
    if binary {
        let slots = if use_item { 2 * num_items } else { 2 };
        let mut table = vec![usize::MAX; slots];
        for (&j, &r) in cells.item.iter().zip(cells.response.iter()) {
            let key = if use_item { 2 * j } else { 0 } + r as usize;
            if table[key] == usize::MAX {
                table[key] = item.len();
                item.push(j);
                response.push(r);
            }
            cell_row.push(table[key]);
        }
    } else {
        let mut table: HashMap<(usize, u64), usize> = HashMap::new();
        for (&j, &r) in cells.item.iter().zip(cells.response.iter()) {
            let key = (if use_item { j } else { 0 }, r.to_bits());
            let row = *table.entry(key).or_insert_with(|| {
                item.push(j);
                response.push(r);
                item.len() - 1
            });
            cell_row.push(row);
        }
    }
    let n = response.len();
    EncoderRows {
        item: item.into(),
        response: Array2::from_shape_vec((n, 1), response).expect("column"),
        cell_row: cell_row.into(),
    }
}

impl VariationalModel {
    pub fn new<R: Rng + ?Sized>(
        model: GenerativeModel,
        posterior: PosteriorFamily,
        num_persons: usize,
        num_items: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_items == 0 {
            return Err(Error::InvalidArgument("no items".into()));
        }
        let k = model.k_dim;
        let width = model.block_width();
        let mut phi = ParamStore::new();
        let item_mean = phi.add(
            "item.mean",
            Array2::from_shape_fn((num_items, width), |_| {
                let e: f64 = StandardNormal.sample(rng);
                0.1 * e
            }),
        );
        let item_logvar = phi.add("item.logvar", Array2::zeros((num_items, width)));
        let h = ENCODER_HIDDEN;
        let ability = match posterior {
            PosteriorFamily::Amortized => AbilityPosterior::Encoder(Mlp::new(
                &mut phi,
                "encoder",
                &[width + 1, h, h, 2 * k],
                OutputTransform::None,
                rng,
            )),
            PosteriorFamily::Independent => AbilityPosterior::Encoder(Mlp::new(
                &mut phi,
                "encoder",
                &[1, h, h, 2 * k],
                OutputTransform::None,
                rng,
            )),
            PosteriorFamily::Unamortized => AbilityPosterior::Table {
                mean: phi.add("ability.mean", Array2::zeros((num_persons, k))),
                logvar: phi.add("ability.logvar", Array2::zeros((num_persons, k))),
            },
        };
        Ok(VariationalModel {
            model,
            posterior,
            phi,
            num_persons,
            num_items,
            item_mean,
            item_logvar,
            ability,
        })
    }

    pub fn num_persons(&self) -> usize {
        self.num_persons
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn k_dim(&self) -> usize {
        self.model.k_dim
    }

    pub fn item_shape(&self) -> (usize, usize) {
        (self.num_items, self.model.block_width())
    }

    pub fn item_mean(&self) -> &Array2<f64> {
        self.phi.get(self.item_mean)
    }

    pub fn item_logvar(&self) -> &Array2<f64> {
        self.phi.get(self.item_logvar)
    }

    /// Per-item posterior `q(d_j)`.
    pub fn item_posterior(&self) -> Vec<DiagGaussian> {
        let (m, lv) = (self.item_mean(), self.item_logvar());
        (0..self.num_items)
            .map(|j| DiagGaussian {
                mean: m.row(j).to_vec(),
                log_variance: lv.row(j).to_vec(),
            })
            .collect()
    }

    /// The shared encoder, for amortized families.
    pub fn encoder(&self) -> Option<&Mlp> {
        match &self.ability {
            AbilityPosterior::Encoder(m) => Some(m),
            AbilityPosterior::Table { .. } => None,
        }
    }

    /// Ability posterior mean and log-variance for the batch, given item
    /// parameter values.
    fn ability_posterior(&self, g: &mut Graph, phi: &Bound, batch: &Batch, items: Var) -> Result<(Var, Var)> {
        let b = batch.len();
        let k = self.k_dim();
        match &self.ability {
            AbilityPosterior::Table { mean, logvar } => {
                if let Some(bad) = batch.persons.iter().find(|&&i| i >= self.num_persons) {
                    return Err(Error::InvalidArgument(format!(
                        "unknown person {bad}: the posterior table holds {}",
                        self.num_persons
                    )));
                }
                let idx: Arc<[usize]> = batch.persons.clone().into();
                let m = g.gather_rows(phi.var(*mean), idx.clone())?;
                let lv = g.gather_rows(phi.var(*logvar), idx)?;
                Ok((m, lv))
            }
            AbilityPosterior::Encoder(net) => {
                if batch.cells.is_empty() {
                    let m = g.constant(Array2::zeros((b, k)));
                    let lv = g.constant(Array2::zeros((b, k)));
                    return Ok((m, lv));
                }
                let use_item = self.posterior == PosteriorFamily::Amortized;
                let rows = encoder_rows(&batch.cells, self.num_items, use_item);
                let r = g.constant(rows.response);
                let input = if use_item {
                    let d = g.gather_rows(items, rows.item)?;
                    g.concat_cols(&[d, r])?
                } else {
                    r
                };
                let out = net.forward(g, phi, input)?;
                let mu_f = g.slice_cols(out, 0, k)?;
                let lv_f = g.slice_cols(out, k, k)?;
                let neg = g.neg(lv_f);
                let prec_f = g.exp(neg);
                let pm_f = g.mul(prec_f, mu_f)?;
                let prec_c = g.gather_rows(prec_f, rows.cell_row.clone())?;
                let pm_c = g.gather_rows(pm_f, rows.cell_row)?;
                let prec = g.segment_sum(prec_c, batch.cells.person.clone(), b)?;
                let pm = g.segment_sum(pm_c, batch.cells.person.clone(), b)?;
                // The N(0, I) prior expert: precision 1, mean 0.
                let prec = g.add_scalar(prec, 1.0);
                let inv = g.recip(prec);
                let mean = g.mul(pm, inv)?;
                let lp = g.log(prec);
                let logvar = g.neg(lp);
                Ok((mean, logvar))
            }
        }
    }

    /// One reparameterized pass for a batch. `noise.items` is shared by every
    /// person in the batch.
    pub fn forward(&self, g: &mut Graph, theta: &Bound, phi: &Bound, batch: &Batch, noise: &Noise) -> Result<Forward> {
        if noise.items.dim() != self.item_shape() {
            return Err(Error::Shape(format!(
                "item noise {:?} for items {:?}",
                noise.items.dim(),
                self.item_shape()
            )));
        }
        if noise.abilities.dim() != (batch.len(), self.k_dim()) {
            return Err(Error::Shape(format!(
                "ability noise {:?} for a batch of {} in dimension {}",
                noise.abilities.dim(),
                batch.len(),
                self.k_dim()
            )));
        }
        let item_mean = phi.var(self.item_mean);
        let item_logvar = phi.var(self.item_logvar);
        let eps_d = g.constant(noise.items.clone());
        let items = reparam(g, item_mean, item_logvar, eps_d)?;
        let kl_items = kl_to_standard(g, item_mean, item_logvar)?;
        let d_item = g.sum(kl_items);

        let (ability_mean, ability_logvar) = self.ability_posterior(g, phi, batch, items)?;
        let eps_a = g.constant(noise.abilities.clone());
        let abilities = reparam(g, ability_mean, ability_logvar, eps_a)?;
        let d_ability = kl_to_standard(g, ability_mean, ability_logvar)?;

        let recon = if batch.cells.is_empty() {
            g.constant(Array2::zeros((batch.len(), 1)))
        } else {
            let out = self.model.cell_output(g, theta, abilities, items, &batch.cells)?;
            let ll = self.model.cell_log_lik(g, out, &batch.cells)?;
            g.segment_sum(ll, batch.cells.person.clone(), batch.len())?
        };
        Ok(Forward {
            recon,
            d_ability,
            d_item,
            ability_mean,
            ability_logvar,
            abilities,
            items,
            item_mean,
            item_logvar,
        })
    }

    /// Full-data objective per person from a batch:
    /// `mean_b(recon_b - d_ability_b) - d_item / total_persons`, an unbiased
    /// estimate of the summed bound divided by the number of persons, with the
    /// item divergence counted once.
    pub fn objective(&self, g: &mut Graph, f: &Forward, total_persons: usize) -> Result<Var> {
        let per = g.sub(f.recon, f.d_ability)?;
        let mean = g.mean(per);
        let item = g.scale(f.d_item, 1.0 / total_persons.max(1) as f64);
        g.sub(mean, item)
    }

    /// Single-sample per-person bound `recon - d_ability - d_item`.
    pub fn bound_parts(&self, ds: &ResponseDataset, persons: &[usize], noise: &Noise) -> Result<Vec<BoundParts>> {
        let batch = Batch::new(ds, persons)?;
        let mut g = Graph::new();
        let theta = self.model.params.bind(&mut g);
        let phi = self.phi.bind(&mut g);
        let f = self.forward(&mut g, &theta, &phi, &batch, noise)?;
        let d_item = g.scalar_value(f.d_item);
        Ok((0..batch.len())
            .map(|b| {
                let recon = g.value(f.recon)[[b, 0]];
                let d_ability = g.value(f.d_ability)[[b, 0]];
                BoundParts {
                    vibo: recon - d_ability - d_item,
                    recon,
                    d_ability,
                    d_item,
                }
            })
            .collect())
    }

    /// Bound for one person, drawing fresh noise.
    pub fn vibo_forward<R: Rng + ?Sized>(&self, ds: &ResponseDataset, person: usize, rng: &mut R) -> Result<BoundParts> {
        let noise = Noise::sample(rng, self.item_shape(), (1, self.k_dim()));
        Ok(self.bound_parts(ds, &[person], &noise)?[0])
    }

    /// Log importance weights of one joint draw, split into the per-person
    /// part `log p(r_i | a_i, d) + log p(a_i) - log q(a_i | d, r_i)` and the
    /// shared item part `log p(d) - log q(d)`.
    pub fn importance_weights(&self, batch: &Batch, noise: &Noise) -> Result<ImportanceWeights> {
        let mut g = Graph::new();
        let theta = self.model.params.bind(&mut g);
        let phi = self.phi.bind(&mut g);
        let f = self.forward(&mut g, &theta, &phi, batch, noise)?;
        let zero_d = g.constant(Array2::zeros(self.item_shape()));
        let log_pd = log_density(&mut g, f.items, zero_d, zero_d)?;
        let log_qd = log_density(&mut g, f.items, f.item_mean, f.item_logvar)?;
        let item = g.value(log_pd).sum() - g.value(log_qd).sum();
        let zero_a = g.constant(Array2::zeros((batch.len(), self.k_dim())));
        let log_pa = log_density(&mut g, f.abilities, zero_a, zero_a)?;
        let log_qa = log_density(&mut g, f.abilities, f.ability_mean, f.ability_logvar)?;
        let recon = g.value(f.recon);
        let (pa, qa) = (g.value(log_pa), g.value(log_qa));
        let person = (0..batch.len())
            .map(|b| recon[[b, 0]] + pa[[b, 0]] - qa[[b, 0]])
            .collect();
        Ok(ImportanceWeights { person, item })
    }

    /// `log p(r_i, a_i, d) - log q(a_i, d | r_i)` per person for one joint draw.
    pub fn log_importance_weights(&self, batch: &Batch, noise: &Noise) -> Result<Array1<f64>> {
        let w = self.importance_weights(batch, noise)?;
        Ok(w.person.mapv(|x| x + w.item))
    }

    /// Ability posterior at the item means, for every person: `(mean, logvar)`.
    pub fn ability_posterior_at_item_means(&self, ds: &ResponseDataset) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = ds.num_persons();
        let k = self.k_dim();
        let mut means = Array2::zeros((n, k));
        let mut logvars = Array2::zeros((n, k));
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(512) {
            let batch = Batch::new(ds, chunk)?;
            let mut g = Graph::new();
            let phi = self.phi.bind(&mut g);
            let items = phi.var(self.item_mean);
            let (m, lv) = self.ability_posterior(&mut g, &phi, &batch, items)?;
            for (b, &i) in chunk.iter().enumerate() {
                means.row_mut(i).assign(&g.value(m).row(b));
                logvars.row_mut(i).assign(&g.value(lv).row(b));
            }
        }
        Ok((means, logvars))
    }

    /// Posterior mean abilities, evaluated at the item posterior means.
    pub fn ability_means(&self, ds: &ResponseDataset) -> Result<Array2<f64>> {
        Ok(self.ability_posterior_at_item_means(ds)?.0)
    }

    /// Joint draws `d ~ q(d)`, `a_i ~ q(a_i | d, r_i)`.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, ds: &ResponseDataset, draws: usize, rng: &mut R) -> Result<PosteriorSamples> {
        let n = ds.num_persons();
        let k = self.k_dim();
        let all: Vec<usize> = (0..n).collect();
        let batches: Vec<Batch> = all.chunks(512).map(|c| Batch::new(ds, c)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(draws);
        for _ in 0..draws {
            let eps_d: Array2<f64> = Array2::from_shape_fn(self.item_shape(), |_| StandardNormal.sample(rng));
            let mut abilities = Array2::zeros((n, k));
            let mut blocks = None;
            for batch in &batches {
                let noise = Noise {
                    items: eps_d.clone(),
                    abilities: Array2::from_shape_fn((batch.len(), k), |_| StandardNormal.sample(rng)),
                };
                let mut g = Graph::new();
                let theta = self.model.params.bind(&mut g);
                let phi = self.phi.bind(&mut g);
                let f = self.forward(&mut g, &theta, &phi, batch, &noise)?;
                for (b, &i) in batch.persons.iter().enumerate() {
                    abilities.row_mut(i).assign(&g.value(f.abilities).row(b));
                }
                blocks.get_or_insert_with(|| g.value(f.items).clone());
            }
            out.push(PosteriorDraw {
                abilities,
                blocks: blocks.expect("at least one batch"),
            });
        }
        Ok(PosteriorSamples {
            family: self.model.family,
            draws: out,
            stats: None,
        })
    }

    /// Number of scalar variational parameters.
    pub fn phi_param_count(&self) -> usize {
        self.phi.num_scalars()
    }
}
