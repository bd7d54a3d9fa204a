//! Generative response models: classical IRT and learned nonlinear variants.
//!
//! Item parameters travel as a `M x P` block matrix whose layout depends on
//! the family (see [`Family::block_width`]):
//!
//! | family                         | columns                      |
//! |--------------------------------|------------------------------|
//! | 1PL                            | `d`                          |
//! | 2PL, MIRT-2PL, Link, Deep, Res | `k_1 .. k_K, d`              |
//! | 3PL                            | `k_1 .. k_K, d, logit(g)`    |
//!
//! The 1PL logit is `a - d`; every other family uses `a.k + d`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, sigmoid, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, OutputTransform, ParamStore, TensorRecord};

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-7;
/// Logit equivalent of [`PROB_FLOOR`].
pub const LOGIT_CLAMP: f64 = 16.118_095_450_958_32;
/// Fixed standard deviation of the truncated-Normal response model.
pub const DEFAULT_RESPONSE_SIGMA: f64 = 0.1;
pub const HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "1pl")]
    OnePl,
    #[serde(rename = "2pl")]
    TwoPl,
    #[serde(rename = "3pl")]
    ThreePl,
    #[serde(rename = "mirt-2pl")]
    Mirt2Pl,
    #[serde(rename = "link")]
    Link,
    #[serde(rename = "deep")]
    Deep,
    #[serde(rename = "residual")]
    Residual,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::OnePl,
        Family::TwoPl,
        Family::ThreePl,
        Family::Mirt2Pl,
        Family::Link,
        Family::Deep,
        Family::Residual,
    ];

    pub fn is_classical(self) -> bool {
        matches!(self, Family::OnePl | Family::TwoPl | Family::ThreePl | Family::Mirt2Pl)
    }

    pub fn has_discrimination(self) -> bool {
        self != Family::OnePl
    }

    pub fn block_width(self, k_dim: usize) -> usize {
        match self {
            Family::OnePl => 1,
            Family::ThreePl => k_dim + 2,
            _ => k_dim + 1,
        }
    }

    pub fn check_dim(self, k_dim: usize) -> Result<()> {
        if k_dim == 0 {
            return Err(Error::InvalidArgument("ability dimension must be at least 1".into()));
        }
        if self == Family::OnePl && k_dim != 1 {
            return Err(Error::InvalidArgument(format!(
                "1pl requires a scalar ability, got K = {k_dim}"
            )));
        }
        Ok(())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::OnePl => "1pl",
            Family::TwoPl => "2pl",
            Family::ThreePl => "3pl",
            Family::Mirt2Pl => "mirt-2pl",
            Family::Link => "link",
            Family::Deep => "deep",
            Family::Residual => "residual",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model family '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResponseKind {
    Bernoulli,
    TruncatedNormal { sigma: f64 },
}

impl ResponseKind {
    pub fn truncated_normal() -> Self {
        ResponseKind::TruncatedNormal {
            sigma: DEFAULT_RESPONSE_SIGMA,
        }
    }

    pub fn check_response(self, r: f64) -> Result<()> {
        let ok = match self {
            ResponseKind::Bernoulli => r == 0.0 || r == 1.0,
            ResponseKind::TruncatedNormal { .. } => (0.0..=1.0).contains(&r),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("response {r} outside the support of {self:?}")))
        }
    }

    /// Every observed cell must lie in the support.
    pub fn check_dataset(self, ds: &crate::data::ResponseDataset) -> Result<()> {
        for ((i, j), &r) in ds.values.indexed_iter() {
            if ds.mask[[i, j]] {
                self.check_response(r)
                    .map_err(|e| Error::Data(format!("person {i}, item {j}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Per-item generative parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemBank {
    pub k_dim: usize,
    pub difficulty: Vec<f64>,
    /// `M x K`; absent for 1PL.
    pub discrimination: Option<Array2<f64>>,
    /// Values in `(0, 1)`; 3PL only.
    pub guessing: Option<Vec<f64>>,
}

impl ItemBank {
    pub fn num_items(&self) -> usize {
        self.difficulty.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_items();
        if let Some(k) = &self.discrimination {
            if k.dim() != (m, self.k_dim) {
                return Err(Error::Shape(format!(
                    "discrimination {:?} for {m} items of dimension {}",
                    k.dim(),
                    self.k_dim
                )));
            }
        }
        if let Some(g) = &self.guessing {
            if g.len() != m {
                return Err(Error::Shape(format!("{} guessing values for {m} items", g.len())));
            }
            if let Some(bad) = g.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
                return Err(Error::InvalidArgument(format!("guessing {bad} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Pack into the family's block layout.
    pub fn to_blocks(&self, family: Family) -> Result<Array2<f64>> {
        self.validate()?;
        let m = self.num_items();
        let k_dim = self.k_dim;
        let width = family.block_width(k_dim);
        let mut out = Array2::zeros((m, width));
        for j in 0..m {
            match family {
                Family::OnePl => out[[j, 0]] = self.difficulty[j],
                _ => {
                    let k = self.discrimination.as_ref().ok_or_else(|| {
                        Error::InvalidArgument(format!("{family} items need discriminations"))
                    })?;
                    for c in 0..k_dim {
                        out[[j, c]] = k[[j, c]];
                    }
                    out[[j, k_dim]] = self.difficulty[j];
                    if family == Family::ThreePl {
                        let g = self.guessing.as_ref().ok_or_else(|| {
                            Error::InvalidArgument("3pl items need guessing parameters".into())
                        })?;
                        out[[j, k_dim + 1]] = (g[j] / (1.0 - g[j])).ln();
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_blocks(family: Family, k_dim: usize, blocks: &Array2<f64>) -> Result<Self> {
        family.check_dim(k_dim)?;
        let width = family.block_width(k_dim);
        if blocks.ncols() != width {
            return Err(Error::Shape(format!(
                "{family} blocks need {width} columns, got {}",
                blocks.ncols()
            )));
        }
        let m = blocks.nrows();
        Ok(match family {
            Family::OnePl => ItemBank {
                k_dim,
                difficulty: blocks.column(0).to_vec(),
                discrimination: None,
                guessing: None,
            },
            _ => ItemBank {
                k_dim,
                difficulty: blocks.column(k_dim).to_vec(),
                discrimination: Some(blocks.slice(ndarray::s![.., 0..k_dim]).to_owned()),
                guessing: (family == Family::ThreePl)
                    .then(|| (0..m).map(|j| sigmoid(blocks[[j, k_dim + 1]])).collect()),
            },
        })
    }
}

fn dot(a: &[f64], k: &[f64]) -> Result<f64> {
    if a.len() != k.len() {
        return Err(Error::Shape(format!(
            "ability of dimension {} with discrimination of dimension {}",
            a.len(),
            k.len()
        )));
    }
    Ok(a.iter().zip(k).map(|(x, y)| x * y).sum())
}

/// Rasch model, `1 / (1 + exp(-(a - d)))`.
pub fn prob_correct_1pl(a: &[f64], d: f64) -> Result<f64> {
    if a.len() != 1 {
        return Err(Error::Shape(format!("1pl ability must be scalar, got {}", a.len())));
    }
    Ok(sigmoid(a[0] - d))
}

/// `1 / (1 + exp(-a.k - d))`, covering the multidimensional case.
pub fn prob_correct_2pl(a: &[f64], k: &[f64], d: f64) -> Result<f64> {
    Ok(sigmoid(dot(a, k)? + d))
}

/// `g + (1 - g) sigmoid(a.k + d)`.
pub fn prob_correct_3pl(a: &[f64], k: &[f64], d: f64, g: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::InvalidArgument(format!("guessing {g} outside (0, 1)")));
    }
    Ok(g + (1.0 - g) * sigmoid(dot(a, k)? + d))
}

/// Log density of a single response given the success probability.
pub fn response_log_prob(kind: ResponseKind, r: f64, p: f64) -> f64 {
    match kind {
        ResponseKind::Bernoulli => {
            let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if r == 1.0 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        }
        ResponseKind::TruncatedNormal { sigma } => autodiff::trunc_norm_log_pdf(r, p, sigma),
    }
}

/// One response drawn given the success probability.
pub fn sample_response<R: Rng + ?Sized>(kind: ResponseKind, p: f64, rng: &mut R) -> f64 {
    match kind {
        ResponseKind::Bernoulli => {
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
        // Rejection from the untruncated Normal; p lies in [0, 1], so the
        // acceptance rate is at least one half.
        ResponseKind::TruncatedNormal { sigma } => loop {
            let eps: f64 = StandardNormal.sample(rng);
            let x = p + sigma * eps;
            if (0.0..=1.0).contains(&x) {
                break x;
            }
        },
    }
}

/// Learned components of the nonlinear families.
#[derive(Clone, Debug)]
pub enum Network {
    None,
    /// `1 -> 64 -> 64 -> 64 -> 1` applied to the negated linear predictor.
    Link(Mlp),
    /// Ability trunk, item trunk and head over the concatenated trunk outputs.
    Trunks { ability: Mlp, item: Mlp, head: Mlp },
}

/// Per-cell output of a model, before the response distribution.
#[derive(Clone, Copy, Debug)]
pub enum CellOutput {
    Logit(Var),
    Prob(Var),
}

/// Observed cells of a minibatch: person row (into the ability matrix), item
/// row (into the block matrix) and response value.
#[derive(Clone, Debug)]
pub struct Cells {
    pub person: Arc<[usize]>,
    pub item: Arc<[usize]>,
    pub response: Arc<Tensor>,
}

impl Cells {
    pub fn len(&self) -> usize {
        self.person.len()
    }

    pub fn is_empty(&self) -> bool {
        self.person.is_empty()
    }

    pub fn new(person: Vec<usize>, item: Vec<usize>, response: Vec<f64>) -> Self {
        let n = response.len();
        Cells {
            person: person.into(),
            item: item.into(),
            response: Arc::new(Array2::from_shape_vec((n, 1), response).expect("column")),
        }
    }
}

/// A generative model `p(r | a, d)` with its learnable parameters.
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    pub family: Family,
    pub k_dim: usize,
    pub kind: ResponseKind,
    pub params: ParamStore,
    pub network: Network,
}

impl GenerativeModel {
    pub fn new<R: Rng + ?Sized>(
        family: Family,
        k_dim: usize,
        kind: ResponseKind,
        rng: &mut R,
    ) -> Result<Self> {
        family.check_dim(k_dim)?;
        let mut params = ParamStore::new();
        let h = HIDDEN;
        let network = match family {
            Family::Link => Network::Link(Mlp::new(
                &mut params,
                "link",
                &[1, h, h, h, 1],
                OutputTransform::None,
                rng,
            )),
            Family::Deep | Family::Residual => {
                let width = family.block_width(k_dim);
                let ability = Mlp::new(&mut params, "ability", &[k_dim, h, h, h], OutputTransform::None, rng);
                let item = Mlp::new(&mut params, "item", &[width, h, h, h], OutputTransform::None, rng);
                let head = Mlp::new(&mut params, "head", &[2 * h, h, h, 1], OutputTransform::None, rng);
                if family == Family::Residual {
                    head.zero_output_layer(&mut params);
                }
                Network::Trunks { ability, item, head }
            }
            _ => Network::None,
        };
        Ok(GenerativeModel {
            family,
            k_dim,
            kind,
            params,
            network,
        })
    }

    pub fn block_width(&self) -> usize {
        self.family.block_width(self.k_dim)
    }

    /// Per-cell model output. `abilities` is `B x K`, `blocks` is `M x P`.
    pub fn cell_output(
        &self,
        g: &mut Graph,
        theta: &Bound,
        abilities: Var,
        blocks: Var,
        cells: &Cells,
    ) -> Result<CellOutput> {
        let (_, k_dim) = g.shape(abilities);
        if k_dim != self.k_dim {
            return Err(Error::Shape(format!(
                "model expects ability dimension {}, got {k_dim}",
                self.k_dim
            )));
        }
        let width = g.shape(blocks).1;
        if width != self.block_width() {
            return Err(Error::Shape(format!(
                "{} expects {} item columns, got {width}",
                self.family,
                self.block_width()
            )));
        }
        let a = g.gather_rows(abilities, cells.person.clone())?;
        let items = g.gather_rows(blocks, cells.item.clone())?;
        let kd = self.k_dim;

        if self.family == Family::OnePl {
            let d = g.slice_cols(items, 0, 1)?;
            return Ok(CellOutput::Logit(g.sub(a, d)?));
        }

        let k = g.slice_cols(items, 0, kd)?;
        let d = g.slice_cols(items, kd, 1)?;
        let ak = g.mul(a, k)?;
        let ak = g.row_sum(ak);
        let linear = g.add(ak, d)?;

        Ok(match (&self.network, self.family) {
            (_, Family::ThreePl) => {
                let graw = g.slice_cols(items, kd + 1, 1)?;
                let guess = g.sigmoid(graw);
                let p = g.sigmoid(linear);
                // g + (1 - g) p = p + g (1 - p)
                let one_minus_p = g.scale(p, -1.0);
                let one_minus_p = g.add_scalar(one_minus_p, 1.0);
                let lift = g.mul(guess, one_minus_p)?;
                CellOutput::Prob(g.add(p, lift)?)
            }
            (Network::Link(f), _) => {
                let neg = g.neg(linear);
                CellOutput::Logit(f.forward(g, theta, neg)?)
            }
            (Network::Trunks { ability, item, head }, fam) => {
                let ha = ability.forward(g, theta, abilities)?;
                let hi = item.forward(g, theta, blocks)?;
                let ha = g.gather_rows(ha, cells.person.clone())?;
                let hi = g.gather_rows(hi, cells.item.clone())?;
                let joint = g.concat_cols(&[ha, hi])?;
                let out = head.forward(g, theta, joint)?;
                if fam == Family::Residual {
                    CellOutput::Logit(g.sub(linear, out)?)
                } else {
                    CellOutput::Logit(out)
                }
            }
            _ => CellOutput::Logit(linear),
        })
    }

    /// Success probability per cell.
    pub fn cell_prob(&self, g: &mut Graph, out: CellOutput) -> Var {
        match out {
            CellOutput::Logit(z) => g.sigmoid(z),
            CellOutput::Prob(p) => p,
        }
    }

    /// Log density of each cell's response, as a `C x 1` node.
    pub fn cell_log_lik(&self, g: &mut Graph, out: CellOutput, cells: &Cells) -> Result<Var> {
        match self.kind {
            ResponseKind::Bernoulli => {
                let r = g.constant((*cells.response).clone());
                let not_r = g.constant(cells.response.mapv(|x| 1.0 - x));
                let (pos, neg) = match out {
                    CellOutput::Logit(z) => {
                        let z = g.clamp(z, -LOGIT_CLAMP, LOGIT_CLAMP);
                        let pos = g.log_sigmoid(z);
                        let mz = g.neg(z);
                        (pos, g.log_sigmoid(mz))
                    }
                    CellOutput::Prob(p) => {
                        let p = g.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR);
                        let q = g.scale(p, -1.0);
                        let q = g.add_scalar(q, 1.0);
                        (g.log(p), g.log(q))
                    }
                };
                let a = g.mul(r, pos)?;
                let b = g.mul(not_r, neg)?;
                g.add(a, b)
            }
            ResponseKind::TruncatedNormal { sigma } => {
                let p = self.cell_prob(g, out);
                let p = g.clamp(p, 0.0, 1.0);
                g.trunc_norm_log_pdf(p, cells.response.clone(), sigma)
            }
        }
    }

    /// Success probabilities for every person/item pair.
    pub fn probabilities(&self, abilities: &Array2<f64>, blocks: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, m) = (abilities.nrows(), blocks.nrows());
        let mut out = Array2::zeros((n, m));
        // Chunk rows to bound the size of the per-cell graph.
        let chunk = (4096 / m.max(1)).max(1);
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let mut person = Vec::with_capacity((end - start) * m);
            let mut item = Vec::with_capacity((end - start) * m);
            for i in 0..end - start {
                for j in 0..m {
                    person.push(i);
                    item.push(j);
                }
            }
            let cells = Cells::new(person, item, vec![0.0; (end - start) * m]);
            let mut g = Graph::new();
            let theta = self.params.bind(&mut g);
            let a = g.constant(abilities.slice(ndarray::s![start..end, ..]).to_owned());
            let b = g.constant(blocks.clone());
            let o = self.cell_output(&mut g, &theta, a, b, &cells)?;
            let p = self.cell_prob(&mut g, o);
            for (c, &v) in g.value(p).iter().enumerate() {
                out[[start + c / m, c % m]] = v;
            }
        }
        Ok(out)
    }

    /// Probability of a correct response for one ability vector and one item
    /// block.
    pub fn prob_correct(&self, a: &[f64], block: &[f64]) -> Result<f64> {
        let ab = Array2::from_shape_vec((1, a.len()), a.to_vec()).expect("row");
        let bl = Array2::from_shape_vec((1, block.len()), block.to_vec()).expect("row");
        Ok(self.probabilities(&ab, &bl)?[[0, 0]])
    }

    pub fn theta_records(&self) -> Vec<TensorRecord> {
        self.params.to_records()
    }
}

/// `sum over observed j` of the response log density for one person.
/// Missing entries contribute exactly zero.
pub fn response_log_likelihood(
    model: &GenerativeModel,
    responses: &[f64],
    mask: &[bool],
    ability: &[f64],
    items: &ItemBank,
) -> Result<f64> {
    let m = items.num_items();
    if responses.len() != m || mask.len() != m {
        return Err(Error::Shape(format!(
            "{} responses / {} mask entries for {m} items",
            responses.len(),
            mask.len()
        )));
    }
    if ability.len() != model.k_dim {
        return Err(Error::Shape(format!(
            "ability of dimension {} for a model of dimension {}",
            ability.len(),
            model.k_dim
        )));
    }
    for (&r, _) in responses.iter().zip(mask).filter(|(_, &o)| o) {
        model.kind.check_response(r)?;
    }
    let observed: Vec<usize> = (0..m).filter(|&j| mask[j]).collect();
    if observed.is_empty() {
        return Ok(0.0);
    }
    let blocks = items.to_blocks(model.family)?;
    let cells = Cells::new(
        vec![0; observed.len()],
        observed.clone(),
        observed.iter().map(|&j| responses[j]).collect(),
    );
    let mut g = Graph::new();
    let theta = model.params.bind(&mut g);
    let a = g.constant(Array2::from_shape_vec((1, ability.len()), ability.to_vec()).expect("row"));
    let b = g.constant(blocks);
    let out = model.cell_output(&mut g, &theta, a, b, &cells)?;
    let ll = model.cell_log_lik(&mut g, out, &cells)?;
    Ok(g.value(ll).iter().sum())
}

/// Convenience: abilities as an `N x K` matrix from row vectors.
pub fn ability_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), k), |(i, c)| rows[i][c])
}

pub fn column(v: &[f64]) -> Array2<f64> {
    Array1::from(v.to_vec()).insert_axis(ndarray::Axis(1))
}
