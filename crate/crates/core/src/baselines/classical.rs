//! Closed-form log-likelihood gradients for the classical families, used by
//! the optimizers and samplers that never build a graph.

use ndarray::Array2;

use crate::autodiff::{sigmoid, trunc_norm_log_pdf, trunc_norm_log_pdf_dmean};
use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::models::{Family, ResponseKind, LOGIT_CLAMP, PROB_FLOOR};

/// Observed cells of a dataset in row-major order.
#[derive(Clone, Debug, Default)]
pub struct ObservedCells {
    pub person: Vec<usize>,
    pub item: Vec<usize>,
    pub response: Vec<f64>,
}

impl ObservedCells {
    pub fn from_dataset(ds: &ResponseDataset) -> Self {
        let mut c = ObservedCells::default();
        for ((i, j), &r) in ds.values.indexed_iter() {
            if ds.mask[[i, j]] {
                c.person.push(i);
                c.item.push(j);
                c.response.push(r);
            }
        }
        c
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }
}

/// Log-likelihood of a classical model with analytic gradients.
#[derive(Clone, Debug)]
pub struct ClassicalLikelihood {
    pub family: Family,
    pub k_dim: usize,
    pub kind: ResponseKind,
    pub cells: ObservedCells,
}

impl ClassicalLikelihood {
    pub fn new(ds: &ResponseDataset, family: Family, k_dim: usize, kind: ResponseKind) -> Result<Self> {
        if !family.is_classical() {
            return Err(Error::InvalidArgument(format!("{family} is not a classical family")));
        }
        family.check_dim(k_dim)?;
        kind.check_dataset(ds)?;
        Ok(ClassicalLikelihood {
            family,
            k_dim,
            kind,
            cells: ObservedCells::from_dataset(ds),
        })
    }

    pub fn block_width(&self) -> usize {
        self.family.block_width(self.k_dim)
    }

    /// Total log-likelihood; gradients are added into `grad_a` and `grad_b`
    /// when given.
    pub fn eval(
        &self,
        abilities: &Array2<f64>,
        blocks: &Array2<f64>,
        grads: Option<(&mut Array2<f64>, &mut Array2<f64>)>,
    ) -> f64 {
        let k = self.k_dim;
        let w = self.block_width();
        let a_all = abilities.as_standard_layout();
        let b_all = blocks.as_standard_layout();
        let a_all = a_all.as_slice().expect("standard layout");
        let b_all = b_all.as_slice().expect("standard layout");
        let mut grads = grads.map(|(ga, gb)| {
            (
                ga.as_slice_mut().expect("gradient buffers are contiguous"),
                gb.as_slice_mut().expect("gradient buffers are contiguous"),
            )
        });
        let mut total = 0.0;
        for c in 0..self.cells.len() {
            let (i, j, r) = (self.cells.person[c], self.cells.item[c], self.cells.response[c]);
            let a = &a_all[i * k..(i + 1) * k];
            let b = &b_all[j * w..(j + 1) * w];
            let z = match self.family {
                Family::OnePl => a[0] - b[0],
                _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + b[k],
            };
            // Log density plus its slopes in the logit and the guessing logit.
            let (ll, dz, dc) = match (self.kind, self.family) {
                (ResponseKind::Bernoulli, Family::ThreePl) => {
                    let (s, gs) = (sigmoid(z), sigmoid(b[k + 1]));
                    let raw = s + gs * (1.0 - s);
                    let p = raw.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    let ll = if r == 1.0 { p.ln() } else { (1.0 - p).ln() };
                    let dp = if (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&raw) {
                        if r == 1.0 {
                            1.0 / p
                        } else {
                            -1.0 / (1.0 - p)
                        }
                    } else {
                        0.0
                    };
                    (ll, dp * (1.0 - gs) * s * (1.0 - s), dp * (1.0 - s) * gs * (1.0 - gs))
                }
                (ResponseKind::Bernoulli, _) => {
                    let zc = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                    // One exponential serves both the log-sigmoid and the sigmoid.
                    let e = (-zc.abs()).exp();
                    let log1pe = e.ln_1p();
                    let signed = if r == 1.0 { zc } else { -zc };
                    let ll = signed.min(0.0) - log1pe;
                    let s = if zc >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                    let dz = if zc == z { r - s } else { 0.0 };
                    (ll, dz, 0.0)
                }
                (ResponseKind::TruncatedNormal { sigma }, fam) => {
                    let s = sigmoid(z);
                    let (p, dpdz, dpdc) = if fam == Family::ThreePl {
                        let gs = sigmoid(b[k + 1]);
                        (s + gs * (1.0 - s), (1.0 - gs) * s * (1.0 - s), (1.0 - s) * gs * (1.0 - gs))
                    } else {
                        (s, s * (1.0 - s), 0.0)
                    };
                    let p = p.clamp(0.0, 1.0);
                    let dp = trunc_norm_log_pdf_dmean(r, p, sigma);
                    (trunc_norm_log_pdf(r, p, sigma), dp * dpdz, dp * dpdc)
                }
            };
            total += ll;
            if let Some((ga, gb)) = grads.as_mut() {
                match self.family {
                    Family::OnePl => {
                        ga[i] += dz;
                        gb[j] -= dz;
                    }
                    fam => {
                        for t in 0..k {
                            ga[i * k + t] += dz * b[t];
                            gb[j * w + t] += dz * a[t];
                        }
                        gb[j * w + k] += dz;
                        if fam == Family::ThreePl {
                            gb[j * w + k + 1] += dc;
                        }
                    }
                }
            }
        }
        total
    }
}
