//! Posterior draws over abilities and item parameters, shared by the sampler
//! and the variational posterior, plus their line-delimited file format.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Family, GenerativeModel, ItemBank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    /// `N x K`.
    pub abilities: Array2<f64>,
    /// `M x P` in the family's block layout.
    pub blocks: Array2<f64>,
}

impl PosteriorDraw {
    pub fn items(&self, family: Family) -> Result<ItemBank> {
        ItemBank::from_blocks(family, self.abilities.ncols(), &self.blocks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub acceptance_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub family: Family,
    pub draws: Vec<PosteriorDraw>,
    pub stats: Option<SamplerStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Header {
        family: Family,
        draws: usize,
        stats: Option<SamplerStats>,
        /// Fingerprint of the run that produced the draws.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        run: Option<String>,
    },
    Draw {
        index: usize,
        #[serde(flatten)]
        draw: PosteriorDraw,
    },
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::InvalidArgument("empty posterior sample set".into()));
        }
        let first = &self.draws[0];
        for (i, d) in self.draws.iter().enumerate() {
            if d.abilities.dim() != first.abilities.dim() || d.blocks.dim() != first.blocks.dim() {
                return Err(Error::Shape(format!("draw {i} differs in shape from draw 0")));
            }
            if d.abilities.iter().chain(d.blocks.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("draw {i} has non-finite values")));
            }
        }
        Ok(())
    }

    /// Posterior mean of the abilities.
    pub fn mean_abilities(&self) -> Result<Array2<f64>> {
        self.validate()?;
        let mut acc = Array2::zeros(self.draws[0].abilities.dim());
        for d in &self.draws {
            acc += &d.abilities;
        }
        Ok(acc / self.draws.len() as f64)
    }

    pub fn mean_blocks(&self) -> Result<Array2<f64>> {
        self.validate()?;
        let mut acc = Array2::zeros(self.draws[0].blocks.dim());
        for d in &self.draws {
            acc += &d.blocks;
        }
        Ok(acc / self.draws.len() as f64)
    }

    /// Success probabilities averaged over draws.
    pub fn predictive_probabilities(&self, model: &GenerativeModel) -> Result<Array2<f64>> {
        self.validate()?;
        let mut acc: Option<Array2<f64>> = None;
        for d in &self.draws {
            let p = model.probabilities(&d.abilities, &d.blocks)?;
            match &mut acc {
                Some(a) => *a += &p,
                None => acc = Some(p),
            }
        }
        Ok(acc.expect("non-empty") / self.draws.len() as f64)
    }

    /// One JSON record per line: a header, then one line per draw.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        self.write_jsonl_tagged(w, None)
    }

    /// Like [`write_jsonl`](Self::write_jsonl), recording `run` in the header.
    pub fn write_jsonl_tagged<W: Write>(&self, mut w: W, run: Option<&str>) -> Result<()> {
        let header = Line::Header {
            family: self.family,
            draws: self.draws.len(),
            stats: self.stats.clone(),
            run: run.map(str::to_string),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (index, draw) in self.draws.iter().enumerate() {
            serde_json::to_writer(
                &mut w,
                &Line::Draw {
                    index,
                    draw: draw.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut family = None;
        let mut stats = None;
        let mut expected = 0;
        let mut draws = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Header { family: f, draws: n, stats: s, .. } => {
                    family = Some(f);
                    stats = s;
                    expected = n;
                }
                Line::Draw { index, draw } => {
                    if index != draws.len() {
                        return Err(Error::Data(format!("draw {index} out of order")));
                    }
                    draws.push(draw);
                }
            }
        }
        let family = family.ok_or_else(|| Error::Data("posterior file has no header".into()))?;
        if draws.len() != expected {
            return Err(Error::Data(format!("header promises {expected} draws, found {}", draws.len())));
        }
        let s = PosteriorSamples { family, draws, stats };
        s.validate()?;
        Ok(s)
    }
}
