//! Response matrices: synthetic generation, text I/O, binarization and
//! held-out splits.
//!
//! The matrix file format is UTF-8 text with one person per row and
//! comma-separated cells. A cell is `0`, `1`, a decimal in `[0, 1]`, or `NA`
//! for a missing response. An optional first row carries item identifiers.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, Family, ItemBank, ResponseKind};
use crate::rng;

pub const MISSING: &str = "NA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Binary,
    Polytomous,
}

impl FromStr for DataKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(DataKind::Binary),
            "polytomous" => Ok(DataKind::Polytomous),
            _ => Err(Error::InvalidArgument(format!("unknown response kind '{s}'"))),
        }
    }
}

impl DataKind {
    fn accepts(self, v: f64) -> bool {
        match self {
            DataKind::Binary => v == 0.0 || v == 1.0,
            DataKind::Polytomous => (0.0..=1.0).contains(&v),
        }
    }
}

/// `N x M` responses with an observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseDataset {
    /// Unobserved cells hold 0.
    pub values: Array2<f64>,
    /// `true` where the response is observed.
    pub mask: Array2<bool>,
    pub kind: DataKind,
    pub item_ids: Option<Vec<String>>,
}

impl ResponseDataset {
    pub fn new(values: Array2<f64>, mask: Array2<bool>, kind: DataKind) -> Result<Self> {
        let ds = ResponseDataset {
            values,
            mask,
            kind,
            item_ids: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn fully_observed(values: Array2<f64>, kind: DataKind) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(values, mask, kind)
    }

    pub fn num_persons(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.values.ncols()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&o| o).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.dim() != self.mask.dim() {
            return Err(Error::Shape(format!(
                "values {:?} vs mask {:?}",
                self.values.dim(),
                self.mask.dim()
            )));
        }
        for ((i, j), &v) in self.values.indexed_iter() {
            if self.mask[[i, j]] && !self.kind.accepts(v) {
                return Err(Error::Data(format!(
                    "row {}, column {}: value {v} not allowed for {:?} data",
                    i + 1,
                    j + 1,
                    self.kind
                )));
            }
        }
        if let Some(ids) = &self.item_ids {
            if ids.len() != self.num_items() {
                return Err(Error::Shape(format!(
                    "{} item ids for {} items",
                    ids.len(),
                    self.num_items()
                )));
            }
        }
        Ok(())
    }

    /// Same values under a different mask, which must select only observed
    /// cells.
    pub fn with_mask(&self, mask: &Array2<bool>) -> Result<Self> {
        if mask.dim() != self.mask.dim() {
            return Err(Error::Shape(format!("mask {:?} vs {:?}", mask.dim(), self.mask.dim())));
        }
        if mask.iter().zip(&self.mask).any(|(&new, &old)| new && !old) {
            return Err(Error::InvalidArgument("mask selects unobserved cells".into()));
        }
        let mut out = self.clone();
        out.mask = mask.clone();
        out.values.zip_mut_with(mask, |v, &o| {
            if !o {
                *v = 0.0
            }
        });
        Ok(out)
    }

    pub fn response_kind(&self) -> ResponseKind {
        match self.kind {
            DataKind::Binary => ResponseKind::Bernoulli,
            DataKind::Polytomous => ResponseKind::truncated_normal(),
        }
    }

    /// Text in the canonical matrix format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(ids) = &self.item_ids {
            out.push_str(&ids.join(","));
            out.push('\n');
        }
        for (row, mask) in self.values.rows().into_iter().zip(self.mask.rows()) {
            for (j, (&v, &o)) in row.iter().zip(mask.iter()).enumerate() {
                if j > 0 {
                    out.push(',');
                }
                if o {
                    write!(out, "{v}").expect("string write");
                } else {
                    out.push_str(MISSING);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical text, used to tie artifacts to a
    /// dataset.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub kind: DataKind,
    pub header: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            kind: DataKind::Binary,
            header: false,
        }
    }
}

pub fn parse_matrix(text: &str, opts: &LoadOptions) -> Result<ResponseDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let item_ids = if opts.header {
        let (_, first) = lines.next().ok_or_else(|| Error::Data("no rows".into()))?;
        Some(first.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width: Option<usize> = item_ids.as_ref().map(|ids| ids.len());
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Data(format!(
                    "line {}: expected {w} cells, found {}",
                    lineno + 1,
                    cells.len()
                )))
            }
            _ => {}
        }
        for (j, cell) in cells.iter().enumerate() {
            if *cell == MISSING {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!("line {}, column {}: '{cell}' is not a number", lineno + 1, j + 1))
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!(
                    "line {}, column {}: {v} outside [0, 1]",
                    lineno + 1,
                    j + 1
                )));
            }
            if !opts.kind.accepts(v) {
                return Err(Error::Data(format!(
                    "line {}, column {}: {v} is not a binary response",
                    lineno + 1,
                    j + 1
                )));
            }
            values.push(v);
            mask.push(true);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("no rows".into()));
    }
    let m = width.unwrap_or(0);
    let mut ds = ResponseDataset::new(
        Array2::from_shape_vec((rows, m), values).expect("row lengths checked"),
        Array2::from_shape_vec((rows, m), mask).expect("row lengths checked"),
        opts.kind,
    )?;
    ds.item_ids = item_ids;
    Ok(ds)
}

pub fn load_matrix(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<ResponseDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text, opts)
}

/// Round observed responses at 0.5, ties up.
pub fn binarize(ds: &ResponseDataset) -> ResponseDataset {
    let mut out = ds.clone();
    out.values.zip_mut_with(&ds.mask, |v, &o| {
        *v = if o && *v >= 0.5 { 1.0 } else { 0.0 };
    });
    out.kind = DataKind::Binary;
    out
}

/// Partition the observed cells into train and held-out masks with exactly
/// `floor(fraction * observed)` held-out cells.
pub fn holdout_split(ds: &ResponseDataset, fraction: f64, seed: u64) -> Result<(Array2<bool>, Array2<bool>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let observed: Vec<(usize, usize)> = ds
        .mask
        .indexed_iter()
        .filter(|(_, &o)| o)
        .map(|(ij, _)| ij)
        .collect();
    let count = (fraction * observed.len() as f64).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {} observed cells holds out nothing",
            observed.len()
        )));
    }
    let mut r = rng::stream(seed, "holdout");
    let mut train = ds.mask.clone();
    let mut held = Array2::from_elem(ds.mask.dim(), false);
    for k in index::sample(&mut r, observed.len(), count) {
        let ij = observed[k];
        train[ij] = false;
        held[ij] = true;
    }
    Ok((train, held))
}

/// Generating parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: Family,
    /// `N x K`.
    pub abilities: Array2<f64>,
    pub items: ItemBank,
}

impl GroundTruth {
    /// One entity per row: `ability,i,a_1..a_K` then `item,j,<block>`.
    pub fn to_text(&self) -> Result<String> {
        let blocks = self.items.to_blocks(self.family)?;
        let mut out = format!(
            "# family={} persons={} items={} k={}\n",
            self.family,
            self.abilities.nrows(),
            blocks.nrows(),
            self.abilities.ncols()
        );
        for (i, row) in self.abilities.rows().into_iter().enumerate() {
            write!(out, "ability,{i}").expect("string write");
            row.iter().for_each(|v| write!(out, ",{v}").expect("string write"));
            out.push('\n');
        }
        for (j, row) in blocks.rows().into_iter().enumerate() {
            write!(out, "item,{j}").expect("string write");
            row.iter().for_each(|v| write!(out, ",{v}").expect("string write"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        // Every leading comment line contributes `key=value` pairs.
        let header: String = text
            .lines()
            .map_while(|l| l.strip_prefix('#'))
            .collect::<Vec<_>>()
            .join(" ");
        if header.is_empty() {
            return Err(Error::Data("ground truth header missing".into()));
        }
        let skipped = text.lines().take_while(|l| l.starts_with('#')).count();
        let lines = text.lines().skip(skipped);
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Data(format!("ground truth header lacks {key}")))
        };
        let family: Family = field("family")?.parse()?;
        let parse_usize = |key: &str| -> Result<usize> {
            field(key)?.parse().map_err(|_| Error::Data(format!("bad {key} in header")))
        };
        let (n, m, k) = (parse_usize("persons")?, parse_usize("items")?, parse_usize("k")?);
        let width = family.block_width(k);
        let mut abilities = Array2::zeros((n, k));
        let mut blocks = Array2::zeros((m, width));
        for (lineno, line) in lines.enumerate() {
            let mut parts = line.split(',');
            let tag = parts.next().unwrap_or_default();
            let idx: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("ground truth line {}: bad index", lineno + skipped + 1)))?;
            let vals: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data(format!("ground truth line {}: bad number", lineno + skipped + 1)))?;
            let (target, len, rows) = match tag {
                "ability" => (&mut abilities, k, n),
                "item" => (&mut blocks, width, m),
                _ => return Err(Error::Data(format!("ground truth line {}: unknown tag '{tag}'", lineno + skipped + 1))),
            };
            if vals.len() != len || idx >= rows {
                return Err(Error::Data(format!("ground truth line {}: wrong shape", lineno + skipped + 1)));
            }
            for (c, v) in vals.into_iter().enumerate() {
                target[[idx, c]] = v;
            }
        }
        Ok(GroundTruth {
            family,
            abilities,
            items: ItemBank::from_blocks(family, k, &blocks)?,
        })
    }
}

fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Draw abilities and items from standard Normal priors, then sample every
/// response once from the model.
pub fn generate_synthetic(
    n: usize,
    m: usize,
    k: usize,
    family: Family,
    seed: u64,
) -> Result<(ResponseDataset, GroundTruth)> {
    if n == 0 || m == 0 || k == 0 {
        return Err(Error::InvalidArgument("N, M and K must all be at least 1".into()));
    }
    match family {
        Family::OnePl | Family::TwoPl | Family::Mirt2Pl => {}
        Family::ThreePl => {
            return Err(Error::InvalidArgument(
                "3pl generation is not supported: guessing parameters make the model hard to \
                 identify on small and medium datasets; use 2pl"
                    .into(),
            ))
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "synthetic generation supports 1pl and 2pl, not {other}"
            )))
        }
    }
    family.check_dim(k)?;
    let mut r = rng::stream(seed, rng::DATA);
    let abilities = standard_normal_matrix(&mut r, n, k);
    let blocks = standard_normal_matrix(&mut r, m, family.block_width(k));
    let items = ItemBank::from_blocks(family, k, &blocks)?;
    let mut values = Array2::zeros((n, m));
    for i in 0..n {
        let a = abilities.row(i).to_vec();
        for j in 0..m {
            let p = match family {
                Family::OnePl => models::prob_correct_1pl(&a, blocks[[j, 0]])?,
                _ => {
                    let kj: Vec<f64> = blocks.row(j).iter().take(k).copied().collect();
                    models::prob_correct_2pl(&a, &kj, blocks[[j, k]])?
                }
            };
            values[[i, j]] = if r.random::<f64>() < p { 1.0 } else { 0.0 };
        }
    }
    let ds = ResponseDataset::fully_observed(values, DataKind::Binary)?;
    Ok((
        ds,
        GroundTruth {
            family,
            abilities,
            items,
        },
    ))
}

/// Like [`generate_synthetic`] for 2PL parameters, but the success
/// probability is `link(a.k + d)` for an arbitrary response curve. Under
/// [`ResponseKind::TruncatedNormal`] each response is a truncated-Normal draw
/// around that probability instead of a Bernoulli draw.
pub fn generate_with_link(
    n: usize,
    m: usize,
    k: usize,
    link: &dyn Fn(f64) -> f64,
    kind: ResponseKind,
    seed: u64,
) -> Result<(ResponseDataset, GroundTruth)> {
    if n == 0 || m == 0 || k == 0 {
        return Err(Error::InvalidArgument("N, M and K must all be at least 1".into()));
    }
    let mut r = rng::stream(seed, rng::DATA);
    let abilities = standard_normal_matrix(&mut r, n, k);
    let blocks = standard_normal_matrix(&mut r, m, k + 1);
    let items = ItemBank::from_blocks(Family::TwoPl, k, &blocks)?;
    let mut values = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let z: f64 = (0..k).map(|c| abilities[[i, c]] * blocks[[j, c]]).sum::<f64>() + blocks[[j, k]];
            let p = link(z).clamp(0.0, 1.0);
            values[[i, j]] = models::sample_response(kind, p, &mut r);
        }
    }
    let data_kind = match kind {
        ResponseKind::Bernoulli => DataKind::Binary,
        ResponseKind::TruncatedNormal { .. } => DataKind::Polytomous,
    };
    let ds = ResponseDataset::fully_observed(values, data_kind)?;
    Ok((
        ds,
        GroundTruth {
            family: Family::TwoPl,
            abilities,
            items,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::prob_correct_2pl;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn parse_two_by_two_with_missing() {
        let ds = parse_matrix("1,0\nNA,1\n", &LoadOptions::default()).unwrap();
        assert_eq!(ds.mask, array![[true, true], [false, true]]);
        assert_eq!(ds.values[[0, 0]], 1.0);
        assert_eq!(ds.values[[0, 1]], 0.0);
        assert_eq!(ds.values[[1, 1]], 1.0);
    }

    #[test]
    fn empty_file_has_no_rows() {
        let err = parse_matrix("", &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no rows"));
    }

    #[test]
    fn kind_gate() {
        let bin = LoadOptions::default();
        let poly = LoadOptions {
            kind: DataKind::Polytomous,
            header: false,
        };
        assert!(parse_matrix("0.5,1\n", &bin).is_err());
        assert_eq!(parse_matrix("0.5,1\n", &poly).unwrap().values[[0, 0]], 0.5);
    }

    #[test]
    fn diagnostics_name_the_cell() {
        let opts = LoadOptions::default();
        let e = parse_matrix("1,0\n1\n", &opts).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = parse_matrix("1,0\n1,x\n", &opts).unwrap_err().to_string();
        assert!(e.contains("line 2, column 2"), "{e}");
        let e = parse_matrix("1,1.5\n", &opts).unwrap_err().to_string();
        assert!(e.contains("outside"), "{e}");
    }

    #[test]
    fn header_row() {
        let opts = LoadOptions {
            kind: DataKind::Binary,
            header: true,
        };
        let ds = parse_matrix("q1,q2\n1,0\n", &opts).unwrap();
        assert_eq!(ds.item_ids.as_deref(), Some(&["q1".to_string(), "q2".to_string()][..]));
        assert_eq!(parse_matrix(&ds.to_text(), &opts).unwrap(), ds);
        assert!(parse_matrix("q1,q2\n1,0,1\n", &opts).is_err());
    }

    #[test]
    fn binarize_rounds_half_up_and_keeps_mask() {
        let ds = ResponseDataset::new(
            array![[0.5, 0.49, 0.9], [0.0, 0.7, 1.0]],
            array![[true, true, false], [true, true, true]],
            DataKind::Polytomous,
        )
        .unwrap();
        let b = binarize(&ds);
        assert_eq!(b.kind, DataKind::Binary);
        assert_eq!(b.values, array![[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]);
        assert_eq!(b.mask, ds.mask);
        let mut again = b.clone();
        again.kind = DataKind::Polytomous;
        assert_eq!(binarize(&again), b);
    }

    #[test]
    fn holdout_exact_count_and_partition() {
        let ds = ResponseDataset::fully_observed(Array2::zeros((10, 10)), DataKind::Binary).unwrap();
        let (train, held) = holdout_split(&ds, 0.10, 3).unwrap();
        assert_eq!(held.iter().filter(|&&h| h).count(), 10);
        for ((&t, &h), &o) in train.iter().zip(&held).zip(&ds.mask) {
            assert!(!(t && h));
            assert_eq!(t || h, o);
        }
        assert_eq!(holdout_split(&ds, 0.10, 3).unwrap().1, held);
    }

    #[test]
    fn holdout_seeds_differ() {
        let ds = ResponseDataset::fully_observed(Array2::zeros((20, 50)), DataKind::Binary).unwrap();
        let a = holdout_split(&ds, 0.1, 1).unwrap().1;
        let b = holdout_split(&ds, 0.1, 2).unwrap().1;
        assert_ne!(a, b);
    }

    #[test]
    fn holdout_rejects_empty_selection() {
        let ds = ResponseDataset::fully_observed(Array2::zeros((3, 3)), DataKind::Binary).unwrap();
        assert!(holdout_split(&ds, 0.1, 0).is_err());
        assert!(holdout_split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let (a, ta) = generate_synthetic(30, 7, 1, Family::TwoPl, 9).unwrap();
        let (b, tb) = generate_synthetic(30, 7, 1, Family::TwoPl, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.values[[0, 0]].to_bits(), b.values[[0, 0]].to_bits());
        let (c, _) = generate_synthetic(30, 7, 1, Family::TwoPl, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_unsupported_families() {
        let e = generate_synthetic(10, 5, 1, Family::ThreePl, 0).unwrap_err().to_string();
        assert!(e.contains("3pl"));
        assert!(generate_synthetic(10, 5, 1, Family::Deep, 0).is_err());
        assert!(generate_synthetic(0, 5, 1, Family::TwoPl, 0).is_err());
        assert!(generate_synthetic(10, 5, 2, Family::OnePl, 0).is_err());
    }

    #[test]
    fn forced_equal_ability_and_difficulty_gives_half() {
        // a = d forced: every probability is exactly 0.5.
        let n = 200;
        let m = 50;
        let mut r = rng::stream(1, "test");
        let mut correct = 0usize;
        for _ in 0..n * m {
            let a: f64 = StandardNormal.sample(&mut r);
            let p = models::prob_correct_1pl(&[a], a).unwrap();
            if r.random::<f64>() < p {
                correct += 1;
            }
        }
        let rate = correct as f64 / (n * m) as f64;
        let se = (0.25 / (n * m) as f64).sqrt();
        assert!((rate - 0.5).abs() < 3.0 * se, "{rate}");
    }

    #[test]
    fn ground_truth_round_trip() {
        let (_, truth) = generate_synthetic(5, 4, 2, Family::Mirt2Pl, 1).unwrap();
        let text = truth.to_text().unwrap();
        assert_eq!(GroundTruth::from_text(&text).unwrap(), truth);
        assert!(GroundTruth::from_text("garbage").is_err());
    }

    #[test]
    fn link_generator_polytomous_in_support() {
        let (ds, _) = generate_with_link(20, 5, 1, &|z| 1.0 / (1.0 + (-z).exp()), ResponseKind::truncated_normal(), 4).unwrap();
        assert_eq!(ds.kind, DataKind::Polytomous);
        assert!(ds.values.iter().all(|v| (0.0..=1.0).contains(v)));
        // Same parameters as the 2PL generator under an identical seed.
        let (_, t2) = generate_synthetic(20, 5, 1, Family::TwoPl, 4).unwrap();
        let (_, tl) = generate_with_link(20, 5, 1, &|z| z, ResponseKind::Bernoulli, 4).unwrap();
        assert_eq!(t2.abilities, tl.abilities);
        let _ = prob_correct_2pl;
    }

    fn dataset_strategy() -> impl Strategy<Value = ResponseDataset> {
        (1usize..6, 1usize..6, any::<bool>()).prop_flat_map(|(n, m, poly)| {
            let cell = if poly {
                prop_oneof![Just(None), (0.0f64..=1.0).prop_map(Some)].boxed()
            } else {
                prop_oneof![Just(None), Just(Some(0.0)), Just(Some(1.0))].boxed()
            };
            proptest::collection::vec(cell, n * m).prop_map(move |cells| {
                let values = Array2::from_shape_fn((n, m), |(i, j)| cells[i * m + j].unwrap_or(0.0));
                let mask = Array2::from_shape_fn((n, m), |(i, j)| cells[i * m + j].is_some());
                let kind = if poly { DataKind::Polytomous } else { DataKind::Binary };
                ResponseDataset::new(values, mask, kind).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(ds in dataset_strategy()) {
            let opts = LoadOptions { kind: ds.kind, header: false };
            let back = parse_matrix(&ds.to_text(), &opts).unwrap();
            prop_assert_eq!(back.to_text(), ds.to_text());
            for (x, y) in back.values.iter().zip(ds.values.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(back.mask, ds.mask);
        }
    }
}
