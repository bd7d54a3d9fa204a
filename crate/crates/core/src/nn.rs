//! Parameter storage, multilayer perceptrons and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Named dense parameters plus their accumulated gradients.
///
/// Gradients are never cleared implicitly; call [`ParamStore::zero_grad`]
/// between optimization steps.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

/// Graph leaves created for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.grads.push(Array2::zeros(value.dim()));
        self.values.push(value);
        self.names.push(name.into());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.values.iter().map(|v| g.leaf(v.clone())).collect())
    }

    /// Add the leaf gradients of a finished backward pass into the store.
    pub fn accumulate(&mut self, g: &Graph, bound: &Bound) {
        for (grad, var) in self.grads.iter_mut().zip(&bound.0) {
            if let Some(gv) = g.grad(*var) {
                *grad += gv;
            }
        }
    }

    /// All values in insertion order, flattened row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.num_scalars())));
        }
        let mut rest = flat;
        for v in &mut self.values {
            let (head, tail) = rest.split_at(v.len());
            v.iter_mut().zip(head).for_each(|(x, y)| *x = *y);
            rest = tail;
        }
        Ok(())
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, v)| TensorRecord {
                name: name.clone(),
                rows: v.nrows(),
                cols: v.ncols(),
                data: v.iter().copied().collect(),
            })
            .collect()
    }

    /// Overwrite values from records; names and shapes must match exactly.
    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<()> {
        if records.len() != self.values.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                self.values.len(),
                records.len()
            )));
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.name != self.names[i] || (rec.rows, rec.cols) != self.values[i].dim() {
                return Err(Error::Data(format!(
                    "parameter {i}: expected {} {:?}, found {} ({}, {})",
                    self.names[i],
                    self.values[i].dim(),
                    rec.name,
                    rec.rows,
                    rec.cols
                )));
            }
            self.values[i] = Array2::from_shape_vec((rec.rows, rec.cols), rec.data.clone())
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputTransform {
    None,
    Sigmoid,
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

/// Fully connected network with ELU between layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    output: OutputTransform,
    in_dim: usize,
    out_dim: usize,
}

impl Mlp {
    /// `sizes` lists every layer width from input to output, so
    /// `[1, 64, 64, 64, 1]` has three hidden layers of 64 units.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        output: OutputTransform,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output widths");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.sample(dist));
                Linear {
                    weight: store.add(format!("{name}.{l}.weight"), weight),
                    bias: store.add(format!("{name}.{l}.bias"), Array2::zeros((1, fan_out))),
                }
            })
            .collect();
        Mlp {
            layers,
            output,
            in_dim: sizes[0],
            out_dim: *sizes.last().unwrap(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    /// Zero the final layer so the network's output is identically zero.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let last = self.layers.last().unwrap();
        store.get_mut(last.weight).fill(0.0);
        store.get_mut(last.bias).fill(0.0);
    }

    pub fn zero_all(&self, store: &mut ParamStore) {
        for id in self.params() {
            store.get_mut(id).fill(0.0);
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &Bound, input: Var) -> Result<Var> {
        let (_, width) = g.shape(input);
        if width != self.in_dim {
            return Err(Error::Shape(format!(
                "mlp expects {} input columns, got {width}",
                self.in_dim
            )));
        }
        let mut h = input;
        for (l, layer) in self.layers.iter().enumerate() {
            h = g.matmul(h, params.var(layer.weight))?;
            h = g.add_row_bias(h, params.var(layer.bias))?;
            if l + 1 < self.layers.len() {
                h = g.elu(h);
            }
        }
        Ok(match self.output {
            OutputTransform::None => h,
            OutputTransform::Sigmoid => g.sigmoid(h),
        })
    }
}

/// Adam with bias correction, minimizing whatever the store's gradients
/// point up.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.values.len() {
            self.m = store.values.iter().map(|v| Array2::zeros(v.dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((value, grad), m), v) in store
            .values
            .iter_mut()
            .zip(&store.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(value)
                .and(grad)
                .and(m)
                .and(v)
                .for_each(|x, &gr, m, v| {
                    *m = b1 * *m + (1.0 - b1) * gr;
                    *v = b2 * *v + (1.0 - b2) * gr * gr;
                    *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_is_batch_by_out_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "f", &[3, 64, 64, 64, 2], OutputTransform::None, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Array2::ones((5, 3)));
        let y = net.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), (5, 2));
        assert_eq!(net.depth(), 4);
    }

    #[test]
    fn zero_weights_give_zero_or_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (out, expect) in [(OutputTransform::None, 0.0), (OutputTransform::Sigmoid, 0.5)] {
            let mut store = ParamStore::new();
            let net = Mlp::new(&mut store, "f", &[2, 64, 64, 64, 1], out, &mut rng);
            net.zero_all(&mut store);
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let x = g.constant(array![[3.0, -7.0], [0.1, 100.0]]);
            let y = net.forward(&mut g, &p, x).unwrap();
            assert!(g.value(y).iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn identity_single_layer_passes_nonnegative_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "f", &[2, 2], OutputTransform::None, &mut rng);
        let w = store.find("f.0.weight").unwrap();
        *store.get_mut(w) = Array2::eye(2);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(array![[1.0, 2.0]]);
        let y = net.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y), &array![[1.0, 2.0]]);
        // ELU leaves non-negative values unchanged.
        let z = g.elu(y);
        assert_eq!(g.value(z), &array![[1.0, 2.0]]);
    }

    #[test]
    fn input_width_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "f", &[2, 4, 1], OutputTransform::None, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Array2::ones((1, 3)));
        assert!(matches!(net.forward(&mut g, &p, x), Err(Error::Shape(_))));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        Mlp::new(&mut store, "f", &[10, 64, 1], OutputTransform::None, &mut rng);
        let w = store.get(store.find("f.0.weight").unwrap());
        let bound = (6.0f64 / 74.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= bound));
        assert!(w.iter().any(|x| x.abs() > 0.5 * bound));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            store.zero_grad();
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let sq = g.square(p.var(id));
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            store.accumulate(&g, &p);
            opt.step(&mut store);
        }
        assert!(store.get(id).iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn records_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        Mlp::new(&mut store, "f", &[2, 3, 1], OutputTransform::None, &mut rng);
        let recs = store.to_records();
        let mut other = ParamStore::new();
        Mlp::new(&mut other, "f", &[2, 3, 1], OutputTransform::None, &mut rng);
        other.load_records(&recs).unwrap();
        assert_eq!(other.to_records(), recs);
        let mut wrong = ParamStore::new();
        Mlp::new(&mut wrong, "f", &[2, 4, 1], OutputTransform::None, &mut rng);
        assert!(wrong.load_records(&recs).is_err());
    }
}
