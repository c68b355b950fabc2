//! Shared neural-network plumbing: named parameter sets, seeded
//! initialization, an Adam optimizer and a small MLP helper used by the
//! encoder, the regressor heads and the pairwise classifiers.

use crate::tape::{Tape, Tensor, VarId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ordered collection of named tensors. Models hold one of these as an
/// immutable snapshot; training produces a new snapshot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate param {name}");
        self.entries.push((name, t));
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index_of(name).unwrap_or_else(|| panic!("missing param {name}"));
        &self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.entries.iter()
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn set_at(&mut self, i: usize, t: Tensor) {
        self.entries[i].1 = t;
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Register every tensor as a tape leaf, in entry order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<VarId> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect()
    }
}

/// Gaussian init scaled by 1/sqrt(fan_in).
pub fn init_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let scale = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            // Box-Muller from two uniforms keeps us independent of
            // distribution crates.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * scale
        })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

pub fn zeros_row(cols: usize) -> Tensor {
    Tensor::zeros(1, cols)
}

/// Adam with bias correction. State is aligned with the ParamSet entry
/// order it was created for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamSet) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|(_, t)| Tensor::zeros(t.rows, t.cols)).collect(),
            v: params.iter().map(|(_, t)| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut new = params.tensor_at(i).clone();
            for k in 0..g.data.len() {
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g.data[k];
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g.data[k] * g.data[k];
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                new.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            params.set_at(i, new);
        }
    }
}

/// Fully connected network spec: `dims = [in, h1, ..., out]`, ReLU between
/// layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2);
        Mlp { prefix: prefix.into(), dims }
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    /// Appends freshly initialized weights/biases to `params`.
    pub fn init_into(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for l in 0..self.layer_count() {
            params.push(
                format!("{}.w{}", self.prefix, l),
                init_weight(rng, self.dims[l], self.dims[l + 1]),
            );
            params.push(format!("{}.b{}", self.prefix, l), zeros_row(self.dims[l + 1]));
        }
    }

    /// Indices of this MLP's params inside `params`, in forward order.
    pub fn param_indices(&self, params: &ParamSet) -> Vec<usize> {
        let mut idx = Vec::with_capacity(2 * self.layer_count());
        for l in 0..self.layer_count() {
            idx.push(params.index_of(&format!("{}.w{}", self.prefix, l)).unwrap());
            idx.push(params.index_of(&format!("{}.b{}", self.prefix, l)).unwrap());
        }
        idx
    }

    /// Forward pass. `vars` must be the bound tape vars for the whole
    /// ParamSet; `indices` selects this MLP's weights in order.
    pub fn forward(&self, tape: &mut Tape, x: VarId, vars: &[VarId], indices: &[usize]) -> VarId {
        let mut h = x;
        for l in 0..self.layer_count() {
            let w = vars[indices[2 * l]];
            let b = vars[indices[2 * l + 1]];
            h = tape.matmul(h, w);
            h = tape.add_row_broadcast(h, b);
            if l + 1 < self.layer_count() {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Squared-error loss between a column of predictions and targets:
/// mean((pred - target)^2).
pub fn mse(tape: &mut Tape, pred: VarId, target: VarId) -> VarId {
    let diff = tape.sub(pred, target);
    let sq = tape.mul_elem(diff, diff);
    let n = tape.value(sq).data.len() as f64;
    let s = tape.sum_all(sq);
    tape.scale(s, 1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        params.push("w", init_weight(&mut rng, 3, 3));
        let before = params.get("w").clone();
        let mut adam = Adam::new(1e-2, &params);
        adam.step(&mut params, &[Tensor::zeros(3, 3)]);
        assert_eq!(params.get("w"), &before);
    }

    #[test]
    fn mlp_overfits_tiny_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new("f", vec![2, 16, 1]);
        let mut params = ParamSet::new();
        mlp.init_into(&mut params, &mut rng);
        let mut adam = Adam::new(1e-2, &params);

        let xs = Tensor::from_vec(4, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let ys = Tensor::from_vec(4, 1, vec![0.1, 0.7, 0.3, 0.9]);
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let idx = mlp.param_indices(&params);
            let x = tape.constant(xs.clone());
            let t = tape.constant(ys.clone());
            let pred = mlp.forward(&mut tape, x, &vars, &idx);
            let loss = mse(&mut tape, pred, t);
            last = tape.value(loss).item();
            let grads = tape.backward(loss);
            let gvec: Vec<Tensor> = vars.iter().map(|&v| grads.get(v, &tape)).collect();
            adam.step(&mut params, &gvec);
        }
        assert!(last < 1e-3, "failed to overfit, loss {last}");
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_weight(&mut ChaCha8Rng::seed_from_u64(9), 4, 5);
        let b = init_weight(&mut ChaCha8Rng::seed_from_u64(9), 4, 5);
        assert_eq!(a, b);
    }
}
