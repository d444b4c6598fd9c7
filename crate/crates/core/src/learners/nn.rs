use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Loss;
use crate::error::{Error, Result};

/// Per-layer batch means and variances.
type BatchStats = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Three hidden layers of width `3F`.
    Block,
    /// Hidden widths `F`, `ceil(2F/3)`, `ceil(F/3)`.
    Trapezoid,
}

impl Architecture {
    pub fn hidden_widths(self, n_features: usize) -> Vec<usize> {
        match self {
            Architecture::Block => vec![3 * n_features; 3],
            Architecture::Trapezoid => vec![n_features, (2 * n_features).div_ceil(3), n_features.div_ceil(3)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub architecture: Architecture,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub seed: u64,
}

impl NnParams {
    pub fn new(architecture: Architecture, batch_size: usize) -> Self {
        Self {
            architecture,
            activation: Activation::Relu,
            dropout: 0.01,
            batch_size,
            epochs: 40,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) || self.batch_size < 2 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(
                "NN needs dropout in [0, 1), batch size >= 2 and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Dense layer; `w` is the column-major `inputs x outputs` weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            b: vec![0.0; outputs],
        }
    }

    fn weights(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.w, self.inputs, self.outputs)
    }

    fn forward(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * self.weights();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self { gamma: vec![1.0; width], beta: vec![0.0; width], running_mean: vec![0.0; width], running_var: vec![1.0; width] }
    }
}

/// Fully connected network: each hidden layer is dense, activation, batch
/// normalization, dropout; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Vec<(Dense, BatchNorm)>,
    #[serde(default)]
    pub activation: Activation,
    pub output: Dense,
    pub dropout: f64,
    pub bn_epsilon: f64,
}

/// Gradients in the layout of [`Mlp::parameters`].
pub type Gradients = Vec<Vec<f64>>;

struct LayerCache {
    input: DMatrix<f64>,
    z: DMatrix<f64>,
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    mask: Option<DMatrix<f64>>,
}

impl Mlp {
    pub fn new(n_inputs: usize, widths: &[usize], n_outputs: usize, dropout: f64, bn_epsilon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = Vec::with_capacity(widths.len());
        let mut prev = n_inputs;
        for &w in widths {
            hidden.push((Dense::glorot(prev, w, &mut rng), BatchNorm::new(w)));
            prev = w;
        }
        let output = Dense::glorot(prev, n_outputs, &mut rng);
        Self { hidden, activation: Activation::Relu, output, dropout, bn_epsilon }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn n_inputs(&self) -> usize {
        self.hidden.first().map_or(self.output.inputs, |(d, _)| d.inputs)
    }

    pub fn n_outputs(&self) -> usize {
        self.output.outputs
    }

    /// Trainable parameter vectors in a fixed order.
    pub fn parameters(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for (d, bn) in &self.hidden {
            out.extend([&d.w, &d.b, &bn.gamma, &bn.beta]);
        }
        out.extend([&self.output.w, &self.output.b]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for (d, bn) in &mut self.hidden {
            out.extend([&mut d.w, &mut d.b, &mut bn.gamma, &mut bn.beta]);
        }
        out.extend([&mut self.output.w, &mut self.output.b]);
        out
    }

    /// Inference: running normalization statistics, no dropout. `x` is
    /// `batch x inputs`.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for (dense, bn) in &self.hidden {
            let mut z = dense.forward(&a);
            for (j, mut col) in z.column_iter_mut().enumerate() {
                let s = bn.gamma[j] / (bn.running_var[j] + self.bn_epsilon).sqrt();
                let m = bn.running_mean[j];
                let beta = bn.beta[j];
                col.apply(|v| *v = (self.activation.apply(*v) - m) * s + beta);
            }
            a = z;
        }
        self.output.forward(&a)
    }

    /// Replaces the running normalization statistics by the exact population
    /// statistics of `x` under the current weights, layer by layer.
    pub fn recalibrate_normalization(&mut self, x: &DMatrix<f64>) {
        let n = x.nrows() as f64;
        let mut a = x.clone();
        for l in 0..self.hidden.len() {
            let (dense, _) = &self.hidden[l];
            let mut h = dense.forward(&a);
            h.apply(|v| *v = self.activation.apply(*v));
            let bn = &mut self.hidden[l].1;
            for (j, mut col) in h.column_iter_mut().enumerate() {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                bn.running_mean[j] = mean;
                bn.running_var[j] = var;
                let s = bn.gamma[j] / (var + self.bn_epsilon).sqrt();
                let beta = bn.beta[j];
                col.apply(|v| *v = (*v - mean) * s + beta);
            }
            a = h;
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        let out = self.predict(&DMatrix::from_row_slice(1, x.len(), x));
        out.iter().copied().collect()
    }

    /// Training-mode forward pass with batch statistics. `masks[l]` is the
    /// (already scaled) dropout mask of hidden layer `l`, if any.
    fn forward_train(&self, x: &DMatrix<f64>, masks: &[Option<DMatrix<f64>>]) -> (DMatrix<f64>, Vec<LayerCache>, Vec<BatchStats>) {
        let b = x.nrows() as f64;
        let mut a = x.clone();
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut stats = Vec::with_capacity(self.hidden.len());
        for (l, (dense, bn)) in self.hidden.iter().enumerate() {
            let z = dense.forward(&a);
            let h = z.map(|v| self.activation.apply(v));
            let width = h.ncols();
            let mut xhat = h.clone();
            let mut inv_std = Vec::with_capacity(width);
            let mut means = Vec::with_capacity(width);
            let mut vars = Vec::with_capacity(width);
            let mut y = DMatrix::zeros(h.nrows(), width);
            for j in 0..width {
                let col = h.column(j);
                let mean = col.sum() / b;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b;
                let is = 1.0 / (var + self.bn_epsilon).sqrt();
                xhat.column_mut(j).apply(|v| *v = (*v - mean) * is);
                let (g, be) = (bn.gamma[j], bn.beta[j]);
                for i in 0..h.nrows() {
                    y[(i, j)] = g * xhat[(i, j)] + be;
                }
                inv_std.push(is);
                means.push(mean);
                vars.push(var);
            }
            let mask = masks.get(l).cloned().flatten();
            if let Some(m) = &mask {
                y.component_mul_assign(m);
            }
            caches.push(LayerCache { input: a, z, xhat, inv_std, mask });
            stats.push((means, vars));
            a = y;
        }
        let out = self.output.forward(&a);
        caches.push(LayerCache { input: a, z: DMatrix::zeros(0, 0), xhat: DMatrix::zeros(0, 0), inv_std: vec![], mask: None });
        (out, caches, stats)
    }

    /// Loss and parameter gradients on one batch in training mode.
    pub fn loss_and_gradients(
        &self,
        x: &DMatrix<f64>,
        t: &DMatrix<f64>,
        loss: Loss,
        masks: &[Option<DMatrix<f64>>],
    ) -> (f64, Gradients, Vec<BatchStats>) {
        let (out, caches, stats) = self.forward_train(x, masks);
        let count = (out.nrows() * out.ncols()) as f64;
        let mut value = 0.0;
        let mut d = DMatrix::zeros(out.nrows(), out.ncols());
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                let (o, y) = (out[(i, j)], t[(i, j)]);
                value += loss.value(y, o);
                d[(i, j)] = -loss.negative_gradient(y, o) / count;
            }
        }
        value /= count;

        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(4 * self.hidden.len() + 2);
        let last = caches.last().expect("output cache");
        let (dw, db) = dense_grads(&last.input, &d);
        let mut da = &d * self.output.weights().transpose();
        let mut tail = vec![db, dw];

        let bsz = x.nrows() as f64;
        for (l, (dense, bn)) in self.hidden.iter().enumerate().rev() {
            let c = &caches[l];
            let mut dy = da;
            if let Some(m) = &c.mask {
                dy.component_mul_assign(m);
            }
            let width = dy.ncols();
            let mut dgamma = vec![0.0; width];
            let mut dbeta = vec![0.0; width];
            let mut dz = DMatrix::zeros(dy.nrows(), width);
            for j in 0..width {
                let mut sum_dx = 0.0;
                let mut sum_dx_xhat = 0.0;
                for i in 0..dy.nrows() {
                    let g = dy[(i, j)];
                    dgamma[j] += g * c.xhat[(i, j)];
                    dbeta[j] += g;
                    let dx = g * bn.gamma[j];
                    sum_dx += dx;
                    sum_dx_xhat += dx * c.xhat[(i, j)];
                }
                for i in 0..dy.nrows() {
                    let dx = dy[(i, j)] * bn.gamma[j];
                    let dh = c.inv_std[j] / bsz * (bsz * dx - sum_dx - c.xhat[(i, j)] * sum_dx_xhat);
                    dz[(i, j)] = dh * self.activation.derivative(c.z[(i, j)]);
                }
            }
            let (dw, db) = dense_grads(&c.input, &dz);
            da = &dz * dense.weights().transpose();
            tail.extend([dbeta, dgamma, db, dw]);
        }
        tail.reverse();
        grads.extend(tail);
        (value, grads, stats)
    }
}

fn dense_grads(input: &DMatrix<f64>, d: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let dw = input.transpose() * d;
    let db = d.column_iter().map(|c| c.sum()).collect();
    (dw.as_slice().to_vec(), db)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &Mlp) -> Self {
        let shapes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Gradients, p: &NnParams) {
        self.t += 1;
        let c1 = 1.0 - p.beta1.powi(self.t);
        let c2 = 1.0 - p.beta2.powi(self.t);
        for (((param, g), m), v) in net.parameters_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..param.len() {
                m[k] = p.beta1 * m[k] + (1.0 - p.beta1) * g[k];
                v[k] = p.beta2 * v[k] + (1.0 - p.beta2) * g[k] * g[k];
                param[k] -= p.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + p.epsilon);
            }
        }
    }
}

/// Mini-batch Adam training on row-major standardized `x` (`n x n_features`)
/// and `t` (`n x n_outputs`). Returns the network and the mean training loss
/// of every epoch.
pub fn fit_nn(x: &[f64], t: &[f64], n_features: usize, n_outputs: usize, params: &NnParams, loss: Loss) -> Result<(Mlp, Vec<f64>)> {
    params.validate()?;
    loss.validate()?;
    let n = x.len().checked_div(n_features).unwrap_or(0);
    if n < 2 || x.len() != n * n_features || t.len() != n * n_outputs {
        return Err(Error::DimensionMismatch { expected: n * n_outputs, got: t.len() });
    }
    let widths = params.architecture.hidden_widths(n_features);
    let mut net = Mlp::new(n_features, &widths, n_outputs, params.dropout, params.bn_epsilon, params.seed).with_activation(params.activation);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5bd1_e995);
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(params.epochs);
    let keep = 1.0 - params.dropout;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (batch_index, batch) in order.chunks(params.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let bx = DMatrix::from_fn(batch.len(), n_features, |i, j| x[batch[i] * n_features + j]);
            let bt = DMatrix::from_fn(batch.len(), n_outputs, |i, j| t[batch[i] * n_outputs + j]);
            let masks: Vec<Option<DMatrix<f64>>> = widths
                .iter()
                .map(|&w| {
                    (params.dropout > 0.0).then(|| {
                        DMatrix::from_fn(batch.len(), w, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    })
                })
                .collect();
            let (value, grads, stats) = net.loss_and_gradients(&bx, &bt, loss, &masks);
            if !value.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged(format!("non-finite loss at epoch {epoch}, batch {batch_index}")));
            }
            adam.step(&mut net, &grads, params);
            let mom = params.bn_momentum;
            for ((_, bn), (means, vars)) in net.hidden.iter_mut().zip(stats) {
                for j in 0..means.len() {
                    bn.running_mean[j] = mom * bn.running_mean[j] + (1.0 - mom) * means[j];
                    bn.running_var[j] = mom * bn.running_var[j] + (1.0 - mom) * vars[j];
                }
            }
            total += value * batch.len() as f64;
            seen += batch.len();
        }
        history.push(total / seen.max(1) as f64);
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, f: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0));
        let t = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        (x, t)
    }

    #[test]
    fn widths_follow_the_rules() {
        assert_eq!(Architecture::Block.hidden_widths(22), vec![66, 66, 66]);
        assert_eq!(Architecture::Trapezoid.hidden_widths(22), vec![22, 15, 8]);
        assert_eq!(Architecture::Trapezoid.hidden_widths(6), vec![6, 4, 2]);
    }

    #[test]
    fn zero_weights_output_the_biases() {
        let mut net = Mlp::new(4, &[5, 3], 2, 0.01, 1e-3, 1);
        for p in net.parameters_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        for (_, bn) in &mut net.hidden {
            bn.gamma.iter_mut().for_each(|g| *g = 1.0);
        }
        net.output.b = vec![0.25, -1.5];
        assert_eq!(net.predict_one(&[0.3, -2.0, 1.0, 7.0]), vec![0.25, -1.5]);
    }

    fn gradient_check(loss: Loss, masks: bool, activation: Activation) {
        let mut net = Mlp::new(4, &[6, 5, 3], 2, 0.2, 1e-3, 7).with_activation(activation);
        // Non-trivial normalization parameters.
        for (k, (_, bn)) in net.hidden.iter_mut().enumerate() {
            bn.gamma.iter_mut().enumerate().for_each(|(j, g)| *g = 0.8 + 0.1 * (j + k) as f64);
            bn.beta.iter_mut().enumerate().for_each(|(j, b)| *b = 0.05 * j as f64 - 0.1);
        }
        let (x, t) = batch(10, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m: Vec<Option<DMatrix<f64>>> = [6, 5, 3]
            .iter()
            .map(|&w| masks.then(|| DMatrix::from_fn(10, w, |_, _| if rng.random::<f64>() < 0.8 { 1.25 } else { 0.0 })))
            .collect();
        let (_, grads, _) = net.loss_and_gradients(&x, &t, loss, &m);
        let h = 1e-6;
        let mut worst = 0.0f64;
        let n_params = net.parameters().len();
        for p in 0..n_params {
            for k in 0..net.parameters()[p].len() {
                let orig = net.parameters()[p][k];
                net.parameters_mut()[p][k] = orig + h;
                let (up, _, _) = net.loss_and_gradients(&x, &t, loss, &m);
                net.parameters_mut()[p][k] = orig - h;
                let (down, _, _) = net.loss_and_gradients(&x, &t, loss, &m);
                net.parameters_mut()[p][k] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grads[p][k];
                let rel = (fd - g).abs() / (fd.abs().max(g.abs()).max(1e-6));
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst:e}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for activation in [Activation::Relu, Activation::Tanh] {
            gradient_check(Loss::Squared, false, activation);
            gradient_check(Loss::Squared, true, activation);
        }
    }

    #[test]
    fn descends_on_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = x.chunks_exact(3).flat_map(|r| [r[0] - 0.5 * r[1], 0.3 * r[2] + r[0]]).collect();
        let p = NnParams { epochs: 5, ..NnParams::new(Architecture::Block, 100) };
        let (_, history) = fit_nn(&x, &t, 3, 2, &p, Loss::Squared).unwrap();
        for w in history.windows(2) {
            assert!(w[1] < w[0], "{history:?}");
        }
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = x.chunks_exact(3).flat_map(|r| [r[0], r[1] * r[2]]).collect();
        let p = NnParams { epochs: 3, ..NnParams::new(Architecture::Trapezoid, 32) };
        let (a, _) = fit_nn(&x, &t, 3, 2, &p, Loss::Squared).unwrap();
        let (b, _) = fit_nn(&x, &t, 3, 2, &p, Loss::Squared).unwrap();
        assert_eq!(a, b);
        let other = NnParams { seed: 1, ..p };
        let (c, _) = fit_nn(&x, &t, 3, 2, &other, Loss::Squared).unwrap();
        assert_ne!(a, c);
    }
}
