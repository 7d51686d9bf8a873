//! Small dense feed-forward network: rectified hidden layers, a linear output
//! layer, masked mean-square loss, backpropagation and Adam.
//!
//! Parameters live in one flat vector. Layer `l` with `n_in` inputs and
//! `n_out` outputs stores its `n_out x n_in` weights row-major, followed by
//! its `n_out` biases.
//!
//! Text weight format, one item per line:
//!
//! ```text
//! rmfs-network 1
//! layers 21 32 32 32 6
//! <weights of layer 0, row-major, space separated>
//! <biases of layer 0>
//! ...
//! ```

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Input, hidden and output widths of the storage agent's network.
pub const AGENT_LAYERS: [usize; 5] = [21, 32, 32, 32, 6];

const FORMAT_HEADER: &str = "rmfs-network 1";

#[derive(Debug, Error)]
pub enum NnError {
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network shapes differ: {0:?} vs {1:?}")]
    ArchitectureMismatch(Vec<usize>, Vec<usize>),
    #[error("a network needs at least an input and an output layer of positive width")]
    BadLayers,
    #[error("batch is empty or selects no output")]
    EmptyBatch,
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One training row: which outputs carry a target, and the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub mask: Vec<bool>,
    pub values: Vec<f64>,
}

impl TargetRow {
    /// Target on a single output.
    pub fn single(width: usize, index: usize, value: f64) -> Self {
        let mut mask = vec![false; width];
        let mut values = vec![0.0; width];
        mask[index] = true;
        values[index] = value;
        Self { mask, values }
    }

    /// The same target on every output.
    pub fn all(width: usize, value: f64) -> Self {
        Self { mask: vec![true; width], values: vec![value; width] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.sizes.len() - 1 {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.random_range(-a..=a);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::BadLayers);
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; count] })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of the weights and biases of layer `l`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut offset = 0;
        for w in self.sizes.windows(2).take(l) {
            offset += w[0] * w[1] + w[1];
        }
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w_end = offset + n_in * n_out;
        (offset..w_end, w_end..w_end + n_out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut act = x.to_vec();
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut next = b.to_vec();
            for (o, z) in next.iter_mut().enumerate() {
                *z += dot(&w[o * n_in..(o + 1) * n_in], &act);
            }
            if l + 1 < layers {
                relu(&mut next);
            }
            act = next;
            offset += n_in * n_out + n_out;
        }
        Ok(act)
    }

    /// Masked mean-square error over the batch and its gradient with respect
    /// to every parameter.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[TargetRow]) -> Result<(f64, Vec<f64>), NnError> {
        if inputs.len() != targets.len() {
            return Err(NnError::DimensionMismatch { expected: inputs.len(), got: targets.len() });
        }
        let out = self.output_size();
        for t in targets {
            for len in [t.mask.len(), t.values.len()] {
                if len != out {
                    return Err(NnError::DimensionMismatch { expected: out, got: len });
                }
            }
        }
        let count: usize = targets.iter().map(|t| t.mask.iter().filter(|&&m| m).count()).sum();
        if count == 0 {
            return Err(NnError::EmptyBatch);
        }
        let scale = 1.0 / count as f64;
        let layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;

        for (x, t) in inputs.iter().zip(targets) {
            self.check_input(x)?;
            // Post-activation outputs of every layer, input first.
            let mut acts = vec![x.clone()];
            let mut offset = 0;
            for l in 0..layers {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let w = &self.params[offset..offset + n_in * n_out];
                let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
                let prev = &acts[l];
                let mut next = b.to_vec();
                for (o, z) in next.iter_mut().enumerate() {
                    *z += dot(&w[o * n_in..(o + 1) * n_in], prev);
                }
                if l + 1 < layers {
                    relu(&mut next);
                }
                acts.push(next);
                offset += n_in * n_out + n_out;
            }

            let pred = &acts[layers];
            let mut delta: Vec<f64> = (0..out)
                .map(|k| {
                    if t.mask[k] {
                        let e = pred[k] - t.values[k];
                        loss += e * e * scale;
                        2.0 * e * scale
                    } else {
                        0.0
                    }
                })
                .collect();

            for l in (0..layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let (wr, br) = self.layer_range(l);
                let prev = &acts[l];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[br.start + o] += d;
                    let row = wr.start + o * n_in;
                    for (g, &a) in grad[row..row + n_in].iter_mut().zip(prev) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let w = &self.params[wr];
                    let mut back = vec![0.0; n_in];
                    for (o, &d) in delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (bk, &wv) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *bk += d * wv;
                        }
                    }
                    // Rectifier derivative from the stored post-activation.
                    for (bk, &a) in back.iter_mut().zip(prev) {
                        if a <= 0.0 {
                            *bk = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        Ok((loss, grad))
    }

    /// Masked mean-square error without the gradient.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[TargetRow]) -> Result<f64, NnError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, t) in inputs.iter().zip(targets) {
            let y = self.forward(x)?;
            for k in 0..y.len() {
                if t.mask[k] {
                    total += (y[k] - t.values[k]).powi(2);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(NnError::EmptyBatch);
        }
        Ok(total / count as f64)
    }

    /// Overwrites this network's parameters with those of `src`.
    pub fn copy_weights_from(&mut self, src: &Network) -> Result<(), NnError> {
        if self.sizes != src.sizes {
            return Err(NnError::ArchitectureMismatch(src.sizes.clone(), self.sizes.clone()));
        }
        self.params.copy_from_slice(&src.params);
        Ok(())
    }

    pub fn write_text<W: Write>(&self, out: W) -> Result<(), NnError> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{FORMAT_HEADER}")?;
        writeln!(out, "layers {}", join(self.sizes.iter()))?;
        for l in 0..self.sizes.len() - 1 {
            let (w, b) = self.layer_range(l);
            writeln!(out, "{}", join(self.params[w].iter()))?;
            writeln!(out, "{}", join(self.params[b].iter()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text<R: io::Read>(input: R) -> Result<Self, NnError> {
        let bad = |m: String| NnError::Format(m);
        let mut lines = BufReader::new(input).lines();
        let mut next_line = |what: &str| -> Result<String, NnError> {
            lines.next().ok_or_else(|| bad(format!("missing {what}")))?.map_err(NnError::from)
        };
        if next_line("header")?.trim() != FORMAT_HEADER {
            return Err(bad("unknown header".into()));
        }
        let layers = next_line("layer line")?;
        let sizes = layers
            .strip_prefix("layers ")
            .ok_or_else(|| bad("expected `layers ...`".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| bad(format!("layer size {t:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut net = Self::zeros(&sizes)?;
        for l in 0..sizes.len() - 1 {
            let (w, b) = net.layer_range(l);
            for (range, what) in [(w, "weights"), (b, "biases")] {
                let line = next_line(what)?;
                let values = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| bad(format!("value {t:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if values.len() != range.len() {
                    return Err(bad(format!("layer {l} {what}: expected {} values, got {}", range.len(), values.len())));
                }
                net.params[range].copy_from_slice(&values);
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        self.write_text(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::read_text(File::open(path)?)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.sizes[0] {
            return Err(NnError::DimensionMismatch { expected: self.sizes[0], got: x.len() });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn join<'a>(values: impl Iterator<Item = &'a (impl std::fmt::Display + 'a)>) -> String {
    values.map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.00025, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(net: &Network, cfg: AdamConfig) -> Self {
        let n = net.params.len();
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Network, grad: &[f64]) {
        assert_eq!(grad.len(), net.params.len(), "gradient length");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            net.params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One Adam step on a mini-batch. Returns the loss before the update.
pub fn train_batch(net: &mut Network, adam: &mut Adam, inputs: &[Vec<f64>], targets: &[TargetRow]) -> Result<f64, NnError> {
    let (loss, grad) = net.loss_and_gradient(inputs, targets)?;
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss(loss));
    }
    adam.step(net, &grad);
    Ok(loss)
}
