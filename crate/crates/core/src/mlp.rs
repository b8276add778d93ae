//! A small self-contained multi-layer perceptron: ReLU hidden layers,
//! linear output, mean-squared-error training with Adam, and a
//! finite-difference gradient check.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"KMLP";
const MODEL_VERSION: u32 = 1;

/// Fully-connected network. Weight matrix `l` has shape
/// `(layer_dims[l], layer_dims[l+1])`, stored row-major by input index.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Optimizer settings for MSE training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOpts {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainOpts {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in self.weights.iter_mut() {
            w.fill(0.0);
        }
        for b in self.biases.iter_mut() {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.weights.iter_mut() {
            for x in w.iter_mut() {
                *x *= factor;
            }
        }
        for b in self.biases.iter_mut() {
            for x in b.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Activations per layer; `activations[0]` is the input, the last
    /// entry is the network output.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activations per non-input layer.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache has layers")
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "need at least input and output dims".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer dims must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// ReLU on hidden layers, identity on the output layer.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        for l in 0..self.num_layers() {
            let mut z = self.affine(l, &current);
            if l + 1 < self.num_layers() {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            current = z;
        }
        Ok(current)
    }

    /// Forward pass that keeps the intermediates needed by [`Self::backward`].
    pub fn forward_cache(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        activations.push(x.to_vec());
        for l in 0..self.num_layers() {
            let z = self.affine(l, activations.last().unwrap());
            pre_activations.push(z.clone());
            let a = if l + 1 < self.num_layers() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z
            };
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Accumulates parameter gradients for one sample given the loss
    /// gradient with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut Gradients) {
        debug_assert_eq!(grad_output.len(), self.output_dim());
        let mut delta = grad_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let input = &cache.activations[l];
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let gw = &mut grads.weights[l];
            for i in 0..fan_in {
                let xi = input[i];
                if xi != 0.0 {
                    let row = &mut gw[i * fan_out..(i + 1) * fan_out];
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot += xi * delta[j];
                    }
                }
            }
            for j in 0..fan_out {
                grads.biases[l][j] += delta[j];
            }
            if l > 0 {
                let w = &self.weights[l];
                let z_prev = &cache.pre_activations[l - 1];
                let mut next_delta = vec![0.0; fan_in];
                for i in 0..fan_in {
                    if z_prev[i] > 0.0 {
                        let row = &w[i * fan_out..(i + 1) * fan_out];
                        let mut acc = 0.0;
                        for j in 0..fan_out {
                            acc += row[j] * delta[j];
                        }
                        next_delta[i] = acc;
                    }
                }
                delta = next_delta;
            }
        }
    }

    fn affine(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let mut z = self.biases[l].clone();
        let w = &self.weights[l];
        for i in 0..fan_in {
            let xi = input[i];
            if xi != 0.0 {
                let row = &w[i * fan_out..(i + 1) * fan_out];
                for j in 0..fan_out {
                    z[j] += xi * row[j];
                }
            }
        }
        z
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Binary model file: header (magic, version, seed, dims) then all
    /// parameters as little-endian f64. Round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for l in 0..self.num_layers() {
            for &w in &self.weights[l] {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            for &b in &self.biases[l] {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::MalformedRecord {
                    line: 0,
                    reason: "model file truncated".into(),
                });
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MODEL_MAGIC {
            return Err(Error::MalformedRecord {
                line: 0,
                reason: "bad model magic".into(),
            });
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::MalformedRecord {
                line: 0,
                reason: format!("unsupported model version {version}"),
            });
        }
        let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let n_dims = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut layer_dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            layer_dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        if layer_dims.len() < 2 {
            return Err(Error::MalformedRecord {
                line: 0,
                reason: "model needs at least two layer dims".into(),
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let nw = layer_dims[l] * layer_dims[l + 1];
            let mut w = Vec::with_capacity(nw);
            for _ in 0..nw {
                w.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            weights.push(w);
            let mut b = Vec::with_capacity(layer_dims[l + 1]);
            for _ in 0..layer_dims[l + 1] {
                b.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            biases.push(b);
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            seed,
        })
    }
}

/// Adam moment buffers; one instance per trained model.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            t: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    /// One Adam update from already-computed gradients.
    pub fn apply(&mut self, model: &mut MlpModel, grads: &Gradients, opts: &TrainOpts) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - opts.beta1.powi(t);
        let bc2 = 1.0 - opts.beta2.powi(t);
        let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = opts.beta1 * *m + (1.0 - opts.beta1) * g;
            *v = opts.beta2 * *v + (1.0 - opts.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param -= opts.learning_rate * m_hat / (v_hat.sqrt() + opts.epsilon);
        };
        for l in 0..model.num_layers() {
            for i in 0..model.weights[l].len() {
                update(
                    &mut model.weights[l][i],
                    grads.weights[l][i],
                    &mut self.m.weights[l][i],
                    &mut self.v.weights[l][i],
                );
            }
            for i in 0..model.biases[l].len() {
                update(
                    &mut model.biases[l][i],
                    grads.biases[l][i],
                    &mut self.m.biases[l][i],
                    &mut self.v.biases[l][i],
                );
            }
        }
    }
}

/// Batch MSE `(1/N) * sum_i ||f(x_i) - y_i||^2` and its parameter gradients.
pub fn mse_loss_and_gradients(
    model: &MlpModel,
    batch: &[(Vec<f64>, Vec<f64>)],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (x, y) in batch {
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in training batch".into()));
        }
        if y.len() != model.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.output_dim(),
                got: y.len(),
            });
        }
        let cache = model.forward_cache(x)?;
        let out = cache.output();
        let mut grad_out = vec![0.0; out.len()];
        for k in 0..out.len() {
            let diff = out[k] - y[k];
            loss += diff * diff / n;
            grad_out[k] = 2.0 * diff / n;
        }
        model.backward(&cache, &grad_out, &mut grads);
    }
    Ok((loss, grads))
}

/// MSE without gradients.
pub fn mse_loss(model: &MlpModel, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (x, y) in batch {
        let out = model.forward(x)?;
        for k in 0..out.len() {
            let diff = out[k] - y[k];
            loss += diff * diff / n;
        }
    }
    Ok(loss)
}

/// One Adam step on the batch MSE; returns the pre-update loss.
pub fn train_step(
    model: &mut MlpModel,
    batch: &[(Vec<f64>, Vec<f64>)],
    opts: &TrainOpts,
    adam: &mut AdamState,
) -> Result<f64> {
    opts.validate()?;
    let (loss, grads) = mse_loss_and_gradients(model, batch)?;
    adam.apply(model, &grads, opts);
    Ok(loss)
}

fn param_slots(model: &MlpModel) -> Vec<(usize, bool, usize)> {
    let mut slots = Vec::with_capacity(model.num_params());
    for l in 0..model.num_layers() {
        for i in 0..model.weights[l].len() {
            slots.push((l, true, i));
        }
        for i in 0..model.biases[l].len() {
            slots.push((l, false, i));
        }
    }
    slots
}

fn slot_get(model: &MlpModel, slot: (usize, bool, usize)) -> f64 {
    let (l, is_w, i) = slot;
    if is_w {
        model.weights[l][i]
    } else {
        model.biases[l][i]
    }
}

fn slot_set(model: &mut MlpModel, slot: (usize, bool, usize), v: f64) {
    let (l, is_w, i) = slot;
    if is_w {
        model.weights[l][i] = v;
    } else {
        model.biases[l][i] = v;
    }
}

/// Central finite differences of the single-sample MSE over every parameter.
pub fn numeric_gradients(model: &MlpModel, x: &[f64], y: &[f64], h: f64) -> Result<Gradients> {
    let mut probe = model.clone();
    let batch = vec![(x.to_vec(), y.to_vec())];
    let mut grads = Gradients::zeros_like(model);
    for slot in param_slots(model) {
        let orig = slot_get(model, slot);
        slot_set(&mut probe, slot, orig + h);
        let plus = mse_loss(&probe, &batch)?;
        slot_set(&mut probe, slot, orig - h);
        let minus = mse_loss(&probe, &batch)?;
        slot_set(&mut probe, slot, orig);
        let g = (plus - minus) / (2.0 * h);
        let (l, is_w, i) = slot;
        if is_w {
            grads.weights[l][i] = g;
        } else {
            grads.biases[l][i] = g;
        }
    }
    Ok(grads)
}

/// Max relative disagreement between two gradient sets. Denominators are
/// floored at 1e-4 so slots where both gradients vanish compare by
/// absolute error at that scale.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    let mut worst = 0.0f64;
    let pairs = a
        .weights
        .iter()
        .zip(b.weights.iter())
        .chain(a.biases.iter().zip(b.biases.iter()));
    for (ga, gb) in pairs {
        for (&x, &y) in ga.iter().zip(gb.iter()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Compares analytic backprop against central finite differences on one
/// sample and returns the max relative error over every parameter.
pub fn gradient_check(model: &MlpModel, x: &[f64], y: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("h must be > 0".into()));
    }
    let batch = vec![(x.to_vec(), y.to_vec())];
    let (_, analytic) = mse_loss_and_gradients(model, &batch)?;
    let numeric = numeric_gradients(model, x, y, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = MlpModel::init(&[3, 8, 2], 42).unwrap();
        let b = MlpModel::init(&[3, 8, 2], 42).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::init(&[3, 8, 2], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_three_hidden() {
        let m = MlpModel::init(&[2, 128, 128, 128, 2], 0).unwrap();
        let shapes: Vec<usize> = m.weights.iter().map(Vec::len).collect();
        assert_eq!(shapes, vec![2 * 128, 128 * 128, 128 * 128, 128 * 2]);
        assert!(m.biases.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(MlpModel::init(&[4], 0).is_err());
        assert!(MlpModel::init(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn forward_zero_weights_zero_output() {
        let mut m = MlpModel::init(&[3, 4, 2], 0).unwrap();
        for w in m.weights.iter_mut() {
            w.fill(0.0);
        }
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_single_layer() {
        let mut m = MlpModel::init(&[2, 2], 0).unwrap();
        m.weights[0] = vec![1.0, 0.0, 0.0, 1.0];
        m.biases[0].fill(0.0);
        assert_eq!(m.forward(&[0.5, -0.25]).unwrap(), vec![0.5, -0.25]);
    }

    #[test]
    fn forward_hand_computed_1_2_1() {
        let mut m = MlpModel::init(&[1, 2, 1], 0).unwrap();
        m.weights[0] = vec![2.0, -3.0];
        m.biases[0] = vec![0.5, 1.0];
        m.weights[1] = vec![1.5, -0.5];
        m.biases[1] = vec![0.25];
        // x = 1: z = (2.5, -2), relu -> (2.5, 0), out = 2.5*1.5 + 0.25 = 4.0
        let out = m.forward(&[1.0]).unwrap();
        assert!((out[0] - 4.0).abs() < 1e-12);
        // x = -1: z = (-1.5, 4), relu -> (0, 4), out = 4*-0.5 + 0.25 = -1.75
        let out = m.forward(&[-1.0]).unwrap();
        assert!((out[0] + 1.75).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let m = MlpModel::init(&[3, 2], 0).unwrap();
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn positive_homogeneity_with_zero_biases() {
        let m = MlpModel::init(&[3, 6, 6, 2], 5).unwrap();
        // Biases start at zero; pick an input with all-positive pre-activations
        // by flipping sign if needed per trial.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let fx = m.forward(&x).unwrap();
            let a = 2.5;
            let ax: Vec<f64> = x.iter().map(|v| v * a).collect();
            let fax = m.forward(&ax).unwrap();
            for (u, v) in fax.iter().zip(fx.iter()) {
                assert!((u - a * v).abs() < 1e-9, "{u} vs {}", a * v);
            }
        }
    }

    #[test]
    fn mse_hand_computed_two_samples() {
        let mut m = MlpModel::init(&[1, 1], 0).unwrap();
        m.weights[0] = vec![2.0];
        m.biases[0] = vec![0.0];
        // Predictions: 2, 4. Targets: 1, 1. Loss = (1 + 9) / 2 = 5.
        let batch = vec![(vec![1.0], vec![1.0]), (vec![2.0], vec![1.0])];
        let loss = mse_loss(&m, &batch).unwrap();
        assert!((loss - 5.0).abs() < 1e-12);
    }

    #[test]
    fn train_step_exact_targets_keeps_loss_zero() {
        let m0 = MlpModel::init(&[2, 4, 2], 3).unwrap();
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|i| {
                let x = vec![i as f64 * 0.1, 1.0 - i as f64 * 0.1];
                let y = m0.forward(&x).unwrap();
                (x, y)
            })
            .collect();
        let mut m = m0.clone();
        let mut adam = AdamState::new(&m);
        let loss = train_step(&mut m, &batch, &TrainOpts::default(), &mut adam).unwrap();
        assert!(loss < 1e-24);
        // Zero gradients mean Adam moves nothing.
        for (w0, w1) in m0.weights.iter().zip(m.weights.iter()) {
            for (a, b) in w0.iter().zip(w1.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_steps_descend() {
        let mut m = MlpModel::init(&[2, 8, 1], 11).unwrap();
        let batch = vec![
            (vec![0.0, 0.0], vec![0.5]),
            (vec![1.0, 0.0], vec![-0.5]),
            (vec![0.0, 1.0], vec![0.25]),
        ];
        let mut adam = AdamState::new(&m);
        let opts = TrainOpts {
            learning_rate: 5e-3,
            ..Default::default()
        };
        let first = train_step(&mut m, &batch, &opts, &mut adam).unwrap();
        let mut last = first;
        let mut max_transient = 0.0f64;
        for _ in 0..99 {
            let loss = train_step(&mut m, &batch, &opts, &mut adam).unwrap();
            max_transient = max_transient.max(loss - last);
            last = loss;
        }
        assert!(last < first, "loss did not improve: {first} -> {last}");
        assert!(max_transient < 1e-2, "transient too large: {max_transient}");
        assert!(last < 1e-3, "final loss too high: {last}");
    }

    #[test]
    fn rejects_nan_batch() {
        let mut m = MlpModel::init(&[1, 1], 0).unwrap();
        let batch = vec![(vec![f64::NAN], vec![0.0])];
        let mut adam = AdamState::new(&m);
        assert!(train_step(&mut m, &batch, &TrainOpts::default(), &mut adam).is_err());
    }

    #[test]
    fn gradient_check_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let dims = [
                vec![2, 4, 1],
                vec![3, 5, 2],
                vec![2, 3, 3, 1],
                vec![4, 4, 2],
            ][trial % 4]
                .clone();
            let m = MlpModel::init(&dims, 100 + trial as u64).unwrap();
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..*dims.last().unwrap())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let err = gradient_check(&m, &x, &y, 1e-5).unwrap();
            assert!(err < 1e-4, "trial {trial}: error {err}");
        }
    }

    #[test]
    fn gradient_check_zero_everything() {
        let mut m = MlpModel::init(&[2, 3, 1], 0).unwrap();
        for w in m.weights.iter_mut() {
            w.fill(0.0);
        }
        let batch = vec![(vec![0.0, 0.0], vec![0.0])];
        let (_, analytic) = mse_loss_and_gradients(&m, &batch).unwrap();
        let numeric = numeric_gradients(&m, &[0.0, 0.0], &[0.0], 1e-5).unwrap();
        for l in 0..m.num_layers() {
            assert!(analytic.weights[l].iter().all(|&g| g == 0.0));
            assert!(numeric.weights[l].iter().all(|&g| g.abs() < 1e-12));
        }
    }

    #[test]
    fn corrupted_backprop_fails_check() {
        let m = MlpModel::init(&[3, 4, 2], 21).unwrap();
        let x = vec![0.4, -0.3, 0.9];
        let y = vec![0.2, -0.1];
        let batch = vec![(x.clone(), y.clone())];
        let (_, mut analytic) = mse_loss_and_gradients(&m, &batch).unwrap();
        // Sign-flip one layer's weight gradients to emulate a backprop bug.
        for g in analytic.weights[0].iter_mut() {
            *g = -*g;
        }
        let numeric = numeric_gradients(&m, &x, &y, 1e-5).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err > 1e-2, "corrupted gradients slipped through: {err}");
    }

    #[test]
    fn deterministic_training_trajectory() {
        let run = || {
            let mut m = MlpModel::init(&[2, 6, 1], 4).unwrap();
            let mut adam = AdamState::new(&m);
            let batch = vec![
                (vec![0.1, 0.9], vec![0.3]),
                (vec![0.8, 0.2], vec![-0.6]),
            ];
            let mut losses = Vec::new();
            for _ in 0..10 {
                losses.push(train_step(&mut m, &batch, &TrainOpts::default(), &mut adam).unwrap());
            }
            (m, losses)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn save_load_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut m = MlpModel::init(&[3, 7, 2], 99).unwrap();
        // Exercise non-trivial parameter values.
        let batch = vec![(vec![0.3, 0.1, -0.2], vec![1.0, -1.0])];
        let mut adam = AdamState::new(&m);
        for _ in 0..5 {
            train_step(&mut m, &batch, &TrainOpts::default(), &mut adam).unwrap();
        }
        m.save(&path).unwrap();
        let loaded = MlpModel::load(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a model").unwrap();
        assert!(MlpModel::load(&path).is_err());
    }
}
