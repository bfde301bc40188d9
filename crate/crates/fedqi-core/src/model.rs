//! Dense neural-network engine.
//!
//! A deliberately small MLP stack: ReLU hidden layers, softmax output,
//! cross-entropy loss, plain SGD, inverted dropout on hidden activations.
//! Everything is `f64` and deterministic given a seed, so federated runs and
//! their oracles can be compared exactly.

use ndarray::{Array1, Array2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::data::Shard;
use crate::error::{Error, Result};
use crate::rng;

/// Layer widths of an MLP: input, hidden sizes, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl Architecture {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    /// The standard image-classifier shape used throughout: one hidden layer
    /// of 64 units.
    pub fn mlp(input: usize, classes: usize) -> Self {
        Self::new(input, vec![64], classes)
    }

    /// Successive (in, out) pairs of the dense layers.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    /// (in, out) so a batch forward is `x.dot(&weights) + bias`.
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Immutable MLP parameters. All arithmetic between two values requires the
/// same architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    layers: Vec<DenseLayer>,
}

/// Local-training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub dropout: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            dropout: 0.5,
            local_epochs: 1,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Fixed per-unit keep decisions for the hidden layers, for driving
/// `forward` through the exact path training uses.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub rate: f64,
    /// One keep vector per hidden layer.
    pub keep: Vec<Vec<bool>>,
}

impl ModelParams {
    /// Seeded initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn init(arch: Architecture, rng: &mut ChaCha20Rng) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                let weights =
                    Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { arch, layers }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| DenseLayer {
                weights: Array2::zeros((fan_in, fan_out)),
                bias: Array1::zeros(fan_out),
            })
            .collect();
        Self { arch, layers }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Contiguous view of all parameters: per layer, row-major weights then
    /// bias. `from_flat` inverts it exactly.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(Error::config(format!(
                "flat vector has {} values, architecture needs {}",
                flat.len(),
                arch.param_count()
            )));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in arch.layer_dims() {
            let w_len = fan_in * fan_out;
            let weights =
                Array2::from_shape_vec((fan_in, fan_out), flat[offset..offset + w_len].to_vec())
                    .expect("length checked");
            offset += w_len;
            let bias = Array1::from_vec(flat[offset..offset + fan_out].to_vec());
            offset += fan_out;
            layers.push(DenseLayer { weights, bias });
        }
        Ok(Self { arch, layers })
    }

    fn check_same_arch(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::config("architecture mismatch"));
        }
        Ok(())
    }

    /// Elementwise `self + t * (other - self)`.
    pub fn interpolate(&self, other: &ModelParams, t: f64) -> Result<ModelParams> {
        self.check_same_arch(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| DenseLayer {
                weights: &a.weights + &((&b.weights - &a.weights) * t),
                bias: &a.bias + &((&b.bias - &a.bias) * t),
            })
            .collect();
        Ok(ModelParams {
            arch: self.arch.clone(),
            layers,
        })
    }

    /// Batch logits: rows are examples. Softmax is strictly monotone, so
    /// argmax over logits equals argmax over probabilities.
    fn logits(&self, input: &Array2<f64>, dropped: Option<&[Array2<f64>]>) -> Array2<f64> {
        let mut activation = input.dot(&self.layers[0].weights) + &self.layers[0].bias;
        for (idx, layer) in self.layers.iter().enumerate().skip(1) {
            activation.mapv_inplace(|v| v.max(0.0));
            if let Some(masks) = dropped {
                activation *= &masks[idx - 1];
            }
            activation = activation.dot(&layer.weights) + &layer.bias;
        }
        activation
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Class probabilities for one input. A `DropoutMask` replays the training
/// path (inverted scaling by 1/(1-rate) on kept units); evaluation passes
/// `None`.
pub fn forward(
    model: &ModelParams,
    input: &[f64],
    dropout_mask: Option<&DropoutMask>,
) -> Result<Array1<f64>> {
    if input.len() != model.arch.input {
        return Err(Error::config(format!(
            "input dimension {} does not match architecture input {}",
            input.len(),
            model.arch.input
        )));
    }
    let masks = match dropout_mask {
        None => None,
        Some(mask) => {
            if mask.keep.len() != model.arch.hidden.len() {
                return Err(Error::config("dropout mask layer count mismatch"));
            }
            let scale = 1.0 / (1.0 - mask.rate);
            let mut per_layer = Vec::new();
            for (keep, &width) in mask.keep.iter().zip(&model.arch.hidden) {
                if keep.len() != width {
                    return Err(Error::config("dropout mask width mismatch"));
                }
                per_layer.push(Array2::from_shape_fn((1, width), |(_, j)| {
                    if keep[j] {
                        scale
                    } else {
                        0.0
                    }
                }));
            }
            Some(per_layer)
        }
    };
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
    let logits = model.logits(&x, masks.as_deref());
    Ok(softmax_rows(&logits).row(0).to_owned())
}

/// Element-wise arithmetic mean of parameter sets.
pub fn average_params(updates: &[ModelParams]) -> Result<ModelParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::domain("cannot average zero updates"))?;
    for u in &updates[1..] {
        first.check_same_arch(u)?;
    }
    let count = updates.len() as f64;
    let layers = (0..first.layers.len())
        .map(|l| {
            let mut weights = updates[0].layers[l].weights.clone();
            let mut bias = updates[0].layers[l].bias.clone();
            for u in &updates[1..] {
                weights += &u.layers[l].weights;
                bias += &u.layers[l].bias;
            }
            DenseLayer {
                weights: weights / count,
                bias: bias / count,
            }
        })
        .collect();
    Ok(ModelParams {
        arch: first.arch.clone(),
        layers,
    })
}

/// Fraction of examples whose argmax prediction matches the label. Argmax
/// ties break toward the lowest class index. Dropout is never applied.
pub fn accuracy(model: &ModelParams, dataset: &crate::data::LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::domain("accuracy over an empty dataset"));
    }
    if dataset.feature_dim() != model.arch.input {
        return Err(Error::config(format!(
            "dataset dimension {} does not match architecture input {}",
            dataset.feature_dim(),
            model.arch.input
        )));
    }
    const CHUNK: usize = 1024;
    let positions: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for chunk in positions.chunks(CHUNK) {
        let (features, labels) = dataset.gather(chunk);
        let logits = model.logits(&features, None);
        for (row, &label) in logits.rows().into_iter().zip(&labels) {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mean cross-entropy of the model on a batch; used by training internals
/// and the gradient oracles.
pub fn cross_entropy(model: &ModelParams, features: &Array2<f64>, labels: &[usize]) -> f64 {
    let logits = model.logits(features, None);
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - row[label];
    }
    total / labels.len() as f64
}

struct BatchGradient {
    layers: Vec<DenseLayer>,
}

/// Mean cross-entropy gradient over one batch, with optional pre-scaled
/// dropout masks (entries 0 or 1/(1-rate)) per hidden layer.
fn backward(
    model: &ModelParams,
    features: &Array2<f64>,
    labels: &[usize],
    masks: Option<&[Array2<f64>]>,
) -> BatchGradient {
    let batch = features.nrows() as f64;
    let depth = model.layers.len();

    // Forward pass keeping post-ReLU activations (pre-mask) and masked
    // activations feeding each layer.
    let mut relu_outs: Vec<Array2<f64>> = Vec::with_capacity(depth - 1);
    let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(depth);
    inputs.push(features.clone());
    let mut current = features.dot(&model.layers[0].weights) + &model.layers[0].bias;
    for (idx, layer) in model.layers.iter().enumerate().skip(1) {
        current.mapv_inplace(|v| v.max(0.0));
        relu_outs.push(current.clone());
        if let Some(masks) = masks {
            current *= &masks[idx - 1];
        }
        inputs.push(current.clone());
        current = current.dot(&layer.weights) + &layer.bias;
    }

    // Softmax cross-entropy: dz = (p - onehot) / batch.
    let mut delta = softmax_rows(&current);
    for (row, &label) in labels.iter().enumerate() {
        delta[[row, label]] -= 1.0;
    }
    delta /= batch;

    let mut grads: Vec<DenseLayer> = (0..depth)
        .map(|l| DenseLayer {
            weights: Array2::zeros(model.layers[l].weights.dim()),
            bias: Array1::zeros(model.layers[l].bias.len()),
        })
        .collect();

    for l in (0..depth).rev() {
        grads[l].weights = inputs[l].t().dot(&delta);
        grads[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut upstream = delta.dot(&model.layers[l].weights.t());
            if let Some(masks) = masks {
                upstream *= &masks[l - 1];
            }
            // ReLU gate: the stored activation is max(z, 0), so z > 0 exactly
            // where it is positive.
            azip_relu_gate(&mut upstream, &relu_outs[l - 1]);
            delta = upstream;
        }
    }
    BatchGradient { layers: grads }
}

fn azip_relu_gate(upstream: &mut Array2<f64>, relu_out: &Array2<f64>) {
    ndarray::Zip::from(upstream)
        .and(relu_out)
        .for_each(|u, &a| {
            if a <= 0.0 {
                *u = 0.0;
            }
        });
}

fn sgd_step(model: &mut ModelParams, grad: &BatchGradient, lr: f64) {
    for (layer, g) in model.layers.iter_mut().zip(&grad.layers) {
        layer.weights.scaled_add(-lr, &g.weights);
        layer.bias.scaled_add(-lr, &g.bias);
    }
}

fn sample_masks(
    arch: &Architecture,
    batch: usize,
    rate: f64,
    rng: &mut ChaCha20Rng,
) -> Option<Vec<Array2<f64>>> {
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Some(
        arch.hidden
            .iter()
            .map(|&width| {
                Array2::from_shape_fn((batch, width), |_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                })
            })
            .collect(),
    )
}

/// Run local SGD over a shard and return the updated parameters. The input
/// model is untouched; the result is a pure function of
/// (model, shard, settings).
pub fn local_train(model: &ModelParams, shard: &Shard, settings: &TrainSettings) -> Result<ModelParams> {
    if shard.is_empty() {
        return Err(Error::domain("cannot train on an empty shard"));
    }
    if shard.data.feature_dim() != model.arch.input {
        return Err(Error::config(format!(
            "shard dimension {} does not match architecture input {}",
            shard.data.feature_dim(),
            model.arch.input
        )));
    }
    let mut params = model.clone();
    let mut rng = rng::derive(settings.seed, &[]);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..settings.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(settings.batch_size) {
            let (features, labels) = shard.data.gather(batch);
            let masks = sample_masks(&params.arch, batch.len(), settings.dropout, &mut rng);
            let grad = backward(&params, &features, &labels, masks.as_deref());
            sgd_step(&mut params, &grad, settings.learning_rate);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_rng(seed: u64) -> ChaCha20Rng {
        rng::derive(seed, &[rng::tag::MODEL_INIT])
    }

    fn toy_shard(features: Array2<f64>, labels: Vec<u8>, classes: usize) -> Shard {
        Shard {
            owner: 1,
            data: LabeledDataset::from_features(features, labels, classes).unwrap(),
            perturb_prob: 0.0,
        }
    }

    fn random_model(arch: Architecture, seed: u64) -> ModelParams {
        ModelParams::init(arch, &mut small_rng(seed))
    }

    #[test]
    fn zero_model_outputs_uniform_probabilities() {
        let model = ModelParams::zeros(Architecture::new(4, vec![3], 5));
        let probs = forward(&model, &[0.3, -0.2, 0.9, 0.1], None).unwrap();
        for &p in probs.iter() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_like_single_layer_picks_hot_index() {
        let arch = Architecture::new(4, vec![], 4);
        let mut flat = vec![0.0; arch.param_count()];
        // Weights = 3*I (row-major 4x4), bias 0.
        for i in 0..4 {
            flat[i * 4 + i] = 3.0;
        }
        let model = ModelParams::from_flat(arch, &flat).unwrap();
        let probs = forward(&model, &[0.0, 0.0, 1.0, 0.0], None).unwrap();
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
    }

    // Independent scalar-loop re-implementation of the forward pass used as
    // an oracle; no ndarray dot products.
    fn forward_oracle(model: &ModelParams, input: &[f64]) -> Vec<f64> {
        let flat = model.flat();
        let arch = model.architecture();
        let mut offset = 0;
        let mut activation: Vec<f64> = input.to_vec();
        let mut widths = vec![arch.input];
        widths.extend_from_slice(&arch.hidden);
        widths.push(arch.output);
        for layer in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut acc = 0.0;
                for (i, &a) in activation.iter().enumerate() {
                    acc += a * flat[offset + i * fan_out + o];
                }
                next[o] = acc + flat[offset + fan_in * fan_out + o];
            }
            offset += fan_in * fan_out + fan_out;
            if layer + 2 < widths.len() {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activation = next;
        }
        let max = activation.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = activation.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let model = random_model(Architecture::new(6, vec![5], 4), 77);
        let mut rng = small_rng(78);
        for _ in 0..20 {
            let input: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let got = forward(&model, &input, None).unwrap();
            let expected = forward_oracle(&model, &input);
            for (g, e) in got.iter().zip(&expected) {
                assert_abs_diff_eq!(g, e, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = ModelParams::zeros(Architecture::new(4, vec![], 2));
        match forward(&model, &[1.0, 2.0], None) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn forward_probabilities_sum_to_one() {
        let model = random_model(Architecture::new(8, vec![6], 10), 5);
        let input: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let probs = forward(&model, &input, None).unwrap();
        assert!(probs.iter().all(|&p| p >= 0.0));
        assert_abs_diff_eq!(probs.sum(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn dropout_mask_replays_training_path() {
        let model = random_model(Architecture::new(3, vec![4], 2), 9);
        let mask = DropoutMask {
            rate: 0.5,
            keep: vec![vec![true, false, true, false]],
        };
        let input = [0.2, -0.4, 0.6];
        let got = forward(&model, &input, Some(&mask)).unwrap();

        // Oracle: scalar forward with kept units doubled, dropped zeroed.
        let flat = model.flat();
        let mut hidden = [0.0; 4];
        for (o, h) in hidden.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &x) in input.iter().enumerate() {
                acc += x * flat[i * 4 + o];
            }
            *h = (acc + flat[12 + o]).max(0.0);
        }
        for (o, h) in hidden.iter_mut().enumerate() {
            *h *= if o % 2 == 0 { 2.0 } else { 0.0 };
        }
        let w2 = &flat[16..24];
        let b2 = &flat[24..26];
        let mut logits = [0.0; 2];
        for o in 0..2 {
            logits[o] = hidden.iter().enumerate().map(|(i, &h)| h * w2[i * 2 + o]).sum::<f64>() + b2[o];
        }
        let max = logits[0].max(logits[1]);
        let e0 = (logits[0] - max).exp();
        let e1 = (logits[1] - max).exp();
        assert_abs_diff_eq!(got[0], e0 / (e0 + e1), epsilon = 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let model = random_model(Architecture::new(3, vec![4], 2), 1);
        let shard = toy_shard(
            Array2::from_shape_fn((6, 3), |(i, j)| (i + j) as f64 / 10.0),
            vec![0, 1, 0, 1, 0, 1],
            2,
        );
        let settings = TrainSettings {
            learning_rate: 0.0,
            dropout: 0.0,
            seed: 3,
            ..Default::default()
        };
        let out = local_train(&model, &shard, &settings).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn single_step_matches_finite_difference_gradient() {
        let arch = Architecture::new(3, vec![4], 2);
        let model = random_model(arch.clone(), 13);
        let features = Array2::from_shape_vec((1, 3), vec![0.4, -0.7, 0.2]).unwrap();
        let labels = vec![1usize];
        let lr = 0.05;

        let shard = toy_shard(features.clone(), vec![1], 2);
        let settings = TrainSettings {
            learning_rate: lr,
            dropout: 0.0,
            batch_size: 1,
            local_epochs: 1,
            seed: 0,
        };
        let trained = local_train(&model, &shard, &settings).unwrap();

        // Central finite differences of the cross-entropy, parameter by
        // parameter.
        let flat = model.flat();
        let eps = 1e-6;
        let mut expected = Vec::with_capacity(flat.len());
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += eps;
            let mut minus = flat.clone();
            minus[k] -= eps;
            let loss_plus = cross_entropy(
                &ModelParams::from_flat(arch.clone(), &plus).unwrap(),
                &features,
                &labels,
            );
            let loss_minus = cross_entropy(
                &ModelParams::from_flat(arch.clone(), &minus).unwrap(),
                &features,
                &labels,
            );
            let grad = (loss_plus - loss_minus) / (2.0 * eps);
            expected.push(flat[k] - lr * grad);
        }
        for (got, want) in trained.flat().iter().zip(&expected) {
            let denom = want.abs().max(1e-3);
            assert!(
                ((got - want) / denom).abs() < 1e-4,
                "param mismatch: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let model = random_model(Architecture::new(5, vec![6], 3), 2);
        let shard = toy_shard(
            Array2::from_shape_fn((40, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0),
            (0..40).map(|i| (i % 3) as u8).collect(),
            3,
        );
        let settings = TrainSettings {
            seed: 99,
            ..Default::default()
        };
        let a = local_train(&model, &shard, &settings).unwrap();
        let b = local_train(&model, &shard, &settings).unwrap();
        assert_eq!(a.flat(), b.flat());
        let c = local_train(
            &model,
            &shard,
            &TrainSettings {
                seed: 100,
                ..settings
            },
        )
        .unwrap();
        assert_ne!(a.flat(), c.flat());
    }

    #[test]
    fn settings_validation_bounds() {
        assert!(TrainSettings::default().validate().is_ok());
        for bad in [
            TrainSettings {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainSettings {
                dropout: 1.0,
                ..Default::default()
            },
            TrainSettings {
                dropout: -0.1,
                ..Default::default()
            },
            TrainSettings {
                batch_size: 0,
                ..Default::default()
            },
            TrainSettings {
                local_epochs: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should fail validation");
        }
    }

    #[test]
    fn empty_shard_is_rejected() {
        let model = ModelParams::zeros(Architecture::new(2, vec![], 2));
        let shard = toy_shard(Array2::zeros((0, 2)), vec![], 2);
        match local_train(&model, &shard, &TrainSettings::default()) {
            Err(Error::Domain(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn average_of_identical_pair_is_identity() {
        let model = random_model(Architecture::new(4, vec![3], 2), 21);
        let avg = average_params(&[model.clone(), model.clone()]).unwrap();
        assert_eq!(avg.flat(), model.flat());
    }

    #[test]
    fn average_of_opposites_is_zero() {
        let model = random_model(Architecture::new(4, vec![3], 2), 22);
        let negated =
            ModelParams::from_flat(model.architecture().clone(), &model.flat().iter().map(|v| -v).collect::<Vec<_>>())
                .unwrap();
        let avg = average_params(&[model, negated]).unwrap();
        assert!(avg.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn average_matches_scalar_mean_oracle() {
        let arch = Architecture::new(3, vec![4], 2);
        let models: Vec<ModelParams> = (0..3).map(|s| random_model(arch.clone(), 30 + s)).collect();
        let avg = average_params(&models).unwrap();
        let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flat()).collect();
        for (k, &got) in avg.flat().iter().enumerate() {
            let want = (flats[0][k] + flats[1][k] + flats[2][k]) / 3.0;
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn average_rejects_empty_and_mismatched() {
        assert!(matches!(average_params(&[]), Err(Error::Domain(_))));
        let a = ModelParams::zeros(Architecture::new(2, vec![], 2));
        let b = ModelParams::zeros(Architecture::new(3, vec![], 2));
        assert!(matches!(average_params(&[a, b]), Err(Error::Config(_))));
    }

    #[test]
    fn average_is_linear_in_scaling() {
        let arch = Architecture::new(3, vec![2], 2);
        let m1 = random_model(arch.clone(), 41);
        let m2 = random_model(arch.clone(), 42);
        let scale = 2.5;
        let scaled: Vec<ModelParams> = [&m1, &m2]
            .iter()
            .map(|m| {
                ModelParams::from_flat(
                    arch.clone(),
                    &m.flat().iter().map(|v| v * scale).collect::<Vec<_>>(),
                )
                .unwrap()
            })
            .collect();
        let lhs = average_params(&scaled).unwrap();
        let rhs = average_params(&[m1, m2]).unwrap();
        for (a, b) in lhs.flat().iter().zip(rhs.flat()) {
            assert_abs_diff_eq!(*a, b * scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn accuracy_handcrafted_three_of_four() {
        // Single-layer model with weights making predictions [0,1,1,0]
        // against labels [0,1,0,0]: three correct.
        let arch = Architecture::new(2, vec![], 2);
        let model =
            ModelParams::from_flat(arch, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let features = Array2::from_shape_vec(
            (4, 2),
            vec![0.9, 0.1, 0.1, 0.9, 0.2, 0.8, 0.7, 0.3],
        )
        .unwrap();
        let data = LabeledDataset::from_features(features, vec![0, 1, 0, 0], 2).unwrap();
        assert_abs_diff_eq!(accuracy(&model, &data).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_constant_class_dataset() {
        // Bias strongly favours class 2; every label is 2.
        let arch = Architecture::new(2, vec![], 3);
        let flat = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0];
        let model = ModelParams::from_flat(arch, &flat).unwrap();
        let data = LabeledDataset::from_features(Array2::zeros((5, 2)), vec![2; 5], 3).unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn zero_model_tie_breaks_to_class_zero() {
        let model = ModelParams::zeros(Architecture::new(2, vec![], 10));
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let class_zero = labels.iter().filter(|&&l| l == 0).count() as f64 / 100.0;
        let data = LabeledDataset::from_features(Array2::zeros((100, 2)), labels, 10).unwrap();
        assert_abs_diff_eq!(accuracy(&model, &data).unwrap(), class_zero, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_rejects_empty_dataset() {
        let model = ModelParams::zeros(Architecture::new(2, vec![], 2));
        let data = LabeledDataset::from_features(Array2::zeros((0, 2)), vec![], 2).unwrap();
        assert!(matches!(accuracy(&model, &data), Err(Error::Domain(_))));
    }

    #[test]
    fn gradient_check_random_models() {
        let mut seed_rng = small_rng(55);
        for trial in 0..5 {
            let arch = Architecture::new(4, vec![5], 3);
            let model = random_model(arch.clone(), 60 + trial);
            let features = Array2::from_shape_fn((3, 4), |_| seed_rng.random::<f64>() - 0.5);
            let labels: Vec<usize> = (0..3).map(|_| seed_rng.random_range(0..3)).collect();
            let grad = backward(&model, &features, &labels, None);
            let mut grad_flat: Vec<f64> = Vec::new();
            for layer in &grad.layers {
                grad_flat.extend(layer.weights.iter());
                grad_flat.extend(layer.bias.iter());
            }
            let flat = model.flat();
            let eps = 1e-6;
            for k in (0..flat.len()).step_by(7) {
                let mut plus = flat.clone();
                plus[k] += eps;
                let mut minus = flat.clone();
                minus[k] -= eps;
                let fd = (cross_entropy(&ModelParams::from_flat(arch.clone(), &plus).unwrap(), &features, &labels)
                    - cross_entropy(&ModelParams::from_flat(arch.clone(), &minus).unwrap(), &features, &labels))
                    / (2.0 * eps);
                let denom = fd.abs().max(1e-4);
                assert!(
                    ((grad_flat[k] - fd) / denom).abs() < 1e-4,
                    "grad[{k}] = {} vs fd {fd}",
                    grad_flat[k]
                );
            }
        }
    }

    #[test]
    fn sgd_step_rarely_increases_batch_loss() {
        let mut non_increasing = 0;
        for trial in 0..100 {
            let arch = Architecture::new(4, vec![5], 3);
            let model = random_model(arch.clone(), 200 + trial);
            let mut rng = small_rng(300 + trial);
            let features = Array2::from_shape_fn((8, 4), |_| rng.random::<f64>() - 0.5);
            let labels: Vec<u8> = (0..8).map(|_| rng.random_range(0..3u8)).collect();
            let shard = toy_shard(features.clone(), labels.clone(), 3);
            let labels_usize: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            let before = cross_entropy(&model, &features, &labels_usize);
            let settings = TrainSettings {
                learning_rate: 1e-3,
                dropout: 0.0,
                batch_size: 8,
                local_epochs: 1,
                seed: trial,
            };
            let after_model = local_train(&model, &shard, &settings).unwrap();
            let after = cross_entropy(&after_model, &features, &labels_usize);
            if after <= before + 1e-12 {
                non_increasing += 1;
            }
        }
        assert!(non_increasing >= 95, "only {non_increasing}/100 non-increasing");
    }

    proptest! {
        #[test]
        fn flat_roundtrip_is_identity(seed in 0u64..1000) {
            let arch = Architecture::new(3, vec![4, 2], 3);
            let model = random_model(arch.clone(), seed);
            let rebuilt = ModelParams::from_flat(arch, &model.flat()).unwrap();
            prop_assert_eq!(rebuilt, model);
        }

        #[test]
        fn average_is_permutation_invariant(seed in 0u64..500) {
            let arch = Architecture::new(3, vec![2], 2);
            let a = random_model(arch.clone(), seed);
            let b = random_model(arch.clone(), seed + 1000);
            let c = random_model(arch, seed + 2000);
            let x = average_params(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let y = average_params(&[c, a, b]).unwrap();
            for (p, q) in x.flat().iter().zip(y.flat()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
