//! Small fully connected softmax policy with hand-written backprop.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("network needs an input and an output layer, got sizes {0:?}")]
    BadShape(Vec<usize>),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("checkpoint i/o: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

/// ReLU hidden layers, softmax output. Parameters are stored flat: for each
/// layer the `out x in` weight matrix (row-major) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    layers: Vec<usize>,
    params: Vec<f64>,
}

/// Forward-pass values needed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// activations per layer; `[0]` is the input, last is the softmax output
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> &[f64] {
        self.activations.last().expect("cache has an output layer")
    }
}

fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

impl MlpPolicy {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layers: Vec<usize>, rng: &mut R) -> Result<Self, NetworkError> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(NetworkError::BadShape(layers));
        }
        let mut params = Vec::with_capacity(param_count(&layers));
        for w in layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { layers, params })
    }

    pub fn from_params(layers: Vec<usize>, params: Vec<f64>) -> Result<Self, NetworkError> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(NetworkError::BadShape(layers));
        }
        let expected = param_count(&layers);
        if params.len() != expected {
            return Err(NetworkError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(NetworkError::NonFinite(i));
        }
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().expect("at least two layers")
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Panics if `input.len() != input_dim()`.
    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(input.len(), self.input_dim(), "input dimension");
        let n_layers = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let prev = &activations[l];
            let mut z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    bias[o] + row.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            if l + 1 == n_layers {
                softmax_in_place(&mut z);
            } else {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        ForwardCache { activations }
    }

    pub fn probabilities(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).activations.pop().expect("output layer")
    }

    pub fn log_prob(&self, input: &[f64], action: usize) -> f64 {
        self.probabilities(input)[action].ln()
    }

    /// Writes `grad_theta log pi(action | input)` into `out`, overwriting it.
    pub fn grad_log_prob_into(&self, cache: &ForwardCache, action: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.params.len(), "gradient buffer length");
        let n_layers = self.layers.len() - 1;
        // d log softmax_a / d logits = e_a - p
        let mut delta: Vec<f64> = cache.probabilities().iter().map(|p| -p).collect();
        delta[action] += 1.0;
        let mut end = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let start = end - fan_in * fan_out - fan_out;
            let prev = &cache.activations[l];
            let (w_grad, b_grad) = out[start..end].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let row = &mut w_grad[o * fan_in..(o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(prev) {
                    *g = delta[o] * x;
                }
                b_grad[o] = delta[o];
            }
            if l > 0 {
                let weights = &self.params[start..start + fan_in * fan_out];
                let mut next = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (n, w) in next.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                            *n += d * w;
                        }
                    }
                }
                // relu derivative; hidden activations are zero exactly when inactive
                for (n, a) in next.iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
            end = start;
        }
    }

    pub fn grad_log_prob(&self, input: &[f64], action: usize) -> Vec<f64> {
        let cache = self.forward(input);
        let mut out = vec![0.0; self.params.len()];
        self.grad_log_prob_into(&cache, action, &mut out);
        out
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), NetworkError> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, NetworkError> {
        let raw: MlpPolicy = serde_json::from_reader(reader)?;
        Self::from_params(raw.layers, raw.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpPolicy::new(vec![3, 5, 2], &mut rng).unwrap();
        assert_eq!(net.n_params(), 3 * 5 + 5 + 5 * 2 + 2);
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(net.params()[..15].iter().all(|w| w.abs() <= limit));
        assert!(net.params()[15..20].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn softmax_output_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpPolicy::new(vec![2, 4, 4, 3], &mut rng).unwrap();
        let p = net.probabilities(&[100.0, -50.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpPolicy::new(vec![3, 6, 4], &mut rng).unwrap();
        let input = [0.3, -1.2, 0.8];
        let grad = net.grad_log_prob(&input, 2);
        let h = 1e-5;
        for i in 0..net.n_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (plus.log_prob(&input, 2) - minus.log_prob(&input, 2)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(MlpPolicy::new(vec![3], &mut rng).is_err());
        assert!(MlpPolicy::new(vec![3, 0, 2], &mut rng).is_err());
        assert!(MlpPolicy::from_params(vec![1, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            MlpPolicy::from_params(vec![1, 2], vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(NetworkError::NonFinite(1))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpPolicy::new(vec![2, 3, 2], &mut rng).unwrap();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        assert_eq!(MlpPolicy::load(&buf[..]).unwrap(), net);
    }
}
