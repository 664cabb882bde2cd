//! Multilayer perceptrons: the parameterization of the Green nets and the
//! outer nonlinearity net.
//!
//! A network with layer sizes `[m0, m1, ..., mL]` applies an affine map and
//! the activation at every hidden layer and a plain affine map at the output
//! layer, followed by the optional output transform. Weights use the
//! scale-preserving uniform initialization on
//! `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`; biases start at
//! zero.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    Exponential,
}

/// A fully-connected network with a fixed activation and output transform.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    output_transform: OutputTransform,
}

impl MlpNetwork {
    /// Builds a network with seeded initialization.
    ///
    /// `layer_sizes` lists every width from input to output and must contain
    /// at least one hidden layer.
    pub fn new(
        layer_sizes: &[usize],
        activation: Activation,
        output_transform: OutputTransform,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::contract(format!(
                "network needs at least one hidden layer, got sizes {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::contract("all layer widths must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.gen_range(-bound..=bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            output_transform,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output_transform
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Evaluates the network at a single input point.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::contract(format!(
                "input width {} does not match network input {}",
                input.len(),
                self.input_width()
            )));
        }
        let x = Array2::from_shape_vec((input.len(), 1), input.to_vec())
            .expect("column shape");
        let out = self.forward_batch(&x)?;
        Ok(out.column(0).to_vec())
    }

    /// Evaluates the network on a batch of inputs stored as columns.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.nrows() != self.input_width() {
            return Err(Error::contract(format!(
                "batch input rows {} do not match network input {}",
                inputs.nrows(),
                self.input_width()
            )));
        }
        let mut a = inputs.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a);
            for mut col in z.columns_mut() {
                col += b;
            }
            if l < last {
                z.mapv_inplace(|v| match self.activation {
                    Activation::Tanh => v.tanh(),
                    Activation::Sigmoid => sigmoid(v),
                });
            } else if self.output_transform == OutputTransform::Exponential {
                z.mapv_inplace(f64::exp);
            }
            a = z;
        }
        Ok(a)
    }

    /// Copies all parameters into `flat` in layer order, weights row-major
    /// then biases per layer. Returns the number of values written.
    pub fn write_flat(&self, flat: &mut [f64]) -> usize {
        let mut off = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for &v in w.iter() {
                flat[off] = v;
                off += 1;
            }
            for &v in b.iter() {
                flat[off] = v;
                off += 1;
            }
        }
        off
    }

    /// Reads parameters back from the flat layout produced by `write_flat`.
    pub fn read_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = flat[off];
                off += 1;
            }
            for v in b.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
        off
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            output_transform: self.output_transform,
            weights: self
                .weights
                .iter()
                .map(|w| w.iter().copied().collect())
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.to_vec())
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<Self> {
        let mut net = Self::new(&ck.layer_sizes, ck.activation, ck.output_transform, 0)?;
        if ck.weights.len() != net.weights.len() || ck.biases.len() != net.biases.len() {
            return Err(Error::contract("checkpoint layer count mismatch"));
        }
        for (l, w) in ck.weights.iter().enumerate() {
            if w.len() != net.weights[l].len() {
                return Err(Error::contract(format!(
                    "checkpoint weight count mismatch in layer {l}"
                )));
            }
            net.weights[l] = Array2::from_shape_vec(net.weights[l].raw_dim(), w.clone())
                .expect("checked length");
        }
        for (l, b) in ck.biases.iter().enumerate() {
            if b.len() != net.biases[l].len() {
                return Err(Error::contract(format!(
                    "checkpoint bias count mismatch in layer {l}"
                )));
            }
            net.biases[l] = Array1::from_vec(b.clone());
        }
        Ok(net)
    }
}

/// JSON-serializable network state. Weight matrices are stored row-major;
/// floats round-trip losslessly through their shortest decimal form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_transform: OutputTransform,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_missing_hidden_layer() {
        assert!(MlpNetwork::new(&[2, 1], Activation::Tanh, OutputTransform::Identity, 0).is_err());
        assert!(MlpNetwork::new(&[], Activation::Tanh, OutputTransform::Identity, 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = MlpNetwork::new(&[3, 8, 1], Activation::Tanh, OutputTransform::Identity, 42)
            .unwrap();
        let b = MlpNetwork::new(&[3, 8, 1], Activation::Tanh, OutputTransform::Identity, 42)
            .unwrap();
        assert_eq!(a, b);
        let c = MlpNetwork::new(&[3, 8, 1], Activation::Tanh, OutputTransform::Identity, 43)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn paper_architecture_shapes() {
        let net = MlpNetwork::new(
            &[4, 128, 128, 128, 128, 1],
            Activation::Tanh,
            OutputTransform::Identity,
            0,
        )
        .unwrap();
        assert_eq!(net.num_layers(), 5);
        assert_eq!(net.weight(0).dim(), (128, 4));
        for l in 1..4 {
            assert_eq!(net.weight(l).dim(), (128, 128));
        }
        assert_eq!(net.weight(4).dim(), (1, 128));
        assert_eq!(net.bias(4).len(), 1);
    }

    #[test]
    fn initialization_variance_matches_target() {
        // U(-L, L) has variance L^2/3 = 2/(fan_in + fan_out).
        let fan_in = 64;
        let fan_out = 64;
        let target = 2.0 / (fan_in + fan_out) as f64;
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..10 {
            let net = MlpNetwork::new(
                &[fan_in, fan_out, 1],
                Activation::Tanh,
                OutputTransform::Identity,
                seed,
            )
            .unwrap();
            total += net.weight(0).iter().map(|w| w * w).sum::<f64>();
            count += net.weight(0).len();
        }
        let measured = total / count as f64;
        assert!(
            (measured - target).abs() / target < 0.2,
            "variance {measured} vs target {target}"
        );
    }

    #[test]
    fn zero_parameters_identity_gives_zero() {
        let mut net =
            MlpNetwork::new(&[2, 5, 1], Activation::Tanh, OutputTransform::Identity, 0).unwrap();
        for l in 0..net.num_layers() {
            net.weight_mut(l).fill(0.0);
            net.bias_mut(l).fill(0.0);
        }
        let y = net.forward(&[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn zero_parameters_exponential_gives_one() {
        let mut net = MlpNetwork::new(
            &[2, 5, 1],
            Activation::Tanh,
            OutputTransform::Exponential,
            0,
        )
        .unwrap();
        for l in 0..net.num_layers() {
            net.weight_mut(l).fill(0.0);
            net.bias_mut(l).fill(0.0);
        }
        let y = net.forward(&[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        // Independent oracle: explicit per-scalar loops, no ndarray.
        let net =
            MlpNetwork::new(&[3, 7, 5, 1], Activation::Sigmoid, OutputTransform::Identity, 9)
                .unwrap();
        let input = [0.2, -0.4, 0.9];
        let mut a: Vec<f64> = input.to_vec();
        for l in 0..net.num_layers() {
            let w = net.weight(l);
            let b = net.bias(l);
            let mut z = vec![0.0; w.nrows()];
            for (i, zi) in z.iter_mut().enumerate() {
                let mut s = b[i];
                for (j, &aj) in a.iter().enumerate() {
                    s += w[(i, j)] * aj;
                }
                *zi = s;
            }
            if l + 1 < net.num_layers() {
                for zi in z.iter_mut() {
                    *zi = 1.0 / (1.0 + (-*zi).exp());
                }
            }
            a = z;
        }
        let y = net.forward(&input).unwrap();
        assert!(
            (y[0] - a[0]).abs() <= 1e-14 * a[0].abs().max(1.0),
            "{} vs {}",
            y[0],
            a[0]
        );
    }

    #[test]
    fn single_hidden_layer_sign_flip_of_output_weights_negates() {
        // With zero biases: (-W2) tanh(W1 x) = -(W2 tanh(W1 x)).
        let net =
            MlpNetwork::new(&[2, 6, 1], Activation::Tanh, OutputTransform::Identity, 3).unwrap();
        let mut flipped = net.clone();
        flipped.weight_mut(1).mapv_inplace(|v| -v);
        let x = [0.4, -1.2];
        let y = net.forward(&x).unwrap()[0];
        let y_f = flipped.forward(&x).unwrap()[0];
        assert!((y + y_f).abs() < 1e-15, "{y} vs {y_f}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net =
            MlpNetwork::new(&[3, 4, 1], Activation::Tanh, OutputTransform::Identity, 0).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let net =
            MlpNetwork::new(&[2, 9, 4, 1], Activation::Tanh, OutputTransform::Exponential, 11)
                .unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back: NetworkCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = MlpNetwork::from_checkpoint(&back).unwrap();
        assert_eq!(net, restored);
    }

    #[test]
    fn flat_round_trip() {
        let net =
            MlpNetwork::new(&[2, 5, 3, 1], Activation::Tanh, OutputTransform::Identity, 7).unwrap();
        let mut flat = vec![0.0; net.param_count()];
        assert_eq!(net.write_flat(&mut flat), net.param_count());
        let mut other =
            MlpNetwork::new(&[2, 5, 3, 1], Activation::Tanh, OutputTransform::Identity, 8).unwrap();
        other.read_flat(&flat);
        assert_eq!(net, other);
    }
}

#[cfg(test)]
mod debug_roundtrip {
    use super::*;

    #[test]
    fn find_diff() {
        let net =
            MlpNetwork::new(&[2, 9, 4, 1], Activation::Tanh, OutputTransform::Exponential, 11)
                .unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back: NetworkCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = MlpNetwork::from_checkpoint(&back).unwrap();
        for l in 0..net.num_layers() {
            for (a, b) in net.weight(l).iter().zip(restored.weight(l).iter()) {
                if a.to_bits() != b.to_bits() {
                    panic!("layer {l}: {a:?} ({:x}) vs {b:?} ({:x})", a.to_bits(), b.to_bits());
                }
            }
        }
        println!("weights identical");
        for l in 0..net.num_layers() {
            for (a, b) in net.bias(l).iter().zip(restored.bias(l).iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "bias layer {l}");
            }
        }
        assert_eq!(net.activation, restored.activation);
        assert_eq!(net.output_transform, restored.output_transform);
        assert_eq!(net.layer_sizes, restored.layer_sizes);
    }
}
