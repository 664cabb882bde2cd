//! Batched jet propagation through network layers.
//!
//! A `JetBatch` holds one matrix per jet channel, columns being batch
//! entries. The layer kernel below is the single place where first and
//! second derivative channels pass through an affine map and activation;
//! both the plain jet evaluator and the gradient tape call it.

use ndarray::{Array2, ArrayView1, ArrayView2};
use std::sync::Arc;

use super::JetSpec;
use crate::network::{sigmoid, Activation, OutputTransform};

/// Elementwise activation kinds the layer kernel understands. `Exp` doubles
/// as the positivity output transform; `Identity` is the plain output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Tanh,
    Sigmoid,
    Identity,
    Exp,
}

impl ActKind {
    pub fn from_activation(a: Activation) -> Self {
        match a {
            Activation::Tanh => ActKind::Tanh,
            Activation::Sigmoid => ActKind::Sigmoid,
        }
    }

    pub fn from_transform(t: OutputTransform) -> Self {
        match t {
            OutputTransform::Identity => ActKind::Identity,
            OutputTransform::Exponential => ActKind::Exp,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            ActKind::Tanh => z.tanh(),
            ActKind::Sigmoid => sigmoid(z),
            ActKind::Identity => z,
            ActKind::Exp => z.exp(),
        }
    }

    /// First/second/third derivative of the activation, written in terms of
    /// the activation output `o` (all four kinds admit this form).
    pub(crate) fn p123(self, o: f64) -> (f64, f64, f64) {
        match self {
            ActKind::Tanh => {
                let p1 = 1.0 - o * o;
                (p1, -2.0 * o * p1, -2.0 * p1 * (1.0 - 3.0 * o * o))
            }
            ActKind::Sigmoid => {
                let p1 = o * (1.0 - o);
                (
                    p1,
                    p1 * (1.0 - 2.0 * o),
                    p1 * (1.0 - 6.0 * o + 6.0 * o * o),
                )
            }
            ActKind::Identity => (1.0, 0.0, 0.0),
            ActKind::Exp => (o, o, o),
        }
    }
}

/// One matrix per jet channel; channel 0 is the value, then one channel per
/// first-derivative direction, then one per second-derivative pair.
#[derive(Debug, Clone)]
pub struct JetBatch {
    spec: Arc<JetSpec>,
    chans: Vec<Array2<f64>>,
}

impl JetBatch {
    pub fn new(spec: Arc<JetSpec>, chans: Vec<Array2<f64>>) -> Self {
        debug_assert_eq!(chans.len(), spec.channels());
        debug_assert!(chans.windows(2).all(|w| w[0].dim() == w[1].dim()));
        Self { spec, chans }
    }

    /// A value-only batch.
    pub fn plain(values: Array2<f64>) -> Self {
        Self {
            spec: JetSpec::value_only(),
            chans: vec![values],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            spec: other.spec.clone(),
            chans: other
                .chans
                .iter()
                .map(|c| Array2::zeros(c.raw_dim()))
                .collect(),
        }
    }

    pub fn spec(&self) -> &Arc<JetSpec> {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.chans.len()
    }

    pub fn chan(&self, idx: usize) -> &Array2<f64> {
        &self.chans[idx]
    }

    pub fn chan_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.chans[idx]
    }

    pub fn chans(&self) -> &[Array2<f64>] {
        &self.chans
    }

    pub fn rows(&self) -> usize {
        self.chans[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.chans[0].ncols()
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.chans[0]
    }

    /// The single entry of a 1x1 value-only batch.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.rows(), 1);
        debug_assert_eq!(self.cols(), 1);
        self.chans[0][(0, 0)]
    }

    pub fn is_finite(&self) -> bool {
        self.chans.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Builds the input leaf for a network forward pass: the value channel is
/// the point matrix (inputs as columns), each direction channel seeds its
/// coordinate row with ones, pair channels start at zero.
pub fn seeded_input(points: &Array2<f64>, spec: &Arc<JetSpec>) -> JetBatch {
    let mut chans = Vec::with_capacity(spec.channels());
    chans.push(points.clone());
    for &coord in spec.dirs() {
        let mut seed = Array2::zeros(points.raw_dim());
        seed.row_mut(coord).fill(1.0);
        chans.push(seed);
    }
    for _ in spec.pairs() {
        chans.push(Array2::zeros(points.raw_dim()));
    }
    JetBatch::new(spec.clone(), chans)
}

/// Applies one layer `act(W a + b)` to every jet channel.
///
/// Value channel: `o_v = act(W a_v + b)`. Direction channels propagate as
/// `o_d = act'(z_v) * z_d`, pair channels as
/// `o_p = act''(z_v) * z_di * z_dj + act'(z_v) * z_p`,
/// all elementwise with `z_c = W a_c`.
pub(crate) fn layer_forward(
    w: &ArrayView2<f64>,
    b: Option<&ArrayView1<f64>>,
    act: ActKind,
    input: &JetBatch,
) -> JetBatch {
    let spec = input.spec().clone();
    let ndir = spec.dirs().len();
    let mut z: Vec<Array2<f64>> = input.chans().iter().map(|a| w.dot(a)).collect();
    if let Some(b) = b {
        for mut col in z[0].columns_mut() {
            col += b;
        }
    }
    if act == ActKind::Identity {
        return JetBatch::new(spec, z);
    }

    let mut out = Vec::with_capacity(z.len());
    let value = z[0].mapv(|v| act.apply(v));
    // p1 = act'(z_v), p2 = act''(z_v), both recoverable from the output.
    let p1 = value.mapv(|o| act.p123(o).0);
    let p2 = value.mapv(|o| act.p123(o).1);
    out.push(value);
    for k in 0..ndir {
        out.push(&p1 * &z[1 + k]);
    }
    for (k, &(pi, pj)) in spec.pair_dirs().iter().enumerate() {
        let quad = &p2 * &(&z[1 + pi] * &z[1 + pj]);
        out.push(quad + &p1 * &z[1 + ndir + k]);
    }
    JetBatch::new(spec, out)
}

/// Reverse of `layer_forward` for the activation part: given adjoints of the
/// outputs and the stored outputs themselves, produces adjoints of the
/// pre-activation channels `z`. Derivative channels of `z` are recovered
/// from the outputs by guarded division (`z_d = o_d / p1`); wherever `p1` is
/// exactly zero, every term that would need `z_d` carries a `p2` or `p3`
/// factor that is also zero for all supported activations, so zero is exact.
pub(crate) fn activation_backward(
    act: ActKind,
    output: &JetBatch,
    out_adj: &JetBatch,
) -> JetBatch {
    let spec = output.spec().clone();
    let ndir = spec.dirs().len();
    if act == ActKind::Identity {
        return out_adj.clone();
    }
    let p1 = output.chan(0).mapv(|o| act.p123(o).0);
    let p2 = output.chan(0).mapv(|o| act.p123(o).1);
    let p3 = output.chan(0).mapv(|o| act.p123(o).2);
    let guard_div = |num: &Array2<f64>, den: &Array2<f64>| {
        let mut q = num.clone();
        q.zip_mut_with(den, |n, &d| *n = if d == 0.0 { 0.0 } else { *n / d });
        q
    };
    // Recover z derivative channels from outputs.
    let z_dir: Vec<Array2<f64>> = (0..ndir)
        .map(|k| guard_div(output.chan(1 + k), &p1))
        .collect();
    let z_pair: Vec<Array2<f64>> = spec
        .pair_dirs()
        .iter()
        .enumerate()
        .map(|(k, &(pi, pj))| {
            let quad = &p2 * &(&z_dir[pi] * &z_dir[pj]);
            guard_div(&(output.chan(1 + ndir + k) - &quad), &p1)
        })
        .collect();

    let mut adj: Vec<Array2<f64>> = output
        .chans()
        .iter()
        .map(|c| Array2::zeros(c.raw_dim()))
        .collect();
    // Value channel: direct term plus contributions of every derivative
    // channel's dependence on z_v.
    adj[0] = out_adj.chan(0) * &p1;
    for k in 0..ndir {
        adj[0] = &adj[0] + &(out_adj.chan(1 + k) * &p2 * &z_dir[k]);
    }
    for (k, &(pi, pj)) in spec.pair_dirs().iter().enumerate() {
        let oadj = out_adj.chan(1 + ndir + k);
        adj[0] = &adj[0] + &(oadj * &(&p3 * &(&z_dir[pi] * &z_dir[pj]) + &p2 * &z_pair[k]));
    }
    // Direction channels.
    for k in 0..ndir {
        adj[1 + k] = out_adj.chan(1 + k) * &p1;
    }
    for (k, &(pi, pj)) in spec.pair_dirs().iter().enumerate() {
        let oadj = out_adj.chan(1 + ndir + k);
        let term_j = oadj * &p2 * &z_dir[pj];
        adj[1 + pi] = &adj[1 + pi] + &term_j;
        let term_i = oadj * &p2 * &z_dir[pi];
        adj[1 + pj] = &adj[1 + pj] + &term_i;
    }
    // Pair channels.
    for k in 0..spec.pairs().len() {
        adj[1 + ndir + k] = out_adj.chan(1 + ndir + k) * &p1;
    }
    JetBatch::new(spec, adj)
}
