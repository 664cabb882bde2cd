//! Exact first/second input derivatives and parameter gradients.
//!
//! Two independent mechanisms compose here:
//!
//! * forward-mode second-order jets carried through the network recursion
//!   give exact `d/dx_i` and `d^2/dx_i dx_j` of outputs with respect to
//!   selected input coordinates (no finite differencing anywhere);
//! * a recorded tape over layer- and vector-granular operations provides
//!   the reverse pass that turns a recorded scalar risk into a gradient
//!   with one entry per parameter slot.
//!
//! Losses that need input derivatives of the network inside a
//! parameter-differentiated scalar get them by recording the jet-carrying
//! forward pass on the tape (forward over reverse).

mod batch;
mod scalar;
mod tape;

pub use batch::{seeded_input, ActKind, JetBatch};
pub use scalar::ScalarJet;
pub use tape::{GradientTape, NodeId, ParamLayout};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::network::MlpNetwork;

/// Which input derivatives a jet evaluation should carry: first partials for
/// every coordinate in `dirs`, second partials for every pair in `pairs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetSpec {
    dirs: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    // pair positions into `dirs`, precomputed for channel propagation
    pair_dirs: Vec<(usize, usize)>,
}

impl JetSpec {
    /// No derivatives; value channel only.
    pub fn value_only() -> Arc<Self> {
        Arc::new(Self {
            dirs: vec![],
            pairs: vec![],
            pair_dirs: vec![],
        })
    }

    /// Carries the requested first partials and second-partial pairs.
    /// Pair coordinates must be listed in `dirs`; pairs are stored with
    /// their indices in non-decreasing order (the jet is symmetric).
    pub fn new(dirs: &[usize], pairs: &[(usize, usize)]) -> Result<Arc<Self>> {
        let mut sorted = dirs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != dirs.len() {
            return Err(Error::contract("jet directions must be unique"));
        }
        let mut norm_pairs = Vec::with_capacity(pairs.len());
        let mut pair_dirs = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            let pi = sorted
                .iter()
                .position(|&d| d == i)
                .ok_or_else(|| Error::contract(format!("pair coordinate {i} not in dirs")))?;
            let pj = sorted
                .iter()
                .position(|&d| d == j)
                .ok_or_else(|| Error::contract(format!("pair coordinate {j} not in dirs")))?;
            if norm_pairs.contains(&(i, j)) {
                return Err(Error::contract("duplicate second-derivative pair"));
            }
            norm_pairs.push((i, j));
            pair_dirs.push((pi, pj));
        }
        Ok(Arc::new(Self {
            dirs: sorted,
            pairs: norm_pairs,
            pair_dirs,
        }))
    }

    /// First partials only.
    pub fn gradient(dirs: &[usize]) -> Arc<Self> {
        Self::new(dirs, &[]).expect("no pairs to validate")
    }

    /// d/dx, d/dy, d2/dxx, d2/dyy for coordinates `(x, y) = (0, 1)`.
    pub fn laplacian_2d() -> Arc<Self> {
        Self::new(&[0, 1], &[(0, 0), (1, 1)]).expect("static spec")
    }

    /// d/dc and d2/dcc for a single coordinate.
    pub fn second_in(coord: usize) -> Arc<Self> {
        Self::new(&[coord], &[(coord, coord)]).expect("static spec")
    }

    pub fn dirs(&self) -> &[usize] {
        &self.dirs
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub(crate) fn pair_dirs(&self) -> &[(usize, usize)] {
        &self.pair_dirs
    }

    /// Total channel count: value + first partials + second partials.
    pub fn channels(&self) -> usize {
        1 + self.dirs.len() + self.pairs.len()
    }

    pub(crate) fn dir_channel(&self, k: usize) -> usize {
        1 + k
    }

    pub(crate) fn pair_channel(&self, k: usize) -> usize {
        1 + self.dirs.len() + k
    }

    pub fn dir_position(&self, coord: usize) -> Option<usize> {
        self.dirs.iter().position(|&d| d == coord)
    }

    pub fn pair_position(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.pairs.iter().position(|&p| p == key)
    }
}

/// Value of a scalar quantity together with its requested partials.
#[derive(Debug, Clone)]
pub struct Jet2 {
    spec: Arc<JetSpec>,
    value: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Jet2 {
    pub fn new(spec: Arc<JetSpec>, value: f64, d1: Vec<f64>, d2: Vec<f64>) -> Result<Self> {
        if d1.len() != spec.dirs().len() || d2.len() != spec.pairs().len() {
            return Err(Error::contract("jet component count mismatch"));
        }
        Ok(Self {
            spec,
            value,
            d1,
            d2,
        })
    }

    /// A constant: all partials exactly zero.
    pub fn constant(spec: Arc<JetSpec>, value: f64) -> Self {
        let d1 = vec![0.0; spec.dirs().len()];
        let d2 = vec![0.0; spec.pairs().len()];
        Self {
            spec,
            value,
            d1,
            d2,
        }
    }

    pub fn spec(&self) -> &Arc<JetSpec> {
        &self.spec
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// First partial with respect to input coordinate `coord`.
    pub fn d1(&self, coord: usize) -> Option<f64> {
        self.spec.dir_position(coord).map(|k| self.d1[k])
    }

    /// Second partial for the coordinate pair `(a, b)`; symmetric in its
    /// arguments.
    pub fn d2(&self, a: usize, b: usize) -> Option<f64> {
        self.spec.pair_position(a, b).map(|k| self.d2[k])
    }
}

/// Evaluates `net` at `input` carrying the requested jet channels through
/// the layer recursion. The network must have a single output.
pub fn eval_jet(net: &MlpNetwork, input: &[f64], spec: &Arc<JetSpec>) -> Result<Jet2> {
    if input.len() != net.input_width() {
        return Err(Error::contract(format!(
            "input width {} does not match network input {}",
            input.len(),
            net.input_width()
        )));
    }
    if net.output_width() != 1 {
        return Err(Error::contract("eval_jet requires a scalar-output network"));
    }
    if spec.dirs().iter().any(|&d| d >= input.len()) {
        return Err(Error::contract("jet direction indexes past the input"));
    }
    let x = ndarray::Array2::from_shape_vec((input.len(), 1), input.to_vec())
        .expect("column shape");
    let mut batch = seeded_input(&x, spec);
    let last = net.num_layers() - 1;
    for l in 0..net.num_layers() {
        let act = if l < last {
            ActKind::from_activation(net.activation())
        } else {
            ActKind::from_transform(net.output_transform())
        };
        batch = batch::layer_forward(
            &net.weight(l).view(),
            Some(&net.bias(l).view()),
            act,
            &batch,
        );
    }
    let d1 = (0..spec.dirs().len())
        .map(|k| batch.chan(spec.dir_channel(k))[(0, 0)])
        .collect();
    let d2 = (0..spec.pairs().len())
        .map(|k| batch.chan(spec.pair_channel(k))[(0, 0)])
        .collect();
    Jet2::new(spec.clone(), batch.chan(0)[(0, 0)], d1, d2)
}
