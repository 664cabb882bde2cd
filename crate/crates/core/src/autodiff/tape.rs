//! Recorded scalar computations with a reverse pass over parameter slots.
//!
//! The tape owns a flat copy of every registered network's parameters.
//! Recording an operation computes its value immediately; `backward` walks
//! the recorded ops in reverse and accumulates one gradient entry per
//! parameter slot. Operations are layer- and vector-granular so that a
//! risk evaluation over thousands of collocation points stays a handful of
//! matrix ops.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use std::sync::Arc;

use super::batch::{activation_backward, layer_forward, ActKind, JetBatch};
use crate::error::{Error, Result};
use crate::network::MlpNetwork;

/// Index of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    w_off: usize,
    rows: usize,
    cols: usize,
    b_off: usize,
    act: ActKind,
}

#[derive(Debug, Clone)]
struct NetLayout {
    layers: Vec<LayerSlot>,
    input_width: usize,
}

/// Flat parameter-slot layout over a set of networks, in registration
/// order; per network the order matches `MlpNetwork::write_flat`.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    nets: Vec<NetLayout>,
    spans: Vec<std::ops::Range<usize>>,
    total: usize,
}

impl ParamLayout {
    /// Lays the given networks out into one flat slot vector and returns
    /// the layout together with the current parameter values.
    pub fn from_nets(nets: &[&MlpNetwork]) -> (Arc<Self>, Vec<f64>) {
        let mut layouts = Vec::with_capacity(nets.len());
        let mut spans = Vec::with_capacity(nets.len());
        let mut off = 0;
        for net in nets {
            let start = off;
            let mut layers = Vec::with_capacity(net.num_layers());
            let last = net.num_layers() - 1;
            for l in 0..net.num_layers() {
                let (rows, cols) = net.weight(l).dim();
                let act = if l < last {
                    ActKind::from_activation(net.activation())
                } else {
                    ActKind::from_transform(net.output_transform())
                };
                layers.push(LayerSlot {
                    w_off: off,
                    rows,
                    cols,
                    b_off: off + rows * cols,
                    act,
                });
                off += rows * cols + rows;
            }
            layouts.push(NetLayout {
                layers,
                input_width: net.input_width(),
            });
            spans.push(start..off);
        }
        let mut flat = vec![0.0; off];
        for (net, span) in nets.iter().zip(&spans) {
            net.write_flat(&mut flat[span.clone()]);
        }
        (
            Arc::new(Self {
                nets: layouts,
                spans,
                total: off,
            }),
            flat,
        )
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_nets(&self) -> usize {
        self.nets.len()
    }

    /// Writes flat parameter values back into the networks the layout was
    /// built from (same order, same shapes).
    pub fn update_nets(&self, flat: &[f64], nets: &mut [&mut MlpNetwork]) -> Result<()> {
        if flat.len() != self.total || nets.len() != self.nets.len() {
            return Err(Error::contract("parameter layout mismatch"));
        }
        for (net, span) in nets.iter_mut().zip(&self.spans) {
            net.read_flat(&flat[span.clone()]);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// External value; no gradient flows into it.
    Leaf,
    /// A parameter range viewed as a 1 x len value row.
    ParamVec { off: usize, len: usize },
    Layer { slot: LayerSlot, input: NodeId },
    /// Grouped weighted sum over columns: out[:, i] = sum_j c[j] in[:, i*m + j].
    Reduce {
        input: NodeId,
        group: usize,
        coeffs: Vec<f64>,
    },
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    /// Extracts one jet channel as a value-only node.
    Chan { input: NodeId, chan: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { input: NodeId, c: f64 },
    /// Elementwise product of two value-only nodes.
    Hadamard { a: NodeId, b: NodeId },
    /// Elementwise product with a constant row vector.
    MulPlain { input: NodeId, v: Vec<f64> },
    /// Elementwise sum with a constant row vector.
    AddPlain { input: NodeId, v: Vec<f64> },
    /// Mean of squared entries -> 1x1 scalar.
    MeanSq { input: NodeId },
    /// Mean of entries -> 1x1 scalar.
    Mean { input: NodeId },
    /// Weighted sum of scalars -> 1x1 scalar.
    Combine { terms: Vec<(f64, NodeId)> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::ParamVec { .. } => "param-vector",
            Op::Layer { .. } => "layer",
            Op::Reduce { .. } => "reduce",
            Op::SliceCols { .. } => "slice-cols",
            Op::Chan { .. } => "chan",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::Hadamard { .. } => "hadamard",
            Op::MulPlain { .. } => "mul-plain",
            Op::AddPlain { .. } => "add-plain",
            Op::MeanSq { .. } => "mean-sq",
            Op::Mean { .. } => "mean",
            Op::Combine { .. } => "combine",
        }
    }
}

/// A recorded scalar computation over registered parameter slots.
pub struct GradientTape {
    layout: Arc<ParamLayout>,
    params: Vec<f64>,
    ops: Vec<Op>,
    values: Vec<JetBatch>,
}

impl GradientTape {
    pub fn new(layout: Arc<ParamLayout>, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.total() {
            return Err(Error::contract(format!(
                "parameter vector length {} does not match layout {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Self {
            layout,
            params,
            ops: Vec::new(),
            values: Vec::new(),
        })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn push(&mut self, op: Op, value: JetBatch) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        id
    }

    pub fn value(&self, id: NodeId) -> &JetBatch {
        &self.values[id.0]
    }

    /// Value of a 1x1 scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.values[id.0].scalar()
    }

    pub fn input(&mut self, batch: JetBatch) -> NodeId {
        self.push(Op::Leaf, batch)
    }

    /// Leaf over a contiguous parameter range, a 1 x len value row; its
    /// adjoint flows straight into those slots.
    pub fn param_vector(&mut self, off: usize, len: usize) -> Result<NodeId> {
        if off + len > self.params.len() {
            return Err(Error::contract("parameter range out of bounds"));
        }
        let row = Array2::from_shape_vec((1, len), self.params[off..off + len].to_vec())
            .expect("row shape");
        Ok(self.push(Op::ParamVec { off, len }, JetBatch::plain(row)))
    }

    fn w_view<'a>(params: &'a [f64], slot: &LayerSlot) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (slot.rows, slot.cols),
            &params[slot.w_off..slot.w_off + slot.rows * slot.cols],
        )
        .expect("weight shape")
    }

    fn b_view<'a>(params: &'a [f64], slot: &LayerSlot) -> ArrayView1<'a, f64> {
        ArrayView1::from_shape(slot.rows, &params[slot.b_off..slot.b_off + slot.rows])
            .expect("bias shape")
    }

    /// Records the full forward pass of registered network `net` applied to
    /// `input` (jet channels included), returning the output node.
    pub fn mlp(&mut self, net: usize, input: NodeId) -> Result<NodeId> {
        let layout = self.layout.clone();
        let net = layout
            .nets
            .get(net)
            .ok_or_else(|| Error::contract(format!("no registered network {net}")))?;
        if self.values[input.0].rows() != net.input_width {
            return Err(Error::contract(format!(
                "input rows {} do not match network input {}",
                self.values[input.0].rows(),
                net.input_width
            )));
        }
        let mut cur = input;
        for slot in &net.layers {
            let value = layer_forward(
                &Self::w_view(&self.params, slot),
                Some(&Self::b_view(&self.params, slot)),
                slot.act,
                &self.values[cur.0],
            );
            cur = self.push(Op::Layer { slot: *slot, input: cur }, value);
        }
        Ok(cur)
    }

    pub fn reduce(&mut self, input: NodeId, coeffs: Vec<f64>) -> Result<NodeId> {
        let group = coeffs.len();
        let x = &self.values[input.0];
        if group == 0 || x.cols() % group != 0 {
            return Err(Error::contract(format!(
                "reduce group {} does not divide {} columns",
                group,
                x.cols()
            )));
        }
        let n = x.cols() / group;
        let mut chans = Vec::with_capacity(x.channels());
        for c in x.chans() {
            let mut out = Array2::zeros((x.rows(), n));
            for (j, &w) in coeffs.iter().enumerate() {
                out += &(&c.slice(s![.., j..;group]) * w);
            }
            chans.push(out);
        }
        let value = JetBatch::new(x.spec().clone(), chans);
        Ok(self.push(Op::Reduce { input, group, coeffs }, value))
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = &self.values[input.0];
        if start + len > x.cols() {
            return Err(Error::contract("column slice out of bounds"));
        }
        let chans = x
            .chans()
            .iter()
            .map(|c| c.slice(s![.., start..start + len]).to_owned())
            .collect();
        let value = JetBatch::new(x.spec().clone(), chans);
        Ok(self.push(Op::SliceCols { input, start, len }, value))
    }

    fn chan_by_index(&mut self, input: NodeId, chan: usize) -> NodeId {
        let value = JetBatch::plain(self.values[input.0].chan(chan).clone());
        self.push(Op::Chan { input, chan }, value)
    }

    /// The value channel as a value-only node.
    pub fn chan_value(&mut self, input: NodeId) -> NodeId {
        self.chan_by_index(input, 0)
    }

    /// The first-partial channel for input coordinate `coord`.
    pub fn chan_d1(&mut self, input: NodeId, coord: usize) -> Result<NodeId> {
        let spec = self.values[input.0].spec().clone();
        let k = spec
            .dir_position(coord)
            .ok_or_else(|| Error::contract(format!("no d1 channel for coordinate {coord}")))?;
        Ok(self.chan_by_index(input, spec.dir_channel(k)))
    }

    /// The second-partial channel for the pair `(a, b)`.
    pub fn chan_d2(&mut self, input: NodeId, a: usize, b: usize) -> Result<NodeId> {
        let spec = self.values[input.0].spec().clone();
        let k = spec
            .pair_position(a, b)
            .ok_or_else(|| Error::contract(format!("no d2 channel for pair ({a}, {b})")))?;
        Ok(self.chan_by_index(input, spec.pair_channel(k)))
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.spec() != y.spec() || x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(Error::contract("operand shape/spec mismatch"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b)?;
        let chans = self.values[a.0]
            .chans()
            .iter()
            .zip(self.values[b.0].chans())
            .map(|(x, y)| x + y)
            .collect();
        let value = JetBatch::new(self.values[a.0].spec().clone(), chans);
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b)?;
        let chans = self.values[a.0]
            .chans()
            .iter()
            .zip(self.values[b.0].chans())
            .map(|(x, y)| x - y)
            .collect();
        let value = JetBatch::new(self.values[a.0].spec().clone(), chans);
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn scale(&mut self, input: NodeId, c: f64) -> NodeId {
        let chans = self.values[input.0]
            .chans()
            .iter()
            .map(|x| x * c)
            .collect();
        let value = JetBatch::new(self.values[input.0].spec().clone(), chans);
        self.push(Op::Scale { input, c }, value)
    }

    fn expect_plain(&self, id: NodeId, what: &str) -> Result<()> {
        if self.values[id.0].channels() != 1 {
            return Err(Error::contract(format!(
                "{what} expects a value-only node"
            )));
        }
        Ok(())
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_plain(a, "hadamard")?;
        self.expect_plain(b, "hadamard")?;
        self.check_same_shape(a, b)?;
        let value = JetBatch::plain(self.values[a.0].value() * self.values[b.0].value());
        Ok(self.push(Op::Hadamard { a, b }, value))
    }

    pub fn mul_plain(&mut self, input: NodeId, v: Vec<f64>) -> Result<NodeId> {
        self.expect_plain(input, "mul_plain")?;
        let x = self.values[input.0].value();
        if x.nrows() != 1 || x.ncols() != v.len() {
            return Err(Error::contract("mul_plain length mismatch"));
        }
        let row = ArrayView2::from_shape((1, v.len()), &v).expect("row shape");
        let value = JetBatch::plain(x * &row);
        Ok(self.push(Op::MulPlain { input, v }, value))
    }

    pub fn add_plain(&mut self, input: NodeId, v: Vec<f64>) -> Result<NodeId> {
        self.expect_plain(input, "add_plain")?;
        let x = self.values[input.0].value();
        if x.nrows() != 1 || x.ncols() != v.len() {
            return Err(Error::contract("add_plain length mismatch"));
        }
        let row = ArrayView2::from_shape((1, v.len()), &v).expect("row shape");
        let value = JetBatch::plain(x + &row);
        Ok(self.push(Op::AddPlain { input, v }, value))
    }

    pub fn mean_sq(&mut self, input: NodeId) -> Result<NodeId> {
        self.expect_plain(input, "mean_sq")?;
        let x = self.values[input.0].value();
        if x.is_empty() {
            return Err(Error::contract("mean_sq over an empty set"));
        }
        let m = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let value = JetBatch::plain(Array2::from_elem((1, 1), m));
        Ok(self.push(Op::MeanSq { input }, value))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        self.expect_plain(input, "mean")?;
        let x = self.values[input.0].value();
        if x.is_empty() {
            return Err(Error::contract("mean over an empty set"));
        }
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let value = JetBatch::plain(Array2::from_elem((1, 1), m));
        Ok(self.push(Op::Mean { input }, value))
    }

    /// `sum_i c_i * scalar_i` over 1x1 nodes.
    pub fn combine(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(c, id) in terms {
            let v = &self.values[id.0];
            if v.channels() != 1 || v.rows() != 1 || v.cols() != 1 {
                return Err(Error::contract("combine expects scalar nodes"));
            }
            total += c * v.scalar();
        }
        let value = JetBatch::plain(Array2::from_elem((1, 1), total));
        Ok(self.push(
            Op::Combine {
                terms: terms.to_vec(),
            },
            value,
        ))
    }

    /// Recomputes a node's value from the recorded ops and leaves, without
    /// touching the stored values. Replay of a deterministic tape is
    /// bit-identical to the original forward pass.
    pub fn replay(&self, id: NodeId) -> f64 {
        let mut fresh: Vec<JetBatch> = Vec::with_capacity(id.0 + 1);
        for (k, op) in self.ops.iter().enumerate().take(id.0 + 1) {
            let value = match op {
                Op::Leaf | Op::ParamVec { .. } => self.values[k].clone(),
                Op::Layer { slot, input } => layer_forward(
                    &Self::w_view(&self.params, slot),
                    Some(&Self::b_view(&self.params, slot)),
                    slot.act,
                    &fresh[input.0],
                ),
                Op::Reduce {
                    input,
                    group,
                    coeffs,
                } => {
                    let x = &fresh[input.0];
                    let n = x.cols() / group;
                    let chans = x
                        .chans()
                        .iter()
                        .map(|c| {
                            let mut out = Array2::zeros((x.rows(), n));
                            for (j, &w) in coeffs.iter().enumerate() {
                                out += &(&c.slice(s![.., j..;*group]) * w);
                            }
                            out
                        })
                        .collect();
                    JetBatch::new(x.spec().clone(), chans)
                }
                Op::SliceCols { input, start, len } => {
                    let x = &fresh[input.0];
                    let chans = x
                        .chans()
                        .iter()
                        .map(|c| c.slice(s![.., *start..start + len]).to_owned())
                        .collect();
                    JetBatch::new(x.spec().clone(), chans)
                }
                Op::Chan { input, chan } => JetBatch::plain(fresh[input.0].chan(*chan).clone()),
                Op::Add { a, b } => {
                    let chans = fresh[a.0]
                        .chans()
                        .iter()
                        .zip(fresh[b.0].chans())
                        .map(|(x, y)| x + y)
                        .collect();
                    JetBatch::new(fresh[a.0].spec().clone(), chans)
                }
                Op::Sub { a, b } => {
                    let chans = fresh[a.0]
                        .chans()
                        .iter()
                        .zip(fresh[b.0].chans())
                        .map(|(x, y)| x - y)
                        .collect();
                    JetBatch::new(fresh[a.0].spec().clone(), chans)
                }
                Op::Scale { input, c } => {
                    let chans = fresh[input.0].chans().iter().map(|x| x * *c).collect();
                    JetBatch::new(fresh[input.0].spec().clone(), chans)
                }
                Op::Hadamard { a, b } => {
                    JetBatch::plain(fresh[a.0].value() * fresh[b.0].value())
                }
                Op::MulPlain { input, v } => {
                    let row = ArrayView2::from_shape((1, v.len()), v).expect("row shape");
                    JetBatch::plain(fresh[input.0].value() * &row)
                }
                Op::AddPlain { input, v } => {
                    let row = ArrayView2::from_shape((1, v.len()), v).expect("row shape");
                    JetBatch::plain(fresh[input.0].value() + &row)
                }
                Op::MeanSq { input } => {
                    let x = fresh[input.0].value();
                    let m = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
                    JetBatch::plain(Array2::from_elem((1, 1), m))
                }
                Op::Mean { input } => {
                    let x = fresh[input.0].value();
                    let m = x.iter().sum::<f64>() / x.len() as f64;
                    JetBatch::plain(Array2::from_elem((1, 1), m))
                }
                Op::Combine { terms } => {
                    let total = terms.iter().map(|&(c, id)| c * fresh[id.0].scalar()).sum();
                    JetBatch::plain(Array2::from_elem((1, 1), total))
                }
            };
            fresh.push(value);
        }
        fresh[id.0].scalar()
    }

    fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.ops
            .iter()
            .enumerate()
            .find(|(k, _)| !self.values[*k].is_finite())
            .map(|(k, op)| (k, op.name()))
    }

    /// Gradient of the recorded scalar `loss` with respect to every
    /// parameter slot.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<f64>> {
        let lv = &self.values[loss.0];
        if lv.channels() != 1 || lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::contract("backward expects a scalar node"));
        }
        if !lv.scalar().is_finite() {
            let (idx, name) = self.first_non_finite().unwrap_or((loss.0, "scalar"));
            return Err(Error::numeric(format!(
                "non-finite value produced by op '{name}' (node {idx})"
            )));
        }
        let mut grads = vec![0.0; self.layout.total()];
        let mut adj: Vec<Option<JetBatch>> = vec![None; self.ops.len()];
        adj[loss.0] = Some(JetBatch::plain(Array2::from_elem((1, 1), 1.0)));

        for k in (0..self.ops.len()).rev() {
            let Some(out_adj) = adj[k].take() else {
                continue;
            };
            match &self.ops[k] {
                Op::Leaf => {}
                Op::ParamVec { off, len } => {
                    let row = out_adj.value();
                    for j in 0..*len {
                        grads[off + j] += row[(0, j)];
                    }
                }
                Op::Layer { slot, input } => {
                    let z_adj = activation_backward(slot.act, &self.values[k], &out_adj);
                    let a = &self.values[input.0];
                    // Weight and bias gradients.
                    let mut wg = Array2::<f64>::zeros((slot.rows, slot.cols));
                    for (za, ac) in z_adj.chans().iter().zip(a.chans()) {
                        wg += &za.dot(&ac.t());
                    }
                    let dst = &mut grads[slot.w_off..slot.w_off + slot.rows * slot.cols];
                    for (d, &g) in dst.iter_mut().zip(wg.iter()) {
                        *d += g;
                    }
                    for (i, row) in z_adj.chan(0).rows().into_iter().enumerate() {
                        grads[slot.b_off + i] += row.sum();
                    }
                    // Input adjoint.
                    let w = Self::w_view(&self.params, slot);
                    let chans = z_adj.chans().iter().map(|za| w.t().dot(za)).collect();
                    accumulate(
                        &mut adj[input.0],
                        JetBatch::new(a.spec().clone(), chans),
                    );
                }
                Op::Reduce {
                    input,
                    group,
                    coeffs,
                } => {
                    let x = &self.values[input.0];
                    let mut contrib = JetBatch::zeros_like(x);
                    for c in 0..out_adj.channels() {
                        let oa = out_adj.chan(c);
                        for (j, &w) in coeffs.iter().enumerate() {
                            let mut lane = contrib.chan_mut(c).slice_mut(s![.., j..;*group]);
                            lane += &(oa * w);
                        }
                    }
                    accumulate(&mut adj[input.0], contrib);
                }
                Op::SliceCols { input, start, len } => {
                    let x = &self.values[input.0];
                    let mut contrib = JetBatch::zeros_like(x);
                    for c in 0..contrib.channels() {
                        let mut view = contrib
                            .chan_mut(c)
                            .slice_mut(s![.., *start..start + len]);
                        view += out_adj.chan(c);
                    }
                    accumulate(&mut adj[input.0], contrib);
                }
                Op::Chan { input, chan } => {
                    let x = &self.values[input.0];
                    let mut contrib = JetBatch::zeros_like(x);
                    *contrib.chan_mut(*chan) += out_adj.chan(0);
                    accumulate(&mut adj[input.0], contrib);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj[a.0], out_adj.clone());
                    accumulate(&mut adj[b.0], out_adj);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adj[a.0], out_adj.clone());
                    let chans = out_adj.chans().iter().map(|x| -x).collect();
                    accumulate(
                        &mut adj[b.0],
                        JetBatch::new(out_adj.spec().clone(), chans),
                    );
                }
                Op::Scale { input, c } => {
                    let chans = out_adj.chans().iter().map(|x| x * *c).collect();
                    accumulate(
                        &mut adj[input.0],
                        JetBatch::new(out_adj.spec().clone(), chans),
                    );
                }
                Op::Hadamard { a, b } => {
                    accumulate(
                        &mut adj[a.0],
                        JetBatch::plain(out_adj.value() * self.values[b.0].value()),
                    );
                    accumulate(
                        &mut adj[b.0],
                        JetBatch::plain(out_adj.value() * self.values[a.0].value()),
                    );
                }
                Op::MulPlain { input, v } => {
                    let row = ArrayView2::from_shape((1, v.len()), v).expect("row shape");
                    accumulate(&mut adj[input.0], JetBatch::plain(out_adj.value() * &row));
                }
                Op::AddPlain { input, .. } => {
                    accumulate(&mut adj[input.0], JetBatch::plain(out_adj.value().clone()));
                }
                Op::MeanSq { input } => {
                    let x = self.values[input.0].value();
                    let g = out_adj.scalar() * 2.0 / x.len() as f64;
                    accumulate(&mut adj[input.0], JetBatch::plain(x * g));
                }
                Op::Mean { input } => {
                    let x = self.values[input.0].value();
                    let g = out_adj.scalar() / x.len() as f64;
                    accumulate(
                        &mut adj[input.0],
                        JetBatch::plain(Array2::from_elem(x.raw_dim(), g)),
                    );
                }
                Op::Combine { terms } => {
                    for &(c, id) in terms {
                        accumulate(
                            &mut adj[id.0],
                            JetBatch::plain(Array2::from_elem((1, 1), c * out_adj.scalar())),
                        );
                    }
                }
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            let (idx, name) = self.first_non_finite().unwrap_or((loss.0, "backward"));
            return Err(Error::numeric(format!(
                "non-finite gradient; first suspect op '{name}' (node {idx})"
            )));
        }
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<JetBatch>, contrib: JetBatch) {
    match slot {
        None => *slot = Some(contrib),
        Some(acc) => {
            for (c, add) in contrib.chans().iter().enumerate() {
                *acc.chan_mut(c) += add;
            }
        }
    }
}
