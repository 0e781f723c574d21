//! Minimal dense-network substrate with reverse-mode differentiation.
//!
//! A `Tape` records an append-only sequence of primitive operations (affine
//! layers, a complex matrix product against a complex parameter, sums,
//! residual subtractions, squared-error reductions). Backward walks the
//! nodes in exact reverse order and accumulates gradients per parameter
//! identity, so a parameter that appears at several tape sites (tied pilot
//! weights used in both the transmission and the cancellation path) receives
//! the sum of its site gradients.
//!
//! Values are real; complex vectors are packed `[re..., im...]` as defined
//! in `cmat`. Node outputs live in one flat arena so a tape can be reset and
//! reused without reallocating.

use crate::rng::draw_uniform;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Identity of one parameter array (a weight matrix, a bias vector or one
/// pilot's free coefficient vector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Allocates parameter identities and remembers their shapes and names;
/// identity order is the serialization order for checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    lens: Vec<usize>,
    names: Vec<String>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.lens.push(len);
        self.names.push(name.into());
        ParamId(self.lens.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn param_len(&self, id: ParamId) -> usize {
        self.lens[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }
}

/// Fully connected layer with row-major weights (out_dim x in_dim).
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight_id: ParamId,
    pub bias_id: ParamId,
}

impl DenseLayer {
    /// Glorot-uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn glorot(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
        registry: &mut ParamRegistry,
        name: &str,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| draw_uniform(rng, -bound, bound))
            .collect();
        let weight_id = registry.alloc(format!("{name}.weight"), weight.len());
        let bias_id = registry.alloc(format!("{name}.bias"), out_dim);
        DenseLayer {
            weight,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
            activation,
            weight_id,
            bias_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Node<'m> {
    Const,
    ParamLeaf {
        values: &'m [f64],
        id: ParamId,
    },
    Affine {
        weight: &'m [f64],
        weight_id: ParamId,
        bias_id: ParamId,
        input: NodeId,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    },
    /// Complex product vec(A X) where A (n x m) comes from the input node and
    /// X (m x l) is a complex parameter, both packed `[re..., im...]`.
    CplxMatMul {
        input: NodeId,
        weights: &'m [f64],
        weight_id: ParamId,
        n: usize,
        m: usize,
        l: usize,
    },
    Sum {
        terms: Vec<NodeId>,
    },
    /// base - sum(terms).
    Sub {
        base: NodeId,
        terms: Vec<NodeId>,
    },
    /// Scalar squared distance to a recorded constant target.
    SqDiff {
        input: NodeId,
        target: NodeId,
    },
    /// Scalar squared norm.
    SqNorm {
        input: NodeId,
    },
}

/// Gradient map: parameter identity to accumulated gradient array.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    fn ensure(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        if self.slots.len() <= id.0 {
            self.slots.resize_with(id.0 + 1, || None);
        }
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    /// Adds another gradient map in place.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(src) = slot {
                let dst = self.ensure(ParamId(i), src.len());
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    /// Zeroes every allocated slot, keeping the storage.
    pub fn reset(&mut self) {
        for slot in self.slots.iter_mut().flatten() {
            slot.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Scales every entry, e.g. by 1/B for a batch mean.
    pub fn scale(&mut self, s: f64) {
        for slot in self.slots.iter_mut().flatten() {
            slot.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Recorded computation over borrowed parameters.
pub struct Tape<'m> {
    nodes: Vec<Node<'m>>,
    spans: Vec<(usize, usize)>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    sites: Vec<(ParamId, usize)>,
}

impl<'m> Default for Tape<'m> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'m> Tape<'m> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spans: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            sites: Vec::new(),
        }
    }

    /// Clears recorded nodes but keeps allocations for reuse.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.spans.clear();
        self.vals.clear();
        self.adj.clear();
        self.sites.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let (start, len) = self.spans[id.0];
        &self.vals[start..start + len]
    }

    /// Tape sites at which a parameter identity is used.
    pub fn sites(&self, id: ParamId) -> Vec<NodeId> {
        self.sites
            .iter()
            .filter(|(p, _)| *p == id)
            .map(|(_, n)| NodeId(*n))
            .collect()
    }

    fn push(&mut self, node: Node<'m>, out_len: usize) -> NodeId {
        let start = self.vals.len();
        self.vals.resize(start + out_len, 0.0);
        self.spans.push((start, out_len));
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn out_slice(&mut self, id: NodeId) -> &mut [f64] {
        let (start, len) = self.spans[id.0];
        &mut self.vals[start..start + len]
    }

    fn record_site(&mut self, id: ParamId, node: NodeId) {
        self.sites.push((id, node.0));
    }

    pub fn constant(&mut self, data: &[f64]) -> NodeId {
        let id = self.push(Node::Const, data.len());
        self.out_slice(id).copy_from_slice(data);
        id
    }

    pub fn param_leaf(&mut self, values: &'m [f64], id: ParamId) -> NodeId {
        let node = self.push(Node::ParamLeaf { values, id }, values.len());
        self.out_slice(node).copy_from_slice(values);
        self.record_site(id, node);
        node
    }

    /// Records one dense layer application: activation(W x + b).
    pub fn forward_dense(&mut self, layer: &'m DenseLayer, input: NodeId) -> Result<NodeId> {
        let (_, in_len) = self.spans[input.0];
        if in_len != layer.in_dim {
            return Err(Error::Dimension(format!(
                "dense layer expects input {} but node carries {}",
                layer.in_dim, in_len
            )));
        }
        let node = self.push(
            Node::Affine {
                weight: &layer.weight,
                weight_id: layer.weight_id,
                bias_id: layer.bias_id,
                input,
                in_dim: layer.in_dim,
                out_dim: layer.out_dim,
                activation: layer.activation,
            },
            layer.out_dim,
        );
        self.record_site(layer.weight_id, node);
        self.record_site(layer.bias_id, node);

        let (in_start, _) = self.spans[input.0];
        let (out_start, _) = self.spans[node.0];
        for i in 0..layer.out_dim {
            let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
            let mut acc = layer.bias[i];
            for (w, j) in row.iter().zip(in_start..in_start + layer.in_dim) {
                acc += w * self.vals[j];
            }
            if layer.activation == Activation::Relu && acc < 0.0 {
                acc = 0.0;
            }
            self.vals[out_start + i] = acc;
        }
        Ok(node)
    }

    /// Records vec(A X) for packed complex input A (n x m) and packed complex
    /// parameter X (m x l).
    pub fn cplx_matmul(
        &mut self,
        input: NodeId,
        weights: &'m [f64],
        weight_id: ParamId,
        n: usize,
        m: usize,
        l: usize,
    ) -> Result<NodeId> {
        let (_, in_len) = self.spans[input.0];
        if in_len != 2 * n * m {
            return Err(Error::Dimension(format!(
                "complex matmul expects packed input of {} reals, node carries {in_len}",
                2 * n * m
            )));
        }
        if weights.len() != 2 * m * l {
            return Err(Error::Dimension(format!(
                "complex matmul expects {} packed weights, parameter carries {}",
                2 * m * l,
                weights.len()
            )));
        }
        let node = self.push(
            Node::CplxMatMul {
                input,
                weights,
                weight_id,
                n,
                m,
                l,
            },
            2 * n * l,
        );
        self.record_site(weight_id, node);

        let (a0, _) = self.spans[input.0];
        let (o0, _) = self.spans[node.0];
        let nm = n * m;
        let ml = m * l;
        let nl = n * l;
        for c in 0..l {
            for mm in 0..m {
                let xr = weights[c * m + mm];
                let xi = weights[ml + c * m + mm];
                let a_col = a0 + mm * n;
                let o_col = o0 + c * n;
                for r in 0..n {
                    let ar = self.vals[a_col + r];
                    let ai = self.vals[a0 + nm + mm * n + r];
                    self.vals[o_col + r] += ar * xr - ai * xi;
                    self.vals[o0 + nl + c * n + r] += ar * xi + ai * xr;
                }
            }
        }
        Ok(node)
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let len = self.common_len(terms)?;
        let node = self.push(
            Node::Sum {
                terms: terms.to_vec(),
            },
            len,
        );
        let (o0, _) = self.spans[node.0];
        for t in terms {
            let (t0, tl) = self.spans[t.0];
            for i in 0..tl {
                self.vals[o0 + i] += self.vals[t0 + i];
            }
        }
        Ok(node)
    }

    /// base - sum(terms).
    pub fn sub(&mut self, base: NodeId, terms: &[NodeId]) -> Result<NodeId> {
        let (_, base_len) = self.spans[base.0];
        if !terms.is_empty() && self.common_len(terms)? != base_len {
            return Err(Error::Dimension("sub length mismatch".into()));
        }
        let node = self.push(
            Node::Sub {
                base,
                terms: terms.to_vec(),
            },
            base_len,
        );
        let (o0, _) = self.spans[node.0];
        let (b0, _) = self.spans[base.0];
        for i in 0..base_len {
            self.vals[o0 + i] = self.vals[b0 + i];
        }
        for t in terms {
            let (t0, _) = self.spans[t.0];
            for i in 0..base_len {
                self.vals[o0 + i] -= self.vals[t0 + i];
            }
        }
        Ok(node)
    }

    /// Scalar squared distance |input - target|^2; target must be a node
    /// (typically a constant).
    pub fn sq_diff(&mut self, input: NodeId, target: NodeId) -> Result<NodeId> {
        let (_, il) = self.spans[input.0];
        let (_, tl) = self.spans[target.0];
        if il != tl {
            return Err(Error::Dimension(format!(
                "squared difference between lengths {il} and {tl}"
            )));
        }
        let node = self.push(Node::SqDiff { input, target }, 1);
        let (i0, _) = self.spans[input.0];
        let (t0, _) = self.spans[target.0];
        let mut acc = 0.0;
        for k in 0..il {
            let d = self.vals[i0 + k] - self.vals[t0 + k];
            acc += d * d;
        }
        let (o0, _) = self.spans[node.0];
        self.vals[o0] = acc;
        Ok(node)
    }

    /// Scalar squared norm.
    pub fn sq_norm(&mut self, input: NodeId) -> NodeId {
        let node = self.push(Node::SqNorm { input }, 1);
        let (i0, il) = self.spans[input.0];
        let acc: f64 = self.vals[i0..i0 + il].iter().map(|v| v * v).sum();
        let (o0, _) = self.spans[node.0];
        self.vals[o0] = acc;
        node
    }

    fn common_len(&self, terms: &[NodeId]) -> Result<usize> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Empty("sum over zero nodes".into()))?;
        let len = self.spans[first.0].1;
        for t in terms {
            if self.spans[t.0].1 != len {
                return Err(Error::Dimension("sum over unequal lengths".into()));
            }
        }
        Ok(len)
    }

    /// Reverse pass from the last node, which must be scalar. The seed is
    /// the upstream derivative of that scalar (1/B for a batch-mean loss).
    /// Gradients accumulate into `grads` without being cleared first.
    pub fn backward_into(&mut self, seed: f64, grads: &mut Gradients) -> Result<()> {
        let last = self
            .nodes
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Empty("backward on an empty tape".into()))?;
        if self.spans[last].1 != 1 {
            return Err(Error::Dimension(
                "backward requires a scalar final node".into(),
            ));
        }
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        let (l0, _) = self.spans[last];
        self.adj[l0] = seed;

        for idx in (0..self.nodes.len()).rev() {
            let (o0, _) = self.spans[idx];
            match &self.nodes[idx] {
                Node::Const => {}
                Node::ParamLeaf { values, id } => {
                    let g = grads.ensure(*id, values.len());
                    for (gi, k) in g.iter_mut().zip(o0..o0 + values.len()) {
                        *gi += self.adj[k];
                    }
                }
                Node::Affine {
                    weight,
                    weight_id,
                    bias_id,
                    input,
                    in_dim,
                    out_dim,
                    activation,
                    ..
                } => {
                    let (i0, _) = self.spans[input.0];
                    let (in_dim, out_dim) = (*in_dim, *out_dim);
                    // Fold the activation derivative into the output adjoint:
                    // ReLU passes gradient only where the output is positive
                    // (zero at the kink by convention).
                    if *activation == Activation::Relu {
                        for k in 0..out_dim {
                            if self.vals[o0 + k] <= 0.0 {
                                self.adj[o0 + k] = 0.0;
                            }
                        }
                    }
                    {
                        let gb = grads.ensure(*bias_id, out_dim);
                        for (g, k) in gb.iter_mut().zip(o0..o0 + out_dim) {
                            *g += self.adj[k];
                        }
                    }
                    {
                        let gw = grads.ensure(*weight_id, weight.len());
                        for r in 0..out_dim {
                            let q = self.adj[o0 + r];
                            if q == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * in_dim..(r + 1) * in_dim];
                            for (g, k) in row.iter_mut().zip(i0..i0 + in_dim) {
                                *g += q * self.vals[k];
                            }
                        }
                    }
                    for r in 0..out_dim {
                        let q = self.adj[o0 + r];
                        if q == 0.0 {
                            continue;
                        }
                        let row = &weight[r * in_dim..(r + 1) * in_dim];
                        for (w, k) in row.iter().zip(i0..i0 + in_dim) {
                            self.adj[k] += w * q;
                        }
                    }
                }
                Node::CplxMatMul {
                    input,
                    weights,
                    weight_id,
                    n,
                    m,
                    l,
                } => {
                    let (n, m, l) = (*n, *m, *l);
                    let (a0, _) = self.spans[input.0];
                    let nm = n * m;
                    let ml = m * l;
                    let nl = n * l;
                    let gw = grads.ensure(*weight_id, weights.len());
                    for c in 0..l {
                        for mm in 0..m {
                            let mut dxr = 0.0;
                            let mut dxi = 0.0;
                            let xr = weights[c * m + mm];
                            let xi = weights[ml + c * m + mm];
                            for r in 0..n {
                                let gr = self.adj[o0 + c * n + r];
                                let gi = self.adj[o0 + nl + c * n + r];
                                let ar = self.vals[a0 + mm * n + r];
                                let ai = self.vals[a0 + nm + mm * n + r];
                                dxr += ar * gr + ai * gi;
                                dxi += ar * gi - ai * gr;
                                self.adj[a0 + mm * n + r] += xr * gr + xi * gi;
                                self.adj[a0 + nm + mm * n + r] += xr * gi - xi * gr;
                            }
                            gw[c * m + mm] += dxr;
                            gw[ml + c * m + mm] += dxi;
                        }
                    }
                }
                Node::Sum { terms } => {
                    let (_, len) = self.spans[idx];
                    for t in terms {
                        let (t0, _) = self.spans[t.0];
                        for k in 0..len {
                            self.adj[t0 + k] += self.adj[o0 + k];
                        }
                    }
                }
                Node::Sub { base, terms } => {
                    let (_, len) = self.spans[idx];
                    let (b0, _) = self.spans[base.0];
                    for k in 0..len {
                        self.adj[b0 + k] += self.adj[o0 + k];
                    }
                    for t in terms {
                        let (t0, _) = self.spans[t.0];
                        for k in 0..len {
                            self.adj[t0 + k] -= self.adj[o0 + k];
                        }
                    }
                }
                Node::SqDiff { input, target } => {
                    let g = self.adj[o0];
                    let (i0, il) = self.spans[input.0];
                    let (t0, _) = self.spans[target.0];
                    for k in 0..il {
                        self.adj[i0 + k] += g * 2.0 * (self.vals[i0 + k] - self.vals[t0 + k]);
                    }
                }
                Node::SqNorm { input } => {
                    let g = self.adj[o0];
                    let (i0, il) = self.spans[input.0];
                    for k in 0..il {
                        self.adj[i0 + k] += g * 2.0 * self.vals[i0 + k];
                    }
                }
            }
        }
        Ok(())
    }

    /// Reverse pass into a fresh gradient map.
    pub fn backward(&mut self, seed: f64) -> Result<Gradients> {
        let mut grads = Gradients::new();
        self.backward_into(seed, &mut grads)?;
        Ok(grads)
    }
}

/// One plain SGD update, with a non-finite guard on the gradient and the
/// updated values.
pub fn sgd_step(values: &mut [f64], grad: &[f64], step: f64, param: &str) -> Result<()> {
    if values.len() != grad.len() {
        return Err(Error::Dimension(format!(
            "sgd_step on {param}: {} values vs {} gradients",
            values.len(),
            grad.len()
        )));
    }
    for g in grad {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: "gradient".into(),
                param: param.into(),
            });
        }
    }
    for (v, g) in values.iter_mut().zip(grad) {
        *v -= step * g;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "updated parameter".into(),
                param: param.into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::{pack_split, unpack_split, CMat};
    use crate::rng::{draw_cn_vec, seeded_rng};

    fn leaf_layer(
        registry: &mut ParamRegistry,
        weight: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> DenseLayer {
        let weight_id = registry.alloc("w", weight.len());
        let bias_id = registry.alloc("b", bias.len());
        DenseLayer {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
            weight_id,
            bias_id,
        }
    }

    #[test]
    fn dense_identity_relu_clamps_negatives() {
        let mut reg = ParamRegistry::new();
        let layer = leaf_layer(
            &mut reg,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            2,
            2,
            Activation::Relu,
        );
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0, -2.0]);
        let y = tape.forward_dense(&layer, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 0.0]);
    }

    #[test]
    fn dense_rejects_length_mismatch() {
        let mut reg = ParamRegistry::new();
        let layer = leaf_layer(
            &mut reg,
            vec![1.0; 6],
            vec![0.0; 2],
            3,
            2,
            Activation::Identity,
        );
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0, 2.0]);
        assert!(tape.forward_dense(&layer, x).is_err());
    }

    #[test]
    fn quadratic_loss_gradient_is_two_x() {
        let mut reg = ParamRegistry::new();
        let values = vec![1.0, -2.0];
        let id = reg.alloc("x", 2);
        let mut tape = Tape::new();
        let x = tape.param_leaf(&values, id);
        let _l = tape.sq_norm(x);
        let grads = tape.backward(1.0).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn tied_parameter_accumulates_both_sites() {
        // loss = (w + w)^2 at w = 1: two tape sites, total gradient 8.
        let mut reg = ParamRegistry::new();
        let values = vec![1.0];
        let id = reg.alloc("w", 1);
        let mut tape = Tape::new();
        let a = tape.param_leaf(&values, id);
        let b = tape.param_leaf(&values, id);
        let s = tape.sum(&[a, b]).unwrap();
        let _l = tape.sq_norm(s);
        assert_eq!(tape.sites(id).len(), 2);
        let grads = tape.backward(1.0).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[8.0]);
    }

    #[test]
    fn cplx_matmul_matches_dense_complex_product() {
        let mut rng = seeded_rng(5);
        for &(n, m, l) in &[(1usize, 1usize, 1usize), (2, 3, 2), (4, 4, 8)] {
            let a = draw_cn_vec(&mut rng, n * m, 1.0);
            let x = draw_cn_vec(&mut rng, m * l, 1.0);
            let a_mat = CMat::from_col_major(n, m, a.clone()).unwrap();
            let x_mat = CMat::from_col_major(m, l, x.clone()).unwrap();
            let expected = pack_split(a_mat.matmul(&x_mat).unwrap().as_vec());

            let mut reg = ParamRegistry::new();
            let packed_x = pack_split(&x);
            let id = reg.alloc("pilot", packed_x.len());
            let mut tape = Tape::new();
            let input = tape.constant(&pack_split(&a));
            let out = tape.cplx_matmul(input, &packed_x, id, n, m, l).unwrap();
            let got = tape.value(out);
            let err: f64 = got
                .iter()
                .zip(&expected)
                .map(|(g, e)| (g - e) * (g - e))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-12, "forward mismatch {err} at ({n},{m},{l})");
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_mixed_graph() {
        // Complex product feeding a two-layer network, checked end to end.
        let mut rng = seeded_rng(1234);
        let (n, m, l) = (2usize, 2usize, 2usize);
        let mut reg = ParamRegistry::new();
        let mut pilot = pack_split(&draw_cn_vec(&mut rng, m * l, 1.0));
        let pilot_id = reg.alloc("pilot", pilot.len());
        let mut layer1 =
            DenseLayer::glorot(2 * n * l, 6, Activation::Relu, &mut rng, &mut reg, "l1");
        let mut layer2 = DenseLayer::glorot(6, 3, Activation::Identity, &mut rng, &mut reg, "l2");
        let input = pack_split(&draw_cn_vec(&mut rng, n * m, 1.0));
        let target = vec![0.3, -0.2, 0.5];

        let run = |pilot: &[f64], l1: &DenseLayer, l2: &DenseLayer| -> f64 {
            let mut tape = Tape::new();
            let a = tape.constant(&input);
            let prod = tape.cplx_matmul(a, pilot, pilot_id, n, m, l).unwrap();
            let h = tape.forward_dense(l1, prod).unwrap();
            let o = tape.forward_dense(l2, h).unwrap();
            let t = tape.constant(&target);
            let loss = tape.sq_diff(o, t).unwrap();
            tape.value(loss)[0]
        };

        let mut tape = Tape::new();
        let a = tape.constant(&input);
        let prod = tape.cplx_matmul(a, &pilot, pilot_id, n, m, l).unwrap();
        let h = tape.forward_dense(&layer1, prod).unwrap();
        let o = tape.forward_dense(&layer2, h).unwrap();
        let t = tape.constant(&target);
        let _loss = tape.sq_diff(o, t).unwrap();
        let grads = tape.backward(1.0).unwrap();
        drop(tape);

        let eps = 1e-6;
        let check = |analytic: &[f64], perturb: &mut dyn FnMut(usize, f64) -> f64| {
            for (i, a) in analytic.iter().enumerate() {
                let up = perturb(i, eps);
                let down = perturb(i, -2.0 * eps);
                perturb(i, eps);
                let fd = (up - down) / (2.0 * eps);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "entry {i}: analytic {a} vs fd {fd}"
                );
            }
        };

        let ga = grads.get(pilot_id).unwrap().to_vec();
        check(&ga, &mut |i, d| {
            pilot[i] += d;
            run(&pilot, &layer1, &layer2)
        });
        let gw = grads.get(layer1.weight_id).unwrap().to_vec();
        check(&gw, &mut |i, d| {
            layer1.weight[i] += d;
            run(&pilot, &layer1, &layer2)
        });
        let gb = grads.get(layer2.bias_id).unwrap().to_vec();
        check(&gb, &mut |i, d| {
            layer2.bias[i] += d;
            run(&pilot, &layer1, &layer2)
        });
    }

    #[test]
    fn sgd_step_applies_learning_rate() {
        let mut v = vec![1.0, -2.0];
        sgd_step(&mut v, &[0.5, -1.0], 0.1, "p").unwrap();
        assert_eq!(v, vec![0.95, -1.9]);
    }

    #[test]
    fn sgd_step_zero_rate_is_bit_identical() {
        let mut v = vec![1.0, -2.0, 0.0, -0.0];
        let before = v.clone();
        sgd_step(&mut v, &[5.0, 1e300, -3.0, 7.0], 0.0, "p").unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            before.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn sgd_step_rejects_nan_gradient() {
        let mut v = vec![1.0];
        match sgd_step(&mut v, &[f64::NAN], 0.1, "layer0.weight") {
            Err(Error::NonFinite { param, .. }) => assert_eq!(param, "layer0.weight"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn glorot_init_respects_bounds_and_zero_bias() {
        let mut reg = ParamRegistry::new();
        let mut rng = seeded_rng(2);
        let layer = DenseLayer::glorot(64, 60, Activation::Relu, &mut rng, &mut reg, "h");
        let bound = (6.0 / 124.0f64).sqrt();
        assert!(layer.weight.iter().all(|w| w.abs() <= bound));
        assert!(layer.bias.iter().all(|b| *b == 0.0));
        assert!(layer.weight.iter().any(|w| w.abs() > bound * 0.5));
    }

    #[test]
    fn backward_is_deterministic_bitwise() {
        let mut rng = seeded_rng(3);
        let mut reg = ParamRegistry::new();
        let layer = DenseLayer::glorot(4, 4, Activation::Relu, &mut rng, &mut reg, "h");
        let input: Vec<f64> = (0..4).map(|i| (i as f64) - 1.5).collect();
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(&input);
            let y = tape.forward_dense(&layer, x).unwrap();
            let _l = tape.sq_norm(y);
            let g = tape.backward(0.5).unwrap();
            g.get(layer.weight_id).unwrap().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unpack_split_is_consistent_with_cplx_matmul_layout() {
        // The packed product of unit vectors reads back as the matrix column.
        let mut reg = ParamRegistry::new();
        let x = vec![c64(1.0, 2.0), c64(-0.5, 0.25)];
        let packed = pack_split(&x);
        let id = reg.alloc("x", packed.len());
        let mut tape = Tape::new();
        let e = tape.constant(&[1.0, 0.0]);
        let out = tape.cplx_matmul(e, &packed, id, 1, 1, 2).unwrap();
        let got = unpack_split(tape.value(out));
        assert_eq!(got, x);
    }

    fn c64(re: f64, im: f64) -> crate::cmat::C64 {
        crate::cmat::C64::new(re, im)
    }
}
