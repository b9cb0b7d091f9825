use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{config_err, shape_err};
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: usize, weight: usize, bias: usize, geom: ConvGeom },
    ConvT2d { input: usize, weight: usize, bias: usize, geom: ConvGeom },
    MaxPool2 { input: usize, argmax: Vec<u32> },
    Relu { input: usize },
    Sigmoid { input: usize },
    Concat { inputs: Vec<usize>, channels: Vec<usize> },
    Sum { input: usize },
    Mean { input: usize },
    Square { input: usize },
    WeightedSum { input: usize, weights: Tensor<T> },
    ClippedBce { input: usize, target: Tensor<T>, rho: f64, mu: f64 },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Reverse-mode tape. Values are appended in execution order, so the node
/// list is always a valid topological order; [`Tape::backward`] walks it in
/// reverse and consumes the tape.
#[derive(Debug)]
pub struct Tape<T = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients<T = f32> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient with respect to a leaf created by [`Tape::leaf`].
    pub fn leaf(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var.index)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.leaves.is_empty()
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        for id in ids {
            store.accumulate(id, &self.params[&id])?;
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
            param: None,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::State("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    fn node_value(&self, i: usize) -> &Tensor<T> {
        self.nodes[i]
            .value
            .as_ref()
            .expect("forward values are kept until backward")
    }

    /// Which side of every non-differentiable switch the recorded values sit
    /// on: ReLU signs, pooling argmaxes and loss clamps. Two evaluations with
    /// equal patterns lie in the same smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    out.extend(self.node_value(*input).data().iter().map(|&v| u32::from(v > T::ZERO)));
                }
                Op::MaxPool2 { argmax, .. } => out.extend_from_slice(argmax),
                Op::ClippedBce { input, rho, mu, .. } => {
                    out.extend(self.node_value(*input).data().iter().map(|v| {
                        let p = v.to_f64();
                        u32::from(p < *rho) + 2 * u32::from(p > *mu)
                    }));
                }
                _ => {}
            }
        }
        out
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.node_value(self.idx(v).expect("foreign variable"))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf that never receives a gradient (images, labels).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Records a parameter as a leaf; its gradient is reported under `id`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(Op::Leaf, store.get(id).value.clone(), true);
        self.nodes[v.index].param = Some(id);
        v
    }

    fn any_grad(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn conv_geom(&self, x: usize, w: usize, b: usize, what: &str) -> Result<ConvGeom> {
        let [n, h, wd, c] = self.node_value(x).dims4()?;
        let ws = self.node_value(w).shape();
        let &[kh, kw, cin, cout] = ws else {
            return Err(shape_err!("{what} weight must be rank 4, got {:?}", ws));
        };
        if kh != kw {
            return Err(config_err!("{what} kernel must be square, got {kh}x{kw}"));
        }
        if kh % 2 == 0 {
            return Err(config_err!("{what} kernel must be odd, got {kh}"));
        }
        if cin != c {
            return Err(shape_err!(
                "{what} expects {cin} input channels, input has {c}"
            ));
        }
        if self.node_value(b).shape() != [cout] {
            return Err(shape_err!(
                "{what} bias must have shape [{cout}], got {:?}",
                self.node_value(b).shape()
            ));
        }
        Ok(ConvGeom { n, h, w: wd, cin, cout, k: kh })
    }

    /// Stride-1 convolution with zero SAME padding of `(k - 1) / 2`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let geom = self.conv_geom(xi, wi, bi, "conv2d")?;
        let out = kernels::conv2d_forward(
            geom,
            self.node_value(xi).data(),
            self.node_value(wi).data(),
            self.node_value(bi).data(),
        );
        let value = Tensor::new(vec![geom.n, geom.h, geom.w, geom.cout], out)?;
        let rg = self.any_grad(&[xi, wi, bi]);
        Ok(self.push(Op::Conv2d { input: xi, weight: wi, bias: bi, geom }, value, rg))
    }

    /// Channel-preserving 3x3 transposed convolution with stride 2; output
    /// is exactly twice the input height and width.
    pub fn conv_transpose2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let geom = self.conv_geom(xi, wi, bi, "conv_transpose2d")?;
        if geom.k != 3 {
            return Err(config_err!(
                "conv_transpose2d kernel must be 3x3, got {0}x{0}",
                geom.k
            ));
        }
        if geom.cin != geom.cout {
            return Err(config_err!(
                "conv_transpose2d must preserve channels, got {} -> {}",
                geom.cin,
                geom.cout
            ));
        }
        let out = kernels::conv_t2d_forward(
            geom,
            self.node_value(xi).data(),
            self.node_value(wi).data(),
            self.node_value(bi).data(),
        );
        let value = Tensor::new(vec![geom.n, 2 * geom.h, 2 * geom.w, geom.cout], out)?;
        let rg = self.any_grad(&[xi, wi, bi]);
        Ok(self.push(Op::ConvT2d { input: xi, weight: wi, bias: bi, geom }, value, rg))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let dims = self.node_value(xi).dims4()?;
        let [n, h, w, c] = dims;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("maxpool2 needs even height and width, got {h}x{w}"));
        }
        let (out, argmax) = kernels::maxpool2_forward(dims, self.node_value(xi).data());
        let value = Tensor::new(vec![n, h / 2, w / 2, c], out)?;
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::MaxPool2 { input: xi, argmax }, value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self
            .node_value(xi)
            .map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::Relu { input: xi }, value, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.node_value(xi).map(kernels::sigmoid);
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::Sigmoid { input: xi }, value, rg))
    }

    /// Concatenates along the channel axis, blocks in argument order.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| shape_err!("concat needs at least one input"))?;
        let idxs = xs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let [n, h, w, _] = self.node_value(self.idx(first)?).dims4()?;
        let mut channels = Vec::with_capacity(idxs.len());
        for &i in &idxs {
            let [tn, th, tw, tc] = self.node_value(i).dims4()?;
            if (tn, th, tw) != (n, h, w) {
                return Err(shape_err!(
                    "concat operands disagree: {:?} vs {:?}",
                    [n, h, w],
                    [tn, th, tw]
                ));
            }
            channels.push(tc);
        }
        let parts: Vec<(&[T], usize)> = idxs
            .iter()
            .zip(&channels)
            .map(|(&i, &c)| (self.node_value(i).data(), c))
            .collect();
        let out = kernels::concat_channels(&parts, n * h * w);
        let value = Tensor::new(vec![n, h, w, channels.iter().sum()], out)?;
        let rg = self.any_grad(&idxs);
        Ok(self.push(Op::Concat { inputs: idxs, channels }, value, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.node_value(xi).data().iter().copied().sum();
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::Sum { input: xi }, Tensor::scalar(s), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.node_value(xi);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_f64(t.len().max(1) as f64);
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::Mean { input: xi }, Tensor::scalar(m), rg))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.node_value(xi).map(|v| v * v);
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::Square { input: xi }, value, rg))
    }

    /// `sum(x * weights)` against a constant tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let xi = self.idx(x)?;
        let t = self.node_value(xi);
        if t.shape() != weights.shape() {
            return Err(shape_err!(
                "weighted_sum weights {:?} do not match input {:?}",
                weights.shape(),
                t.shape()
            ));
        }
        let s = t.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Op::WeightedSum { input: xi, weights }, Tensor::scalar(s), rg))
    }

    /// Mean binary cross-entropy with predictions clamped to `[rho, mu]`.
    ///
    /// The log terms are evaluated in `f64`: a clip ceiling of `1 - 1e-15`
    /// is not representable in `f32`. Clamped elements pass no gradient.
    pub fn clipped_bce(&mut self, z: Var, target: Tensor<T>, rho: f64, mu: f64) -> Result<Var> {
        let zi = self.idx(z)?;
        let pred = self.node_value(zi);
        if pred.shape() != target.shape() {
            return Err(shape_err!(
                "loss target {:?} does not match prediction {:?}",
                target.shape(),
                pred.shape()
            ));
        }
        let total: f64 = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = p.to_f64().clamp(rho, mu);
                let y = y.to_f64();
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let loss = total / pred.len().max(1) as f64;
        let rg = self.nodes[zi].requires_grad;
        Ok(self.push(
            Op::ClippedBce { input: zi, target, rho, mu },
            Tensor::scalar(T::from_f64(loss)),
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, consuming the tape. Intermediate
    /// values and gradients are released as soon as they are no longer needed.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward op".into()));
        }
        let li = self.idx(loss)?;
        if self.node_value(li).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node_value(li).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![T::ONE]);
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else {
                self.nodes[i].value = None;
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.nodes[i].value = None;
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match op {
                Op::Leaf => {
                    let shape = self.node_value(i).shape().to_vec();
                    let t = Tensor::new(shape, g)?;
                    match self.nodes[i].param {
                        Some(pid) => {
                            out.params.insert(pid, t);
                        }
                        None => {
                            out.leaves.insert(i, t);
                        }
                    }
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    if self.nodes[input].requires_grad {
                        let gi = kernels::conv2d_backward_input(geom, &g, self.node_value(weight).data());
                        add_grad(&mut grads[input], gi);
                    }
                    if self.nodes[weight].requires_grad {
                        let gw = kernels::conv2d_backward_weight(geom, self.node_value(input).data(), &g);
                        add_grad(&mut grads[weight], gw);
                    }
                    if self.nodes[bias].requires_grad {
                        add_grad(&mut grads[bias], kernels::channel_sum(&g, geom.cout));
                    }
                }
                Op::ConvT2d { input, weight, bias, geom } => {
                    if self.nodes[input].requires_grad {
                        let gi = kernels::conv_t2d_backward_input(geom, &g, self.node_value(weight).data());
                        add_grad(&mut grads[input], gi);
                    }
                    if self.nodes[weight].requires_grad {
                        let gw = kernels::conv_t2d_backward_weight(geom, self.node_value(input).data(), &g);
                        add_grad(&mut grads[weight], gw);
                    }
                    if self.nodes[bias].requires_grad {
                        add_grad(&mut grads[bias], kernels::channel_sum(&g, geom.cout));
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut gi = vec![T::ZERO; self.node_value(input).len()];
                    for (&a, &gv) in argmax.iter().zip(&g) {
                        gi[a as usize] += gv;
                    }
                    add_grad(&mut grads[input], gi);
                }
                Op::Relu { input } => {
                    let gi = self
                        .node_value(input)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gv)| if x > T::ZERO { gv } else { T::ZERO })
                        .collect();
                    add_grad(&mut grads[input], gi);
                }
                Op::Sigmoid { input } => {
                    let gi = self
                        .node_value(i)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&s, &gv)| gv * s * (T::ONE - s))
                        .collect();
                    add_grad(&mut grads[input], gi);
                }
                Op::Concat { inputs, channels } => {
                    let total: usize = channels.iter().sum();
                    let positions = g.len() / total.max(1);
                    let mut offset = 0;
                    for (&inp, &c) in inputs.iter().zip(&channels) {
                        if self.nodes[inp].requires_grad {
                            let mut gi = Vec::with_capacity(positions * c);
                            for pos in 0..positions {
                                let base = pos * total + offset;
                                gi.extend_from_slice(&g[base..base + c]);
                            }
                            add_grad(&mut grads[inp], gi);
                        }
                        offset += c;
                    }
                }
                Op::Sum { input } => {
                    let n = self.node_value(input).len();
                    add_grad(&mut grads[input], vec![g[0]; n]);
                }
                Op::Mean { input } => {
                    let n = self.node_value(input).len();
                    let v = g[0] / T::from_f64(n.max(1) as f64);
                    add_grad(&mut grads[input], vec![v; n]);
                }
                Op::Square { input } => {
                    let two = T::from_f64(2.0);
                    let gi = self
                        .node_value(input)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gv)| two * x * gv)
                        .collect();
                    add_grad(&mut grads[input], gi);
                }
                Op::WeightedSum { input, weights } => {
                    let gi = weights.data().iter().map(|&wv| wv * g[0]).collect();
                    add_grad(&mut grads[input], gi);
                }
                Op::ClippedBce { input, target, rho, mu } => {
                    let pred = self.node_value(input);
                    let scale = g[0].to_f64() / pred.len().max(1) as f64;
                    let gi = pred
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &y)| {
                            let p = p.to_f64();
                            if p <= rho || p >= mu {
                                return T::ZERO;
                            }
                            let y = y.to_f64();
                            T::from_f64(scale * (-y / p + (1.0 - y) / (1.0 - p)))
                        })
                        .collect();
                    add_grad(&mut grads[input], gi);
                }
            }
            self.nodes[i].value = None;
        }
        Ok(out)
    }
}

fn add_grad<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![1, 4, 4, 1], |i| i as f64 * 0.5 - 3.0));
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let w = tape.constant(t(&[3, 3, 1, 1], &w));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn ones_kernel_on_ones_grid() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 2, 2, 1], 1.0));
        let w = tape.constant(Tensor::full(vec![3, 3, 1, 1], 1.0));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 4, 4, 2]));
        let w = tape.constant(Tensor::zeros(vec![3, 3, 1, 1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        assert!(matches!(tape.conv2d(x, w, b), Err(Error::Shape(_))));
        let w_even = tape.constant(Tensor::zeros(vec![2, 2, 2, 1]));
        assert!(matches!(tape.conv2d(x, w_even, b), Err(Error::Config(_))));
    }

    #[test]
    fn conv_preserves_spatial_size_for_every_kernel() {
        for k in [3, 5, 7] {
            for (h, w) in [(1, 1), (2, 3), (5, 4), (9, 9)] {
                let mut tape = Tape::<f32>::new();
                let x = tape.constant(Tensor::full(vec![2, h, w, 3], 0.5));
                let wt = tape.constant(Tensor::full(vec![k, k, 3, 4], 0.1));
                let b = tape.constant(Tensor::zeros(vec![4]));
                let y = tape.conv2d(x, wt, b).unwrap();
                assert_eq!(tape.shape(y), &[2, h, w, 4]);
            }
        }
    }

    #[test]
    fn maxpool_basic_and_odd_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let odd = tape.constant(Tensor::zeros(vec![1, 3, 2, 1]));
        assert!(matches!(tape.maxpool2(odd), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_tie_goes_to_first_element() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(vec![1, 2, 2, 1], 7.0));
        let y = tape.maxpool2(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.leaf(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn transposed_conv_doubles_and_rejects_channel_change() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(vec![2, 3, 5, 4], 1.0));
        let w = tape.constant(Tensor::zeros(vec![3, 3, 4, 4]));
        let b = tape.constant(Tensor::zeros(vec![4]));
        let y = tape.conv_transpose2d(x, w, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 6, 10, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let w_bad = tape.constant(Tensor::zeros(vec![3, 3, 4, 2]));
        let b_bad = tape.constant(Tensor::zeros(vec![2]));
        assert!(matches!(tape.conv_transpose2d(x, w_bad, b_bad), Err(Error::Config(_))));
        let w5 = tape.constant(Tensor::zeros(vec![5, 5, 4, 4]));
        assert!(matches!(tape.conv_transpose2d(x, w5, b), Err(Error::Config(_))));
    }

    #[test]
    fn activations() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s).data()[1], 0.5);
        for &v in tape.value(s).data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn concat_orders_blocks() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(vec![1, 1, 2, 2], 1.0));
        let b = tape.constant(Tensor::full(vec![1, 1, 2, 1], 2.0));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
        let single = tape.concat(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));
        let bad = tape.constant(Tensor::zeros(vec![1, 2, 2, 1]));
        assert!(tape.concat(&[a, bad]).is_err());
    }

    #[test]
    fn relu_sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![1, 2, 3, 1], |i| 0.5 + i as f64));
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.leaf(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_state_errors() {
        let tape = Tape::<f64>::new();
        let mut other = Tape::<f64>::new();
        let v = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(v), Err(Error::State(_))));

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(tape.backward(x), Err(Error::State(_))));

        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(v), Err(Error::State(_))));
    }
}
