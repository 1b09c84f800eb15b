use std::borrow::Cow;

use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, dims: ConvDims },
    AvgPool { x: Var, window: usize },
    Upsample { x: Var, factor: usize },
    Relu(Var),
    Sigmoid(Var),
    Mse { a: Var, b: Var },
    Sum(Var),
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// Leaves borrow their tensors, so parameters are not copied. A tape is
/// single-use: [`Tape::backward`] consumes it.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    exec: Execution,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::with_execution(Execution::default())
    }

    pub fn with_execution(exec: Execution) -> Self {
        Self {
            nodes: Vec::new(),
            exec,
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Borrowed leaf; trainable iff the tensor is.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, t.requires_grad)
    }

    /// Borrowed leaf that never receives gradient.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, false)
    }

    /// Owned leaf; trainable iff the tensor is.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Copies a recorded value out as a detached tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("recorded shapes are consistent")
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let dims = ConvDims::check(self.shape(x), self.shape(w), self.shape(b), dilation)?;
        let y = kernels::conv_forward(dims, self.value(x), self.value(w), self.value(b), self.exec);
        let rg = self.grad_flag(&[x, w, b]);
        Ok(self.push(
            vec![dims.batch, dims.c_out, dims.len],
            Cow::Owned(y),
            Op::Conv { x, w, b, dims },
            rg,
        ))
    }

    pub fn avgpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (b, c, l) = dims3(self.shape(x))?;
        if window == 0 || l % window != 0 {
            return Err(Error::Shape(format!(
                "pool window {window} does not divide length {l}"
            )));
        }
        if window == 1 {
            return Ok(x);
        }
        let y = kernels::pool_forward(self.value(x), b * c, l, window);
        let rg = self.grad_flag(&[x]);
        Ok(self.push(vec![b, c, l / window], Cow::Owned(y), Op::AvgPool { x, window }, rg))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (b, c, l) = dims3(self.shape(x))?;
        if factor == 0 {
            return Err(Error::Shape("upsampling factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(x);
        }
        let y = kernels::upsample_forward(self.value(x), factor);
        let rg = self.grad_flag(&[x]);
        Ok(self.push(vec![b, c, l * factor], Cow::Owned(y), Op::Upsample { x, factor }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.grad_flag(&[x]);
        self.push(shape, Cow::Owned(y), Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.grad_flag(&[x]);
        self.push(shape, Cow::Owned(y), Op::Sigmoid(x), rg)
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mse operands {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(vec![1], Cow::Owned(vec![s / n]), Op::Mse { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.grad_flag(&[x]);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Grads> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        if !ln.requires_grad {
            return Err(Error::Detached);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv { x, w, b, dims } => {
                    if wants(x) {
                        let gx = kernels::conv_backward_input(dims, &g, self.value(w), self.exec);
                        add_into(&mut grads[x.0], gx);
                    }
                    if wants(w) {
                        let gw = kernels::conv_backward_weight(dims, &g, self.value(x), self.exec);
                        add_into(&mut grads[w.0], gw);
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], kernels::conv_backward_bias(dims, &g));
                    }
                }
                Op::AvgPool { x, window } => {
                    let (b, c, l) = dims3(self.shape(x))?;
                    add_into(&mut grads[x.0], kernels::pool_backward(&g, b * c, l, window));
                }
                Op::Upsample { x, factor } => {
                    add_into(&mut grads[x.0], kernels::upsample_backward(&g, factor));
                }
                Op::Relu(x) => {
                    let gx = g
                        .iter()
                        .zip(self.value(x))
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    add_into(&mut grads[x.0], gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g
                        .iter()
                        .zip(node.value.iter())
                        .map(|(gv, &y)| gv * y * (1.0 - y))
                        .collect();
                    add_into(&mut grads[x.0], gx);
                }
                Op::Mse { a, b } => {
                    let n = self.value(a).len().max(1) as f64;
                    let scale = 2.0 * g[0] / n;
                    let diff: Vec<f64> = self
                        .value(a)
                        .iter()
                        .zip(self.value(b))
                        .map(|(x, y)| scale * (x - y))
                        .collect();
                    if wants(b) {
                        add_into(&mut grads[b.0], diff.iter().map(|d| -d).collect());
                    }
                    if wants(a) {
                        add_into(&mut grads[a.0], diff);
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(x).len();
                    add_into(&mut grads[x.0], vec![g[0]; n]);
                }
            }
        }

        // keep only leaf gradients
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(n.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Grads { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `t`'s accumulator.
    pub fn accumulate(&self, v: Var, t: &mut Tensor) {
        if let Some(g) = self.get(v) {
            t.accumulate_grad(g);
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn dims3(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c, l] => Ok((b, c, l)),
        _ => Err(Error::Shape(format!(
            "expected [batch, channels, length], got {shape:?}"
        ))),
    }
}

#[inline]
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
    fn sum_gradient_is_ones() {
        let x = Tensor::from_fn(vec![2, 3], |i| i as f64).trainable();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sum(v);
        assert_eq!(tape.value(s), &[15.0]);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn detached_loss_is_rejected() {
        let x = Tensor::from_fn(vec![1, 1, 3], |i| i as f64);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sum(v);
        assert!(matches!(tape.backward(s), Err(Error::Detached)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::from_fn(vec![1, 1, 3], |i| i as f64).trainable();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let r = tape.relu(v);
        assert!(matches!(tape.backward(r), Err(Error::Shape(_))));
    }

    #[test]
    fn activations() {
        let x = Tensor::new(vec![1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.input(x);
        let r = tape.relu(v);
        let s = tape.sigmoid(v);
        assert_eq!(tape.value(r), &[0.0, 0.0, 2.0]);
        assert_eq!(tape.value(s)[1], 0.5);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn mse_values_and_shape_errors() {
        let a = Tensor::zeros(vec![1, 1, 2]);
        let b = Tensor::from_fn(vec![1, 1, 2], |_| 1.0);
        let c = Tensor::zeros(vec![1, 2, 1]);
        let mut tape = Tape::new();
        let (va, vb, vc) = (tape.leaf(&a), tape.leaf(&b), tape.leaf(&c));
        let m = tape.mse(va, vb).unwrap();
        assert_eq!(tape.value(m), &[1.0]);
        let z = tape.mse(va, va).unwrap();
        assert_eq!(tape.value(z), &[0.0]);
        assert!(tape.mse(va, vc).is_err());
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut w = Tensor::from_fn(vec![2, 1, 3], |i| 0.1 * i as f64 - 0.2).trainable();
        let b = Tensor::zeros(vec![2]);
        let x = Tensor::from_fn(vec![1, 1, 6], |i| (i as f64).cos());
        for _ in 0..2 {
            let mut tape = Tape::new();
            let (vx, vw, vb) = (tape.constant(&x), tape.leaf(&w), tape.constant(&b));
            let y = tape.conv1d(vx, vw, vb, 2).unwrap();
            let s = tape.sum(y);
            let g = tape.backward(s).unwrap();
            assert!(g.get(vb).is_none());
            g.accumulate(vw, &mut w);
        }
        let twice = w.grad().unwrap().to_vec();
        w.zero_grad();
        let mut tape = Tape::new();
        let (vx, vw, vb) = (tape.constant(&x), tape.leaf(&w), tape.constant(&b));
        let y = tape.conv1d(vx, vw, vb, 2).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap().accumulate(vw, &mut w);
        let once = w.grad().unwrap();
        for (a, b) in twice.iter().zip(once) {
            assert_eq!(*a, 2.0 * b);
        }
    }
}
