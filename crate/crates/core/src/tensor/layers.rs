use rand::Rng;

use super::{Grads, Tape, Tensor, Var};
use crate::error::Result;

/// 1-D convolution with "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// `[out, in, kernel]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// A layer's parameters as recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    weight: Var,
    bias: Var,
    dilation: usize,
}

impl Conv1d {
    /// Weights and biases drawn uniformly from `±sqrt(1 / (in · k))`.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / (in_channels * kernel_size) as f64).sqrt();
        let weight = Tensor::from_fn(vec![out_channels, in_channels, kernel_size], |_| {
            rng.gen_range(-bound..bound)
        })
        .trainable();
        let bias = Tensor::from_fn(vec![out_channels], |_| rng.gen_range(-bound..bound)).trainable();
        Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            weight,
            bias,
        }
    }

    /// Records the parameters; frozen layers record them as constants.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> BoundConv {
        let (weight, bias) = if trainable {
            (tape.leaf(&self.weight), tape.leaf(&self.bias))
        } else {
            (tape.constant(&self.weight), tape.constant(&self.bias))
        };
        BoundConv {
            weight,
            bias,
            dilation: self.dilation,
        }
    }

    pub fn accumulate(&mut self, grads: &Grads, bound: &BoundConv) {
        grads.accumulate(bound.weight, &mut self.weight);
        grads.accumulate(bound.bias, &mut self.bias);
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

impl BoundConv {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.conv1d(x, self.weight, self.bias, self.dilation)
    }
}
