//! Forward and backward kernels on raw row-major buffers.

use super::Tensor;
use crate::error::{Error, Result};
use crate::exec::{for_each_chunk_mut, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvDims {
    pub fn check(x: &[usize], w: &[usize], b: &[usize], dilation: usize) -> Result<Self> {
        let (batch, c_in, len) = match *x {
            [a, b, c] => (a, b, c),
            _ => return Err(Error::Shape(format!("conv input must be rank 3, got {x:?}"))),
        };
        let (c_out, w_in, kernel) = match *w {
            [a, b, c] => (a, b, c),
            _ => return Err(Error::Shape(format!("conv weight must be rank 3, got {w:?}"))),
        };
        if w_in != c_in {
            return Err(Error::Shape(format!(
                "conv expects {w_in} input channels, got {c_in}"
            )));
        }
        if b != [c_out] {
            return Err(Error::Shape(format!("conv bias must be [{c_out}], got {b:?}")));
        }
        if kernel % 2 == 0 || dilation == 0 {
            return Err(Error::Shape(format!(
                "same padding needs an odd kernel and dilation >= 1 (k={kernel}, d={dilation})"
            )));
        }
        Ok(Self {
            batch,
            c_in,
            c_out,
            len,
            kernel,
            dilation,
        })
    }

    /// Time offset of tap `j` and the output range `[lo, hi)` where the
    /// shifted input index stays in bounds.
    #[inline]
    fn tap(&self, j: usize) -> (isize, usize, usize) {
        let off = (j as isize - (self.kernel / 2) as isize) * self.dilation as isize;
        let lo = (-off).max(0) as usize;
        let hi = (self.len as isize - off.max(0)).max(0) as usize;
        (off, lo.min(self.len), hi.max(lo.min(self.len)))
    }
}

pub(crate) fn conv_forward(d: ConvDims, x: &[f64], w: &[f64], b: &[f64], exec: Execution) -> Vec<f64> {
    let l = d.len;
    let mut y = vec![0.0; d.batch * d.c_out * l];
    for_each_chunk_mut(&mut y, l, exec, |row, out| {
        let (bi, o) = (row / d.c_out, row % d.c_out);
        out.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..d.c_in {
            let xr = &x[(bi * d.c_in + i) * l..][..l];
            let wr = &w[(o * d.c_in + i) * d.kernel..][..d.kernel];
            for (j, &wv) in wr.iter().enumerate() {
                let (off, lo, hi) = d.tap(j);
                if lo >= hi {
                    continue;
                }
                let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (yv, xv) in out[lo..hi].iter_mut().zip(src) {
                    *yv += wv * xv;
                }
            }
        }
    });
    y
}

pub(crate) fn conv_backward_input(d: ConvDims, gy: &[f64], w: &[f64], exec: Execution) -> Vec<f64> {
    let l = d.len;
    let mut gx = vec![0.0; d.batch * d.c_in * l];
    for_each_chunk_mut(&mut gx, l, exec, |row, out| {
        let (bi, i) = (row / d.c_in, row % d.c_in);
        for o in 0..d.c_out {
            let gr = &gy[(bi * d.c_out + o) * l..][..l];
            let wr = &w[(o * d.c_in + i) * d.kernel..][..d.kernel];
            for (j, &wv) in wr.iter().enumerate() {
                let (off, lo, hi) = d.tap(j);
                if lo >= hi {
                    continue;
                }
                let dst = &mut out[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (gxv, gyv) in dst.iter_mut().zip(&gr[lo..hi]) {
                    *gxv += wv * gyv;
                }
            }
        }
    });
    gx
}

pub(crate) fn conv_backward_weight(d: ConvDims, gy: &[f64], x: &[f64], exec: Execution) -> Vec<f64> {
    let l = d.len;
    let per_out = d.c_in * d.kernel;
    let mut gw = vec![0.0; d.c_out * per_out];
    for_each_chunk_mut(&mut gw, per_out, exec, |o, out| {
        for bi in 0..d.batch {
            let gr = &gy[(bi * d.c_out + o) * l..][..l];
            for i in 0..d.c_in {
                let xr = &x[(bi * d.c_in + i) * l..][..l];
                for j in 0..d.kernel {
                    let (off, lo, hi) = d.tap(j);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    let dot: f64 = gr[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum();
                    out[i * d.kernel + j] += dot;
                }
            }
        }
    });
    gw
}

pub(crate) fn conv_backward_bias(d: ConvDims, gy: &[f64]) -> Vec<f64> {
    let l = d.len;
    let mut gb = vec![0.0; d.c_out];
    for bi in 0..d.batch {
        for (o, g) in gb.iter_mut().enumerate() {
            *g += gy[(bi * d.c_out + o) * l..][..l].iter().sum::<f64>();
        }
    }
    gb
}

pub(crate) fn pool_forward(x: &[f64], rows: usize, len: usize, window: usize) -> Vec<f64> {
    let out_len = len / window;
    let inv = 1.0 / window as f64;
    let mut y = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let xr = &x[r * len..][..len];
        y.extend(xr.chunks(window).map(|c| c.iter().sum::<f64>() * inv));
    }
    y
}

pub(crate) fn pool_backward(gy: &[f64], rows: usize, len: usize, window: usize) -> Vec<f64> {
    let out_len = len / window;
    let inv = 1.0 / window as f64;
    let mut gx = vec![0.0; rows * len];
    for r in 0..rows {
        for t in 0..len {
            gx[r * len + t] = gy[r * out_len + t / window] * inv;
        }
    }
    gx
}

pub(crate) fn upsample_forward(x: &[f64], factor: usize) -> Vec<f64> {
    x.iter()
        .flat_map(|&v| std::iter::repeat(v).take(factor))
        .collect()
}

pub(crate) fn upsample_backward(gy: &[f64], factor: usize) -> Vec<f64> {
    gy.chunks(factor).map(|c| c.iter().sum()).collect()
}

/// Dilated "same" convolution without recording a graph.
pub fn conv1d(x: &Tensor, weight: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    let d = ConvDims::check(x.shape(), weight.shape(), bias.shape(), dilation)?;
    let y = conv_forward(d, x.data(), weight.data(), bias.data(), Execution::default());
    Tensor::new(vec![d.batch, d.c_out, d.len], y)
}

pub fn avgpool1d(x: &Tensor, window: usize) -> Result<Tensor> {
    let (b, c, l) = x.dims3()?;
    if window == 0 || l % window != 0 {
        return Err(Error::Shape(format!(
            "pool window {window} does not divide length {l}"
        )));
    }
    Tensor::new(vec![b, c, l / window], pool_forward(x.data(), b * c, l, window))
}

pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (b, c, l) = x.dims3()?;
    if factor == 0 {
        return Err(Error::Shape("upsampling factor must be >= 1".into()));
    }
    Tensor::new(vec![b, c, l * factor], upsample_forward(x.data(), factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity() {
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(vec![1]);
        assert_eq!(conv1d(&x, &w, &b, 1).unwrap(), x);
    }

    #[test]
    fn same_length_with_large_dilation() {
        let x = Tensor::from_fn(vec![2, 3, 250], |i| (i as f64).sin());
        let w = Tensor::from_fn(vec![4, 3, 3], |i| i as f64 * 0.1);
        let b = Tensor::zeros(vec![4]);
        assert_eq!(conv1d(&x, &w, &b, 16).unwrap().shape(), &[2, 4, 250]);
        // dilation larger than the signal: only the center tap survives
        let y = conv1d(&x, &w, &b, 400).unwrap();
        assert_eq!(y.shape(), &[2, 4, 250]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(vec![1, 2, 5]);
        let w = Tensor::zeros(vec![1, 3, 1]);
        let b = Tensor::zeros(vec![1]);
        assert!(matches!(conv1d(&x, &w, &b, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool1d(&x, 2).unwrap().data(), &[1.5, 3.5]);
        assert!(avgpool1d(&x, 3).is_err());
        let u = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(
            upsample_nearest(&u, 3).unwrap().data(),
            &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]
        );
        let c = Tensor::from_fn(vec![2, 3, 250], |_| 0.7);
        assert_eq!(avgpool1d(&c, 5).unwrap().shape(), &[2, 3, 50]);
        assert!(avgpool1d(&c, 5).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let round = upsample_nearest(&avgpool1d(&c, 5).unwrap(), 5).unwrap();
        assert_eq!(round.shape(), c.shape());
    }

    #[test]
    fn upsample_chain_reaches_full_length() {
        let mut z = Tensor::zeros(vec![1, 7, 5]);
        for f in [2, 5, 5] {
            z = upsample_nearest(&z, f).unwrap();
        }
        assert_eq!(z.shape(), &[1, 7, 250]);
    }
}
