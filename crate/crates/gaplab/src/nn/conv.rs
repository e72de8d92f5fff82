//! 2-D convolution, both dense (im2col + GEMM) and depthwise (direct loops).

use ndarray::{Array2, Array4, Axis};

use super::{normal_init, Module, Param, Rng};
use crate::error::{Error, Result};

/// A 2-D convolution over NCHW tensors.
///
/// `groups` is either 1 (dense) or equal to the channel count (depthwise).
/// Dense convolutions lower to im2col plus one matrix multiply per batch;
/// depthwise kernels use direct loops over a zero-padded copy, which is
/// faster than im2col at the small spatial sizes used here.
#[derive(Debug)]
pub struct Conv2d {
    /// Shape (out_ch, in_ch / groups, k, k).
    pub weight: Param,
    /// Shape (out_ch,).
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    in_channels: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init_std: f64,
        rng: &mut Rng,
    ) -> Self {
        let w = normal_init(&[out_channels, in_channels, kernel, kernel], init_std, rng);
        Conv2d {
            weight: Param::new(w, true),
            bias: Param::zeros(&[out_channels], false),
            stride,
            padding,
            groups: 1,
            in_channels,
        }
    }

    /// Depthwise variant: one k-by-k filter per channel.
    pub fn new_depthwise(
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init_std: f64,
        rng: &mut Rng,
    ) -> Self {
        let w = normal_init(&[channels, 1, kernel, kernel], init_std, rng);
        Conv2d {
            weight: Param::new(w, true),
            bias: Param::zeros(&[channels], false),
            stride,
            padding,
            groups: channels,
            in_channels: channels,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Output spatial size for an input of (h, w).
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = dims4(x);
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let k = self.kernel();
        if h + 2 * self.padding < k || w + 2 * self.padding < k {
            return Err(Error::Shape(format!(
                "conv kernel {k} larger than padded input {h}x{w}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_input(x)?;
        if self.groups == 1 {
            Ok(self.forward_dense(x))
        } else {
            Ok(self.forward_depthwise(x))
        }
    }

    /// Accumulates weight/bias gradients from `dy` and returns `dx`.
    /// `x` must be the same tensor passed to the matching `forward`.
    pub fn backward(&mut self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        if self.groups == 1 {
            self.backward_dense(x, dy)
        } else {
            self.backward_depthwise(x, dy)
        }
    }

    fn forward_dense(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dims4(x);
        let k = self.kernel();
        let (oh, ow) = self.out_hw(h, w);
        let oc = self.out_channels();
        let cols = im2col(x, k, self.stride, self.padding, oh, ow);
        let w_mat = self.weight_matrix();
        let mut y_mat = cols.dot(&w_mat);
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        y_mat += &bias;
        let _ = c;
        mat_to_nchw(&y_mat, n, oc, oh, ow)
    }

    fn backward_dense(&mut self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dims4(x);
        let k = self.kernel();
        let (oh, ow) = self.out_hw(h, w);
        let oc = self.out_channels();
        let cols = im2col(x, k, self.stride, self.padding, oh, ow);
        let dy_mat = nchw_to_mat(dy, n, oc, oh, ow);

        let dw_mat = cols.t().dot(&dy_mat); // (c*k*k, oc)
        {
            let wshape = self.weight.value.raw_dim();
            let mut dw = self.weight.grad.view_mut();
            for o in 0..oc {
                for ci in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let q = (ci * k + ki) * k + kj;
                            dw[[o, ci, ki, kj]] += dw_mat[[q, o]];
                        }
                    }
                }
            }
            let _ = wshape;
        }
        {
            let db = dy_mat.sum_axis(Axis(0));
            let mut bg = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            bg += &db;
        }
        let dcols = dy_mat.dot(&self.weight_matrix().t());
        // dot with a transposed rhs of inner dimension 1 can return a
        // reversed-axes array; col2im reads a flat slice, so standardize.
        let dcols = if dcols.as_slice().is_some() {
            dcols
        } else {
            dcols.as_standard_layout().into_owned()
        };
        col2im(&dcols, n, c, h, w, k, self.stride, self.padding, oh, ow)
    }

    /// Weight reshaped to (in_ch * k * k, out_ch) for the GEMM.
    fn weight_matrix(&self) -> Array2<f64> {
        let oc = self.out_channels();
        let c = self.in_channels;
        let k = self.kernel();
        let mut m = Array2::zeros((c * k * k, oc));
        let wv = self.weight.value.view();
        for o in 0..oc {
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        m[[(ci * k + ki) * k + kj, o]] = wv[[o, ci, ki, kj]];
                    }
                }
            }
        }
        m
    }

    fn forward_depthwise(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dims4(x);
        let k = self.kernel();
        let (oh, ow) = self.out_hw(h, w);
        let xp = pad4(x, self.padding);
        let pw = w + 2 * self.padding;
        let mut y = Array4::zeros((n, c, oh, ow));
        let xs = xp.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        let wv = self.weight.value.as_slice().unwrap();
        let bv = self.bias.value.as_slice().unwrap();
        let ph = h + 2 * self.padding;
        for ni in 0..n {
            for ci in 0..c {
                let xbase = (ni * c + ci) * ph * pw;
                let wbase = ci * k * k;
                let ybase = (ni * c + ci) * oh * ow;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bv[ci];
                        let r0 = i * self.stride;
                        let c0 = j * self.stride;
                        for ki in 0..k {
                            let row = xbase + (r0 + ki) * pw + c0;
                            let wrow = wbase + ki * k;
                            for kj in 0..k {
                                acc += xs[row + kj] * wv[wrow + kj];
                            }
                        }
                        ys[ybase + i * ow + j] = acc;
                    }
                }
            }
        }
        y
    }

    fn backward_depthwise(&mut self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dims4(x);
        let k = self.kernel();
        let (oh, ow) = self.out_hw(h, w);
        let xp = pad4(x, self.padding);
        let pw = w + 2 * self.padding;
        let ph = h + 2 * self.padding;
        let mut dxp = Array4::<f64>::zeros((n, c, ph, pw));
        let xs = xp.as_slice().unwrap();
        let dxs = dxp.as_slice_mut().unwrap();
        let dys = dy.as_slice().unwrap();
        let wv = self.weight.value.as_slice().unwrap();
        let dwv = self.weight.grad.as_slice_mut().unwrap();
        let dbv = self.bias.grad.as_slice_mut().unwrap();
        for ni in 0..n {
            for ci in 0..c {
                let xbase = (ni * c + ci) * ph * pw;
                let wbase = ci * k * k;
                let ybase = (ni * c + ci) * oh * ow;
                for i in 0..oh {
                    for j in 0..ow {
                        let g = dys[ybase + i * ow + j];
                        dbv[ci] += g;
                        let r0 = i * self.stride;
                        let c0 = j * self.stride;
                        for ki in 0..k {
                            let row = xbase + (r0 + ki) * pw + c0;
                            let wrow = wbase + ki * k;
                            for kj in 0..k {
                                dwv[wrow + kj] += g * xs[row + kj];
                                dxs[row + kj] += g * wv[wrow + kj];
                            }
                        }
                    }
                }
            }
        }
        unpad4(&dxp, self.padding, h, w)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub(crate) fn dims4(x: &Array4<f64>) -> (usize, usize, usize, usize) {
    let d = x.dim();
    (d.0, d.1, d.2, d.3)
}

fn pad4(x: &Array4<f64>, p: usize) -> Array4<f64> {
    if p == 0 {
        return x.clone();
    }
    let (n, c, h, w) = dims4(x);
    let mut out = Array4::zeros((n, c, h + 2 * p, w + 2 * p));
    out.slice_mut(ndarray::s![.., .., p..p + h, p..p + w]).assign(x);
    out
}

fn unpad4(x: &Array4<f64>, p: usize, h: usize, w: usize) -> Array4<f64> {
    if p == 0 {
        return x.clone();
    }
    x.slice(ndarray::s![.., .., p..p + h, p..p + w]).to_owned()
}

/// Gathers sliding windows into a (n*oh*ow, c*k*k) matrix.
fn im2col(x: &Array4<f64>, k: usize, s: usize, p: usize, oh: usize, ow: usize) -> Array2<f64> {
    let (n, c, h, w) = dims4(x);
    let mut cols = Array2::zeros((n * oh * ow, c * k * k));
    let xs = x.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    let row_len = c * k * k;
    for ni in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let r = ((ni * oh + i) * ow + j) * row_len;
                for ci in 0..c {
                    let xbase = (ni * c + ci) * h * w;
                    for ki in 0..k {
                        let hi = (i * s + ki) as isize - p as isize;
                        let q = r + (ci * k + ki) * k;
                        if hi < 0 || hi >= h as isize {
                            continue; // row stays zero
                        }
                        let xrow = xbase + hi as usize * w;
                        for kj in 0..k {
                            let wi = (j * s + kj) as isize - p as isize;
                            if wi < 0 || wi >= w as isize {
                                continue;
                            }
                            cs[q + kj] = xs[xrow + wi as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds column gradients back to input layout.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Array2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let mut dx = Array4::zeros((n, c, h, w));
    let ds = dcols.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    let row_len = c * k * k;
    for ni in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let r = ((ni * oh + i) * ow + j) * row_len;
                for ci in 0..c {
                    let xbase = (ni * c + ci) * h * w;
                    for ki in 0..k {
                        let hi = (i * s + ki) as isize - p as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        let xrow = xbase + hi as usize * w;
                        let q = r + (ci * k + ki) * k;
                        for kj in 0..k {
                            let wi = (j * s + kj) as isize - p as isize;
                            if wi < 0 || wi >= w as isize {
                                continue;
                            }
                            dxs[xrow + wi as usize] += ds[q + kj];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// (n*oh*ow, oc) matrix to NCHW.
fn mat_to_nchw(m: &Array2<f64>, n: usize, oc: usize, oh: usize, ow: usize) -> Array4<f64> {
    let mut y = Array4::zeros((n, oc, oh, ow));
    let ms = m.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    for ni in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let r = ((ni * oh + i) * ow + j) * oc;
                for o in 0..oc {
                    ys[(ni * oc + o) * oh * ow + i * ow + j] = ms[r + o];
                }
            }
        }
    }
    y
}

/// NCHW to (n*oh*ow, oc) matrix.
fn nchw_to_mat(y: &Array4<f64>, n: usize, oc: usize, oh: usize, ow: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n * oh * ow, oc));
    let ys = y.as_slice().unwrap();
    let ms = m.as_slice_mut().unwrap();
    for ni in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let r = ((ni * oh + i) * ow + j) * oc;
                for o in 0..oc {
                    ms[r + o] = ys[(ni * oc + o) * oh * ow + i * ow + j];
                }
            }
        }
    }
    m
}
