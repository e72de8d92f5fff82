//! Stateless tensor ops: activations, pooling, upsampling, layout shuffles.

use ndarray::{Array, Array2, Array4, Dimension};

use super::conv::dims4;

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    // `f64::max` would quietly turn NaN into 0.0; keep NaN flowing so a
    // diverged forward pass surfaces as a non-finite loss instead of being
    // masked mid-network.
    x.mapv(|v| if v.is_nan() { v } else { v.max(0.0) })
}

/// dx from dy given the forward input.
pub fn relu_backward<D: Dimension>(x: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
pub fn gelu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v.powi(3))).tanh()))
}

pub fn gelu_backward<D: Dimension>(x: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let u = GELU_C * (v + GELU_A * v.powi(3));
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    });
    dx
}

pub fn silu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v * sigmoid_scalar(v))
}

pub fn silu_backward<D: Dimension>(x: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let s = sigmoid_scalar(v);
        *d *= s * (1.0 + v * (1.0 - s));
    });
    dx
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(sigmoid_scalar)
}

/// dx given the forward *output* y.
pub fn sigmoid_backward<D: Dimension>(y: &Array<f64, D>, dy: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| *d *= v * (1.0 - v));
    dx
}

/// Mean over the spatial dims: (n, c, h, w) -> (n, c).
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = dims4(x);
    let scale = 1.0 / (h * w) as f64;
    let mut y = Array2::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x[[ni, ci, i, j]];
                }
            }
            y[[ni, ci]] = acc * scale;
        }
    }
    y
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = dy.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = dy[[ni, ci]] * scale;
            for i in 0..h {
                for j in 0..w {
                    dx[[ni, ci, i, j]] = g;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample_nearest2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = dims4(x);
    let mut y = Array4::zeros((n, c, 2 * h, 2 * w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = x[[ni, ci, i, j]];
                    y[[ni, ci, 2 * i, 2 * j]] = v;
                    y[[ni, ci, 2 * i, 2 * j + 1]] = v;
                    y[[ni, ci, 2 * i + 1, 2 * j]] = v;
                    y[[ni, ci, 2 * i + 1, 2 * j + 1]] = v;
                }
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward(dy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = dims4(dy);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    dx[[ni, ci, i, j]] = dy[[ni, ci, 2 * i, 2 * j]]
                        + dy[[ni, ci, 2 * i, 2 * j + 1]]
                        + dy[[ni, ci, 2 * i + 1, 2 * j]]
                        + dy[[ni, ci, 2 * i + 1, 2 * j + 1]];
                }
            }
        }
    }
    dx
}

/// NCHW feature map to (n*h*w, c) rows, one row per spatial position.
pub fn nchw_to_rows(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = dims4(x);
    let mut rows = Array2::zeros((n * h * w, c));
    let xs = x.as_slice().unwrap();
    let rs = rows.as_slice_mut().unwrap();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for p in 0..h * w {
                rs[(ni * h * w + p) * c + ci] = xs[base + p];
            }
        }
    }
    rows
}

/// Inverse of [`nchw_to_rows`].
pub fn rows_to_nchw(rows: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
    let mut x = Array4::zeros((n, c, h, w));
    let xs = x.as_slice_mut().unwrap();
    let rs = rows.as_slice().unwrap();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for p in 0..h * w {
                xs[base + p] = rs[(ni * h * w + p) * c + ci];
            }
        }
    }
    x
}
