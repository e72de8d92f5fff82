//! Fully connected layer over row-major (rows, features) matrices.

use ndarray::{Array1, Array2, Axis};

use super::{normal_init, Module, Param, Rng};

#[derive(Debug)]
pub struct Linear {
    /// Shape (in_features, out_features).
    pub weight: Param,
    /// Shape (out_features,).
    pub bias: Param,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, init_std: f64, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::new(normal_init(&[in_features, out_features], init_std, rng), true),
            bias: Param::zeros(&[out_features], false),
        }
    }

    /// All-zero weights and bias; used where identity-at-init is required.
    pub fn zeroed(in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: Param::zeros(&[in_features, out_features], false),
            bias: Param::zeros(&[out_features], false),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = self.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = x.dot(&w);
        y += &b;
        y
    }

    /// Accumulates gradients and returns dx. `x` is the forward input.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let w = self.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        {
            let dw = x.t().dot(dy);
            let mut wg = self.weight.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            wg += &dw;
        }
        {
            let db: Array1<f64> = dy.sum_axis(Axis(0));
            let mut bg = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bg += &db;
        }
        dy.dot(&w.t())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng_from_seed;

    #[test]
    fn forward_matches_manual_dot() {
        let mut rng = rng_from_seed(4);
        let lin = Linear::new(3, 2, 0.5, &mut rng);
        let x = Array2::from_shape_vec((1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let y = lin.forward(&x);
        let w = lin.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        for o in 0..2 {
            let want: f64 = (0..3).map(|i| x[[0, i]] * w[[i, o]]).sum::<f64>() + lin.bias.value[[o]];
            assert!((y[[0, o]] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from_seed(5);
        let mut lin = Linear::new(4, 3, 0.5, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) as f64 * 0.13).sin());
        let loss = |y: &Array2<f64>| y.iter().map(|v| v.tanh()).sum::<f64>();
        let y = lin.forward(&x);
        let dy = y.mapv(|v| 1.0 - v.tanh().powi(2));
        lin.zero_grad();
        let dx = lin.backward(&x, &dy);

        let eps = 1e-6;
        for flat in 0..lin.weight.numel() {
            let orig = lin.weight.value.as_slice().unwrap()[flat];
            lin.weight.value.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp = loss(&lin.forward(&x));
            lin.weight.value.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm = loss(&lin.forward(&x));
            lin.weight.value.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = lin.weight.grad.as_slice().unwrap()[flat];
            assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "dW at {flat}: fd={fd} an={an}");
        }
        let mut xm = x.clone();
        for flat in 0..x.len() {
            let orig = xm.as_slice().unwrap()[flat];
            xm.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp = loss(&lin.forward(&xm));
            xm.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm = loss(&lin.forward(&xm));
            xm.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = dx.as_slice().unwrap()[flat];
            assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "dx at {flat}: fd={fd} an={an}");
        }
    }
}
