//! Layer normalization over the feature axis of (rows, features) matrices.
//!
//! Feature maps are brought into row layout (one row per spatial position
//! per sample) before normalization, so this single implementation serves
//! the channel-wise norm inside every block.

use ndarray::{Array1, Array2, Axis};

use super::{Module, Param};

#[derive(Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

#[derive(Debug)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        LayerNorm {
            gamma: Param::new(ndarray::ArrayD::ones(ndarray::IxDyn(&[features])), false),
            beta: Param::zeros(&[features], false),
            eps: 1e-6,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.shape()[0]
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_t(x).0
    }

    pub fn forward_t(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let c = x.ncols();
        let mu = x.mean_axis(Axis(1)).unwrap();
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (i, mut row) in xhat.axis_iter_mut(Axis(0)).enumerate() {
            let m = mu[i];
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = istd;
            row.mapv_inplace(|v| (v - m) * istd);
        }
        let g = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let b = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = xhat.clone();
        y *= &g;
        y += &b;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let c = dy.ncols() as f64;
        let g = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        {
            let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            gg += &dgamma;
            let dbeta = dy.sum_axis(Axis(0));
            let mut bg = self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bg += &dbeta;
        }
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut dxh: Vec<f64> = (0..dy.ncols()).map(|j| dyr[j] * g[j]).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / c;
            let mean_dxh_xh = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / c;
            for j in 0..dy.ncols() {
                dxh[j] = (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh) * cache.inv_std[i];
            }
            dx.row_mut(i).assign(&Array1::from(dxh));
        }
        dx
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
