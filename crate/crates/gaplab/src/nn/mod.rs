//! Minimal trainable tensor-network engine.
//!
//! All forward/backward math runs in f64 on `ndarray` containers with
//! explicit caches, which keeps gradients simple to verify against finite
//! differences. Layers own their parameters; optimizers mutate them through
//! [`Param`]. Everything is deterministic given a seed: the only RNG type
//! used anywhere is ChaCha8, and batched ops never mix values across
//! samples, so results are independent of batch composition.

pub mod adam;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod ops;

pub use adam::AdamW;
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};

use ndarray::{ArrayD, IxDyn};
use rand::Rng as _;
use rand::SeedableRng;

/// The one RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
    /// Whether decoupled weight decay applies (true for weight matrices,
    /// false for biases and normalization/modulation parameters).
    pub decay: bool,
}

impl Param {
    pub fn new(value: ArrayD<f64>, decay: bool) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        Param { value, grad, m, v, decay }
    }

    pub fn zeros(shape: &[usize], decay: bool) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)), decay)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Anything that exposes a flat, stable-ordered list of parameters.
///
/// The ordering contract matters: checkpoints serialize parameter values in
/// `params()` order, so implementations must keep it fixed.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Copies all parameter values out (for early-stopping snapshots).
pub fn snapshot_values<M: Module>(m: &M) -> Vec<ArrayD<f64>> {
    m.params().iter().map(|p| p.value.clone()).collect()
}

/// Restores parameter values from a snapshot taken with [`snapshot_values`].
pub fn restore_values<M: Module>(m: &mut M, snap: &[ArrayD<f64>]) {
    let mut params = m.params_mut();
    assert_eq!(params.len(), snap.len(), "snapshot arity mismatch");
    for (p, s) in params.iter_mut().zip(snap) {
        p.value.assign(s);
    }
}

/// Flattens parameter values to f32 in `params()` order (checkpoint payload).
pub fn flatten_params_f32<M: Module>(m: &M) -> Vec<f32> {
    let mut out = Vec::with_capacity(m.param_count());
    for p in m.params() {
        out.extend(p.value.iter().map(|&v| v as f32));
    }
    out
}

/// Loads flattened f32 values back into a module's parameters.
pub fn load_params_f32<M: Module>(m: &mut M, flat: &[f32]) -> crate::Result<()> {
    let expect: usize = m.param_count();
    if flat.len() != expect {
        return Err(crate::Error::CorruptCheckpoint(format!(
            "parameter blob holds {} values, model needs {expect}",
            flat.len()
        )));
    }
    let mut offset = 0;
    for p in m.params_mut() {
        let n = p.numel();
        for (dst, src) in p.value.iter_mut().zip(&flat[offset..offset + n]) {
            *dst = *src as f64;
        }
        offset += n;
    }
    Ok(())
}

/// Samples an array with i.i.d. normal(0, std) entries.
pub fn normal_init(shape: &[usize], std: f64, rng: &mut Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v: f64 = rng.sample(rand_distr::StandardNormal);
        data.push(v * std);
    }
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

/// He-initialization standard deviation for a ReLU fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
