//! Invertible latent scramblers.
//!
//! A scrambler destroys the spatial or spectral layout of a latent without
//! destroying information: every transform here has an exact inverse, so a
//! classifier trained on scrambled latents sees exactly the same information
//! content as one trained on plain latents, arranged differently.
//!
//! * `Identity` passes latents through unchanged.
//! * `OrthogonalChannelMix` multiplies the channel vector at every spatial
//!   position by one fixed random orthogonal matrix (inverse = transpose).
//! * `FrequencyPermutation` permutes 2-D DFT bins across all channels. Bins
//!   are permuted orbit-wise (self-conjugate bins among themselves, conjugate
//!   pairs onto conjugate pairs) so real inputs map to real outputs. Pooling
//!   bins across channels rearranges even the per-channel energy profile;
//!   only the total energy of a latent survives the scramble.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normal_init, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScramblerKind {
    Identity,
    OrthogonalChannelMix,
    FrequencyPermutation,
}

impl std::fmt::Display for ScramblerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScramblerKind::Identity => "identity",
            ScramblerKind::OrthogonalChannelMix => "orthogonal_channel_mix",
            ScramblerKind::FrequencyPermutation => "frequency_permutation",
        };
        f.write_str(s)
    }
}

/// A fitted scrambler bound to one latent shape.
pub struct ScramblerTransform {
    pub kind: ScramblerKind,
    pub seed: u64,
    /// Latent shape (channels, h, w) this transform applies to.
    pub shape: (usize, usize, usize),
    op: Op,
}

enum Op {
    Identity,
    /// (c, c) orthogonal matrix applied at each spatial position.
    Orthogonal(Array2<f64>),
    /// Permutation over all flattened (channel, DFT bin) slots, plus its
    /// inverse.
    FreqPerm { forward: Vec<usize>, inverse: Vec<usize> },
}

/// Builds the deterministic transform for (kind, seed, shape).
pub fn fit_scrambler(
    kind: ScramblerKind,
    seed: u64,
    shape: (usize, usize, usize),
) -> Result<ScramblerTransform> {
    let (c, h, w) = shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Validation(format!("degenerate latent shape {shape:?}")));
    }
    let op = match kind {
        ScramblerKind::Identity => Op::Identity,
        ScramblerKind::OrthogonalChannelMix => Op::Orthogonal(random_orthogonal(c, seed)),
        ScramblerKind::FrequencyPermutation => {
            let mut rng: Rng =
                rng_from_seed(crate::hashing::derive_seed(seed, &["freq-perm"]));
            let forward = conjugate_symmetric_permutation(c, h, w, &mut rng);
            let mut inverse = vec![0usize; forward.len()];
            for (src, &dst) in forward.iter().enumerate() {
                inverse[dst] = src;
            }
            Op::FreqPerm { forward, inverse }
        }
    };
    Ok(ScramblerTransform { kind, seed, shape, op })
}

/// Random orthogonal matrix via Gram-Schmidt on a seeded Gaussian matrix,
/// with a second orthogonalization pass for numerical hygiene.
fn random_orthogonal(n: usize, seed: u64) -> Array2<f64> {
    let mut rng: Rng = rng_from_seed(crate::hashing::derive_seed(seed, &["orth-mix"]));
    loop {
        let g = normal_init(&[n, n], 1.0, &mut rng);
        let g = g.into_dimensionality::<ndarray::Ix2>().unwrap();
        if let Some(q) = gram_schmidt(&g) {
            return q;
        }
        // Degenerate draw (vanishing pivot); redraw with fresh randomness.
    }
}

fn gram_schmidt(g: &Array2<f64>) -> Option<Array2<f64>> {
    let n = g.nrows();
    let mut q = g.clone();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i).to_owned();
                let dot = q.column(j).dot(&qi);
                let mut col = q.column_mut(j);
                col.scaled_add(-dot, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm < 1e-10 {
            return None;
        }
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Some(q)
}

/// Permutation over flattened (channel, DFT bin) slots that commutes with
/// complex conjugation. Conjugation negates a bin's spatial frequencies but
/// never touches the channel, so the pooled slots split into the same two
/// orbit families as a single plane: self-conjugate slots shuffle among
/// themselves (possibly across channels), and each conjugate pair maps onto
/// another conjugate pair consistently.
fn conjugate_symmetric_permutation(c: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<usize> {
    let flat = |ci: usize, k1: usize, k2: usize| (ci * h + k1) * w + k2;
    let conj = |k1: usize, k2: usize| ((h - k1) % h, (w - k2) % w);

    let mut self_conj = Vec::new();
    let mut reps = Vec::new();
    for ci in 0..c {
        for k1 in 0..h {
            for k2 in 0..w {
                let (c1, c2) = conj(k1, k2);
                if (c1, c2) == (k1, k2) {
                    self_conj.push((ci, k1, k2));
                } else if (k1, k2) < (c1, c2) {
                    reps.push((ci, k1, k2));
                }
            }
        }
    }
    let shuffled_self = shuffled(&self_conj, rng);
    let shuffled_reps = shuffled(&reps, rng);

    let mut perm = vec![0usize; c * h * w];
    for (src, dst) in self_conj.iter().zip(&shuffled_self) {
        perm[flat(src.0, src.1, src.2)] = flat(dst.0, dst.1, dst.2);
    }
    for (src, dst) in reps.iter().zip(&shuffled_reps) {
        perm[flat(src.0, src.1, src.2)] = flat(dst.0, dst.1, dst.2);
        let cs = conj(src.1, src.2);
        let cd = conj(dst.1, dst.2);
        perm[flat(src.0, cs.0, cs.1)] = flat(dst.0, cd.0, cd.1);
    }
    perm
}

fn shuffled<T: Copy>(items: &[T], rng: &mut Rng) -> Vec<T> {
    let mut out = items.to_vec();
    for i in (1..out.len()).rev() {
        let j = rng.gen_range(0..=i);
        out.swap(i, j);
    }
    out
}

impl ScramblerTransform {
    fn check_shape(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != self.shape {
            return Err(Error::Shape(format!(
                "scrambler fitted for {:?}, got {:?}",
                self.shape,
                x.dim()
            )));
        }
        Ok(())
    }

    pub fn scramble(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_shape(x)?;
        Ok(self.apply(x, true))
    }

    pub fn descramble(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_shape(x)?;
        Ok(self.apply(x, false))
    }

    pub fn scramble_batch(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.apply_batch(x, true)
    }

    pub fn descramble_batch(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.apply_batch(x, false)
    }

    fn apply_batch(&self, x: &Array4<f64>, forward: bool) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        if (c, h, w) != self.shape {
            return Err(Error::Shape(format!(
                "scrambler fitted for {:?}, got {:?}",
                self.shape,
                (c, h, w)
            )));
        }
        let mut out = Array4::zeros((n, c, h, w));
        for i in 0..n {
            let xi = x.index_axis(ndarray::Axis(0), i).to_owned();
            out.index_axis_mut(ndarray::Axis(0), i).assign(&self.apply(&xi, forward));
        }
        Ok(out)
    }

    fn apply(&self, x: &Array3<f64>, forward: bool) -> Array3<f64> {
        match &self.op {
            Op::Identity => x.clone(),
            Op::Orthogonal(q) => {
                let (c, h, w) = x.dim();
                let mut out = Array3::zeros((c, h, w));
                for i in 0..h {
                    for j in 0..w {
                        for a in 0..c {
                            let mut acc = 0.0;
                            for b in 0..c {
                                // Inverse of an orthogonal map is its transpose.
                                let m = if forward { q[[a, b]] } else { q[[b, a]] };
                                acc += m * x[[b, i, j]];
                            }
                            out[[a, i, j]] = acc;
                        }
                    }
                }
                out
            }
            Op::FreqPerm { forward: fwd, inverse: inv } => {
                let (c, h, w) = x.dim();
                let perm = if forward { fwd } else { inv };
                let mut spec = Vec::with_capacity(c * h * w);
                for ci in 0..c {
                    let plane = x.index_axis(ndarray::Axis(0), ci);
                    spec.extend(dft2(&plane.to_owned()));
                }
                let mut moved = vec![Complex64::new(0.0, 0.0); spec.len()];
                for (src, &dst) in perm.iter().enumerate() {
                    moved[dst] = spec[src];
                }
                let mut out = Array3::zeros((c, h, w));
                for ci in 0..c {
                    let back = idft2(&moved[ci * h * w..(ci + 1) * h * w], h, w);
                    let mut plane_out = out.index_axis_mut(ndarray::Axis(0), ci);
                    for i in 0..h {
                        for j in 0..w {
                            plane_out[[i, j]] = back[i * w + j];
                        }
                    }
                }
                out
            }
        }
    }
}

/// Separable naive 2-D DFT; latents are small enough that O(n^3) per axis
/// beats pulling in an FFT dependency.
fn dft2(x: &Array2<f64>) -> Vec<Complex64> {
    let (h, w) = x.dim();
    let tw_h = twiddles(h, -1.0);
    let tw_w = twiddles(w, -1.0);
    // Rows first.
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for k2 in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..w {
                acc += tw_w[(k2 * j) % w] * x[[i, j]];
            }
            rows[i * w + k2] = acc;
        }
    }
    // Then columns.
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for k1 in 0..h {
        for k2 in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                acc += tw_h[(k1 * i) % h] * rows[i * w + k2];
            }
            out[k1 * w + k2] = acc;
        }
    }
    out
}

/// Inverse 2-D DFT returning the real part; imaginary residue is checked in
/// debug builds because inputs are conjugate-symmetric by construction.
fn idft2(spec: &[Complex64], h: usize, w: usize) -> Vec<f64> {
    let tw_h = twiddles(h, 1.0);
    let tw_w = twiddles(w, 1.0);
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for k1 in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for k2 in 0..w {
                acc += tw_w[(j * k2) % w] * spec[k1 * w + k2];
            }
            rows[k1 * w + j] = acc;
        }
    }
    let scale = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for k1 in 0..h {
                acc += tw_h[(i * k1) % h] * rows[k1 * w + j];
            }
            let v = acc * scale;
            debug_assert!(v.im.abs() < 1e-8, "imaginary residue {}", v.im);
            out[i * w + j] = v.re;
        }
    }
    out
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let angle = sign * std::f64::consts::TAU * k as f64 / n as f64;
            Complex64::new(angle.cos(), angle.sin())
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ScramblerManifest {
    kind: ScramblerKind,
    seed: u64,
    shape: (usize, usize, usize),
}

/// Persists (kind, seed, shape); the transform is refitted on load.
pub fn save_scrambler(t: &ScramblerTransform, path: &Path) -> Result<()> {
    let manifest = ScramblerManifest { kind: t.kind, seed: t.seed, shape: t.shape };
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_scrambler(path: &Path) -> Result<ScramblerTransform> {
    let manifest: ScramblerManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    fit_scrambler(manifest.kind, manifest.seed, manifest.shape)
}
