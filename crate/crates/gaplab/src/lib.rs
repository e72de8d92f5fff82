//! gaplab: a desk-scale lab for the latent learnability gap.
//!
//! The toolkit generates long-tailed texture-coded corpora, trains a small
//! convolutional autoencoder, and compares classifiers trained in three
//! spaces over the same information: raw images, autoencoder latents
//! (optionally passed through invertible scramblers), and decoded
//! reconstructions of those latents. Because the scramblers are invertible,
//! any accuracy drop in latent space relative to reconstruction space is a
//! learnability effect, not an information effect. The `harness` module
//! orchestrates the full experiment grid, the remaining modules are usable
//! on their own.

pub mod autoenc;
pub mod blobio;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod hashing;
pub mod losses;
pub mod memtrack;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod stats;

pub use error::{Error, Result};
