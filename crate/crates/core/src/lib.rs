//! Simultaneous adversarial removal of several protected user attributes
//! from the latent space of a variational-autoencoder recommender.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode tape over dense [`Array`]s, including
//!   the gradient reversal layer.
//! * [`model`]: the multinomial VAE recommender and its loss.
//! * [`adversarial`]: per-attribute heads, the summed adversarial loss, the
//!   joint objective and the standalone attacker.
//! * [`data`]: ingestion, k-core filtering, folds and class weights.
//! * [`train`]: Adam, the removal and attack phases, and the λ grid.
//! * [`eval`]: ranking metrics, debiasing metrics and significance tests.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod array;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use array::Array;
pub use autodiff::{finite_difference_check, Gradients, GrlSpec, Tape, Var};
pub use error::{Error, Result};
pub use rng::{Seeds, Stream};
