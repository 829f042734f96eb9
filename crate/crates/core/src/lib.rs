//! Exact and numerical machinery for studying 3-wise correlations of
//! bounded functions over distributions on triple product spaces.
//!
//! The structural layer (distributions, Abelian embeddings, path-trick
//! transforms) is exact rational arithmetic throughout; the analytic layer
//! (Fourier decompositions, noise operators, extremal searches, agreement
//! testing) works in `f64`/`Complex64` with the tolerances collected in
//! [`tolerance`].

pub mod error;
pub mod tolerance;
pub mod rng;
pub mod dist;
pub mod exact_linalg;
pub mod group;
pub mod embed;
pub mod tensor;
pub mod path;
pub mod fourier;
pub mod extremal;

pub use error::{Error, Result};
