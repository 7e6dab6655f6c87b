//! Tensor ensemble classifier.
//!
//! Binary classification of multi-way arrays held in CP (rank-r) form. Each
//! ensemble member projects every CP factor column with its own Gaussian
//! matrix, compares tensors through the cross-norm kernel
//! `K(X, Y) = Σ_{k,l} Π_j K_j(x_k^(j), y_l^(j))`, and fits a squared-hinge
//! support tensor machine in the primal with Newton steps. Members vote and
//! the vote share is thresholded.
//!
//! The crate also carries the dense-to-CP decomposition (ALS), seeded
//! generators for the F1–F5, M1 and T1 simulation models, on-disk formats for
//! tensors, datasets and models, and the evaluation harness (repeated
//! train/test splits and cross-validated tuning).

pub mod datagen;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod projection;
pub mod rng;
pub mod stm;
pub mod tensor;

pub use dataset::{Dataset, Samples};
pub use error::{Result, TecError};
pub use tensor::{CpTensor, DenseTensor};
