//! Differentiable architecture search for CNN-LSTM speech emotion
//! recognition.
//!
//! The crate provides, from the ground up:
//!
//! - [`tensor`]: dense tensors with reverse-mode automatic differentiation
//!   and a finite-difference gradient checker;
//! - [`nn`]: convolution, pooling, batch norm, dropout, LSTM, and additive
//!   attention layers;
//! - [`search`]: the eight-operation candidate set and the alpha-weighted
//!   mixed operation;
//! - [`cell`]: the cell DAG, network stacking, and genotype discretization
//!   with JSON/DOT export;
//! - [`optim`]: SGD with cosine annealing, the Adam-style alpha optimizer,
//!   and the alternating bilevel search loop;
//! - [`data`]: MFCC feature extraction, the SERC1 dataset container,
//!   speaker-independent folds, and a synthetic dataset generator;
//! - [`models`]: the searched CNN + LSTM classifier and the three
//!   hand-engineered baselines, plus checkpoint IO.
//!
//! The `serdarts` binary (in the companion CLI crate) wires these into
//! reproducible search/train/eval runs.

pub mod cell;
pub mod data;
pub mod error;
pub mod optim;
pub mod rng;
pub mod models;
pub mod nn;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::{Element, Tensor};
