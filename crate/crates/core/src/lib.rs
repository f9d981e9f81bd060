//! Contrastive learning for graph-based collaborative filtering.
//!
//! The crate is `no_std` (it only needs `alloc`) and covers the whole
//! numerical pipeline:
//!
//! - [`data`]: interaction datasets, k-core filtering, per-user splits
//! - [`graph`]: symmetric-normalized bipartite CSR graphs and edge-dropout views
//! - [`autodiff`]: a define-by-run tape over dense matrices and sparse products
//! - [`encoders`]: MF, GC-MC, LR-GCCF and LightGCN propagation
//! - [`losses`]: BPR, contrastive, debiased contrastive and graph contrastive losses
//! - [`optim`] / [`train`]: Adam and the minibatch training loop
//! - [`eval`]: full-ranking recall@K / ndcg@K
//!
//! File formats, configuration and the command-line driver live in the
//! companion `cgcf` crate.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod encoders;
pub mod eval;
pub mod graph;
pub mod losses;
mod math;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};
pub use data::{DataError, DatasetStats, FilterConfig, InteractionDataset, SplitDataset, Vocab};
pub use encoders::{Combination, EncoderConfig, EncoderError, EncoderKind, Model};
pub use eval::{MetricReport, Scoring};
pub use graph::{BipartiteGraph, Direction, PerturbedView};
pub use losses::{ClampFloor, LossConfig, MainLoss};
pub use optim::AdamState;
pub use train::{EpochRecord, FitResult, TrainConfig, TrainError};
