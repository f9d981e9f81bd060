//! File formats, run configuration and the command-line driver for
//! [`cgcf_core`].
//!
//! - [`config`]: sectioned `key = value` run configs
//! - [`dataio`]: interaction files, dataset statistics, graph dumps
//! - [`checkpoint`]: plain-text model checkpoints
//! - [`report`]: history, ablation and sweep CSVs and JSON log lines
//! - [`run`]: the train / evaluate / ablate / sweep commands

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod report;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{ConfigError, DataConfig, DataSource, RunConfig};
pub use report::{History, HistoryRow, SummaryRow, SummaryTable};
pub use run::{RunError, RunOutcome, SweepParam};
