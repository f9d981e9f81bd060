//! Training, evaluation, ablation and sweep commands.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use cgcf_core::eval::{self, EvalData, EvalError, Scorer};
use cgcf_core::train::Trainer;
use cgcf_core::{
    BipartiteGraph, FitResult, MainLoss, MetricReport, Model, Scoring, Tensor, TrainError, Vocab,
};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig, DEFAULT_MESSAGE_DROPOUT};
use crate::dataio::{self, LoadError};
use crate::report::{History, HistoryRow, SummaryRow, SummaryTable};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Load(#[from] LoadError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint has {ckpt_users} users and {ckpt_items} items but the dataset has {data_users} users and {data_items} items")]
    SizeMismatch {
        ckpt_users: usize,
        ckpt_items: usize,
        data_users: usize,
        data_items: usize,
    },
    #[error("dataset {kind} `{id}` is not in the checkpoint")]
    UnknownId { kind: &'static str, id: String },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Full-ranking metrics with users split into contiguous ranges across
/// `threads` workers. Per-user results are reduced in user order, so the
/// report is bit-identical to the single-threaded one.
pub fn parallel_evaluate(
    users: &Tensor,
    items: &Tensor,
    data: &EvalData,
    k: usize,
    scoring: Scoring,
    threads: usize,
) -> Result<MetricReport, EvalError> {
    let scorer = Scorer::new(users, items, scoring);
    eval::check_sizes(&scorer, data, k)?;
    let n = data.num_users();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return eval::reduce(k, eval::per_user_metrics(&scorer, data, k, 0..n));
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Vec<Option<(f64, f64)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let scorer = &scorer;
                s.spawn(move || {
                    eval::per_user_metrics(scorer, data, k, start..(start + chunk).min(n))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    eval::reduce(k, parts.into_iter().flatten())
}

/// Artifacts and results of one training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: FitResult,
    pub history: History,
    pub model: Model,
    pub dir: PathBuf,
}

impl RunOutcome {
    /// Metrics at the best epoch; `None` when nothing was evaluated.
    pub fn best(&self) -> Option<HistoryRow> {
        let best = self.result.best_epoch?;
        self.history.rows.iter().find(|r| r.epoch == best).copied()
    }
}

/// Trains per `cfg` and writes `config.resolved`, `history.csv`,
/// `train.log`, `final.ckpt` and the `train.txt` / `test.txt` split into the
/// output directory.
pub fn train(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let split = dataio::load_split(&cfg.data)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join("config.resolved"), &cfg.to_text())?;
    write_file(&dir.join("train.txt"), &dataio::format_pairs(&split.train))?;
    write_file(&dir.join("test.txt"), &dataio::format_pairs(&split.test))?;

    let log_path = dir.join("train.log");
    let mut log =
        std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(io_err(&log_path))?);
    let mut log_result = Ok(());
    let mut trainer = Trainer::new(cfg.train, &split)?;
    let start = Instant::now();
    let threads = cfg.eval_threads;
    let result = trainer.fit_with(
        |u, i, data, k, scoring| parallel_evaluate(u, i, data, k, scoring, threads),
        |record| {
            let line = crate::report::log_line(&cfg.name, record, start.elapsed().as_secs_f64());
            if log_result.is_ok() {
                log_result = writeln!(log, "{line}").and_then(|_| log.flush());
            }
        },
    )?;
    log_result.map_err(io_err(&log_path))?;

    let history = History {
        k: cfg.train.k,
        rows: result
            .epochs
            .iter()
            .filter_map(HistoryRow::from_record)
            .collect(),
    };
    write_file(&dir.join("history.csv"), &history.to_csv())?;
    let ckpt = Checkpoint {
        model: trainer.model.clone(),
        scoring: cfg.train.scoring(),
        users: split.train.user_vocab().clone(),
        items: split.train.item_vocab().clone(),
    };
    write_file(&dir.join("final.ckpt"), &ckpt.to_text())?;
    Ok(RunOutcome {
        result,
        history,
        model: trainer.model,
        dir,
    })
}

/// Re-evaluates a checkpoint on a split held as `train.txt` and `test.txt`
/// in `data_dir` (the layout `train` writes). Reads only.
pub fn evaluate_checkpoint(
    ckpt_path: &Path,
    data_dir: &Path,
    k: usize,
    threads: usize,
) -> Result<MetricReport, RunError> {
    let text = std::fs::read_to_string(ckpt_path).map_err(io_err(ckpt_path))?;
    let ckpt = Checkpoint::parse(&text)?;
    let train = dataio::read_raw_pairs(&data_dir.join("train.txt"))?;
    let test = dataio::read_raw_pairs(&data_dir.join("test.txt"))?;

    let mut data_users = Vocab::new();
    let mut data_items = Vocab::new();
    for (u, i) in train.iter().chain(&test) {
        data_users.intern(u);
        data_items.intern(i);
    }
    if data_users.len() != ckpt.users.len() || data_items.len() != ckpt.items.len() {
        return Err(RunError::SizeMismatch {
            ckpt_users: ckpt.users.len(),
            ckpt_items: ckpt.items.len(),
            data_users: data_users.len(),
            data_items: data_items.len(),
        });
    }
    let index = |raw: &[(String, String)]| -> Result<Vec<(usize, usize)>, RunError> {
        raw.iter()
            .map(|(u, i)| {
                let user = ckpt.users.encode(u).ok_or_else(|| RunError::UnknownId {
                    kind: "user",
                    id: u.clone(),
                })?;
                let item = ckpt.items.encode(i).ok_or_else(|| RunError::UnknownId {
                    kind: "item",
                    id: i.clone(),
                })?;
                Ok((user, item))
            })
            .collect()
    };
    let split = dataio::split_over(
        ckpt.users.clone(),
        ckpt.items.clone(),
        index(&train)?,
        index(&test)?,
    )
    .map_err(|source| LoadError::Data {
        path: data_dir.to_path_buf(),
        source,
    })?;
    let graph = BipartiteGraph::from_dataset(&split.train);
    let (u, i) = ckpt.model.embed(&graph).map_err(TrainError::from)?;
    Ok(parallel_evaluate(
        &u,
        &i,
        &EvalData::from_split(&split),
        k,
        ckpt.scoring,
        threads,
    )?)
}

pub const ABLATION_VARIANTS: [&str; 6] = ["BPR", "BPR+DROP", "BPR+GCL", "CL", "DCL", "DCL+GCL"];

/// The base config turned into one ablation variant.
///
/// The base supplies the shared hyperparameters. Variants with a graph term
/// use the base `beta` (or the default when the base has none); `+DROP` uses
/// the base message dropout (or the default when the base has none).
pub fn ablation_variant(base: &RunConfig, variant: &str) -> Option<RunConfig> {
    let mut cfg = base.clone();
    let loss = &mut cfg.train.loss;
    let beta = if base.train.loss.beta > 0.0 {
        base.train.loss.beta
    } else {
        cgcf_core::LossConfig::default().beta
    };
    let dropout = if base.train.encoder.message_dropout > 0.0 {
        base.train.encoder.message_dropout
    } else {
        DEFAULT_MESSAGE_DROPOUT
    };
    let tau_plus = if base.train.loss.tau_plus > 0.0 {
        base.train.loss.tau_plus
    } else {
        cgcf_core::LossConfig::default().tau_plus
    };
    let (main, tau, beta, dropout) = match variant {
        "BPR" => (MainLoss::Bpr, loss.tau_plus, 0.0, 0.0),
        "BPR+DROP" => (MainLoss::Bpr, loss.tau_plus, 0.0, dropout),
        "BPR+GCL" => (MainLoss::Bpr, loss.tau_plus, beta, 0.0),
        "CL" => (MainLoss::Dcl, 0.0, 0.0, 0.0),
        "DCL" => (MainLoss::Dcl, tau_plus, 0.0, 0.0),
        "DCL+GCL" => (MainLoss::Dcl, tau_plus, beta, 0.0),
        _ => return None,
    };
    loss.main = main;
    loss.tau_plus = tau;
    loss.beta = beta;
    cfg.train.encoder.message_dropout = dropout;
    cfg.train.batch_size = cfg.train.batch_size.max(cfg.train.min_batch());
    cfg.name = format!("{}-{variant}", base.name);
    cfg.output_dir = base.output_dir.join(variant.replace('+', "_"));
    Some(cfg)
}

/// Runs `jobs` on up to `parallel` threads; results come back in job order.
pub fn run_all(jobs: &[RunConfig], parallel: usize) -> Vec<Result<RunOutcome, RunError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunOutcome, RunError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let worker = || loop {
        let n = next.fetch_add(1, Ordering::Relaxed);
        let Some(job) = jobs.get(n) else { break };
        let outcome = train(job);
        *slots[n].lock().expect("result slot poisoned") = Some(outcome);
    };
    let parallel = parallel.clamp(1, jobs.len().max(1));
    if parallel == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..parallel {
                s.spawn(worker);
            }
        });
    }
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result slot poisoned")
                .expect("every job runs")
        })
        .collect()
}

fn summary_row(label: String, outcome: &RunOutcome) -> SummaryRow {
    let best = outcome.best();
    SummaryRow {
        label,
        recall: best.map_or(0.0, |b| b.recall),
        ndcg: best.map_or(0.0, |b| b.ndcg),
        best_epoch: best.map_or(0, |b| b.epoch),
    }
}

/// One run per ablation variant; writes `ablation.csv` into the base output directory.
pub fn ablate(base: &RunConfig, parallel: usize) -> Result<SummaryTable, RunError> {
    base.validate()?;
    let jobs: Vec<RunConfig> = ABLATION_VARIANTS
        .iter()
        .map(|v| ablation_variant(base, v).expect("known variant"))
        .collect();
    for job in &jobs {
        job.validate()?;
    }
    let mut table = SummaryTable {
        first_column: "variant".into(),
        k: base.train.k,
        rows: Vec::new(),
    };
    for (variant, outcome) in ABLATION_VARIANTS.iter().zip(run_all(&jobs, parallel)) {
        table.rows.push(summary_row(variant.to_string(), &outcome?));
    }
    std::fs::create_dir_all(&base.output_dir).map_err(io_err(&base.output_dir))?;
    write_file(&base.output_dir.join("ablation.csv"), &table.to_csv())?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    TauPlus,
    DropProbability,
    Beta,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tau_plus" => Some(Self::TauPlus),
            "p" => Some(Self::DropProbability),
            "beta" => Some(Self::Beta),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TauPlus => "tau_plus",
            Self::DropProbability => "p",
            Self::Beta => "beta",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) {
        let loss = &mut cfg.train.loss;
        match self {
            Self::TauPlus => loss.tau_plus = value,
            Self::DropProbability => loss.drop_probability = value,
            Self::Beta => loss.beta = value,
        }
    }
}

/// The base config with `param = value`. Message dropout is left as the
/// base has it.
pub fn sweep_point(base: &RunConfig, param: SweepParam, value: f64) -> RunConfig {
    let mut cfg = base.clone();
    param.apply(&mut cfg, value);
    cfg.name = format!("{}-{}={value}", base.name, param.name());
    cfg.output_dir = base.output_dir.join(format!("{}_{value}", param.name()));
    cfg
}

/// One run per value, in ascending value order; writes `sweep_<param>.csv`.
/// Every value is checked before the first run starts.
pub fn sweep(
    base: &RunConfig,
    param: SweepParam,
    values: &[f64],
    parallel: usize,
) -> Result<SummaryTable, RunError> {
    base.validate()?;
    if values.is_empty() {
        return Err(RunError::Usage("no sweep values given".into()));
    }
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    let jobs: Vec<RunConfig> = values
        .iter()
        .map(|&v| sweep_point(base, param, v))
        .collect();
    for job in &jobs {
        job.validate()?;
    }
    let mut table = SummaryTable {
        first_column: param.name().into(),
        k: base.train.k,
        rows: Vec::new(),
    };
    for (value, outcome) in values.iter().zip(run_all(&jobs, parallel)) {
        table.rows.push(summary_row(value.to_string(), &outcome?));
    }
    std::fs::create_dir_all(&base.output_dir).map_err(io_err(&base.output_dir))?;
    write_file(
        &base.output_dir.join(format!("sweep_{}.csv", param.name())),
        &table.to_csv(),
    )?;
    Ok(table)
}
