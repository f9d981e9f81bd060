//! Minibatch training.
//!
//! An epoch is one shuffled pass over all training pairs. Each minibatch
//! builds a fresh tape, runs the encoder on the training graph (and, when the
//! graph contrastive term is on, on two edge-dropout views drawn for that
//! minibatch), assembles the objective, back-propagates and takes one Adam
//! step over every parameter.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::data::SplitDataset;
use crate::encoders::{self, EncoderConfig, EncoderError, Mode, Model};
use crate::eval::{self, EvalData, EvalError, MetricReport, Scoring};
use crate::graph::{BipartiteGraph, GraphError};
use crate::losses::{self, LossConfig, LossConfigError, MainLoss};
use crate::optim::{AdamState, ShapeMismatch};
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossConfigError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Optimizer(#[from] ShapeMismatch),
    #[error("user {0} has interacted with every item; no negative can be sampled")]
    NoNegative(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub eval_every: usize,
    /// Stop after this many consecutive evaluations without a new best recall.
    pub early_stop_patience: Option<usize>,
    pub k: usize,
    pub renormalize_views: bool,
    /// Ranking score; defaults to dot for BPR and cosine for contrastive losses.
    pub scoring: Option<Scoring>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 2048,
            lr: 1e-3,
            seed: 0,
            encoder: EncoderConfig {
                message_dropout: 0.0,
                ..EncoderConfig::lightgcn(128, 2)
            },
            loss: LossConfig::default(),
            eval_every: 1,
            early_stop_patience: None,
            k: 20,
            renormalize_views: true,
            scoring: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.encoder.validate()?;
        self.loss.validate()?;
        let min_batch = self.min_batch();
        if self.batch_size < min_batch {
            return Err(TrainError::Config(alloc::format!(
                "batch_size must be at least {min_batch} for loss {}",
                self.loss.main.name()
            )));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval_every must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(TrainError::Config("k must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(TrainError::Config("lr must be non-negative".into()));
        }
        Ok(())
    }

    /// Smallest admissible minibatch: in-batch negatives need a second pair.
    pub fn min_batch(&self) -> usize {
        match self.loss.main {
            MainLoss::Dcl => 2,
            MainLoss::Bpr => 1,
        }
    }

    pub fn scoring(&self) -> Scoring {
        self.scoring.unwrap_or(match self.loss.main {
            MainLoss::Bpr => Scoring::Dot,
            MainLoss::Dcl => Scoring::Cosine,
        })
    }
}

/// One minibatch of training pairs, plus sampled negatives for BPR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSample {
    pub users: Vec<usize>,
    pub pos_items: Vec<usize>,
    pub neg_items: Option<Vec<usize>>,
}

impl BatchSample {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Splits `0..n` into consecutive chunks of `batch_size`; a trailing chunk
/// shorter than `min_batch` joins the previous one.
pub fn batch_ranges(n: usize, batch_size: usize, min_batch: usize) -> Vec<core::ops::Range<usize>> {
    let mut out: Vec<core::ops::Range<usize>> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < min_batch) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Uniformly samples an item the user has not interacted with.
pub fn sample_negative<R: Rng>(
    graph: &BipartiteGraph,
    user: usize,
    rng: &mut R,
) -> Result<usize, TrainError> {
    if graph.user_items(user).len() >= graph.num_items() {
        return Err(TrainError::NoNegative(user));
    }
    loop {
        let j = rng::index(rng, graph.num_items());
        if !graph.has_edge(user, j) {
            return Ok(j);
        }
    }
}

/// The minibatches of one epoch: a seeded permutation of all training pairs,
/// cut into consecutive batches.
pub fn epoch_batches(
    pairs: &[(usize, usize)],
    graph: &BipartiteGraph,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<BatchSample>, TrainError> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng::shuffle(
        &mut order,
        &mut rng::seeded(cfg.seed, &[stream::EPOCH_ORDER, epoch as u64]),
    );
    let mut neg_rng = rng::seeded(cfg.seed, &[stream::NEGATIVES, epoch as u64]);
    batch_ranges(order.len(), cfg.batch_size, cfg.min_batch())
        .into_iter()
        .map(|range| {
            let idx = &order[range];
            let users: Vec<usize> = idx.iter().map(|&k| pairs[k].0).collect();
            let pos_items = idx.iter().map(|&k| pairs[k].1).collect();
            let neg_items = match cfg.loss.main {
                MainLoss::Bpr => Some(
                    users
                        .iter()
                        .map(|&u| sample_negative(graph, u, &mut neg_rng))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                MainLoss::Dcl => None,
            };
            Ok(BatchSample {
                users,
                pos_items,
                neg_items,
            })
        })
        .collect()
}

/// Loss values of one step or averaged over an epoch. `main` is the BPR or
/// (D)CL value before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub total: f64,
    pub gcl: f64,
    pub main: f64,
}

/// Builds the objective for one minibatch on `tape` and returns
/// `(total, gcl, main)` nodes. `views` must hold the two perturbed graphs when
/// the graph contrastive term is enabled.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective<'g>(
    tape: &mut Tape<'g>,
    model: &Model,
    vars: &encoders::ModelVars,
    graph: &'g BipartiteGraph,
    views: Option<(&'g BipartiteGraph, &'g BipartiteGraph)>,
    batch: &BatchSample,
    loss: &LossConfig,
    step_seed: u64,
) -> Result<(Var, Option<Var>, Var), TrainError> {
    let cfg = &model.config;
    let mode = |view: u64| Mode::Train {
        seed: rng::derive_seed(step_seed, &[stream::MESSAGE_DROPOUT, view]),
    };
    let (u_all, i_all) = encoders::forward(tape, cfg, vars, graph, mode(0))?;
    let ub = tape.gather_rows(u_all, &batch.users)?;
    let ib = tape.gather_rows(i_all, &batch.pos_items)?;

    let mut reg = alloc::vec![
        tape.gather_rows(vars.users, &batch.users)?,
        tape.gather_rows(vars.items, &batch.pos_items)?,
    ];
    let main = match (loss.main, &batch.neg_items) {
        (MainLoss::Bpr, Some(negs)) => {
            let jb = tape.gather_rows(i_all, negs)?;
            reg.push(tape.gather_rows(vars.items, negs)?);
            let sp = tape.row_dot(ub, ib)?;
            let sn = tape.row_dot(ub, jb)?;
            losses::bpr_loss(tape, sp, sn)?
        }
        (MainLoss::Bpr, None) => {
            return Err(TrainError::Config("BPR batch without negatives".into()))
        }
        (MainLoss::Dcl, _) => losses::dcl_loss(tape, ub, ib, loss)?,
    };
    reg.extend(vars.weights.iter().copied());

    let gcl = match views {
        Some((v1, v2)) if loss.gcl_enabled() => {
            let unique: Vec<usize> = batch
                .users
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let (h1, _) = encoders::forward_view(tape, cfg, vars, v1, mode(1))?;
            let (h2, _) = encoders::forward_view(tape, cfg, vars, v2, mode(2))?;
            let h1 = tape.gather_rows(h1, &unique)?;
            let h2 = tape.gather_rows(h2, &unique)?;
            let per_user = losses::gcl_pair_loss(tape, h1, h2, loss.t1)?;
            Some(losses::gcl_loss(tape, per_user)?)
        }
        _ => None,
    };
    let total = losses::total_objective(tape, gcl, main, &reg, loss)?;
    Ok((total, gcl, main))
}

/// Metrics and losses recorded at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossStats,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// One record per epoch actually run.
    pub epochs: Vec<EpochRecord>,
    pub best_recall: f64,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl FitResult {
    /// Records that carry metrics.
    pub fn evaluated(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(|r| r.metrics.is_some())
    }

    pub fn recall_history(&self) -> Vec<f64> {
        self.evaluated()
            .map(|r| r.metrics.unwrap().recall)
            .collect()
    }
}

/// Model, optimizer and data for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub graph: BipartiteGraph,
    pub eval_data: EvalData,
    pairs: Vec<(usize, usize)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, split: &SplitDataset) -> Result<Self, TrainError> {
        cfg.validate()?;
        if split.train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let model = Model::init(
            cfg.encoder,
            split.train.num_users(),
            split.train.num_items(),
            cfg.seed,
        )?;
        Ok(Self::with_model(cfg, split, model))
    }

    /// Resumes from an existing model with fresh optimizer state.
    pub fn with_model(cfg: TrainConfig, split: &SplitDataset, model: Model) -> Self {
        let adam = AdamState::new(cfg.lr, model.parameters());
        Self {
            cfg,
            adam,
            graph: BipartiteGraph::from_dataset(&split.train),
            eval_data: EvalData::from_split(split),
            pairs: split.train.pairs().to_vec(),
            model,
        }
    }

    pub fn step(
        &mut self,
        batch: &BatchSample,
        epoch: usize,
        batch_index: usize,
    ) -> Result<LossStats, TrainError> {
        let step_seed = rng::derive_seed(self.cfg.seed, &[epoch as u64, batch_index as u64]);
        let loss_cfg = self.cfg.loss;
        let views = if loss_cfg.gcl_enabled() {
            let view = |id: u64| {
                self.graph.perturb_edges(
                    loss_cfg.drop_probability,
                    rng::derive_seed(step_seed, &[stream::VIEW, id]),
                    self.cfg.renormalize_views,
                )
            };
            Some((view(1)?.graph, view(2)?.graph))
        } else {
            None
        };

        let grads;
        let stats;
        {
            let mut tape = Tape::new();
            let vars = self.model.register(&mut tape);
            let (total, gcl, main) = batch_objective(
                &mut tape,
                &self.model,
                &vars,
                &self.graph,
                views.as_ref().map(|(a, b)| (a, b)),
                batch,
                &loss_cfg,
                step_seed,
            )?;
            stats = LossStats {
                total: tape.value(total).item(),
                gcl: gcl.map_or(0.0, |g| tape.value(g).item()),
                main: tape.value(main).item(),
            };
            grads = tape.backward(total)?.into_params();
        }
        self.adam.step(&mut self.model.parameters_mut(), &grads)?;
        Ok(stats)
    }

    /// Runs one epoch (1-based index) and returns batch-averaged losses.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<LossStats, TrainError> {
        let batches = epoch_batches(&self.pairs, &self.graph, &self.cfg, epoch)?;
        let mut acc = LossStats::default();
        for (b, batch) in batches.iter().enumerate() {
            let s = self.step(batch, epoch, b)?;
            acc.total += s.total;
            acc.gcl += s.gcl;
            acc.main += s.main;
        }
        let n = batches.len() as f64;
        Ok(LossStats {
            total: acc.total / n,
            gcl: acc.gcl / n,
            main: acc.main / n,
        })
    }

    pub fn embeddings(&self) -> Result<(crate::Tensor, crate::Tensor), TrainError> {
        Ok(self.model.embed(&self.graph)?)
    }

    pub fn evaluate(&self) -> Result<MetricReport, TrainError> {
        let (u, i) = self.embeddings()?;
        Ok(eval::evaluate(
            &u,
            &i,
            &self.eval_data,
            self.cfg.k,
            self.cfg.scoring(),
        )?)
    }

    /// Runs the configured epochs. `evaluate` computes metrics from final
    /// embeddings; `on_epoch` sees every record as soon as it exists.
    pub fn fit_with<E, C>(
        &mut self,
        mut evaluate: E,
        mut on_epoch: C,
    ) -> Result<FitResult, TrainError>
    where
        E: FnMut(
            &crate::Tensor,
            &crate::Tensor,
            &EvalData,
            usize,
            Scoring,
        ) -> Result<MetricReport, EvalError>,
        C: FnMut(&EpochRecord),
    {
        let mut result = FitResult {
            epochs: Vec::new(),
            best_recall: f64::NEG_INFINITY,
            best_epoch: None,
            stopped_early: false,
        };
        let mut stale = 0;
        for epoch in 1..=self.cfg.epochs {
            let losses = self.train_epoch(epoch)?;
            let metrics = if epoch % self.cfg.eval_every == 0 {
                let (u, i) = self.embeddings()?;
                Some(evaluate(
                    &u,
                    &i,
                    &self.eval_data,
                    self.cfg.k,
                    self.cfg.scoring(),
                )?)
            } else {
                None
            };
            let record = EpochRecord {
                epoch,
                losses,
                metrics,
            };
            on_epoch(&record);
            result.epochs.push(record);
            if let Some(m) = metrics {
                if m.recall > result.best_recall {
                    result.best_recall = m.recall;
                    result.best_epoch = Some(epoch);
                    stale = 0;
                } else {
                    stale += 1;
                    if self.cfg.early_stop_patience.is_some_and(|p| stale >= p) {
                        result.stopped_early = true;
                        break;
                    }
                }
            }
        }
        Ok(result)
    }

    pub fn fit(&mut self) -> Result<FitResult, TrainError> {
        self.fit_with(eval::evaluate, |_| {})
    }
}

/// Trains a fresh model on `split` and returns it with its history.
pub fn fit(cfg: TrainConfig, split: &SplitDataset) -> Result<(Model, FitResult), TrainError> {
    let mut trainer = Trainer::new(cfg, split)?;
    let result = trainer.fit()?;
    Ok((trainer.model, result))
}
