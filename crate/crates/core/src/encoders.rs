//! Graph encoders producing final user and item embeddings.
//!
//! All encoders share one [`Model`] layout: a user table, an item table and
//! a kind-specific list of `d x d` weight matrices. Embeddings are stored as
//! rows, so a weight `W` acts as `E * W`.

use alloc::vec::Vec;

use crate::autodiff::{Activation, AutodiffError, Tape, Tensor, Var};
use crate::graph::{BipartiteGraph, Direction};
use crate::math;
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(&'static str),
    #[error("encoder expects {expected} weight matrices, found {found}")]
    MissingWeights { expected: usize, found: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Mf,
    GcMc,
    LrGccf,
    LightGcn,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Mf => "mf",
            EncoderKind::GcMc => "gcmc",
            EncoderKind::LrGccf => "lrgccf",
            EncoderKind::LightGcn => "lightgcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mf" => EncoderKind::Mf,
            "gcmc" => EncoderKind::GcMc,
            "lrgccf" => EncoderKind::LrGccf,
            "lightgcn" => EncoderKind::LightGcn,
            _ => return None,
        })
    }
}

/// How per-layer embeddings `e^(0) .. e^(K)` merge into the final embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combination {
    Sum,
    Mean,
    Last,
    Concat,
}

impl Combination {
    pub fn name(self) -> &'static str {
        match self {
            Combination::Sum => "sum",
            Combination::Mean => "mean",
            Combination::Last => "last",
            Combination::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sum" => Combination::Sum,
            "mean" => Combination::Mean,
            "last" => Combination::Last,
            "concat" => Combination::Concat,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub layers: usize,
    pub combination: Combination,
    pub message_dropout: f64,
    /// Nonlinearity of GC-MC's aggregation.
    pub activation: Activation,
}

impl EncoderConfig {
    /// LightGCN with sum combination.
    pub fn lightgcn(dim: usize, layers: usize) -> Self {
        Self {
            kind: EncoderKind::LightGcn,
            dim,
            layers,
            combination: Combination::Sum,
            message_dropout: 0.0,
            activation: Activation::Relu,
        }
    }

    /// LightGCN that keeps only the last layer.
    pub fn lightgcn_single(dim: usize, layers: usize) -> Self {
        Self {
            combination: Combination::Last,
            ..Self::lightgcn(dim, layers)
        }
    }

    pub fn mf(dim: usize) -> Self {
        Self {
            kind: EncoderKind::Mf,
            layers: 0,
            combination: Combination::Last,
            ..Self::lightgcn(dim, 0)
        }
    }

    pub fn gcmc(dim: usize) -> Self {
        Self {
            kind: EncoderKind::GcMc,
            layers: 1,
            combination: Combination::Last,
            ..Self::lightgcn(dim, 1)
        }
    }

    pub fn lrgccf(dim: usize, layers: usize) -> Self {
        Self {
            kind: EncoderKind::LrGccf,
            combination: Combination::Concat,
            ..Self::lightgcn(dim, layers)
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim == 0 {
            return Err(EncoderError::InvalidConfig("dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.message_dropout) {
            return Err(EncoderError::InvalidConfig(
                "message_dropout must lie in [0, 1)",
            ));
        }
        match self.kind {
            EncoderKind::Mf => {}
            EncoderKind::GcMc if self.layers != 1 => {
                return Err(EncoderError::InvalidConfig("gcmc uses exactly one layer"))
            }
            _ if self.layers == 0 => {
                return Err(EncoderError::InvalidConfig(
                    "zero layers is only valid for mf",
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of `d x d` weight matrices the kind needs.
    pub fn weight_count(&self) -> usize {
        match self.kind {
            EncoderKind::Mf | EncoderKind::LightGcn => 0,
            EncoderKind::GcMc => 2,
            EncoderKind::LrGccf => self.layers,
        }
    }

    /// Width of final embeddings.
    pub fn output_dim(&self) -> usize {
        match (self.kind, self.combination) {
            (EncoderKind::LightGcn | EncoderKind::LrGccf, Combination::Concat) => {
                self.dim * (self.layers + 1)
            }
            _ => self.dim,
        }
    }
}

/// Layers used when an MF model needs perturbed-view embeddings: MF has no
/// propagation of its own, so views are encoded by LightGCN over the shared table.
pub const MF_VIEW_LAYERS: usize = 2;

/// Trainable parameters of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub users: Tensor,
    pub items: Tensor,
    pub weights: Vec<Tensor>,
}

/// Tape handles of a [`Model`]'s parameters.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub users: Var,
    pub items: Var,
    pub weights: Vec<Var>,
}

/// Training forward passes draw message-dropout masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

fn xavier_uniform(rows: usize, cols: usize, rng: &mut rng::SplitMix64) -> Tensor {
    let bound = math::sqrt(6.0 / (rows + cols) as f64);
    Tensor::from_fn(rows, cols, |_, _| (2.0 * rng::unit_f64(rng) - 1.0) * bound)
}

impl Model {
    /// Xavier-uniform initialization of tables and weights.
    pub fn init(
        config: EncoderConfig,
        num_users: usize,
        num_items: usize,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = rng::seeded(seed, &[stream::INIT]);
        let d = config.dim;
        let users = xavier_uniform(num_users, d, &mut rng);
        let items = xavier_uniform(num_items, d, &mut rng);
        let weights = (0..config.weight_count())
            .map(|_| xavier_uniform(d, d, &mut rng))
            .collect();
        Ok(Self {
            config,
            users,
            items,
            weights,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    /// Parameters in registration order: users, items, weights.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = alloc::vec![&self.users, &self.items];
        p.extend(self.weights.iter());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = alloc::vec![&mut self.users, &mut self.items];
        p.extend(self.weights.iter_mut());
        p
    }

    pub fn register(&self, tape: &mut Tape<'_>) -> ModelVars {
        ModelVars {
            users: tape.param(self.users.clone()),
            items: tape.param(self.items.clone()),
            weights: self.weights.iter().map(|w| tape.param(w.clone())).collect(),
        }
    }

    pub fn constants(&self, tape: &mut Tape<'_>) -> ModelVars {
        ModelVars {
            users: tape.constant(self.users.clone()),
            items: tape.constant(self.items.clone()),
            weights: self
                .weights
                .iter()
                .map(|w| tape.constant(w.clone()))
                .collect(),
        }
    }

    /// Final embeddings without dropout and without recording gradients.
    pub fn embed(&self, graph: &BipartiteGraph) -> Result<(Tensor, Tensor), EncoderError> {
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let (u, i) = forward(&mut tape, &self.config, &vars, graph, Mode::Eval)?;
        Ok((tape.value(u).clone(), tape.value(i).clone()))
    }
}

/// Dispatches on the encoder kind.
pub fn forward<'g>(
    tape: &mut Tape<'g>,
    cfg: &EncoderConfig,
    vars: &ModelVars,
    graph: &'g BipartiteGraph,
    mode: Mode,
) -> Result<(Var, Var), EncoderError> {
    cfg.validate()?;
    if vars.weights.len() != cfg.weight_count() {
        return Err(EncoderError::MissingWeights {
            expected: cfg.weight_count(),
            found: vars.weights.len(),
        });
    }
    match cfg.kind {
        EncoderKind::Mf => Ok(mf_forward(vars)),
        EncoderKind::GcMc => gcmc_forward(tape, cfg, vars, graph, mode),
        EncoderKind::LrGccf => lrgccf_forward(tape, cfg, vars, graph, mode),
        EncoderKind::LightGcn => lightgcn_forward(tape, cfg, vars, graph, mode),
    }
}

/// Encoder used for perturbed graph views. Identical to [`forward`] except
/// that MF, which ignores the graph, is replaced by LightGCN propagation of
/// the same table.
pub fn forward_view<'g>(
    tape: &mut Tape<'g>,
    cfg: &EncoderConfig,
    vars: &ModelVars,
    graph: &'g BipartiteGraph,
    mode: Mode,
) -> Result<(Var, Var), EncoderError> {
    if cfg.kind == EncoderKind::Mf {
        let light = EncoderConfig {
            kind: EncoderKind::LightGcn,
            layers: MF_VIEW_LAYERS,
            combination: Combination::Sum,
            ..*cfg
        };
        return lightgcn_forward(tape, &light, vars, graph, mode);
    }
    forward(tape, cfg, vars, graph, mode)
}

/// Identity encoder.
pub fn mf_forward(vars: &ModelVars) -> (Var, Var) {
    (vars.users, vars.items)
}

/// `e^(k+1)_u = sum_{i in N_u} c_ui e^(k)_i`, alternating sides, then combined.
pub fn lightgcn_forward<'g>(
    tape: &mut Tape<'g>,
    cfg: &EncoderConfig,
    vars: &ModelVars,
    graph: &'g BipartiteGraph,
    mode: Mode,
) -> Result<(Var, Var), EncoderError> {
    let mut users = alloc::vec![vars.users];
    let mut items = alloc::vec![vars.items];
    for k in 0..cfg.layers {
        let u = tape.spmm(graph, Direction::UsersFromItems, items[k])?;
        let i = tape.spmm(graph, Direction::ItemsFromUsers, users[k])?;
        users.push(dropout_layer(tape, u, cfg, mode, k, 0)?);
        items.push(dropout_layer(tape, i, cfg, mode, k, 1)?);
    }
    Ok((
        combine(tape, &users, cfg.combination)?,
        combine(tape, &items, cfg.combination)?,
    ))
}

/// `e^(k+1)_u = (e^(k)_u + sum_{i in N_u} c_ui e^(k)_i) W_k`, weights shared by
/// both sides, then combined.
pub fn lrgccf_forward<'g>(
    tape: &mut Tape<'g>,
    cfg: &EncoderConfig,
    vars: &ModelVars,
    graph: &'g BipartiteGraph,
    mode: Mode,
) -> Result<(Var, Var), EncoderError> {
    let mut users = alloc::vec![vars.users];
    let mut items = alloc::vec![vars.items];
    for k in 0..cfg.layers {
        let w = vars.weights[k];
        let agg_u = tape.spmm(graph, Direction::UsersFromItems, items[k])?;
        let agg_i = tape.spmm(graph, Direction::ItemsFromUsers, users[k])?;
        let su = tape.add(users[k], agg_u)?;
        let si = tape.add(items[k], agg_i)?;
        let u = tape.matmul(su, w)?;
        let i = tape.matmul(si, w)?;
        users.push(dropout_layer(tape, u, cfg, mode, k, 0)?);
        items.push(dropout_layer(tape, i, cfg, mode, k, 1)?);
    }
    Ok((
        combine(tape, &users, cfg.combination)?,
        combine(tape, &items, cfg.combination)?,
    ))
}

/// Single layer `e_u = sigma(sum_{i in N_u} c_ui e_i W_2) W_1`, mirrored for items.
pub fn gcmc_forward<'g>(
    tape: &mut Tape<'g>,
    cfg: &EncoderConfig,
    vars: &ModelVars,
    graph: &'g BipartiteGraph,
    mode: Mode,
) -> Result<(Var, Var), EncoderError> {
    let (w1, w2) = (vars.weights[0], vars.weights[1]);
    let hi = tape.matmul(vars.items, w2)?;
    let hu = tape.matmul(vars.users, w2)?;
    let au = tape.spmm(graph, Direction::UsersFromItems, hi)?;
    let ai = tape.spmm(graph, Direction::ItemsFromUsers, hu)?;
    let au = tape.activate(au, cfg.activation)?;
    let ai = tape.activate(ai, cfg.activation)?;
    let au = dropout_layer(tape, au, cfg, mode, 0, 0)?;
    let ai = dropout_layer(tape, ai, cfg, mode, 0, 1)?;
    Ok((tape.matmul(au, w1)?, tape.matmul(ai, w1)?))
}

fn combine(tape: &mut Tape<'_>, layers: &[Var], how: Combination) -> Result<Var, AutodiffError> {
    match how {
        Combination::Sum => tape.sum_of(layers),
        Combination::Mean => tape.mean_of(layers),
        Combination::Last => Ok(*layers.last().expect("layer 0 always present")),
        Combination::Concat => tape.concat_cols(layers),
    }
}

fn dropout_layer(
    tape: &mut Tape<'_>,
    x: Var,
    cfg: &EncoderConfig,
    mode: Mode,
    layer: usize,
    side: u64,
) -> Result<Var, AutodiffError> {
    match mode {
        Mode::Train { seed } if cfg.message_dropout > 0.0 => {
            let s = rng::derive_seed(seed, &[stream::MESSAGE_DROPOUT, layer as u64, side]);
            message_dropout(tape, x, cfg.message_dropout, s)
        }
        _ => Ok(x),
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `ratio`, otherwise
/// `1 / (1 - ratio)`.
pub fn dropout_mask(rows: usize, cols: usize, ratio: f64, seed: u64) -> Tensor {
    let keep = 1.0 / (1.0 - ratio);
    let mut rng = rng::seeded(seed, &[]);
    Tensor::from_fn(rows, cols, |_, _| {
        if rng::unit_f64(&mut rng) < ratio {
            0.0
        } else {
            keep
        }
    })
}

/// Zeroes propagated-message entries with probability `ratio` and rescales the
/// survivors. Identity when `ratio == 0`.
pub fn message_dropout(
    tape: &mut Tape<'_>,
    x: Var,
    ratio: f64,
    seed: u64,
) -> Result<Var, AutodiffError> {
    if ratio == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let mask = tape.constant(dropout_mask(r, c, ratio, seed));
    tape.mul(x, mask)
}
