//! Training objectives.
//!
//! Losses are built from tape operations, so every one of them is
//! differentiable end to end. Contrastive losses work on cosine similarities
//! divided by a temperature `t`; those are bounded above by `1/t`, and every
//! exponential is evaluated as `exp(s - 1/t)` so nothing can overflow. The
//! shift cancels exactly in each log-ratio.

use alloc::vec::Vec;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::math;

type Result<T> = core::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossConfigError {
    #[error("{field} = {value} is outside its valid range ({range})")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// Lower bound applied to the debiased negative score `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampFloor {
    /// `e^{-1/t2}`, the smallest value a mean of `e^{phi}` can take.
    /// Inactive whenever `tau_plus = 0`.
    Lower,
    /// `e^{1/t2}`, the largest value a single `e^{phi}` can take. Dominates `g`
    /// for nearly every input, so negatives then carry no gradient.
    Upper,
}

impl ClampFloor {
    pub fn value(self, t2: f64) -> f64 {
        match self {
            ClampFloor::Lower => math::exp(-1.0 / t2),
            ClampFloor::Upper => math::exp(1.0 / t2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClampFloor::Lower => "lower",
            ClampFloor::Upper => "upper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lower" => Some(ClampFloor::Lower),
            "upper" => Some(ClampFloor::Upper),
            _ => None,
        }
    }
}

/// The recommendation loss paired with the optional graph contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainLoss {
    /// Pairwise ranking with one sampled negative per positive.
    Bpr,
    /// In-batch (debiased) contrastive loss; plain CL when `tau_plus = 0`.
    Dcl,
}

impl MainLoss {
    pub fn name(self) -> &'static str {
        match self {
            MainLoss::Bpr => "bpr",
            MainLoss::Dcl => "dcl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bpr" => Some(MainLoss::Bpr),
            "dcl" => Some(MainLoss::Dcl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub main: MainLoss,
    /// Graph contrastive temperature.
    pub t1: f64,
    /// Similarity temperature of the in-batch loss.
    pub t2: f64,
    /// Probability that an in-batch negative is actually positive.
    pub tau_plus: f64,
    /// Weight of the graph contrastive term; the main loss gets `1 - beta`.
    pub beta: f64,
    /// L2 strength on batch-touched base embeddings and encoder weights.
    pub lambda: f64,
    /// Edge drop probability of the two perturbed views.
    pub drop_probability: f64,
    pub use_clamp: bool,
    pub clamp_floor: ClampFloor,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            main: MainLoss::Dcl,
            t1: 0.8,
            t2: 0.1,
            tau_plus: 1e-3,
            beta: 0.1,
            lambda: 1e-4,
            drop_probability: 0.1,
            use_clamp: true,
            clamp_floor: ClampFloor::Lower,
        }
    }
}

fn range_err(field: &'static str, value: f64, range: &'static str) -> LossConfigError {
    LossConfigError::OutOfRange {
        field,
        value,
        range,
    }
}

impl LossConfig {
    pub fn validate(&self) -> core::result::Result<(), LossConfigError> {
        if self.t1.is_nan() || self.t1 <= 0.0 {
            return Err(range_err("t1", self.t1, "> 0"));
        }
        if self.t2.is_nan() || self.t2 <= 0.0 {
            return Err(range_err("t2", self.t2, "> 0"));
        }
        if !(0.0..1.0).contains(&self.tau_plus) {
            return Err(range_err("tau_plus", self.tau_plus, "[0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(range_err("beta", self.beta, "[0, 1]"));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(range_err("lambda", self.lambda, ">= 0"));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(range_err(
                "drop_probability",
                self.drop_probability,
                "[0, 1]",
            ));
        }
        Ok(())
    }

    /// Whether training needs the perturbed views. Dropping every edge leaves
    /// nothing to contrast, so `p = 1` disables the term.
    pub fn gcl_enabled(&self) -> bool {
        self.beta > 0.0 && self.drop_probability < 1.0
    }
}

fn broadcast_col(col: &Tensor, cols: usize) -> Tensor {
    Tensor::from_fn(col.rows(), cols, |r, _| col.get(r, 0))
}

fn off_diagonal(n: usize) -> Tensor {
    Tensor::from_fn(n, n, |r, c| if r == c { 0.0 } else { 1.0 })
}

/// Mean of `-ln sigmoid(pos - neg)` over the batch.
pub fn bpr_loss(tape: &mut Tape<'_>, scores_pos: Var, scores_neg: Var) -> Result<Var> {
    let diff = tape.sub(scores_pos, scores_neg)?;
    let ls = tape.log_sigmoid(diff)?;
    let m = tape.mean(ls)?;
    tape.scale(m, -1.0)
}

/// Mean over rows of `-log(e^{pos} / (e^{pos} + sum_l e^{neg_l}))`.
///
/// `phi_pos` is `B x 1`, `phi_negs` is `B x L`. Rows are shifted by their
/// maximum before exponentiation.
pub fn cl_loss(tape: &mut Tape<'_>, phi_pos: Var, phi_negs: Var) -> Result<Var> {
    let (pos, negs) = (tape.value(phi_pos), tape.value(phi_negs));
    if pos.cols() != 1 || pos.rows() != negs.rows() || negs.cols() == 0 {
        return Err(AutodiffError::ShapeMismatch {
            op: "cl_loss",
            lhs: pos.shape(),
            rhs: negs.shape(),
        });
    }
    let shift = Tensor::from_fn(pos.rows(), 1, |r, _| {
        negs.row(r).iter().copied().fold(pos.get(r, 0), f64::max)
    });
    let shift_wide = tape.constant(broadcast_col(&shift, negs.cols()));
    let shift = tape.constant(shift);

    let p = tape.sub(phi_pos, shift)?;
    let n = tape.sub(phi_negs, shift_wide)?;
    let ep = tape.exp(p)?;
    let en = tape.exp(n)?;
    let sn = tape.row_sum(en)?;
    let denom = tape.add(ep, sn)?;
    let log_denom = tape.log(denom)?;
    let per_row = tape.sub(log_denom, p)?;
    tape.mean(per_row)
}

/// Debiased negative score
/// `g = (mean(e^{phi_neg}) - tau_plus * e^{phi_pos}) / (1 - tau_plus)`.
pub fn dcl_negative_score(phi_pos: f64, phi_negs: &[f64], tau_plus: f64) -> f64 {
    let mean = phi_negs.iter().map(|&s| math::exp(s)).sum::<f64>() / phi_negs.len() as f64;
    (mean - tau_plus * math::exp(phi_pos)) / (1.0 - tau_plus)
}

/// `max(g, e^{1/t2})`.
pub fn dcl_clamp(g: f64, t2: f64) -> f64 {
    dcl_clamp_with(g, t2, ClampFloor::Upper)
}

pub fn dcl_clamp_with(g: f64, t2: f64, floor: ClampFloor) -> f64 {
    g.max(floor.value(t2))
}

/// Pieces of the in-batch debiased loss, kept for inspection in tests.
#[derive(Debug, Clone, Copy)]
pub struct DclNodes {
    pub loss: Var,
    /// Clamped negative scores `g'` scaled by `e^{-1/t2}`, `B x 1`.
    pub scaled_g: Var,
}

/// Debiased contrastive loss with in-batch negatives.
///
/// Row `j` of `users` pairs with row `j` of `items`. The negatives of anchor
/// `u_j` are the other `B - 1` users and the other `B - 1` items of the batch.
pub fn dcl_loss(tape: &mut Tape<'_>, users: Var, items: Var, cfg: &LossConfig) -> Result<Var> {
    Ok(dcl_loss_nodes(tape, users, items, cfg)?.loss)
}

pub fn dcl_loss_nodes(
    tape: &mut Tape<'_>,
    users: Var,
    items: Var,
    cfg: &LossConfig,
) -> Result<DclNodes> {
    let b = tape.value(users).rows();
    if b < 2 || tape.value(items).rows() != b {
        return Err(AutodiffError::ShapeMismatch {
            op: "dcl_loss",
            lhs: tape.value(users).shape(),
            rhs: tape.value(items).shape(),
        });
    }
    let t2 = cfg.t2;
    let shift = 1.0 / t2;
    let n_neg = (2 * b - 2) as f64;

    let s_uu = tape.cosine_similarity_matrix(users, users, t2)?;
    let s_ui = tape.cosine_similarity_matrix(users, items, t2)?;
    let pos = tape.diagonal(s_ui)?;
    let pos = tape.add_scalar(pos, -shift)?;

    let mask = tape.constant(off_diagonal(b));
    let e_uu = tape.add_scalar(s_uu, -shift)?;
    let e_uu = tape.exp(e_uu)?;
    let e_uu = tape.mul(e_uu, mask)?;
    let e_ui = tape.add_scalar(s_ui, -shift)?;
    let e_ui = tape.exp(e_ui)?;
    let e_ui = tape.mul(e_ui, mask)?;
    let r_uu = tape.row_sum(e_uu)?;
    let r_ui = tape.row_sum(e_ui)?;
    let neg_sum = tape.add(r_uu, r_ui)?;
    let neg_mean = tape.scale(neg_sum, 1.0 / n_neg)?;

    let e_pos = tape.exp(pos)?;
    let g = if cfg.tau_plus == 0.0 {
        neg_mean
    } else {
        let bias = tape.scale(e_pos, cfg.tau_plus)?;
        let diff = tape.sub(neg_mean, bias)?;
        tape.scale(diff, 1.0 / (1.0 - cfg.tau_plus))?
    };
    let g = if cfg.use_clamp {
        tape.clamp_min(g, cfg.clamp_floor.value(t2) * math::exp(-shift))?
    } else {
        g
    };

    let weighted = tape.scale(g, n_neg)?;
    let denom = tape.add(e_pos, weighted)?;
    let log_denom = tape.log(denom)?;
    let per_row = tape.sub(log_denom, pos)?;
    Ok(DclNodes {
        loss: tape.mean(per_row)?,
        scaled_g: g,
    })
}

/// Per-user graph contrastive losses `l(u) = l_12(u) + l_21(u)` as `B x 1`.
///
/// For view pair `(a, b)`, the numerator is the cross-view similarity of `u`
/// with itself and the denominator sums within-view similarities to every other
/// user plus cross-view similarities to every user, all divided by `t1`.
pub fn gcl_pair_loss(tape: &mut Tape<'_>, h1: Var, h2: Var, t1: f64) -> Result<Var> {
    if tape.value(h1).shape() != tape.value(h2).shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "gcl_pair_loss",
            lhs: tape.value(h1).shape(),
            rhs: tape.value(h2).shape(),
        });
    }
    let l12 = gcl_directed(tape, h1, h2, t1)?;
    let l21 = gcl_directed(tape, h2, h1, t1)?;
    tape.add(l12, l21)
}

fn gcl_directed(tape: &mut Tape<'_>, a: Var, b: Var, t1: f64) -> Result<Var> {
    let n = tape.value(a).rows();
    let shift = 1.0 / t1;
    let s_aa = tape.cosine_similarity_matrix(a, a, t1)?;
    let s_ab = tape.cosine_similarity_matrix(a, b, t1)?;
    let s_aa = tape.add_scalar(s_aa, -shift)?;
    let s_ab = tape.add_scalar(s_ab, -shift)?;
    let num = tape.diagonal(s_ab)?;

    let mask = tape.constant(off_diagonal(n));
    let e_aa = tape.exp(s_aa)?;
    let e_aa = tape.mul(e_aa, mask)?;
    let e_ab = tape.exp(s_ab)?;
    let within = tape.row_sum(e_aa)?;
    let cross = tape.row_sum(e_ab)?;
    let denom = tape.add(within, cross)?;
    let log_denom = tape.log(denom)?;
    tape.sub(log_denom, num)
}

/// Batch mean of per-user graph contrastive losses.
pub fn gcl_loss(tape: &mut Tape<'_>, per_user: Var) -> Result<Var> {
    tape.mean(per_user)
}

/// `beta * gcl + (1 - beta) * main + lambda * sum ||row||^2` over every tensor in
/// `regularized`. A missing `gcl` contributes zero.
pub fn total_objective(
    tape: &mut Tape<'_>,
    gcl: Option<Var>,
    main: Var,
    regularized: &[Var],
    cfg: &LossConfig,
) -> Result<Var> {
    let mut terms: Vec<Var> = Vec::new();
    if let Some(g) = gcl {
        terms.push(tape.scale(g, cfg.beta)?);
    }
    terms.push(tape.scale(main, 1.0 - cfg.beta)?);
    if cfg.lambda > 0.0 {
        for &r in regularized {
            let sq = tape.mul(r, r)?;
            let s = tape.sum(sq)?;
            terms.push(tape.scale(s, cfg.lambda)?);
        }
    }
    tape.sum_of(&terms)
}
