//! Full-ranking evaluation.
//!
//! Every item a user did not interact with during training is a candidate.
//! Candidates are ordered by descending score with ties broken by ascending
//! item index, and relevance is binary.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::autodiff::Tensor;
use crate::data::SplitDataset;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no user has test interactions")]
    NoEvaluableUsers,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(
        "embeddings cover {users} users x {items} items, data has {data_users} x {data_items}"
    )]
    SizeMismatch {
        users: usize,
        items: usize,
        data_users: usize,
        data_items: usize,
    },
}

/// Score used to rank items for a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    /// Inner product of final embeddings.
    Dot,
    /// Cosine similarity; the same ordering as the tempered similarity.
    Cosine,
}

impl Scoring {
    pub fn name(self) -> &'static str {
        match self {
            Scoring::Dot => "dot",
            Scoring::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dot" => Some(Scoring::Dot),
            "cosine" => Some(Scoring::Cosine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
}

/// Per-user train and test item lists (sorted ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalData {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub num_items: usize,
}

impl EvalData {
    pub fn from_split(split: &SplitDataset) -> Self {
        Self {
            train: split.train.items_by_user(),
            test: split.test.items_by_user(),
            num_items: split.train.num_items(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.train.len()
    }
}

fn normalized(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let n = math::sqrt(t.row(r).iter().map(|v| v * v).sum());
        if n > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Final embeddings prepared for scoring.
#[derive(Debug, Clone)]
pub struct Scorer {
    users: Tensor,
    items: Tensor,
}

impl Scorer {
    pub fn new(users: &Tensor, items: &Tensor, scoring: Scoring) -> Self {
        match scoring {
            Scoring::Dot => Self {
                users: users.clone(),
                items: items.clone(),
            },
            Scoring::Cosine => Self {
                users: normalized(users),
                items: normalized(items),
            },
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    /// Scores of every item for one user.
    pub fn scores(&self, user: usize) -> Vec<f64> {
        let u = self.users.row(user);
        (0..self.items.rows())
            .map(|i| u.iter().zip(self.items.row(i)).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[inline]
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    // `+ 0.0` maps -0.0 to 0.0 so signed zeros tie
    (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then(a.0.cmp(&b.0))
}

/// Items not in `excluded` (sorted), best first. Returns at most `limit` items.
pub fn full_rank_scores(scores: &[f64], excluded: &[usize], limit: usize) -> Vec<usize> {
    let mut cands: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| excluded.binary_search(i).is_err())
        .map(|(i, &s)| (i, s))
        .collect();
    if limit < cands.len() {
        if limit > 0 {
            cands.select_nth_unstable_by(limit - 1, rank_order);
        }
        cands.truncate(limit);
    }
    cands.sort_unstable_by(rank_order);
    cands.into_iter().map(|(i, _)| i).collect()
}

/// `|top-k ∩ test| / |test|`.
pub fn recall_at_k(ranking: &[usize], test: &[usize], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = ranking.iter().take(k).filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// Binary-gain DCG of the top `k` over the ideal DCG of `min(k, |test|)` hits.
pub fn ndcg_at_k(ranking: &[usize], test: &[usize], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (pos, item) in ranking.iter().take(k).enumerate() {
        if test.contains(item) {
            dcg += 1.0 / math::log2(pos as f64 + 2.0);
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(test.len()) {
        idcg += 1.0 / math::log2(pos as f64 + 2.0);
    }
    dcg / idcg
}

/// `(recall, ndcg)` for each user in `users`; `None` for users without test items.
pub fn per_user_metrics(
    scorer: &Scorer,
    data: &EvalData,
    k: usize,
    users: Range<usize>,
) -> Vec<Option<(f64, f64)>> {
    users
        .map(|u| {
            let test = &data.test[u];
            if test.is_empty() {
                return None;
            }
            let ranking = full_rank_scores(&scorer.scores(u), &data.train[u], k);
            Some((recall_at_k(&ranking, test, k), ndcg_at_k(&ranking, test, k)))
        })
        .collect()
}

/// Averages per-user metrics in user order.
pub fn reduce(
    k: usize,
    per_user: impl IntoIterator<Item = Option<(f64, f64)>>,
) -> Result<MetricReport, EvalError> {
    let (mut recall, mut ndcg, mut n) = (0.0, 0.0, 0usize);
    for (r, g) in per_user.into_iter().flatten() {
        recall += r;
        ndcg += g;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoEvaluableUsers);
    }
    Ok(MetricReport {
        k,
        recall: recall / n as f64,
        ndcg: ndcg / n as f64,
        users_evaluated: n,
    })
}

pub fn check_sizes(scorer: &Scorer, data: &EvalData, k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if scorer.num_users() != data.num_users() || scorer.num_items() != data.num_items {
        return Err(EvalError::SizeMismatch {
            users: scorer.num_users(),
            items: scorer.num_items(),
            data_users: data.num_users(),
            data_items: data.num_items,
        });
    }
    Ok(())
}

/// Mean recall@k and ndcg@k over users with test items.
pub fn evaluate(
    users: &Tensor,
    items: &Tensor,
    data: &EvalData,
    k: usize,
    scoring: Scoring,
) -> Result<MetricReport, EvalError> {
    let scorer = Scorer::new(users, items, scoring);
    check_sizes(&scorer, data, k)?;
    reduce(k, per_user_metrics(&scorer, data, k, 0..data.num_users()))
}
