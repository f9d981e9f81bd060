//! Normalized user-item bipartite graphs.
//!
//! Adjacency is stored twice in CSR form, once per direction, with the
//! symmetric normalization coefficient `1 / (sqrt(|N_u|) * sqrt(|N_i|))`
//! attached to every stored edge. Both copies of an edge carry the same bits.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::InteractionDataset;
use crate::math;
use crate::rng::{self, SeedableRng, SplitMix64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("{kind} index {index} out of range (have {len})")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },
    #[error("drop probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
}

/// Compressed sparse rows with a per-entry coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    coeffs: Vec<f64>,
    ncols: usize,
}

impl Csr {
    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[s..e], &self.coeffs[s..e])
    }

    #[inline]
    pub fn degree(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// `out[r] = sum_c coeff(r, c) * x[c]` for a row-major `x` with `width` columns.
    pub fn spmm_into(&self, x: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols * width);
        debug_assert_eq!(out.len(), self.nrows() * width);
        for r in 0..self.nrows() {
            let (cols, coeffs) = self.row(r);
            let dst = &mut out[r * width..(r + 1) * width];
            dst.fill(0.0);
            for (&c, &w) in cols.iter().zip(coeffs) {
                let src = &x[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    fn from_sorted_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            row_ptr,
            cols: triplets.iter().map(|t| t.1).collect(),
            coeffs: triplets.iter().map(|t| t.2).collect(),
            ncols,
        }
    }
}

/// Which side receives the aggregated messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Rows are users, aggregating over their items.
    UsersFromItems,
    /// Rows are items, aggregating over their users.
    ItemsFromUsers,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::UsersFromItems => Direction::ItemsFromUsers,
            Direction::ItemsFromUsers => Direction::UsersFromItems,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    User(usize),
    Item(usize),
}

/// Neighbors of one node, sorted by neighbor index.
#[derive(Debug, Clone, Copy)]
pub struct Neighbors<'a> {
    pub indices: &'a [usize],
    pub coeffs: &'a [f64],
}

impl<'a> Neighbors<'a> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.indices
            .iter()
            .copied()
            .zip(self.coeffs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    user_to_items: Csr,
    item_to_users: Csr,
}

#[inline]
fn sym_norm(du: usize, di: usize) -> f64 {
    1.0 / (math::sqrt(du as f64) * math::sqrt(di as f64))
}

impl BipartiteGraph {
    pub fn from_dataset(train: &InteractionDataset) -> Self {
        Self::from_edges(train.num_users(), train.num_items(), train.pairs())
    }

    /// Builds the normalized graph from (user, item) edges. Duplicate edges must
    /// already be removed.
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Self {
        let mut udeg = vec![0usize; num_users];
        let mut ideg = vec![0usize; num_items];
        for &(u, i) in edges {
            udeg[u] += 1;
            ideg[i] += 1;
        }
        let mut fwd: Vec<(usize, usize, f64)> = edges
            .iter()
            .map(|&(u, i)| (u, i, sym_norm(udeg[u], ideg[i])))
            .collect();
        fwd.sort_unstable_by_key(|t| (t.0, t.1));
        let mut bwd: Vec<(usize, usize, f64)> = fwd.iter().map(|&(u, i, c)| (i, u, c)).collect();
        bwd.sort_unstable_by_key(|t| (t.0, t.1));
        Self {
            user_to_items: Csr::from_sorted_triplets(num_users, num_items, &fwd),
            item_to_users: Csr::from_sorted_triplets(num_items, num_users, &bwd),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_to_items.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item_to_users.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.user_to_items.nnz()
    }

    pub fn adjacency(&self, dir: Direction) -> &Csr {
        match dir {
            Direction::UsersFromItems => &self.user_to_items,
            Direction::ItemsFromUsers => &self.item_to_users,
        }
    }

    pub fn neighbors(&self, node: Node) -> Result<Neighbors<'_>, GraphError> {
        let (csr, kind, index) = match node {
            Node::User(u) => (&self.user_to_items, "user", u),
            Node::Item(i) => (&self.item_to_users, "item", i),
        };
        if index >= csr.nrows() {
            return Err(GraphError::OutOfRange {
                kind,
                index,
                len: csr.nrows(),
            });
        }
        let (indices, coeffs) = csr.row(index);
        Ok(Neighbors { indices, coeffs })
    }

    pub fn user_items(&self, user: usize) -> &[usize] {
        self.user_to_items.row(user).0
    }

    pub fn has_edge(&self, user: usize, item: usize) -> bool {
        self.user_items(user).binary_search(&item).is_ok()
    }

    /// All edges as `(user, item, coeff)` in user-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_users()).flat_map(move |u| {
            let (cols, coeffs) = self.user_to_items.row(u);
            cols.iter().zip(coeffs).map(move |(&i, &c)| (u, i, c))
        })
    }

    /// Keeps each edge independently with probability `1 - p`.
    ///
    /// With `renormalize` the surviving edges get coefficients from their degrees
    /// in the view; otherwise they keep the parent's coefficients. Nodes that lose
    /// every edge stay in the graph and aggregate to zero.
    pub fn perturb_edges(
        &self,
        p: f64,
        seed: u64,
        renormalize: bool,
    ) -> Result<PerturbedView, GraphError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(GraphError::BadProbability(p));
        }
        let mut rng = SplitMix64::seed_from_u64(seed);
        let kept: Vec<(usize, usize, f64)> = self
            .edges()
            .filter(|_| rng::unit_f64(&mut rng) >= p)
            .collect();
        let graph = if renormalize {
            let pairs: Vec<(usize, usize)> = kept.iter().map(|&(u, i, _)| (u, i)).collect();
            Self::from_edges(self.num_users(), self.num_items(), &pairs)
        } else {
            let mut bwd: Vec<(usize, usize, f64)> =
                kept.iter().map(|&(u, i, c)| (i, u, c)).collect();
            bwd.sort_unstable_by_key(|t| (t.0, t.1));
            Self {
                user_to_items: Csr::from_sorted_triplets(self.num_users(), self.num_items(), &kept),
                item_to_users: Csr::from_sorted_triplets(self.num_items(), self.num_users(), &bwd),
            }
        };
        Ok(PerturbedView {
            graph,
            drop_probability: p,
            view_seed: seed,
        })
    }
}

/// An edge-dropout view of a parent graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedView {
    pub graph: BipartiteGraph,
    pub drop_probability: f64,
    pub view_seed: u64,
}
