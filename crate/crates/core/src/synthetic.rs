//! Block-structured synthetic interaction data.
//!
//! Users and items are assigned round-robin to latent blocks. Each user draws
//! a fixed number of distinct items, preferring items of its own block; the
//! remainder comes uniformly from the other blocks.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::data::{DataError, InteractionDataset};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub interactions_per_user: usize,
    /// Share of a user's interactions drawn from its own block, capped by the
    /// block's size.
    pub in_block_fraction: f64,
    pub seed: u64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            users: 300,
            items: 400,
            blocks: 20,
            interactions_per_user: 30,
            in_block_fraction: 0.6,
            seed: 0,
        }
    }
}

pub fn block_of(index: usize, blocks: usize) -> usize {
    index % blocks
}

pub fn generate(cfg: &BlockConfig) -> Result<InteractionDataset, DataError> {
    let mut rng = rng::seeded(cfg.seed, &[0x5157]);
    let per_user = cfg.interactions_per_user.min(cfg.items);
    let mut pairs = Vec::with_capacity(cfg.users * per_user);
    for u in 0..cfg.users {
        let b = block_of(u, cfg.blocks);
        let mut own: Vec<usize> = (0..cfg.items)
            .filter(|&i| block_of(i, cfg.blocks) == b)
            .collect();
        let mut other: Vec<usize> = (0..cfg.items)
            .filter(|&i| block_of(i, cfg.blocks) != b)
            .collect();
        rng::shuffle(&mut own, &mut rng);
        rng::shuffle(&mut other, &mut rng);
        let wanted = libm::round(cfg.in_block_fraction * per_user as f64) as usize;
        let n_own = wanted.min(own.len());
        let n_other = (per_user - n_own).min(other.len());
        let chosen: BTreeSet<usize> = own[..n_own]
            .iter()
            .chain(&other[..n_other])
            .copied()
            .collect();
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }
    InteractionDataset::from_index_pairs(cfg.users, cfg.items, pairs)
}
