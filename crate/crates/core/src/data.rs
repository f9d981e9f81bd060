//! Implicit-feedback interaction datasets.
//!
//! Text input holds one interaction per line: a user id and an item id
//! separated by whitespace, with any further columns ignored. Ids are opaque
//! strings and are re-indexed densely in first-seen order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::math;
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: expected `<user> <item> [extra columns]`")]
    MalformedLine { line: usize },
    #[error("no interactions left after filtering")]
    Empty,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("pair ({user}, {item}) outside {num_users} users x {num_items} items")]
    OutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
}

/// Bidirectional raw id <-> dense index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary whose raw ids are `"{prefix}{index}"`.
    pub fn synthetic(prefix: &str, n: usize) -> Self {
        let mut v = Self::new();
        for i in 0..n {
            let mut id = String::from(prefix);
            id.push_str(&i.to_string());
            v.intern(&id);
        }
        v
    }

    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn encode(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Minimum interaction counts applied by iterative k-core filtering.
///
/// Yelp/Amazon-style preprocessing uses the same threshold on both sides;
/// Steam-style preprocessing filters users only (`min_item_interactions = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
}

impl FilterConfig {
    pub fn symmetric(k: usize) -> Self {
        Self {
            min_user_interactions: k,
            min_item_interactions: k,
        }
    }

    pub fn users_only(k: usize) -> Self {
        Self {
            min_user_interactions: k,
            min_item_interactions: 0,
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::symmetric(1)
    }
}

/// Deduplicated binary interactions over dense user and item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    users: Vocab,
    items: Vocab,
    pairs: Vec<(usize, usize)>,
}

impl InteractionDataset {
    /// Parses interaction text and applies k-core filtering.
    pub fn parse(text: &str, filter: FilterConfig) -> Result<Self, DataError> {
        let mut raw: Vec<(&str, &str)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            match (cols.next(), cols.next()) {
                (Some(u), Some(i)) => raw.push((u, i)),
                _ => return Err(DataError::MalformedLine { line: n + 1 }),
            }
        }
        Self::from_raw_pairs(raw, filter)
    }

    /// Builds a dataset from raw id pairs, collapsing duplicates and filtering.
    pub fn from_raw_pairs<'a, I>(raw: I, filter: FilterConfig) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut pairs: Vec<(&str, &str)> = raw.into_iter().collect();
        // Dedup while keeping first-seen order for stable vocabularies.
        let mut seen = BTreeMap::new();
        pairs.retain(|p| seen.insert(*p, ()).is_none());

        loop {
            let mut user_deg: BTreeMap<&str, usize> = BTreeMap::new();
            let mut item_deg: BTreeMap<&str, usize> = BTreeMap::new();
            for &(u, i) in &pairs {
                *user_deg.entry(u).or_default() += 1;
                *item_deg.entry(i).or_default() += 1;
            }
            let before = pairs.len();
            pairs.retain(|(u, i)| {
                user_deg[u] >= filter.min_user_interactions
                    && item_deg[i] >= filter.min_item_interactions
            });
            if pairs.len() == before {
                break;
            }
        }
        if pairs.is_empty() {
            return Err(DataError::Empty);
        }

        let mut users = Vocab::new();
        let mut items = Vocab::new();
        let pairs = pairs
            .into_iter()
            .map(|(u, i)| (users.intern(u), items.intern(i)))
            .collect();
        Ok(Self {
            users,
            items,
            pairs,
        })
    }

    /// Dataset over pre-indexed pairs with `u{n}` / `i{n}` raw ids. Duplicates are collapsed.
    pub fn from_index_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, DataError> {
        Self::with_vocabs(
            Vocab::synthetic("u", num_users),
            Vocab::synthetic("i", num_items),
            pairs,
        )
    }

    /// Dataset over existing vocabularies. Users without interactions are allowed
    /// here; this is how the test half of a split is represented.
    pub fn with_vocabs(
        users: Vocab,
        items: Vocab,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, DataError> {
        let (num_users, num_items) = (users.len(), items.len());
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for (user, item) in pairs {
            if user >= num_users || item >= num_items {
                return Err(DataError::OutOfRange {
                    user,
                    item,
                    num_users,
                    num_items,
                });
            }
            if seen.insert((user, item), ()).is_none() {
                out.push((user, item));
            }
        }
        Ok(Self {
            users,
            items,
            pairs: out,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn user_vocab(&self) -> &Vocab {
        &self.users
    }

    pub fn item_vocab(&self) -> &Vocab {
        &self.items
    }

    /// Items of every user, sorted ascending.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut lists = alloc::vec![Vec::new(); self.num_users()];
        for &(u, i) in &self.pairs {
            lists[u].push(i);
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        lists
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.num_users(),
            items: self.num_items(),
            interactions: self.len(),
            density: self.len() as f64 / (self.num_users() as f64 * self.num_items() as f64),
        }
    }

    /// Per-user random split: each user keeps `max(1, round(fraction * degree))`
    /// interactions for training and the rest for testing.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<SplitDataset, DataError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DataError::BadFraction(train_fraction));
        }
        let mut train = Vec::with_capacity(self.len());
        let mut test = Vec::new();
        let mut users_without_test = 0;
        for (u, mut items) in self.items_by_user().into_iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            rng::shuffle(
                &mut items,
                &mut rng::seeded(seed, &[stream::SPLIT, u as u64]),
            );
            let keep = train_count(items.len(), train_fraction);
            if keep == items.len() {
                users_without_test += 1;
            }
            train.extend(items[..keep].iter().map(|&i| (u, i)));
            test.extend(items[keep..].iter().map(|&i| (u, i)));
        }
        Ok(SplitDataset {
            train: Self::with_vocabs(self.users.clone(), self.items.clone(), train)?,
            test: Self::with_vocabs(self.users.clone(), self.items.clone(), test)?,
            split_seed: seed,
            users_without_test,
        })
    }
}

fn train_count(degree: usize, fraction: f64) -> usize {
    let k = math::round(fraction * degree as f64) as usize;
    k.clamp(1, degree)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

/// Train/test halves over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionDataset,
    pub test: InteractionDataset,
    pub split_seed: u64,
    /// Users whose interactions all went to training (degree too small to hold any out).
    pub users_without_test: usize,
}
