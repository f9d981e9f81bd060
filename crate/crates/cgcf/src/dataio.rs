//! Interaction files, dataset statistics and graph dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cgcf_core::{
    BipartiteGraph, DataError, DatasetStats, FilterConfig, InteractionDataset, SplitDataset, Vocab,
};

use crate::config::{DataConfig, DataSource};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn data_err(path: &Path) -> impl FnOnce(DataError) -> LoadError + '_ {
    move |source| LoadError::Data {
        path: path.to_path_buf(),
        source,
    }
}

/// Whitespace-separated `(user, item)` id pairs; extra columns are ignored.
pub fn read_raw_pairs(path: &Path) -> Result<Vec<(String, String)>, LoadError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut cols = line.split_whitespace();
        match (cols.next(), cols.next()) {
            (Some(u), Some(i)) => out.push((u.to_string(), i.to_string())),
            (None, _) => {}
            _ => return Err(data_err(path)(DataError::MalformedLine { line: n + 1 })),
        }
    }
    Ok(out)
}

pub fn load_interactions(
    path: &Path,
    filter: FilterConfig,
) -> Result<InteractionDataset, LoadError> {
    InteractionDataset::parse(&read(path)?, filter).map_err(data_err(path))
}

/// Train and test files over one shared vocabulary; ids are indexed in
/// first-seen order across train then test.
pub fn load_presplit(train: &Path, test: &Path) -> Result<SplitDataset, LoadError> {
    let train_raw = read_raw_pairs(train)?;
    let test_raw = read_raw_pairs(test)?;
    let (mut users, mut items) = (Vocab::new(), Vocab::new());
    let mut index = |raw: &[(String, String)]| -> Vec<(usize, usize)> {
        raw.iter()
            .map(|(u, i)| (users.intern(u), items.intern(i)))
            .collect()
    };
    let train_pairs = index(&train_raw);
    let test_pairs = index(&test_raw);
    split_over(users, items, train_pairs, test_pairs).map_err(data_err(train))
}

/// A split over fixed vocabularies.
pub fn split_over(
    users: Vocab,
    items: Vocab,
    train: Vec<(usize, usize)>,
    test: Vec<(usize, usize)>,
) -> Result<SplitDataset, DataError> {
    let train = InteractionDataset::with_vocabs(users.clone(), items.clone(), train)?;
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    let test = InteractionDataset::with_vocabs(users, items, test)?;
    let users_without_test = test.items_by_user().iter().filter(|l| l.is_empty()).count();
    Ok(SplitDataset {
        train,
        test,
        split_seed: 0,
        users_without_test,
    })
}

pub fn load_split(data: &DataConfig) -> Result<SplitDataset, LoadError> {
    match &data.source {
        DataSource::Single {
            path,
            train_fraction,
            split_seed,
        } => load_interactions(path, data.filter)?
            .split(*train_fraction, *split_seed)
            .map_err(data_err(path)),
        DataSource::Presplit { train, test } => load_presplit(train, test),
    }
}

/// Interaction text with raw ids, one pair per line.
pub fn format_pairs(ds: &InteractionDataset) -> String {
    let mut s = String::new();
    for &(u, i) in ds.pairs() {
        let _ = writeln!(
            s,
            "{}\t{}",
            ds.user_vocab().decode(u).unwrap_or_default(),
            ds.item_vocab().decode(i).unwrap_or_default()
        );
    }
    s
}

pub fn stats_json(s: &DatasetStats) -> serde_json::Value {
    serde_json::json!({
        "users": s.users,
        "items": s.items,
        "interactions": s.interactions,
        "density": s.density,
    })
}

/// Two-column table with right-aligned values.
pub fn stats_table(s: &DatasetStats) -> String {
    let rows = [
        ("users", s.users.to_string()),
        ("items", s.items.to_string()),
        ("interactions", s.interactions.to_string()),
        ("density", format!("{:.5}", s.density)),
    ];
    let key_w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let val_w = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<key_w$}  {v:>val_w$}");
    }
    out
}

/// `user<TAB>item<TAB>coefficient` per edge, in user-major order.
pub fn graph_dump(graph: &BipartiteGraph) -> String {
    let mut s = String::from("user\titem\tcoefficient\n");
    for (u, i, c) in graph.edges() {
        let _ = writeln!(s, "{u}\t{i}\t{c}");
    }
    s
}
