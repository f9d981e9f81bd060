//! Plain-text model checkpoints.
//!
//! ```text
//! cgcf-checkpoint 1
//! kind lightgcn
//! layers 2
//! dim 32
//! combination sum
//! message_dropout 0
//! activation relu
//! scoring cosine
//! users 300
//! items 400
//! weights 0
//! [users]
//! <raw id> <dim values>        one line per user, in index order
//! [items]
//! <raw id> <dim values>        one line per item, in index order
//! [weight 0]
//! <dim values>                 dim lines per weight matrix, row-major
//! ```
//!
//! Values are written in shortest round-trip form, so reading a checkpoint
//! back gives bit-identical parameters.

use std::fmt::Write as _;

use cgcf_core::{Combination, EncoderConfig, EncoderKind, Model, Scoring, Tensor, Vocab};

use crate::config::{activation_name, parse_activation};

const MAGIC: &str = "cgcf-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scoring: Scoring,
    pub users: Vocab,
    pub items: Vocab,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("truncated checkpoint: expected {0}")]
    Truncated(String),
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.model.config;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "kind {}", c.kind.name());
        let _ = writeln!(s, "layers {}", c.layers);
        let _ = writeln!(s, "dim {}", c.dim);
        let _ = writeln!(s, "combination {}", c.combination.name());
        let _ = writeln!(s, "message_dropout {}", c.message_dropout);
        let _ = writeln!(s, "activation {}", activation_name(c.activation));
        let _ = writeln!(s, "scoring {}", self.scoring.name());
        let _ = writeln!(s, "users {}", self.model.num_users());
        let _ = writeln!(s, "items {}", self.model.num_items());
        let _ = writeln!(s, "weights {}", self.model.weights.len());
        write_table(&mut s, "[users]", &self.model.users, Some(&self.users));
        write_table(&mut s, "[items]", &self.model.items, Some(&self.items));
        for (n, w) in self.model.weights.iter().enumerate() {
            write_table(&mut s, &format!("[weight {n}]"), w, None);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            last: 0,
        };
        let magic = lines.next("header")?;
        if magic != MAGIC {
            return Err(lines.err(format!("expected `{MAGIC}`")));
        }
        let kind = lines.field("kind", EncoderKind::parse)?;
        let layers = lines.field("layers", |v| v.parse().ok())?;
        let dim: usize = lines.field("dim", |v| v.parse().ok())?;
        let combination = lines.field("combination", Combination::parse)?;
        let message_dropout = lines.field("message_dropout", |v| v.parse().ok())?;
        let activation = lines.field("activation", parse_activation)?;
        let scoring = lines.field("scoring", Scoring::parse)?;
        let num_users: usize = lines.field("users", |v| v.parse().ok())?;
        let num_items: usize = lines.field("items", |v| v.parse().ok())?;
        let num_weights: usize = lines.field("weights", |v| v.parse().ok())?;
        let config = EncoderConfig {
            kind,
            dim,
            layers,
            combination,
            message_dropout,
            activation,
        };
        config.validate().map_err(|e| lines.err(e.to_string()))?;
        if num_weights != config.weight_count() {
            return Err(lines.err(format!(
                "{} needs {} weight matrices",
                kind.name(),
                config.weight_count()
            )));
        }

        let (users, user_ids) = read_table(&mut lines, "[users]", num_users, dim, true)?;
        let (items, item_ids) = read_table(&mut lines, "[items]", num_items, dim, true)?;
        let mut weights = Vec::with_capacity(num_weights);
        for n in 0..num_weights {
            weights.push(read_table(&mut lines, &format!("[weight {n}]"), dim, dim, false)?.0);
        }
        if let Some((n, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
            return Err(CheckpointError::Format {
                line: n + 1,
                reason: format!("unexpected trailing content `{extra}`"),
            });
        }
        Ok(Self {
            model: Model {
                config,
                users,
                items,
                weights,
            },
            scoring,
            users: user_ids,
            items: item_ids,
        })
    }
}

fn write_table(s: &mut String, header: &str, t: &Tensor, ids: Option<&Vocab>) {
    let _ = writeln!(s, "{header}");
    for r in 0..t.rows() {
        if let Some(v) = ids {
            s.push_str(v.decode(r).unwrap_or_default());
            s.push(' ');
        }
        for (c, x) in t.row(r).iter().enumerate() {
            if c > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x:?}");
        }
        s.push('\n');
    }
}

fn read_table(
    lines: &mut Lines<'_>,
    header: &str,
    rows: usize,
    cols: usize,
    with_ids: bool,
) -> Result<(Tensor, Vocab), CheckpointError> {
    if lines.next(header)? != header {
        return Err(lines.err(format!("expected `{header}`")));
    }
    let mut t = Tensor::zeros(rows, cols);
    let mut ids = Vocab::new();
    for r in 0..rows {
        let line = lines.next(&format!("row {r} of {header}"))?;
        let mut tokens = line.split_whitespace();
        if with_ids {
            let id = tokens
                .next()
                .ok_or_else(|| lines.err("missing id".into()))?;
            if ids.intern(id) != r {
                return Err(lines.err(format!("duplicate id `{id}`")));
            }
        }
        let values: Vec<f64> = tokens
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| lines.err("values must be finite numbers".into()))?;
        if values.len() != cols {
            return Err(lines.err(format!("expected {cols} values, found {}", values.len())));
        }
        t.row_mut(r).copy_from_slice(&values);
    }
    Ok((t, ids))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, CheckpointError> {
        let (n, line) = self
            .inner
            .next()
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        self.last = n + 1;
        Ok(line.trim())
    }

    fn err(&self, reason: String) -> CheckpointError {
        CheckpointError::Format {
            line: self.last,
            reason,
        }
    }

    fn field<T>(
        &mut self,
        key: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, CheckpointError> {
        let line = self.next(key)?;
        let value = line
            .strip_prefix(key)
            .filter(|rest| rest.starts_with(' '))
            .map(str::trim)
            .ok_or_else(|| self.err(format!("expected `{key} <value>`")))?;
        parse(value).ok_or_else(|| self.err(format!("bad {key} `{value}`")))
    }
}
