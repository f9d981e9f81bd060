//! CSV and JSON outputs, each with a parser for its own format.
//!
//! Numbers are written in shortest round-trip form.

use std::fmt::Write as _;

use cgcf_core::{EpochRecord, MetricReport};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_err(line: usize, reason: impl Into<String>) -> ReportError {
    ReportError::Format {
        line,
        reason: reason.into(),
    }
}

/// One evaluated epoch. `loss_dcl` holds the main loss, whichever it is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_gcl: f64,
    pub loss_dcl: f64,
    pub recall: f64,
    pub ndcg: f64,
}

impl HistoryRow {
    /// `None` for epochs without metrics.
    pub fn from_record(r: &EpochRecord) -> Option<Self> {
        r.metrics.map(|m| Self {
            epoch: r.epoch,
            loss_total: r.losses.total,
            loss_gcl: r.losses.gcl,
            loss_dcl: r.losses.main,
            recall: m.recall,
            ndcg: m.ndcg,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub k: usize,
    pub rows: Vec<HistoryRow>,
}

fn history_header(k: usize) -> String {
    format!("epoch,loss_total,loss_gcl,loss_dcl,recall@{k},ndcg@{k}")
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = history_header(self.k);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.loss_total, r.loss_gcl, r.loss_dcl, r.recall, r.ndcg
            );
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| format_err(1, "missing header"))?;
        let k = header
            .rsplit_once("ndcg@")
            .and_then(|(_, k)| k.parse().ok())
            .filter(|&k| header == history_header(k))
            .ok_or_else(|| format_err(1, format!("bad header `{header}`")))?;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let f = fields(line, 6, n + 2)?;
            rows.push(HistoryRow {
                epoch: number(f[0], n + 2)?,
                loss_total: number(f[1], n + 2)?,
                loss_gcl: number(f[2], n + 2)?,
                loss_dcl: number(f[3], n + 2)?,
                recall: number(f[4], n + 2)?,
                ndcg: number(f[5], n + 2)?,
            });
        }
        Ok(Self { k, rows })
    }
}

fn fields(line: &str, n: usize, line_no: usize) -> Result<Vec<&str>, ReportError> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != n {
        return Err(format_err(
            line_no,
            format!("expected {n} fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

fn number<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ReportError> {
    s.parse()
        .map_err(|_| format_err(line, format!("bad number `{s}`")))
}

/// One training-log line; `wall_time` is seconds since training started.
pub fn log_line(name: &str, record: &EpochRecord, wall_time: f64) -> String {
    let mut v = serde_json::json!({
        "run": name,
        "epoch": record.epoch,
        "loss_total": record.losses.total,
        "loss_gcl": record.losses.gcl,
        "loss_main": record.losses.main,
        "wall_time": wall_time,
    });
    if let Some(m) = record.metrics {
        v["recall"] = m.recall.into();
        v["ndcg"] = m.ndcg.into();
        v["k"] = m.k.into();
    }
    v.to_string()
}

pub fn metrics_json(m: &MetricReport) -> serde_json::Value {
    serde_json::json!({
        "k": m.k,
        "recall": m.recall,
        "ndcg": m.ndcg,
        "users_evaluated": m.users_evaluated,
    })
}

pub fn parse_metrics_json(text: &str) -> Result<MetricReport, ReportError> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let get = |key: &str| {
        v.get(key)
            .ok_or_else(|| format_err(1, format!("missing `{key}`")))
    };
    let as_usize = |x: &serde_json::Value, key: &str| {
        x.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| format_err(1, format!("`{key}` must be an integer")))
    };
    let as_f64 = |x: &serde_json::Value, key: &str| {
        x.as_f64()
            .ok_or_else(|| format_err(1, format!("`{key}` must be a number")))
    };
    Ok(MetricReport {
        k: as_usize(get("k")?, "k")?,
        recall: as_f64(get("recall")?, "recall")?,
        ndcg: as_f64(get("ndcg")?, "ndcg")?,
        users_evaluated: as_usize(get("users_evaluated")?, "users_evaluated")?,
    })
}

/// A run summarized by its best evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// Variant name or swept value.
    pub label: String,
    pub recall: f64,
    pub ndcg: f64,
    pub best_epoch: usize,
}

/// Ablation and sweep tables: `<first>,recall@k,ndcg@k,best_epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub first_column: String,
    pub k: usize,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    fn header(&self) -> String {
        format!(
            "{},recall@{k},ndcg@{k},best_epoch",
            self.first_column,
            k = self.k
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.label, r.recall, r.ndcg, r.best_epoch);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| format_err(1, "missing header"))?;
        let f = fields(header, 4, 1)?;
        let k = f[1]
            .strip_prefix("recall@")
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| format_err(1, format!("bad header `{header}`")))?;
        let mut table = Self {
            first_column: f[0].to_string(),
            k,
            rows: Vec::new(),
        };
        if table.header() != header {
            return Err(format_err(1, format!("bad header `{header}`")));
        }
        for (n, line) in lines.enumerate() {
            let f = fields(line, 4, n + 2)?;
            table.rows.push(SummaryRow {
                label: f[0].to_string(),
                recall: number(f[1], n + 2)?,
                ndcg: number(f[2], n + 2)?,
                best_epoch: number(f[3], n + 2)?,
            });
        }
        Ok(table)
    }

    /// Fixed-width rendering for terminals.
    pub fn to_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain([self.first_column.len()])
            .max()
            .unwrap_or(0);
        let mut s = String::new();
        let recall = format!("recall@{}", self.k);
        let ndcg = format!("ndcg@{}", self.k);
        let _ = writeln!(
            s,
            "{:<w$}  {recall:>10}  {ndcg:>10}  {:>10}",
            self.first_column, "best_epoch"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>10.4}  {:>10.4}  {:>10}",
                r.label, r.recall, r.ndcg, r.best_epoch
            );
        }
        s
    }
}
