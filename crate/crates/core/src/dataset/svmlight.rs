//! Multi-label SVMlight text format.
//!
//! Each instance is one line: `lbl[,lbl...] idx:val [idx:val...]`. A line
//! that begins with whitespace has no positive labels. An optional first
//! line `M d L` declares the instance, feature and label counts; when it is
//! present every following line is an instance (blank lines included), which
//! is what makes the writer's output round-trip exactly.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::{Dataset, LabelMatrix, SparseFeatures};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub num_features: Option<usize>,
    pub num_labels: Option<usize>,
    pub name: Option<String>,
}

struct Row {
    labels: Vec<usize>,
    feats: Vec<(usize, f64)>,
}

fn parse_header(line: &str) -> Option<(usize, usize, usize)> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 3 {
        return None;
    }
    let mut v = [0usize; 3];
    for (slot, t) in v.iter_mut().zip(&toks) {
        *slot = t.parse().ok()?;
    }
    Some((v[0], v[1], v[2]))
}

fn parse_row(line: &str, lineno: usize) -> Result<Row> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let mut tokens = line.split_whitespace().peekable();
    let mut labels = Vec::new();
    let starts_blank = line.starts_with(|c: char| c.is_whitespace());
    if !starts_blank {
        if let Some(first) = tokens.peek() {
            if !first.contains(':') {
                let field = tokens.next().unwrap();
                for part in field.split(',') {
                    if part.is_empty() {
                        continue;
                    }
                    let id: usize = part.parse().map_err(|_| err(format!("bad label id {part:?}")))?;
                    labels.push(id);
                }
            }
        }
    }
    let mut seen = HashSet::new();
    let mut feats = Vec::new();
    for tok in tokens {
        let (i, v) = tok.split_once(':').ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
        let idx: usize = i.parse().map_err(|_| err(format!("bad feature index {i:?}")))?;
        let val: f64 = v.parse().map_err(|_| err(format!("bad feature value {v:?}")))?;
        if !seen.insert(idx) {
            return Err(err(format!("duplicate feature index {idx}")));
        }
        feats.push((idx, val));
    }
    Ok(Row { labels, feats })
}

pub fn parse_multilabel_svmlight(text: &str, opts: &ParseOptions) -> Result<Dataset> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    let mut declared_m = None;
    let mut num_features = opts.num_features;
    let mut num_labels = opts.num_labels;
    let mut start = 0;
    if let Some(first) = lines.first() {
        if let Some((m, d, l)) = parse_header(first.trim_end_matches('\r')) {
            declared_m = Some(m);
            num_features = Some(num_features.map_or(d, |x| x.max(d)));
            num_labels = Some(num_labels.map_or(l, |x| x.max(l)));
            start = 1;
        }
    }

    let mut rows = Vec::new();
    for (k, raw) in lines.iter().enumerate().skip(start) {
        let line = raw.trim_end_matches('\r');
        if declared_m.is_none() && line.trim().is_empty() {
            continue;
        }
        rows.push((k + 1, parse_row(line, k + 1)?));
    }
    if let Some(m) = declared_m {
        if m != rows.len() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {m} instances but {} follow", rows.len()),
            });
        }
    }

    let max_label = rows.iter().flat_map(|(_, r)| r.labels.iter().copied()).max();
    let max_feat = rows.iter().flat_map(|(_, r)| r.feats.iter().map(|f| f.0)).max();
    let l = match num_labels {
        Some(l) => {
            if let Some((lineno, _)) = rows.iter().find(|(_, r)| r.labels.iter().any(|&id| id >= l)) {
                return Err(Error::Parse { line: *lineno, msg: format!("label id exceeds declared count {l}") });
            }
            l
        }
        None => max_label.map_or(0, |m| m + 1),
    };
    let d = match num_features {
        Some(d) => {
            if let Some((lineno, _)) = rows.iter().find(|(_, r)| r.feats.iter().any(|f| f.0 >= d)) {
                return Err(Error::Parse { line: *lineno, msg: format!("feature index exceeds declared count {d}") });
            }
            d
        }
        None => max_feat.map_or(0, |m| m + 1),
    };

    let mut features = SparseFeatures::empty(d);
    let mut labels = LabelMatrix::zeros(rows.len(), l);
    for (m, (_, row)) in rows.iter().enumerate() {
        features.push_row(&row.feats)?;
        for &id in &row.labels {
            labels.set(m, id, true);
        }
    }
    Dataset::new(opts.name.clone().unwrap_or_else(|| "dataset".into()), features, labels)
}

/// Serializes with a `M d L` header so that parsing the output reproduces
/// the dataset exactly.
pub fn write_multilabel_svmlight(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", ds.num_instances(), ds.num_features(), ds.num_labels());
    for m in 0..ds.num_instances() {
        let pos: Vec<String> =
            (0..ds.num_labels()).filter(|&l| ds.labels().get(m, l)).map(|l| l.to_string()).collect();
        out.push_str(&pos.join(","));
        let (idx, val) = ds.features().row(m);
        for (j, v) in idx.iter().zip(val) {
            let _ = write!(out, " {j}:{v}");
        }
        out.push('\n');
    }
    out
}
