//! Re-derives disparity annotations from a table of aggregate values.
//!
//! Input CSV: `section,scope,group,metric,value[,mode][,baseline][,reported]`.
//! Rows sharing `(section, scope, metric)` form one comparison scope. The
//! baseline is the named group of that scope, or the scope's best (largest)
//! value when `baseline` is empty. `reported` is the published annotation:
//! percentage points for relative mode, a plain difference for absolute mode.

use std::fmt::Write as _;
use std::path::Path;

use fairaudit_core::fairness::{disparity_vs, DisparityMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agreement needed between a derived and a published relative annotation,
/// in percentage points.
pub const RELATIVE_TOLERANCE_POINTS: f64 = 0.1;
/// Absolute annotations are compared at this many decimals, the precision
/// the values are published at.
pub const ABSOLUTE_DECIMALS: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayInput {
    pub section: String,
    pub scope: String,
    pub group: String,
    pub metric: String,
    pub value: f64,
    pub mode: DisparityMode,
    pub baseline: Option<String>,
    pub reported: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub section: String,
    pub scope: String,
    pub group: String,
    pub metric: String,
    pub value: f64,
    pub mode: String,
    pub baseline: String,
    pub baseline_value: f64,
    pub disparity: f64,
    /// Annotation as rendered in a table.
    pub rendered: String,
    pub reported: Option<f64>,
    /// Derived minus reported, in the reported unit.
    pub delta: Option<f64>,
    pub matches: Option<bool>,
}

pub fn parse_replay_csv(text: &str, path: &Path) -> Result<Vec<ReplayInput>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(path, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let required = ["section", "scope", "group", "metric", "value"];
    let optional = ["mode", "baseline", "reported"];
    let ok = header.len() >= 5
        && header.len() <= 8
        && header[..5].iter().zip(required).all(|(a, b)| a == b)
        && header[5..].iter().zip(optional).all(|(a, b)| a == b);
    if !ok {
        return Err(Error::format(
            path,
            None,
            "malformed header: expected `section,scope,group,metric,value[,mode][,baseline][,reported]`",
        ));
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::format(path, Some(row), e.to_string()))?;
        if rec.len() < 5 || rec.len() > header.len() {
            return Err(Error::format(path, Some(row), format!("expected 5 to {} fields, found {}", header.len(), rec.len())));
        }
        let field = |i: usize| rec.get(i).filter(|s| !s.is_empty());
        let num = |i: usize, what: &str| -> Result<Option<f64>> {
            field(i)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::format(path, Some(row), format!("{what}: `{s}` is not a finite number")))
                })
                .transpose()
        };
        let mode = match field(5) {
            None | Some("relative") => DisparityMode::Relative,
            Some("absolute") => DisparityMode::Absolute,
            Some(other) => return Err(Error::format(path, Some(row), format!("unknown mode `{other}`"))),
        };
        out.push(ReplayInput {
            section: rec[0].to_string(),
            scope: rec[1].to_string(),
            group: rec[2].to_string(),
            metric: rec[3].to_string(),
            value: num(4, "value")?.ok_or_else(|| Error::format(path, Some(row), "value is empty"))?,
            mode,
            baseline: field(6).map(str::to_string),
            reported: num(7, "reported")?,
        });
    }
    Ok(out)
}

fn same_scope(a: &ReplayInput, b: &ReplayInput) -> bool {
    a.section == b.section && a.scope == b.scope && a.metric == b.metric
}

pub fn render(disparity: f64, mode: DisparityMode) -> String {
    match mode {
        DisparityMode::Relative => format!("({:+.1}%)", disparity * 100.0),
        DisparityMode::Absolute => format!("({:+.4})", disparity),
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    (v * 10f64.powi(decimals)).round()
}

/// Computes the disparity of every row against its scope's baseline.
pub fn replay(inputs: &[ReplayInput]) -> Result<Vec<ReplayRow>> {
    let here = Path::new("<replay>");
    let mut out = Vec::with_capacity(inputs.len());
    for (k, row) in inputs.iter().enumerate() {
        let scope: Vec<&ReplayInput> = inputs.iter().filter(|r| same_scope(r, row)).collect();
        let base = match &row.baseline {
            Some(name) => scope
                .iter()
                .find(|r| &r.group == name)
                .copied()
                .ok_or_else(|| Error::format(here, Some(k + 1), format!("baseline `{name}` is not in scope `{}`", row.scope)))?,
            None => scope
                .iter()
                .copied()
                .reduce(|best, r| if r.value > best.value { r } else { best })
                .expect("a scope contains its own row"),
        };
        let disparity = disparity_vs(row.value, base.value, row.mode).map_err(|e| Error::format(here, Some(k + 1), e.to_string()))?;
        let (delta, matches) = match row.reported {
            None => (None, None),
            Some(rep) => match row.mode {
                DisparityMode::Relative => {
                    let d = disparity * 100.0 - rep;
                    (Some(d), Some(d.abs() <= RELATIVE_TOLERANCE_POINTS + 1e-9))
                }
                DisparityMode::Absolute => (
                    Some(disparity - rep),
                    Some(round_to(disparity, ABSOLUTE_DECIMALS) == round_to(rep, ABSOLUTE_DECIMALS)),
                ),
            },
        };
        out.push(ReplayRow {
            section: row.section.clone(),
            scope: row.scope.clone(),
            group: row.group.clone(),
            metric: row.metric.clone(),
            value: row.value,
            mode: row.mode.as_str().to_string(),
            baseline: base.group.clone(),
            baseline_value: base.value,
            disparity,
            rendered: render(disparity, row.mode),
            reported: row.reported,
            delta,
            matches,
        });
    }
    Ok(out)
}

pub fn to_json(rows: &[ReplayRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("serializable");
    s.push('\n');
    s
}

pub fn to_csv(rows: &[ReplayRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record([
        "section", "scope", "group", "metric", "value", "mode", "baseline", "baseline_value", "disparity", "rendered", "reported",
        "delta", "matches",
    ])
    .unwrap();
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        w.write_record([
            r.section.clone(),
            r.scope.clone(),
            r.group.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.mode.clone(),
            r.baseline.clone(),
            r.baseline_value.to_string(),
            r.disparity.to_string(),
            r.rendered.clone(),
            opt(r.reported),
            opt(r.delta),
            r.matches.map_or_else(String::new, |m| m.to_string()),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// One table per input section.
pub fn to_markdown(rows: &[ReplayRow]) -> String {
    let mut out = String::from("# Replayed disparity annotations\n\n");
    let mut sections: Vec<&str> = Vec::new();
    for r in rows {
        if !sections.contains(&r.section.as_str()) {
            sections.push(&r.section);
        }
    }
    for s in sections {
        let _ = writeln!(out, "## {s}\n");
        out.push_str("| Scope | Group | Metric | Value | Baseline | Derived | Reported | Match |\n");
        out.push_str("|---|---|---|---:|---|---|---|---|\n");
        for r in rows.iter().filter(|r| r.section == s) {
            let reported = match (r.reported, r.mode.as_str()) {
                (None, _) => "-".to_string(),
                (Some(v), "absolute") => format!("{v:+.4}"),
                (Some(v), _) => format!("{v:+}%"),
            };
            let derived = if r.baseline == r.group { "baseline".to_string() } else { r.rendered.clone() };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.4} | {} | {} | {} | {} |",
                r.scope,
                r.group,
                r.metric,
                r.value,
                r.baseline,
                derived,
                reported,
                r.matches.map_or("-", |m| if m { "yes" } else { "NO" })
            );
        }
        out.push('\n');
    }
    let checked = rows.iter().filter(|r| r.matches.is_some()).count();
    let matched = rows.iter().filter(|r| r.matches == Some(true)).count();
    let _ = writeln!(
        out,
        "{matched} of {checked} published annotations reproduced (relative: within {RELATIVE_TOLERANCE_POINTS} points; absolute: equal at {ABSOLUTE_DECIMALS} decimals).",
    );
    out
}
