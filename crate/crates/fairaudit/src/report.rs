//! The audit report and its JSON, CSV and Markdown renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fairaudit_core::fairness::{relative_disparity, DisparityMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const SCHEMA: u32 = 1;
pub const UNDEFINED: &str = "undefined";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema: u32,
    pub metadata: Metadata,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub seed: u64,
    /// Input role (`embeddings`, `annotations`, `pairs`) to path as given.
    pub inputs: BTreeMap<String, String>,
    /// Every setting that affects a number in the report.
    pub settings: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub metric: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub title: String,
    /// What the `count` of a cell counts.
    pub count_label: String,
    pub columns: Vec<Column>,
    pub notes: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Disparities compare rows that share a scope.
    pub scope: String,
    pub group: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub metric: String,
    /// `None` renders as the undefined sentinel.
    pub value: Option<f64>,
    pub std: Option<f64>,
    pub count: u64,
    pub threshold: Option<f64>,
    pub disparity: Option<Disparity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub mode: String,
    /// Group label of the baseline row within the scope.
    pub baseline: String,
    pub value: Option<f64>,
}

impl Cell {
    pub fn new(metric: &str, value: Option<f64>, count: u64) -> Self {
        Self {
            metric: metric.to_string(),
            value,
            std: None,
            count,
            threshold: None,
            disparity: None,
        }
    }

    pub fn with_std(mut self, std: Option<f64>) -> Self {
        self.std = std;
        self
    }

    pub fn with_threshold(mut self, t: Option<f64>) -> Self {
        self.threshold = t.filter(|t| t.is_finite());
        self
    }
}

impl Row {
    pub fn cell(&self, metric: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.metric == metric)
    }
}

impl Section {
    pub fn row(&self, group: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.group == group)
    }
}

impl AuditReport {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

fn parse_mode(s: &str) -> Option<DisparityMode> {
    match s {
        "relative" => Some(DisparityMode::Relative),
        "absolute" => Some(DisparityMode::Absolute),
        _ => None,
    }
}

/// Scopes in first-appearance order, each with its row indices.
fn scopes(rows: &[Row]) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match out.iter_mut().find(|(s, _)| *s == r.scope) {
            Some((_, v)) => v.push(i),
            None => out.push((r.scope.clone(), vec![i])),
        }
    }
    out
}

/// Fills `metric`'s disparity in every row against the best defined value
/// of the row's scope.
pub fn annotate_disparities(section: &mut Section, metric: &str, mode: DisparityMode) {
    for (_, idx) in scopes(&section.rows) {
        let defined: Vec<(usize, f64)> = idx
            .iter()
            .filter_map(|&i| section.rows[i].cell(metric).and_then(|c| c.value).map(|v| (i, v)))
            .collect();
        if defined.is_empty() {
            continue;
        }
        let values: Vec<f64> = defined.iter().map(|&(_, v)| v).collect();
        let (baseline, disparities) = match relative_disparity(&values, mode) {
            Ok(d) => (defined[d.baseline].0, d.values.into_iter().map(Some).collect()),
            // A zero best value leaves every relative disparity undefined.
            Err(_) => (defined[first_max(&values)].0, vec![None; values.len()]),
        };
        let baseline = section.rows[baseline].group.clone();
        let by_row: BTreeMap<usize, Option<f64>> = defined.iter().map(|&(i, _)| i).zip(disparities).collect();
        for &i in &idx {
            if let Some(c) = section.rows[i].cells.iter_mut().find(|c| c.metric == metric) {
                c.disparity = Some(Disparity {
                    mode: mode.as_str().to_string(),
                    baseline: baseline.clone(),
                    value: by_row.get(&i).copied().flatten(),
                });
            }
        }
    }
}

fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Recomputes every disparity from its value column and compares bit for bit.
pub fn check_consistency(report: &AuditReport) -> Result<()> {
    if report.schema != SCHEMA {
        return Err(Error::Invariant(format!("schema {} != {SCHEMA}", report.schema)));
    }
    for section in &report.sections {
        let metrics: Vec<&str> = {
            let mut m: Vec<&str> = Vec::new();
            for c in section.rows.iter().flat_map(|r| &r.cells) {
                if c.disparity.is_some() && !m.contains(&c.metric.as_str()) {
                    m.push(&c.metric);
                }
            }
            m
        };
        for metric in metrics {
            let mut expected = section.clone();
            let mode = section
                .rows
                .iter()
                .filter_map(|r| r.cell(metric)?.disparity.as_ref())
                .map(|d| d.mode.as_str())
                .next()
                .and_then(parse_mode)
                .ok_or_else(|| Error::Invariant(format!("section `{}`: unknown disparity mode", section.name)))?;
            for r in &mut expected.rows {
                for c in &mut r.cells {
                    if c.metric == metric {
                        c.disparity = None;
                    }
                }
            }
            annotate_disparities(&mut expected, metric, mode);
            for (got, want) in section.rows.iter().zip(&expected.rows) {
                let g = got.cell(metric).and_then(|c| c.disparity.as_ref());
                let w = want.cell(metric).and_then(|c| c.disparity.as_ref());
                let same = match (g, w) {
                    (Some(g), Some(w)) => {
                        g.mode == w.mode && g.baseline == w.baseline && g.value.map(f64::to_bits) == w.value.map(f64::to_bits)
                    }
                    (None, None) => true,
                    _ => false,
                };
                if !same {
                    return Err(Error::Invariant(format!(
                        "section `{}`, {} / {}: disparity for `{metric}` does not follow from the value column",
                        section.name, got.scope, got.group
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn to_json(report: &AuditReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report is serializable");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<AuditReport> {
    serde_json::from_str(text).map_err(|e| Error::format(Path::new("<json>"), None, e.to_string()))
}

fn opt(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

fn parse_opt(s: &str, none: &str, what: &str) -> Result<Option<f64>> {
    if s == none {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::format(Path::new("<csv>"), None, format!("{what}: `{s}` is not a number")))
}

const SECTION_HEADER: [&str; 10] = [
    "scope", "group", "metric", "value", "std", "count", "threshold", "disparity_mode", "disparity_baseline", "disparity",
];

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8")
}

/// One CSV per section (long format, one line per cell) plus `metadata.csv`
/// holding everything else. Floats use shortest round-trip formatting.
pub fn to_csv(report: &AuditReport) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let mut m = writer();
    m.write_record(["field", "key", "value"]).unwrap();
    m.write_record(["schema", "", &report.schema.to_string()]).unwrap();
    m.write_record(["tool_version", "", &report.metadata.tool_version]).unwrap();
    m.write_record(["seed", "", &report.metadata.seed.to_string()]).unwrap();
    for (k, v) in &report.metadata.inputs {
        m.write_record(["input", k, v]).unwrap();
    }
    for (k, v) in &report.metadata.settings {
        m.write_record(["setting", k, v]).unwrap();
    }
    for n in &report.metadata.notes {
        m.write_record(["note", "", n]).unwrap();
    }
    for s in &report.sections {
        m.write_record(["section", &s.name, &s.title]).unwrap();
        m.write_record(["count_label", &s.name, &s.count_label]).unwrap();
        for c in &s.columns {
            m.write_record(["column", &s.name, &format!("{}={}", c.metric, c.label)]).unwrap();
        }
        for n in &s.notes {
            m.write_record(["section_note", &s.name, n]).unwrap();
        }
    }
    files.push(("metadata.csv".to_string(), into_string(m)));

    for s in &report.sections {
        let mut w = writer();
        w.write_record(SECTION_HEADER).unwrap();
        for r in &s.rows {
            for c in &r.cells {
                let (mode, base, disp) = match &c.disparity {
                    Some(d) => (d.mode.clone(), d.baseline.clone(), opt(d.value, UNDEFINED)),
                    None => (String::new(), String::new(), String::new()),
                };
                w.write_record([
                    r.scope.as_str(),
                    r.group.as_str(),
                    c.metric.as_str(),
                    &opt(c.value, UNDEFINED),
                    &opt(c.std, ""),
                    &c.count.to_string(),
                    &opt(c.threshold, ""),
                    &mode,
                    &base,
                    &disp,
                ])
                .unwrap();
            }
        }
        files.push((format!("{}.csv", s.name), into_string(w)));
    }
    files
}

fn csv_rows(text: &str, name: &str) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    r.records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(Path::new(name), None, e.to_string()))
}

/// Inverse of [`to_csv`]; `read` returns the contents of a named file.
pub fn from_csv(mut read: impl FnMut(&str) -> Result<String>) -> Result<AuditReport> {
    let bad = |m: String| Error::format(Path::new("metadata.csv"), None, m);
    let mut report = AuditReport {
        schema: 0,
        metadata: Metadata::default(),
        sections: Vec::new(),
    };
    let meta = read("metadata.csv")?;
    for rec in csv_rows(&meta, "metadata.csv")? {
        let (field, key, value) = (&rec[0], &rec[1], rec[2].to_string());
        let section = |report: &mut AuditReport| -> Result<usize> {
            report
                .sections
                .iter()
                .position(|s| s.name == key)
                .ok_or_else(|| bad(format!("unknown section `{key}`")))
        };
        match field {
            "schema" => report.schema = value.parse().map_err(|_| bad("schema".into()))?,
            "tool_version" => report.metadata.tool_version = value,
            "seed" => report.metadata.seed = value.parse().map_err(|_| bad("seed".into()))?,
            "input" => {
                report.metadata.inputs.insert(key.to_string(), value);
            }
            "setting" => {
                report.metadata.settings.insert(key.to_string(), value);
            }
            "note" => report.metadata.notes.push(value),
            "section" => report.sections.push(Section {
                name: key.to_string(),
                title: value,
                count_label: String::new(),
                columns: Vec::new(),
                notes: Vec::new(),
                rows: Vec::new(),
            }),
            "count_label" => {
                let i = section(&mut report)?;
                report.sections[i].count_label = value;
            }
            "column" => {
                let i = section(&mut report)?;
                let (metric, label) = value.split_once('=').ok_or_else(|| bad(format!("column `{value}`")))?;
                report.sections[i].columns.push(Column {
                    metric: metric.to_string(),
                    label: label.to_string(),
                });
            }
            "section_note" => {
                let i = section(&mut report)?;
                report.sections[i].notes.push(value);
            }
            other => return Err(bad(format!("unknown field `{other}`"))),
        }
    }
    for s in &mut report.sections {
        let file = format!("{}.csv", s.name);
        let text = read(&file)?;
        for rec in csv_rows(&text, &file)? {
            if rec.len() != SECTION_HEADER.len() {
                return Err(Error::format(Path::new(&file), None, "wrong field count"));
            }
            let disparity = if rec[7].is_empty() {
                None
            } else {
                Some(Disparity {
                    mode: rec[7].to_string(),
                    baseline: rec[8].to_string(),
                    value: parse_opt(&rec[9], UNDEFINED, "disparity")?,
                })
            };
            let cell = Cell {
                metric: rec[2].to_string(),
                value: parse_opt(&rec[3], UNDEFINED, "value")?,
                std: parse_opt(&rec[4], "", "std")?,
                count: rec[5]
                    .parse()
                    .map_err(|_| Error::format(Path::new(&file), None, format!("count `{}`", &rec[5])))?,
                threshold: parse_opt(&rec[6], "", "threshold")?,
                disparity,
            };
            match s.rows.last_mut() {
                Some(r) if r.scope == rec[0] && r.group == rec[1] => r.cells.push(cell),
                _ => s.rows.push(Row {
                    scope: rec[0].to_string(),
                    group: rec[1].to_string(),
                    cells: vec![cell],
                }),
            }
        }
    }
    Ok(report)
}

/// Values below 0.01 in magnitude switch to scientific notation so small
/// similarity means stay readable.
pub fn fmt_value(v: f64) -> String {
    if v != 0.0 && v.abs() < 0.01 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// `(-12.3%)` for relative disparities, `(-0.1125)` for absolute ones.
pub fn fmt_disparity(d: &Disparity) -> String {
    match (d.value, parse_mode(&d.mode)) {
        (None, _) => format!("({UNDEFINED})"),
        (Some(v), Some(DisparityMode::Absolute)) => format!("({v:+.4})"),
        (Some(v), _) => format!("({:+.1}%)", v * 100.0),
    }
}

fn fmt_cell(c: Option<&Cell>, group: &str) -> String {
    let Some(c) = c else {
        return UNDEFINED.to_string();
    };
    let Some(v) = c.value else {
        return UNDEFINED.to_string();
    };
    let mut s = fmt_value(v);
    if let Some(sd) = c.std {
        let _ = write!(s, " ± {}", fmt_value(sd));
    }
    if let Some(d) = &c.disparity {
        if d.baseline == group {
            s.push_str(" *");
        } else {
            let _ = write!(s, " {}", fmt_disparity(d));
        }
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('|', "\\|")
}

pub fn to_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Audit report\n");
    let _ = writeln!(out, "Tool version {}, seed {}.\n", report.metadata.tool_version, report.metadata.seed);
    for (k, v) in &report.metadata.inputs {
        let _ = writeln!(out, "- input `{k}`: `{}`", escape(v));
    }
    for (k, v) in &report.metadata.settings {
        let _ = writeln!(out, "- {k}: {}", escape(v));
    }
    for n in &report.metadata.notes {
        let _ = writeln!(out, "- {}", escape(n));
    }
    out.push('\n');
    for s in &report.sections {
        out.push_str(&section_markdown(s));
    }
    out
}

pub fn section_markdown(s: &Section) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {}\n", s.title);
    let _ = write!(out, "| Scope | Group | {} |", s.count_label);
    for c in &s.columns {
        let _ = write!(out, " {} |", escape(&c.label));
    }
    out.push('\n');
    out.push_str("|---|---|---:|");
    for _ in &s.columns {
        out.push_str("---|");
    }
    out.push('\n');
    for r in &s.rows {
        let count = r.cells.first().map_or(0, |c| c.count);
        let _ = write!(out, "| {} | {} | {count} |", escape(&r.scope), escape(&r.group));
        for c in &s.columns {
            let _ = write!(out, " {} |", escape(&fmt_cell(r.cell(&c.metric), &r.group)));
        }
        out.push('\n');
    }
    out.push('\n');
    let mut baselines: Vec<String> = Vec::new();
    for (scope, idx) in scopes(&s.rows) {
        for c in &s.columns {
            let base = idx
                .iter()
                .find_map(|&i| s.rows[i].cell(&c.metric)?.disparity.as_ref())
                .map(|d| (d.baseline.clone(), d.mode.clone()));
            if let Some((b, mode)) = base {
                baselines.push(format!("{scope}: {} against {b} ({mode})", c.label));
            }
        }
    }
    if !baselines.is_empty() {
        let _ = writeln!(
            out,
            "\\* Baseline row. Disparities compare each value with the best value of its scope: {}.\n",
            escape(&baselines.join("; "))
        );
    }
    for n in &s.notes {
        let _ = writeln!(out, "- {}", escape(n));
    }
    if !s.notes.is_empty() {
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            other => Err(format!("unknown format `{other}` (json, csv, markdown)")),
        }
    }
}

/// Renders every requested format in memory, checks consistency, then
/// writes each file atomically. Nothing is written if a check fails.
/// Returns the written paths relative to `out_dir`.
pub fn emit(report: &AuditReport, formats: &[OutputFormat], out_dir: &Path) -> Result<Vec<String>> {
    check_consistency(report)?;
    let mut files: Vec<(String, String)> = Vec::new();
    for f in formats {
        match f {
            OutputFormat::Json => files.push(("report.json".into(), to_json(report))),
            OutputFormat::Markdown => files.push(("report.md".into(), to_markdown(report))),
            OutputFormat::Csv => {
                files.extend(to_csv(report).into_iter().map(|(name, body)| (format!("csv/{name}"), body)));
            }
        }
    }
    if formats.contains(&OutputFormat::Json) && formats.contains(&OutputFormat::Csv) {
        let back = from_csv(|name| {
            files
                .iter()
                .find(|(n, _)| n == &format!("csv/{name}"))
                .map(|(_, b)| b.clone())
                .ok_or_else(|| Error::Invariant(format!("missing rendered file {name}")))
        })?;
        if to_json(&back) != to_json(report) {
            return Err(Error::Invariant("CSV rendering does not round-trip to the JSON report".into()));
        }
    }
    for (name, body) in &files {
        write_atomic(&out_dir.join(name), body.as_bytes())?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section(values: &[(&str, Option<f64>)]) -> Section {
        Section {
            name: "race".into(),
            title: "Race".into(),
            count_label: "Pairs".into(),
            columns: vec![Column {
                metric: "tpr".into(),
                label: "TPR".into(),
            }],
            notes: vec![],
            rows: values
                .iter()
                .map(|(g, v)| Row {
                    scope: "all".into(),
                    group: g.to_string(),
                    cells: vec![Cell::new("tpr", *v, 10)],
                })
                .collect(),
        }
    }

    #[test]
    fn undefined_rows_keep_the_baseline() {
        let mut s = section(&[("a", Some(0.9135)), ("b", None), ("c", Some(0.8010))]);
        annotate_disparities(&mut s, "tpr", DisparityMode::Relative);
        let d = |g: &str| s.row(g).unwrap().cells[0].disparity.clone().unwrap();
        assert_eq!(d("a").value, Some(0.0));
        assert_eq!(d("b").value, None);
        assert_eq!(d("c").baseline, "a");
        assert_eq!(fmt_disparity(&d("c")), "(-12.3%)");
        let md = section_markdown(&s);
        assert!(md.contains("| all | b | 10 | undefined |"));
    }

    #[test]
    fn zero_baseline_is_undefined_not_an_error() {
        let mut s = section(&[("a", Some(0.0)), ("b", Some(0.0))]);
        annotate_disparities(&mut s, "tpr", DisparityMode::Relative);
        assert_eq!(s.rows[1].cells[0].disparity.as_ref().unwrap().value, None);
    }
}
