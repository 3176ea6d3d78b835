//! CSV and JSON formats.
//!
//! Every CSV file has one header row. Numbers are written in the shortest
//! form that parses back to the same `f64`.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CurvePoint, MetricSummary};
use crate::experiment::SignalRun;
use crate::model::{FitResult, Grouping};
use crate::network::{canonical, Edge, NodeAnnotation, ScoredEdge};

/// Version of the JSON documents written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Shortest representation that round-trips through `str::parse::<f64>`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new().has_headers(true).trim(Trim::All).from_reader(input)
}

fn line_of(record: &StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?.clone();
    if !expected.is_empty() {
        let got: Vec<&str> = h.iter().collect();
        if got != expected {
            return Err(Error::parse(1, format!("expected header {expected:?}, found {got:?}")));
        }
    }
    Ok(())
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("{what}: `{field}` is not a number")))
}

fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| Error::parse(line, format!("{what}: `{field}` is not a non-negative integer")))
}

/// Named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    /// Separate the response column from the feature columns.
    pub fn split_response(&self, response: &str) -> Result<(Vec<String>, DMatrix<f64>, DVector<f64>)> {
        let idx = self
            .names
            .iter()
            .position(|n| n == response)
            .ok_or_else(|| Error::parse(1, format!("no column named `{response}`")))?;
        let keep: Vec<usize> = (0..self.names.len()).filter(|&j| j != idx).collect();
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        let x = DMatrix::from_fn(self.values.nrows(), keep.len(), |i, c| self.values[(i, keep[c])]);
        let y = self.values.column(idx).into_owned();
        Ok((names, x, y))
    }
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut rdr = reader(input);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::parse(1, "header has an empty column name"));
    }
    let mut seen = BTreeSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::parse(1, format!("duplicate column `{n}`")));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        for (field, name) in record.iter().zip(&names) {
            data.push(parse_f64(field, line, name)?);
        }
        rows += 1;
    }
    Ok(Table {
        values: DMatrix::from_row_slice(rows, names.len(), &data),
        names,
    })
}

pub fn write_table<W: Write>(out: W, names: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(names)?;
    for i in 0..values.nrows() {
        w.write_record(values.row(i).iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Two columns `feature,group`. Every feature in `features` must be listed
/// exactly once; group indices follow the first appearance of each label in
/// feature order.
pub fn read_grouping<R: Read>(input: R, features: &[String]) -> Result<(Grouping, Vec<String>)> {
    let mut rdr = reader(input);
    headers(&mut rdr, &["feature", "group"])?;
    let mut label_of: HashMap<String, String> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let (f, g) = (&record[0], &record[1]);
        if g.is_empty() {
            return Err(Error::parse(line, format!("feature `{f}` has an empty group label")));
        }
        if label_of.insert(f.to_string(), g.to_string()).is_some() {
            return Err(Error::parse(line, format!("feature `{f}` listed twice")));
        }
    }
    let mut labels = Vec::with_capacity(features.len());
    for f in features {
        match label_of.remove(f) {
            Some(g) => labels.push(g),
            None => return Err(Error::DimensionMismatch(format!("feature `{f}` has no group"))),
        }
    }
    if let Some(extra) = label_of.keys().min() {
        return Err(Error::DimensionMismatch(format!("grouping names unknown feature `{extra}`")));
    }
    Ok(Grouping::from_labels(&labels))
}

pub fn write_grouping<W: Write>(out: W, features: &[String], grouping: &Grouping, group_names: &[String]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["feature", "group"])?;
    for (f, &g) in features.iter().zip(grouping.assignments()) {
        w.write_record([f.as_str(), group_names[g].as_str()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `node_a,node_b` with 0-based node indices; pairs are stored unordered.
pub fn read_edges<R: Read>(input: R) -> Result<BTreeSet<Edge>> {
    let mut rdr = reader(input);
    headers(&mut rdr, &["node_a", "node_b"])?;
    let mut edges = BTreeSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let a = parse_usize(&record[0], line, "node_a")?;
        let b = parse_usize(&record[1], line, "node_b")?;
        if a == b {
            return Err(Error::parse(line, format!("self-loop on node {a}")));
        }
        edges.insert(canonical(a, b));
    }
    Ok(edges)
}

pub fn write_edges<W: Write>(out: W, edges: &BTreeSet<Edge>) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["node_a", "node_b"])?;
    for &(a, b) in edges {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `node_a,node_b,score,coefficient`.
pub fn read_ranking<R: Read>(input: R) -> Result<Vec<ScoredEdge>> {
    let mut rdr = reader(input);
    headers(&mut rdr, &["node_a", "node_b", "score", "coefficient"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let a = parse_usize(&record[0], line, "node_a")?;
        let b = parse_usize(&record[1], line, "node_b")?;
        if a == b {
            return Err(Error::parse(line, format!("self-loop on node {a}")));
        }
        let (a, b) = canonical(a, b);
        if !seen.insert((a, b)) {
            return Err(Error::parse(line, format!("edge ({a}, {b}) ranked twice")));
        }
        let score = parse_f64(&record[2], line, "score")?;
        if score.is_nan() {
            return Err(Error::parse(line, "score is NaN"));
        }
        let coefficient = parse_f64(&record[3], line, "coefficient")?;
        out.push(ScoredEdge {
            a,
            b,
            score,
            coefficient,
        });
    }
    Ok(out)
}

pub fn write_ranking<W: Write>(out: W, edges: &[ScoredEdge]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["node_a", "node_b", "score", "coefficient"])?;
    for e in edges {
        w.write_record([e.a.to_string(), e.b.to_string(), fmt_f64(e.score), fmt_f64(e.coefficient)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `node,is_hub,group`, one row per node in index order.
pub fn read_nodes<R: Read>(input: R) -> Result<NodeAnnotation> {
    let mut rdr = reader(input);
    headers(&mut rdr, &["node", "is_hub", "group"])?;
    let mut hubs = Vec::new();
    let mut node_groups = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let node = parse_usize(&record[0], line, "node")?;
        if node != node_groups.len() {
            return Err(Error::parse(line, format!("expected node {}, found {node}", node_groups.len())));
        }
        match &record[1] {
            "1" | "true" => hubs.push(node),
            "0" | "false" => {}
            other => return Err(Error::parse(line, format!("is_hub: `{other}` is not a boolean"))),
        }
        node_groups.push(parse_usize(&record[2], line, "group")?);
    }
    Ok(NodeAnnotation { hubs, node_groups })
}

pub fn write_nodes<W: Write>(out: W, nodes: &NodeAnnotation) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["node", "is_hub", "group"])?;
    for (i, g) in nodes.node_groups.iter().enumerate() {
        w.write_record([i.to_string(), u8::from(nodes.is_hub(i)).to_string(), g.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_curve<W: Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["threshold", "fpr", "tpr", "precision"])?;
    for p in points {
        w.write_record([fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.tpr), fmt_f64(p.precision)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, rows: &[MetricSummary]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["method", "metric", "n", "q1", "median", "q3"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.metric.clone(),
            r.n.to_string(),
            fmt_f64(r.q1),
            fmt_f64(r.median),
            fmt_f64(r.q3),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `feature,beta`: true coefficients of a simulated instance.
pub fn read_truth<R: Read>(input: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = reader(input);
    headers(&mut rdr, &["feature", "beta"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        out.push((record[0].to_string(), parse_f64(&record[1], line, "beta")?));
    }
    Ok(out)
}

pub fn write_truth<W: Write>(out: W, features: &[String], beta: &DVector<f64>) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["feature", "beta"])?;
    for (f, &b) in features.iter().zip(beta.iter()) {
        w.write_record([f.clone(), fmt_f64(b)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One row per run; `level` is the swept value, empty when nothing is swept.
pub fn write_signal_runs<W: Write>(out: W, runs: &[(Option<f64>, SignalRun)]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record([
        "level",
        "replicate",
        "method",
        "auroc",
        "aupr",
        "e",
        "cutoff",
        "iterations",
        "converged",
    ])?;
    for (level, r) in runs {
        w.write_record([
            opt(*level),
            r.replicate.to_string(),
            r.method.to_string(),
            fmt_f64(r.auroc),
            fmt_f64(r.aupr),
            opt(r.prediction_error),
            opt(r.cutoff),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Summary rows prefixed by the swept value (empty when nothing is swept).
pub fn write_level_summary<W: Write>(out: W, levels: &[(Option<f64>, Vec<MetricSummary>)]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["level", "method", "metric", "n", "q1", "median", "q3"])?;
    for (level, rows) in levels {
        for r in rows {
            w.write_record([
                opt(*level),
                r.method.clone(),
                r.metric.clone(),
                r.n.to_string(),
                fmt_f64(r.q1),
                fmt_f64(r.median),
                fmt_f64(r.q3),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `feature,group,mean,probability` for a fit.
pub fn write_coefficients<W: Write>(out: W, report: &FitReport) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(["feature", "group", "mean", "probability"])?;
    let r = &report.result;
    for (i, f) in report.feature_names.iter().enumerate() {
        w.write_record([
            f.clone(),
            report.group_names[report.feature_groups[i]].clone(),
            fmt_f64(r.mean[i]),
            fmt_f64(r.feature_prob[i]),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A fit together with the names needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub group_names: Vec<String>,
    /// Group index of every feature.
    pub feature_groups: Vec<usize>,
    /// Means of the raw input columns and response, subtracted before fitting.
    pub x_means: Vec<f64>,
    pub y_mean: f64,
    /// Means on the raw column scale.
    pub coefficients: Vec<f64>,
    pub result: FitResult,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: FitReport = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                1,
                format!("unsupported schema_version {}", report.schema_version),
            ));
        }
        let n = report.feature_names.len();
        let r = &report.result;
        let lengths = [
            report.feature_groups.len(),
            report.x_means.len(),
            report.coefficients.len(),
            r.mean.len(),
            r.feature_prob.len(),
            r.feature_logit.len(),
        ];
        if lengths.iter().any(|&l| l != n)
            || report.group_names.len() != r.group_prob.len()
            || r.group_prob.len() != r.group_logit.len()
            || report.feature_groups.iter().any(|&g| g >= report.group_names.len())
        {
            return Err(Error::parse(1, "fit document has inconsistent lengths"));
        }
        Ok(report)
    }

    /// Raw-scale predictions for rows of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for {} coefficients",
                x.ncols(),
                self.coefficients.len()
            )));
        }
        let b = DVector::from_column_slice(&self.coefficients);
        let offset = self.y_mean - DVector::from_column_slice(&self.x_means).dot(&b);
        Ok((x * b).add_scalar(offset))
    }
}
