use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ErrorReport, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Total,
    Max,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Total => "total",
            Metric::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Md,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Md),
            other => Err(format!("unknown table format {other:?}")),
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub mechanism: String,
    pub budget: String,
    pub algorithm: String,
    pub query_group: String,
    pub metric: Metric,
    pub value: f64,
    pub stderr: f64,
    pub trials_used: usize,
}

impl TableRow {
    /// Field-wise equality that treats NaN as equal to itself.
    pub fn bit_eq(&self, other: &TableRow) -> bool {
        self.dataset == other.dataset
            && self.mechanism == other.mechanism
            && self.budget == other.budget
            && self.algorithm == other.algorithm
            && self.query_group == other.query_group
            && self.metric == other.metric
            && self.value.to_bits() == other.value.to_bits()
            && self.stderr.to_bits() == other.stderr.to_bits()
            && self.trials_used == other.trials_used
    }
}

const HEADER: [&str; 9] = [
    "dataset",
    "mechanism",
    "budget",
    "algorithm",
    "query_group",
    "metric",
    "value",
    "stderr",
    "trials_used",
];

pub fn emit_table(report: &ErrorReport, format: TableFormat) -> String {
    let rows = report.rows();
    match format {
        TableFormat::Csv => render_csv(&rows),
        TableFormat::Md => render_markdown(&rows),
    }
}

fn render_csv(rows: &[TableRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in rows {
        // f64 Display is the shortest representation that parses back exactly
        w.write_record([
            r.dataset.as_str(),
            &r.mechanism,
            &r.budget,
            &r.algorithm,
            &r.query_group,
            &r.metric.to_string(),
            &r.value.to_string(),
            &r.stderr.to_string(),
            &r.trials_used.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn parse_csv(text: &str) -> Result<Vec<TableRow>, HarnessError> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rd.headers().map_err(|e| HarnessError::Table(e.to_string()))?;
    if headers.iter().ne(HEADER) {
        return Err(HarnessError::Table(format!("unexpected header {headers:?}")));
    }
    rd.deserialize()
        .map(|r| r.map_err(|e| HarnessError::Table(e.to_string())))
        .collect()
}

fn push_unique<T: PartialEq + Clone>(v: &mut Vec<T>, x: &T) {
    if !v.contains(x) {
        v.push(x.clone());
    }
}

/// One block per (mechanism, budget, query group), datasets down the side
/// and each algorithm's Total and Max across the top.
pub fn render_markdown(rows: &[TableRow]) -> String {
    let mut blocks: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        push_unique(
            &mut blocks,
            &(r.mechanism.clone(), r.budget.clone(), r.query_group.clone()),
        );
    }
    let mut out = String::new();
    for (mechanism, budget, group) in &blocks {
        let in_block: Vec<&TableRow> = rows
            .iter()
            .filter(|r| &r.mechanism == mechanism && &r.budget == budget && &r.query_group == group)
            .collect();
        let (mut datasets, mut algorithms) = (Vec::new(), Vec::new());
        for r in &in_block {
            push_unique(&mut datasets, &r.dataset);
            push_unique(&mut algorithms, &r.algorithm);
        }
        let most = in_block.iter().map(|r| r.trials_used).max().unwrap_or(0);

        out.push_str(&format!("### {group} queries, {mechanism} ({budget})\n\n| dataset |"));
        for a in &algorithms {
            out.push_str(&format!(" {a} Total | {a} Max |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|---|".repeat(algorithms.len()));
        out.push('\n');
        for d in &datasets {
            out.push_str(&format!("| {d} |"));
            for a in &algorithms {
                for metric in [Metric::Total, Metric::Max] {
                    let cell = in_block
                        .iter()
                        .find(|r| &r.dataset == d && &r.algorithm == a && r.metric == metric)
                        .map(|r| {
                            let mut s = format!("{:.2} ± {:.2}", r.value, r.stderr);
                            if r.trials_used < most {
                                s.push_str(&format!(" (n={})", r.trials_used));
                            }
                            s
                        })
                        .unwrap_or_default();
                    out.push_str(&format!(" {cell} |"));
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
