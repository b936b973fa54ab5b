use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::RunRecord;
use crate::error::{GmdaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = GmdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(GmdaError::InvalidConfig(format!("unknown table format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub method: String,
    pub noise: String,
    /// Mean test error per rate column; `None` where every run failed or the
    /// rate was not part of this row's grid.
    pub values: Vec<Option<f64>>,
}

/// Error rates with one row per (method, noise family) and one column per rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rates: Vec<f64>,
    pub rows: Vec<TableRow>,
}

const FIXED_COLUMNS: [&str; 3] = ["dataset", "method", "noise"];

impl Table {
    /// Averages cell means over folds. Rows follow first appearance in the record.
    pub fn from_record(record: &RunRecord) -> Self {
        let mut rates: Vec<f64> = record.cells.iter().map(|c| c.noise.rate).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        let mut keys: Vec<(String, String)> = Vec::new();
        // per row, per rate: (sum, count)
        let mut acc: Vec<Vec<(f64, usize)>> = Vec::new();
        let mut present: Vec<Vec<bool>> = Vec::new();
        for cell in &record.cells {
            let key = (cell.model.label(), cell.noise.family.label());
            let row = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
                keys.push(key);
                acc.push(vec![(0.0, 0); rates.len()]);
                present.push(vec![false; rates.len()]);
                keys.len() - 1
            });
            let col = rates
                .iter()
                .position(|r| *r == cell.noise.rate)
                .expect("rate collected");
            present[row][col] = true;
            if let Some(e) = cell.mean_error_rate {
                acc[row][col].0 += e;
                acc[row][col].1 += 1;
            }
        }
        let rows = keys
            .into_iter()
            .zip(acc)
            .map(|((method, noise), cols)| TableRow {
                dataset: record.spec.name.clone(),
                method,
                noise,
                values: cols.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect(),
            })
            .collect();
        Table { rates, rows }
    }

    pub fn header(&self) -> Vec<String> {
        FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.rates.iter().map(|r| r.to_string()))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![row.dataset.clone(), row.method.clone(), row.noise.clone()];
            rec.extend(row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| GmdaError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
            return Err(GmdaError::ParseError {
                line: 1,
                column: 1,
                message: "expected dataset,method,noise,<rates...>".into(),
            });
        }
        let parse = |s: &str, line: usize, column: usize| {
            s.parse::<f64>().map_err(|e| GmdaError::ParseError {
                line,
                column,
                message: e.to_string(),
            })
        };
        let rates = header
            .iter()
            .enumerate()
            .skip(3)
            .map(|(c, s)| parse(s, 1, c + 1))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let values = rec
                .iter()
                .enumerate()
                .skip(3)
                .map(|(c, s)| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        parse(s, line, c + 1).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(TableRow {
                dataset: rec[0].to_string(),
                method: rec[1].to_string(),
                noise: rec[2].to_string(),
                values,
            });
        }
        Ok(Table { rates, rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Winners per column: the minimum among rows sharing a noise family.
    /// Ties are all marked.
    fn winners(&self) -> Vec<Vec<bool>> {
        let mut marks = vec![vec![false; self.rates.len()]; self.rows.len()];
        for col in 0..self.rates.len() {
            for (i, row) in self.rows.iter().enumerate() {
                let Some(v) = row.values[col] else { continue };
                let best = self
                    .rows
                    .iter()
                    .filter(|r| r.noise == row.noise)
                    .filter_map(|r| r.values[col])
                    .fold(f64::INFINITY, f64::min);
                marks[i][col] = v == best;
            }
        }
        marks
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        let marks = self.winners();
        for (row, mark) in self.rows.iter().zip(marks) {
            let cells: Vec<String> = row
                .values
                .iter()
                .zip(mark)
                .map(|(v, m)| match (v, m) {
                    (Some(x), true) => format!("**{x:.4}**"),
                    (Some(x), false) => format!("{x:.4}"),
                    (None, _) => "n/a".into(),
                })
                .collect();
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                row.dataset,
                row.method,
                row.noise,
                cells.join(" | ")
            );
        }
        out
    }

    pub fn render(&self, format: TableFormat) -> Result<String> {
        match format {
            TableFormat::Csv => self.to_csv(),
            TableFormat::Json => self.to_json(),
            TableFormat::Markdown => Ok(self.to_markdown()),
        }
    }
}

/// Renders the error-rate table of `record`.
pub fn emit_table(record: &RunRecord, format: TableFormat) -> Result<String> {
    Table::from_record(record).render(format)
}

pub fn write_table(record: &RunRecord, format: TableFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, emit_table(record, format)?)?;
    Ok(())
}
