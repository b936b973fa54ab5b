use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GmdaError, Result};

/// Header name marking a column of clean labels kept alongside the observed ones.
pub const TRUE_LABEL_HEADER: &str = "true_label";

/// Where the observed label sits in each row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    /// Zero-based field index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
    /// Last field (excluding a trailing `true_label` column).
    #[default]
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Integers select by index, `last` selects the last column, anything else is a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s.eq_ignore_ascii_case("last") {
            LabelColumn::Last
        } else if let Ok(i) = s.parse() {
            LabelColumn::Index(i)
        } else {
            LabelColumn::Name(s.to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    /// `None` reads every column as a feature.
    pub label_column: Option<LabelColumn>,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: Some(LabelColumn::Last),
            has_header: true,
        }
    }
}

/// Class names in index order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    /// `"0", "1", ..., "k-1"`.
    pub fn identity(k: usize) -> Self {
        Self::new((0..k).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Integer labels are ordered by value so that class `i` is usually named `i`.
    fn sort_if_numeric(&mut self) {
        let parsed: Option<Vec<i64>> = self.names.iter().map(|n| n.parse().ok()).collect();
        if let Some(values) = parsed {
            let mut pairs: Vec<(i64, String)> = values.into_iter().zip(self.names.drain(..)).collect();
            pairs.sort();
            self.names = pairs.into_iter().map(|(_, n)| n).collect();
        }
    }

    fn intern(&mut self, name: &str) -> usize {
        match self.index_of(name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }
}

/// Parsed CSV before labels are mapped to class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub dim: usize,
    pub features: Vec<f64>,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub true_labels: Option<Vec<String>>,
}

impl CsvTable {
    pub fn len(&self) -> usize {
        self.features.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Maps labels through `map`, or builds one when `None`: integer labels in
    /// numeric order, anything else in order of first appearance.
    pub fn into_dataset(self, map: Option<&LabelMap>) -> Result<(Dataset, LabelMap)> {
        let labels = self
            .labels
            .ok_or_else(|| GmdaError::InvalidDataset("no label column".into()))?;
        let (observed, truth, map) = match map {
            Some(map) => {
                let lookup = |s: &String| map.index_of(s).ok_or_else(|| GmdaError::UnknownLabel(s.clone()));
                let observed = labels.iter().map(lookup).collect::<Result<Vec<_>>>()?;
                let truth = self
                    .true_labels
                    .as_ref()
                    .map(|t| t.iter().map(lookup).collect::<Result<Vec<_>>>())
                    .transpose()?;
                (observed, truth, map.clone())
            }
            None => {
                let mut map = LabelMap::default();
                for name in labels.iter().chain(self.true_labels.iter().flatten()) {
                    map.intern(name);
                }
                map.sort_if_numeric();
                return CsvTable {
                    labels: Some(labels),
                    ..self
                }
                .into_dataset(Some(&map));
            }
        };
        let ds = Dataset::new(self.features, self.dim, observed, truth, map.len())?;
        Ok((ds, map))
    }
}

/// Parses comma-delimited text. Line numbers in errors are 1-based file lines;
/// column numbers are 1-based field positions.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header: Option<Vec<String>> = if options.has_header {
        match records.next() {
            Some(rec) => Some(rec?.iter().map(str::to_string).collect()),
            None => None,
        }
    } else {
        None
    };

    let mut width: Option<usize> = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let mut true_idx: Option<usize> = header
        .as_ref()
        .and_then(|h| h.iter().position(|c| c == TRUE_LABEL_HEADER));
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut true_labels = Vec::new();
    let mut dim = 0;

    let resolve = |w: usize, true_idx: Option<usize>| -> Result<Option<usize>> {
        let idx = match &options.label_column {
            None => return Ok(None),
            Some(LabelColumn::Index(i)) => *i,
            Some(LabelColumn::Last) => match true_idx {
                Some(t) if t + 1 == w && w >= 2 => w - 2,
                _ => w.saturating_sub(1),
            },
            Some(LabelColumn::Name(name)) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| GmdaError::ParseError {
                    line: 1,
                    column: 0,
                    message: format!("no header column named {name:?}"),
                })?,
        };
        if idx >= w {
            return Err(GmdaError::ParseError {
                line: 1,
                column: idx + 1,
                message: format!("label column {idx} outside {w} fields"),
            });
        }
        Ok(Some(idx))
    };

    if let Some(w) = width {
        label_idx = resolve(w, true_idx)?;
        if label_idx.is_some() && label_idx == true_idx {
            true_idx = None;
        }
    }

    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = match width {
            Some(w) => w,
            None => {
                width = Some(rec.len());
                label_idx = resolve(rec.len(), None)?;
                rec.len()
            }
        };
        if rec.len() != w {
            return Err(GmdaError::RaggedRows {
                line,
                expected: w,
                found: rec.len(),
            });
        }
        let mut row_dim = 0;
        for (col, field) in rec.iter().enumerate() {
            if Some(col) == label_idx {
                labels.push(field.to_string());
            } else if Some(col) == true_idx {
                true_labels.push(field.to_string());
            } else {
                let v: f64 = field.parse().map_err(|_| GmdaError::ParseError {
                    line,
                    column: col + 1,
                    message: format!("{field:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(GmdaError::ParseError {
                        line,
                        column: col + 1,
                        message: format!("{field:?} is not finite"),
                    });
                }
                features.push(v);
                row_dim += 1;
            }
        }
        dim = row_dim;
    }

    if features.is_empty() && labels.is_empty() {
        return Err(GmdaError::InvalidDataset("no data rows".into()));
    }
    if dim == 0 {
        return Err(GmdaError::InvalidDataset("no feature columns".into()));
    }
    let feature_names = match &header {
        Some(h) => h
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx && Some(*i) != true_idx)
            .map(|(_, s)| s.clone())
            .collect(),
        None => (0..dim).map(|i| format!("x{i}")).collect(),
    };
    Ok(CsvTable {
        dim,
        features,
        feature_names,
        labels: label_idx.map(|_| labels),
        true_labels: true_idx.map(|_| true_labels),
    })
}

/// Loads a labeled dataset; see [`CsvTable::into_dataset`] for how classes are numbered.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<(Dataset, LabelMap)> {
    let file = File::open(path)?;
    read_csv(BufReader::new(file), options)?.into_dataset(None)
}

/// Loads a labeled dataset whose labels must all appear in `map`.
pub fn load_csv_with_map(path: impl AsRef<Path>, options: &CsvOptions, map: &LabelMap) -> Result<Dataset> {
    let file = File::open(path)?;
    Ok(read_csv(BufReader::new(file), options)?.into_dataset(Some(map))?.0)
}

/// Writes `x0..x{d-1},label[,true_label]`. Labels are written through `labels`
/// when given, as integers otherwise. Values use the shortest round-trip form.
pub fn write_csv<W: Write>(writer: W, dataset: &Dataset, labels: Option<&LabelMap>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let name = |c: usize| -> String {
        labels
            .and_then(|m| m.name(c))
            .map_or_else(|| c.to_string(), str::to_string)
    };
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    if dataset.true_labels().is_some() {
        header.push(TRUE_LABEL_HEADER.into());
    }
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for i in 0..dataset.len() {
        fields.clear();
        fields.extend(dataset.row(i).iter().map(|v| format!("{v:?}")));
        fields.push(name(dataset.observed_labels()[i]));
        if let Some(t) = dataset.true_labels() {
            fields.push(name(t[i]));
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>, labels: Option<&LabelMap>) -> Result<()> {
    let file = File::create(path)?;
    write_csv(BufWriter::new(file), dataset, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(has_header: bool) -> CsvOptions {
        CsvOptions {
            label_column: Some(LabelColumn::Last),
            has_header,
        }
    }

    #[test]
    fn three_row_file() {
        let text = "a,b,class\n1.5,2,setosa\n-3,4e-1,versicolor\n0,0,setosa\n";
        let (ds, map) = read_csv(text.as_bytes(), &opts(true))
            .unwrap()
            .into_dataset(None)
            .unwrap();
        assert_eq!(ds.features(), &[1.5, 2.0, -3.0, 0.4, 0.0, 0.0]);
        assert_eq!(ds.observed_labels(), &[0, 1, 0]);
        assert_eq!(map.names(), &["setosa", "versicolor"]);
        assert!(ds.true_labels().is_none());
    }

    #[test]
    fn label_by_name_and_index() {
        let text = "y,f1,f2\nb,1,2\na,3,4\n";
        let by_name = CsvOptions {
            label_column: Some(LabelColumn::Name("y".into())),
            has_header: true,
        };
        let (ds, map) = read_csv(text.as_bytes(), &by_name).unwrap().into_dataset(None).unwrap();
        assert_eq!(ds.features(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(map.names(), &["b", "a"]);
        let by_idx = CsvOptions {
            label_column: Some(LabelColumn::Index(0)),
            has_header: false,
        };
        let t = read_csv("b,1,2\na,3,4\n".as_bytes(), &by_idx).unwrap();
        assert_eq!(t.labels.unwrap(), vec!["b", "a"]);
    }

    #[test]
    fn parse_error_has_position() {
        let text = "x,y,label\n1,2,a\n3,oops,b\n";
        match read_csv(text.as_bytes(), &opts(true)) {
            Err(GmdaError::ParseError { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let text = "1,2,a\n3,b\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &opts(false)),
            Err(GmdaError::RaggedRows {
                line: 2,
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn unknown_label_with_fixed_map() {
        let t = read_csv("1,a\n2,c\n".as_bytes(), &opts(false)).unwrap();
        let map = LabelMap::new(vec!["a".into(), "b".into()]);
        assert!(matches!(t.into_dataset(Some(&map)), Err(GmdaError::UnknownLabel(_))));
    }

    #[test]
    fn class_numbering() {
        let t = read_csv("1,10\n2,2\n3,-1\n".as_bytes(), &opts(false)).unwrap();
        let (ds, map) = t.into_dataset(None).unwrap();
        assert_eq!(map.names(), &["-1", "2", "10"]);
        assert_eq!(ds.observed_labels(), &[2, 1, 0]);
        let t = read_csv("1,b\n2,a\n3,b\n".as_bytes(), &opts(false)).unwrap();
        let (ds, map) = t.into_dataset(None).unwrap();
        assert_eq!(map.names(), &["b", "a"]);
        assert_eq!(ds.observed_labels(), &[0, 1, 0]);
    }

    #[test]
    fn true_label_column_round_trip() {
        let ds = Dataset::new(vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0], 2, vec![1, 0], Some(vec![0, 0]), 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds, None).unwrap();
        let back = read_csv(buf.as_slice(), &CsvOptions::default())
            .unwrap()
            .into_dataset(Some(&LabelMap::identity(2)))
            .unwrap()
            .0;
        assert_eq!(back, ds);
    }

    #[test]
    fn features_only() {
        let o = CsvOptions {
            label_column: None,
            has_header: false,
        };
        let t = read_csv("1,2\n3,4\n".as_bytes(), &o).unwrap();
        assert_eq!(t.dim, 2);
        assert!(t.labels.is_none());
    }
}
