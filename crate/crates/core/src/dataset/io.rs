use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnMeta, Labels, TabularDataset, Task};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

/// Dataset manifest: which column is the label, what kind of task it is,
/// and which columns carry categorical tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label_column: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_column: Option<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    /// Ground-truth informative columns, written for synthetic data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub informative_columns: Vec<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn is_missing(token: &str) -> bool {
    token.is_empty() || token == "NA"
}

/// Reads a comma-separated file with one header row.
///
/// Empty cells and the literal `NA` are missing (stored as NaN). Categorical
/// columns are integer-encoded in order of first appearance. Class labels that
/// are all non-negative integers are used as class indices; otherwise label
/// tokens are encoded in sorted order.
pub fn load_csv(path: &Path, manifest: &Manifest) -> Result<TabularDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, manifest)
}

pub(crate) fn read_csv<R: std::io::Read>(reader: R, manifest: &Manifest) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_owned)
        .collect();

    let label_pos = header
        .iter()
        .position(|h| *h == manifest.label_column)
        .ok_or_else(|| Error::Schema(format!("label column `{}` not found in header", manifest.label_column)))?;
    let group_pos = match &manifest.group_column {
        Some(g) => Some(
            header
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| Error::Schema(format!("group column `{g}` not found in header")))?,
        ),
        None => None,
    };
    for c in &manifest.categorical_columns {
        if !header.contains(c) {
            return Err(Error::Schema(format!("categorical column `{c}` not found in header")));
        }
    }

    let feature_pos: Vec<usize> = (0..header.len()).filter(|&i| i != label_pos && Some(i) != group_pos).collect();
    let categorical: Vec<bool> =
        feature_pos.iter().map(|&i| manifest.categorical_columns.contains(&header[i])).collect();
    let mut vocab: Vec<HashMap<String, usize>> = vec![HashMap::new(); feature_pos.len()];
    let mut vocab_order: Vec<Vec<String>> = vec![Vec::new(); feature_pos.len()];

    let mut values: Vec<f64> = Vec::new();
    let mut label_tokens: Vec<String> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr
            .read_record(&mut record)
            .map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (j, &pos) in feature_pos.iter().enumerate() {
            let token = &record[pos];
            let v = if is_missing(token) {
                f64::NAN
            } else if categorical[j] {
                let next = vocab[j].len();
                let code = *vocab[j].entry(token.to_owned()).or_insert_with(|| {
                    vocab_order[j].push(token.to_owned());
                    next
                });
                code as f64
            } else {
                match token.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: format!("column `{}`: cannot parse `{token}`", header[pos]),
                        })
                    }
                }
            };
            values.push(v);
        }
        let label = &record[label_pos];
        if is_missing(label) {
            return Err(Error::Parse { line, message: "missing label".into() });
        }
        label_tokens.push(label.to_owned());
        if let Some(g) = group_pos {
            groups.push(record[g].to_owned());
        }
    }

    let n = label_tokens.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let features = Array2::from_shape_vec((n, feature_pos.len()), values).map_err(|e| Error::shape(e.to_string()))?;
    let column_meta = feature_pos
        .iter()
        .enumerate()
        .map(|(j, &pos)| {
            if categorical[j] {
                ColumnMeta::categorical(header[pos].clone(), vocab_order[j].clone())
            } else {
                ColumnMeta::numerical(header[pos].clone())
            }
        })
        .collect();

    let (labels, task) = parse_labels(&label_tokens, manifest.task)?;
    let mut ds = TabularDataset::new(features, labels, column_meta, task)?;
    if group_pos.is_some() {
        ds = ds.with_group_ids(groups)?;
    }
    if !manifest.informative_columns.is_empty() {
        let inf = ds
            .column_meta()
            .iter()
            .enumerate()
            .filter(|(_, c)| manifest.informative_columns.contains(&c.name))
            .map(|(i, _)| i)
            .collect();
        ds = ds.with_informative(inf);
    }
    Ok(ds)
}

fn parse_labels(tokens: &[String], kind: TaskKind) -> Result<(Labels, Task)> {
    match kind {
        TaskKind::Regression => {
            let mut v = Vec::with_capacity(tokens.len());
            for (i, t) in tokens.iter().enumerate() {
                match t.parse::<f64>() {
                    Ok(x) if x.is_finite() => v.push(x),
                    _ => {
                        return Err(Error::Parse {
                            line: i as u64 + 2,
                            message: format!("regression target `{t}` is not a finite number"),
                        })
                    }
                }
            }
            Ok((Labels::Real(v), Task::Regression))
        }
        TaskKind::Binary | TaskKind::Multiclass => {
            let numeric: Option<Vec<usize>> = tokens.iter().map(|t| t.parse::<usize>().ok()).collect();
            let classes = match numeric {
                Some(v) => v,
                None => {
                    let mut uniq: Vec<&String> = tokens.iter().collect();
                    uniq.sort();
                    uniq.dedup();
                    tokens.iter().map(|t| uniq.binary_search(&t).expect("token present")).collect()
                }
            };
            let c = classes.iter().max().map_or(0, |m| m + 1);
            let task = match kind {
                TaskKind::Binary => {
                    if c > 2 {
                        return Err(Error::Schema(format!("binary task but labels span {c} classes")));
                    }
                    Task::Binary
                }
                _ => Task::Multiclass(c.max(2)),
            };
            Ok((Labels::Class(classes), task))
        }
    }
}

/// Writes features and labels as CSV. Categorical codes are written back as
/// their tokens; missing values as `NA`.
pub fn write_csv(ds: &TabularDataset, path: &Path, label_column: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    let mut header: Vec<&str> = ds.column_meta().iter().map(|c| c.name.as_str()).collect();
    header.push(label_column);
    if ds.group_ids().is_some() {
        header.push("group_id");
    }
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for i in 0..ds.n_rows() {
        let mut fields: Vec<String> = ds
            .row(i)
            .iter()
            .zip(ds.column_meta())
            .map(|(&v, meta)| {
                if v.is_nan() {
                    "NA".to_owned()
                } else if meta.kind == ColumnKind::Categorical
                    && !ds.is_preprocessed()
                    && (v as usize) < meta.categories.len()
                {
                    meta.categories[v as usize].clone()
                } else {
                    format!("{v}")
                }
            })
            .collect();
        fields.push(match ds.labels().get(i) {
            super::Label::Class(c) => c.to_string(),
            super::Label::Real(r) => format!("{r}"),
        });
        if let Some(g) = ds.group_ids() {
            fields.push(g[i].clone());
        }
        writeln!(out, "{}", fields.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
