use std::path::Path;

use super::IoError;
use crate::gan::{Batch, Label};

/// A labelled feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub feature_names: Vec<String>,
    pub label_column: String,
    pub batch: Batch,
}

fn parse_label(s: &str) -> Option<Label> {
    match s.trim() {
        "genuine" => Some(Label::Genuine),
        "malicious" => Some(Label::Malicious),
        _ => None,
    }
}

/// Reads a comma-separated file whose header names `d` feature columns
/// followed by one label column (`genuine` / `malicious`).
/// `expected_dim`, when given, must equal `d`.
pub fn load_feature_csv(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<FeatureDataset, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let csv_err = |line: u64, message: String| IoError::Csv {
        path: path.to_owned(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    if headers.len() < 2 || headers.iter().all(|h| h.is_empty()) {
        return Err(IoError::Data {
            path: path.to_owned(),
            message: "header must name at least one feature and the label column".into(),
        });
    }
    let dim = headers.len() - 1;
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(csv_err(
                1,
                format!("header has {dim} feature columns, expected {expected}"),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(csv_err(
                line,
                format!("{} fields, expected {}", record.len(), dim + 1),
            ));
        }
        let mut row = Vec::with_capacity(dim);
        for (col, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                csv_err(
                    line,
                    format!("column `{}`: `{field}` is not a number", &headers[col]),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_err(
                    line,
                    format!("column `{}` is not finite", &headers[col]),
                ));
            }
            row.push(v);
        }
        let label = parse_label(&record[dim]).ok_or_else(|| {
            csv_err(
                line,
                format!("label `{}` is neither genuine nor malicious", &record[dim]),
            )
        })?;
        samples.push(row);
        labels.push(label);
    }
    if samples.is_empty() {
        return Err(IoError::Data {
            path: path.to_owned(),
            message: "no data rows".into(),
        });
    }
    Ok(FeatureDataset {
        feature_names: headers.iter().take(dim).map(str::to_owned).collect(),
        label_column: headers[dim].to_owned(),
        batch: Batch::labelled(samples, labels)?,
    })
}

/// Writes a dataset in the format [`load_feature_csv`] reads. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_feature_csv(path: &Path, dataset: &FeatureDataset) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IoError::Data {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let wrap = |e: csv::Error| IoError::Data {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut header = dataset.feature_names.clone();
    header.push(dataset.label_column.clone());
    writer.write_record(&header).map_err(wrap)?;
    let batch = &dataset.batch;
    for (i, row) in batch.samples().iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        fields.push(
            match batch.label(i) {
                Label::Genuine => "genuine",
                Label::Malicious => "malicious",
            }
            .to_owned(),
        );
        writer.write_record(&fields).map_err(wrap)?;
    }
    writer.flush().map_err(|e| IoError::file(path, e))
}
