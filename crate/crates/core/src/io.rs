//! File formats: dataset CSV and parameter JSON.
//!
//! Dataset CSV has a header `batch[,label],f1..fd`. Batches appear in order of
//! first occurrence. Labels are 1-based on disk and 0-based in memory.
//! Parameter JSON round-trips bit-exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_dataset, Assignment, ModelParams, MultiBatchDataset, RawBatch};

pub const SCHEMA_VERSION: &str = "1";

/// A dataset together with its optional per-cell labels (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub dataset: MultiBatchDataset,
    pub labels: Option<Vec<Vec<usize>>>,
}

impl LabeledDataset {
    /// Labels as an [`Assignment`] with `K` = largest label seen, unless a
    /// larger `k` is given.
    pub fn assignment(&self, k: Option<usize>) -> Option<Result<Assignment>> {
        self.labels.as_ref().map(|labels| {
            let max = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(1);
            Assignment::new(labels.clone(), k.unwrap_or(max).max(max))
        })
    }
}

pub fn read_dataset_csv(path: &Path) -> Result<LabeledDataset> {
    read_dataset(File::open(path)?)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("batch") {
        return Err(Error::invalid("first CSV column must be `batch`"));
    }
    let has_label = headers.get(1) == Some("label");
    let first_feature = if has_label { 2 } else { 1 };
    let d = headers.len().saturating_sub(first_feature);
    if d == 0 {
        return Err(Error::invalid("CSV has no feature columns"));
    }

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // Header is line 1.
        let line = line + 2;
        let id = rec.get(0).unwrap_or_default().to_string();
        let b = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            rows.push(Vec::new());
            labels.push(Vec::new());
            order.len() - 1
        });
        if has_label {
            let raw = rec.get(1).unwrap_or_default().trim();
            let l: usize = raw
                .parse()
                .ok()
                .filter(|&l| l >= 1)
                .ok_or_else(|| Error::invalid(format!("line {line}: label {raw:?} is not a positive integer")))?;
            labels[b].push(l - 1);
        }
        let feats = rec
            .iter()
            .skip(first_feature)
            .enumerate()
            .map(|(j, s)| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::invalid(format!("line {line}, column {}: {s:?} is not a number", j + first_feature + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows[b].push(feats);
    }
    let raw = order
        .into_iter()
        .zip(rows)
        .map(|(id, rows)| RawBatch { id, rows })
        .collect();
    Ok(LabeledDataset {
        dataset: validate_dataset(raw)?,
        labels: has_label.then_some(labels),
    })
}

pub fn write_dataset_csv(path: &Path, data: &MultiBatchDataset, labels: Option<&Assignment>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, data, labels)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(writer: W, data: &MultiBatchDataset, labels: Option<&Assignment>) -> Result<()> {
    if let Some(a) = labels {
        a.check_shape(data)?;
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["batch".to_string()];
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend((1..=data.d()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for (bi, batch) in data.batches().iter().enumerate() {
        for (i, row) in batch.data.iter_rows().enumerate() {
            rec.clear();
            rec.push(batch.id.clone());
            if let Some(a) = labels {
                rec.push((a.batch_labels(bi)[i] + 1).to_string());
            }
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    schema_version: String,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    #[serde(rename = "B")]
    b: usize,
    batch_ids: Vec<String>,
    mu: Vec<Vec<f64>>,
    beta: Vec<Vec<Vec<f64>>>,
    sigma: Vec<Vec<Vec<f64>>>,
    counts: Vec<Vec<usize>>,
}

/// JSON value for `params`, suitable for embedding in larger documents.
pub fn params_to_value(params: &ModelParams) -> serde_json::Value {
    let file = ParamsFile {
        schema_version: SCHEMA_VERSION.into(),
        k: params.k,
        d: params.d,
        b: params.n_batches(),
        batch_ids: params.batch_ids.clone(),
        mu: params.mu.iter().map(|m| m.iter().copied().collect()).collect(),
        beta: params
            .beta
            .iter()
            .map(|row| row.iter().map(|v| v.iter().copied().collect()).collect())
            .collect(),
        sigma: params
            .sigma
            .iter()
            .map(|s| (0..s.nrows()).map(|i| s.row(i).iter().copied().collect()).collect())
            .collect(),
        counts: params.counts.clone(),
    };
    serde_json::to_value(file).expect("parameter file is always serializable")
}

pub fn params_to_json(params: &ModelParams) -> String {
    serde_json::to_string_pretty(&params_to_value(params)).expect("parameter file is always serializable")
}

pub fn params_from_json(text: &str) -> Result<ModelParams> {
    let f: ParamsFile = serde_json::from_str(text)?;
    if f.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!("unsupported schema_version {:?}", f.schema_version)));
    }
    if f.batch_ids.len() != f.b {
        return Err(Error::invalid("B does not match batch_ids"));
    }
    let square = f
        .sigma
        .iter()
        .all(|s| s.len() == f.d && s.iter().all(|r| r.len() == f.d));
    if !square {
        return Err(Error::invalid("sigma entries must be d x d"));
    }
    let params = ModelParams {
        k: f.k,
        d: f.d,
        batch_ids: f.batch_ids,
        mu: f.mu.into_iter().map(DVector::from_vec).collect(),
        beta: f
            .beta
            .into_iter()
            .map(|row| row.into_iter().map(DVector::from_vec).collect())
            .collect(),
        sigma: f
            .sigma
            .into_iter()
            .map(|s| DMatrix::from_row_iterator(f.d, f.d, s.into_iter().flatten()))
            .collect(),
        counts: f.counts,
    };
    params.validate()?;
    Ok(params)
}

pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, params_to_json(params) + "\n")?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    params_from_json(&text)
}
