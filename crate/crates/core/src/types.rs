//! Shared domain types: multi-batch data, cluster assignments and model
//! parameters.
//!
//! Cluster labels are 0-based inside the crate. Every external format
//! (CSV, JSON, reports) uses 1-based labels; conversion happens in [`crate::io`].

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

/// Relative tolerance for the identifiability constraint `sum_b n_bk beta_bk = 0`.
pub const IDENTIFIABILITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub id: String,
    pub data: RowMatrix,
}

/// Unvalidated batch as read from an external source; rows may be ragged.
#[derive(Clone, Debug, PartialEq)]
pub struct RawBatch {
    pub id: String,
    pub rows: Vec<Vec<f64>>,
}

/// Cells from several batches sharing one feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiBatchDataset {
    batches: Vec<Batch>,
    d: usize,
}

/// Checks ragged rows, column agreement, finiteness, empty batches and
/// duplicate ids, reporting the first offending coordinate.
pub fn validate_dataset(raw: Vec<RawBatch>) -> Result<MultiBatchDataset> {
    let d = raw
        .iter()
        .find_map(|b| b.rows.first().map(Vec::len))
        .unwrap_or(0);
    let mut batches = Vec::with_capacity(raw.len());
    for (bi, b) in raw.into_iter().enumerate() {
        for (ri, row) in b.rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    batch: bi,
                    id: b.id.clone(),
                    row: Some(ri),
                    expected: d,
                    found: row.len(),
                });
            }
        }
        let n = b.rows.len();
        let data = RowMatrix::new(n, d, b.rows.into_iter().flatten().collect())?;
        batches.push(Batch { id: b.id, data });
    }
    MultiBatchDataset::new(batches)
}

impl MultiBatchDataset {
    pub fn new(batches: Vec<Batch>) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::invalid("dataset has no batches"));
        }
        let d = batches[0].data.cols();
        let mut seen = HashSet::new();
        for (bi, b) in batches.iter().enumerate() {
            if !seen.insert(b.id.as_str()) {
                return Err(Error::DuplicateBatchId {
                    batch: bi,
                    id: b.id.clone(),
                });
            }
            if b.data.rows() == 0 {
                return Err(Error::EmptyBatch {
                    batch: bi,
                    id: b.id.clone(),
                });
            }
            if b.data.cols() != d {
                return Err(Error::DimensionMismatch {
                    batch: bi,
                    id: b.id.clone(),
                    row: None,
                    expected: d,
                    found: b.data.cols(),
                });
            }
            for (ri, row) in b.data.iter_rows().enumerate() {
                if let Some(ci) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        batch: bi,
                        row: ri,
                        col: ci,
                        value: row[ci],
                    });
                }
            }
        }
        if d == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        Ok(Self { batches, d })
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn batch(&self, b: usize) -> &Batch {
        &self.batches[b]
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.batches.iter().map(|b| b.data.rows()).sum()
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(|b| b.data.rows()).collect()
    }

    pub fn batch_ids(&self) -> Vec<String> {
        self.batches.iter().map(|b| b.id.clone()).collect()
    }

    /// All cells stacked batch by batch.
    pub fn pooled(&self) -> RowMatrix {
        RowMatrix::vstack(self.batches.iter().map(|b| &b.data), self.d)
    }

    /// Batch index of every pooled row.
    pub fn pooled_batch_index(&self) -> Vec<usize> {
        self.batches
            .iter()
            .enumerate()
            .flat_map(|(bi, b)| std::iter::repeat_n(bi, b.data.rows()))
            .collect()
    }

    /// Same batch ids and sizes, new row data.
    pub fn with_data(&self, data: Vec<RowMatrix>) -> Result<Self> {
        if data.len() != self.batches.len() {
            return Err(Error::invalid("batch count mismatch"));
        }
        let batches = self
            .batches
            .iter()
            .zip(data)
            .map(|(b, m)| Batch {
                id: b.id.clone(),
                data: m,
            })
            .collect();
        Self::new(batches)
    }
}

/// Per-cell cluster labels, grouped by batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<Vec<usize>>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("cluster count must be positive"));
        }
        for (bi, lab) in labels.iter().enumerate() {
            if let Some(i) = lab.iter().position(|&l| l >= k) {
                return Err(Error::invalid(format!(
                    "label {} of batch {}, row {i} outside 1..={k}",
                    lab[i] + 1,
                    bi + 1
                )));
            }
        }
        Ok(Self { labels, k })
    }

    /// Splits a pooled label vector according to batch sizes.
    pub fn from_pooled(pooled: &[usize], sizes: &[usize], k: usize) -> Result<Self> {
        if pooled.len() != sizes.iter().sum::<usize>() {
            return Err(Error::invalid("pooled label count does not match batch sizes"));
        }
        let mut labels = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &s in sizes {
            labels.push(pooled[offset..offset + s].to_vec());
            offset += s;
        }
        Self::new(labels, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn batch_labels(&self, b: usize) -> &[usize] {
        &self.labels[b]
    }

    pub fn pooled(&self) -> Vec<usize> {
        self.labels.iter().flatten().copied().collect()
    }

    pub fn n(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    /// Cell counts `n_bk`, B rows by K columns.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        self.labels
            .iter()
            .map(|lab| {
                let mut c = vec![0; self.k];
                for &l in lab {
                    c[l] += 1;
                }
                c
            })
            .collect()
    }

    pub fn check_shape(&self, data: &MultiBatchDataset) -> Result<()> {
        if self.labels.len() != data.n_batches() {
            return Err(Error::invalid(format!(
                "assignment covers {} batches, dataset has {}",
                self.labels.len(),
                data.n_batches()
            )));
        }
        for (bi, (lab, b)) in self.labels.iter().zip(data.batches()).enumerate() {
            if lab.len() != b.data.rows() {
                return Err(Error::invalid(format!(
                    "batch {}: {} labels for {} rows",
                    bi + 1,
                    lab.len(),
                    b.data.rows()
                )));
            }
        }
        Ok(())
    }

    /// Same labels with a different declared cluster count.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        Self::new(self.labels.clone(), k)
    }
}

/// Cluster means, per-(batch, cluster) effects, covariances and counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub k: usize,
    pub d: usize,
    pub batch_ids: Vec<String>,
    pub mu: Vec<DVector<f64>>,
    pub beta: Vec<Vec<DVector<f64>>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub counts: Vec<Vec<usize>>,
}

impl ModelParams {
    pub fn n_batches(&self) -> usize {
        self.batch_ids.len()
    }

    pub fn n(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// `mu_k + beta_bk` for every batch and cluster.
    pub fn composite_means(&self) -> Vec<Vec<DVector<f64>>> {
        self.beta
            .iter()
            .map(|row| row.iter().zip(&self.mu).map(|(b, m)| m + b).collect())
            .collect()
    }

    /// `|| sum_b n_bk beta_bk ||` for cluster `k`.
    pub fn identifiability_residual(&self, k: usize) -> f64 {
        let mut acc = DVector::zeros(self.d);
        for (row, counts) in self.beta.iter().zip(&self.counts) {
            acc += &row[k] * counts[k] as f64;
        }
        acc.norm()
    }

    /// Tolerance scale `max(1, max_b ||beta_bk|| * n)`.
    pub fn identifiability_scale(&self, k: usize) -> f64 {
        let max_beta = self
            .beta
            .iter()
            .zip(&self.counts)
            .filter(|(_, c)| c[k] > 0)
            .map(|(row, _)| row[k].norm())
            .fold(0.0, f64::max);
        (max_beta * self.n() as f64).max(1.0)
    }

    pub fn is_identifiable(&self, eps: f64) -> bool {
        (0..self.k).all(|k| self.identifiability_residual(k) <= eps * self.identifiability_scale(k))
    }

    /// Structural checks: shapes, symmetry, positive definiteness and
    /// count consistency.
    pub fn validate(&self) -> Result<()> {
        let (k, d, b) = (self.k, self.d, self.batch_ids.len());
        if k == 0 || d == 0 || b == 0 {
            return Err(Error::invalid("K, d and B must all be positive"));
        }
        if self.mu.len() != k || self.mu.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("mu must be K vectors of length d"));
        }
        if self.beta.len() != b || self.beta.iter().any(|r| r.len() != k || r.iter().any(|v| v.len() != d)) {
            return Err(Error::invalid("beta must be B x K vectors of length d"));
        }
        if self.counts.len() != b || self.counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("counts must be B x K"));
        }
        if self.sigma.len() != k {
            return Err(Error::invalid("sigma must hold K matrices"));
        }
        for (ci, s) in self.sigma.iter().enumerate() {
            if s.nrows() != d || s.ncols() != d {
                return Err(Error::invalid(format!("sigma[{}] is not d x d", ci + 1)));
            }
            let asym = (s - s.transpose()).abs().max();
            if asym > 1e-12 * s.abs().max().max(1.0) {
                return Err(Error::invalid(format!("sigma[{}] is not symmetric", ci + 1)));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite { cluster: ci });
            }
        }
        let finite = self.mu.iter().chain(self.beta.iter().flatten()).all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorTag {
    Gaussian,
    StudentT,
    MissingCluster,
}

/// Simulated dataset bundled with its generating parameters and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub dataset: MultiBatchDataset,
    pub truth_params: ModelParams,
    pub truth_labels: Assignment,
    pub generator_tag: GeneratorTag,
}
