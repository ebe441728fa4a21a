//! Initial cluster assignments and cluster-count estimation.

pub mod kmeans;
pub mod knn;
pub mod leiden;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hungarian::min_cost_assignment;
use crate::matrix::sq_dist;
use crate::rng::RandomSource;
use crate::types::{Assignment, MultiBatchDataset};

pub use kmeans::{lloyd_kmeans, KMeansResult};
pub use knn::{build_knn_graph, knn_indices, KnnGraph};
pub use leiden::{leiden_cluster, LeidenConfig};

pub const DEFAULT_NEIGHBORS: usize = 20;
pub const DEFAULT_RESOLUTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Best of several k-means runs on all cells pooled across batches.
    #[default]
    Kmeans,
    /// k-means within each batch, clusters matched to batch 1's.
    Perbatch,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Self::Kmeans),
            "perbatch" => Ok(Self::Perbatch),
            _ => Err(Error::invalid(format!("unknown init strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Kmeans => "kmeans",
            Self::Perbatch => "perbatch",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitOutcome {
    pub assignment: Assignment,
    pub strategy: InitStrategy,
    /// Lloyd iterations: one entry for pooled k-means, one per batch otherwise.
    pub lloyd_iterations: Vec<usize>,
}

pub fn initialize(
    data: &MultiBatchDataset,
    k: usize,
    strategy: InitStrategy,
    source: &mut RandomSource,
) -> Result<InitOutcome> {
    match strategy {
        InitStrategy::Kmeans => {
            let r = kmeans::kmeans_best_of(&data.pooled(), k, source, kmeans::DEFAULT_MAX_ITER, kmeans::DEFAULT_RESTARTS)?;
            Ok(InitOutcome {
                assignment: Assignment::from_pooled(&r.labels, &data.batch_sizes(), k)?,
                strategy,
                lloyd_iterations: vec![r.iterations],
            })
        }
        InitStrategy::Perbatch => perbatch_init_merge(data, k, source),
    }
}

/// Clusters every batch separately, then relabels each batch's clusters by
/// the minimum total squared centroid distance matching to batch 1.
pub fn perbatch_init_merge(data: &MultiBatchDataset, k: usize, source: &mut RandomSource) -> Result<InitOutcome> {
    let min_nb = data.batch_sizes().into_iter().min().unwrap_or(0);
    if k == 0 || k > min_nb {
        return Err(Error::invalid(format!(
            "per-batch initialization needs 1 <= K <= min batch size ({min_nb}), got {k}"
        )));
    }
    let fits: Vec<KMeansResult> = data
        .batches()
        .iter()
        .map(|b| lloyd_kmeans(&b.data, k, source, kmeans::DEFAULT_MAX_ITER))
        .collect::<Result<_>>()?;
    let reference = &fits[0].centers;
    let mut labels = Vec::with_capacity(fits.len());
    for fit in &fits {
        let cost: Vec<Vec<f64>> = fit
            .centers
            .iter_rows()
            .map(|c| reference.iter_rows().map(|r| sq_dist(c, r)).collect())
            .collect();
        let map: Vec<usize> = min_cost_assignment(&cost)
            .into_iter()
            .map(|m| m.expect("square cost matrix matches every row"))
            .collect();
        labels.push(fit.labels.iter().map(|&l| map[l]).collect());
    }
    Ok(InitOutcome {
        assignment: Assignment::new(labels, k)?,
        strategy: InitStrategy::Perbatch,
        lloyd_iterations: fits.iter().map(|f| f.iterations).collect(),
    })
}

/// Number of Leiden communities on the pooled kNN graph.
pub fn estimate_k(data: &MultiBatchDataset, neighbors: usize, resolution: f64, source: &mut RandomSource) -> Result<usize> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
    }
    let graph = build_knn_graph(&data.pooled(), neighbors)?;
    let membership = leiden_cluster(&graph, &LeidenConfig::with_resolution(resolution), source);
    Ok(leiden::renumber(&membership).1)
}
