use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::init::knn::KnnGraph;
use crate::init::leiden::{leiden_cluster, LeidenConfig};
use crate::rng::RandomSource;

pub const DEFAULT_RESOLUTIONS: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];

/// Leiden clustering at every resolution, drawing from one source in order.
pub fn leiden_grid(graph: &KnnGraph, resolutions: &[f64], source: &mut RandomSource) -> Vec<Vec<usize>> {
    resolutions
        .iter()
        .map(|&r| leiden_cluster(graph, &LeidenConfig::with_resolution(r), source))
        .collect()
}

/// Labels present in the fewest batches.
pub fn isolated_labels(labels: &[usize], batches: &[usize]) -> Vec<usize> {
    let mut presence: HashMap<usize, Vec<usize>> = HashMap::new();
    for (&l, &b) in labels.iter().zip(batches) {
        let v = presence.entry(l).or_default();
        if !v.contains(&b) {
            v.push(b);
        }
    }
    let min = presence.values().map(Vec::len).min().unwrap_or(0);
    let mut out: Vec<usize> = presence
        .into_iter()
        .filter(|(_, v)| v.len() == min)
        .map(|(l, _)| l)
        .collect();
    out.sort_unstable();
    out
}

/// Best F1 of `label`'s cells against any cluster of any clustering.
pub fn best_f1(labels: &[usize], label: usize, clusterings: &[Vec<usize>]) -> f64 {
    let size = labels.iter().filter(|&&l| l == label).count();
    let mut best: f64 = 0.0;
    for clustering in clusterings {
        let mut hits: HashMap<usize, usize> = HashMap::new();
        let mut sizes: HashMap<usize, usize> = HashMap::new();
        for (&l, &c) in labels.iter().zip(clustering) {
            *sizes.entry(c).or_default() += 1;
            if l == label {
                *hits.entry(c).or_default() += 1;
            }
        }
        for (c, &tp) in &hits {
            let precision = tp as f64 / sizes[c] as f64;
            let recall = tp as f64 / size as f64;
            best = best.max(2.0 * precision * recall / (precision + recall));
        }
    }
    best
}

pub fn isolated_labels_f1(labels: &[usize], batches: &[usize], clusterings: &[Vec<usize>]) -> Result<f64> {
    if labels.is_empty() || labels.len() != batches.len() {
        return Err(Error::invalid("labels and batches must be nonempty and equally long"));
    }
    let iso = isolated_labels(labels, batches);
    Ok(iso.iter().map(|&l| best_f1(labels, l, clusterings)).sum::<f64>() / iso.len() as f64)
}
