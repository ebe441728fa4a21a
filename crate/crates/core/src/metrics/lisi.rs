//! Local inverse Simpson index over unweighted k-nearest-neighbour sets.

use crate::error::{Error, Result};

/// `1 / sum_g p_g^2` of the group proportions among each row's neighbours.
pub fn inverse_simpson(neighbors: &[Vec<usize>], groups: &[usize], k: usize) -> Vec<f64> {
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let mut counts = vec![0usize; n_groups];
    neighbors
        .iter()
        .map(|list| {
            let list = &list[..k.min(list.len())];
            counts.iter_mut().for_each(|c| *c = 0);
            for &j in list {
                counts[groups[j]] += 1;
            }
            let m = list.len() as f64;
            let simpson: f64 = counts.iter().map(|&c| (c as f64 / m).powi(2)).sum();
            1.0 / simpson
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn distinct(groups: &[usize]) -> usize {
    let mut g = groups.to_vec();
    g.sort_unstable();
    g.dedup();
    g.len()
}

/// `(|C| - median) / (|C| - 1)` over cell-type scores.
pub fn clisi(raw: &[f64], n_types: usize) -> Result<f64> {
    if n_types < 2 || raw.is_empty() {
        return Err(Error::UndefinedMetric {
            metric: "cLISI",
            reason: "needs at least two cell types".into(),
        });
    }
    let c = n_types as f64;
    Ok(((c - median(raw)) / (c - 1.0)).clamp(0.0, 1.0))
}

/// `(median - 1) / (|B| - 1)` over batch scores.
pub fn ilisi(raw: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 2 || raw.is_empty() {
        return Err(Error::UndefinedMetric {
            metric: "iLISI",
            reason: "needs at least two batches".into(),
        });
    }
    let b = n_batches as f64;
    Ok(((median(raw) - 1.0) / (b - 1.0)).clamp(0.0, 1.0))
}

pub fn clisi_from_neighbors(neighbors: &[Vec<usize>], labels: &[usize], k: usize) -> Result<f64> {
    clisi(&inverse_simpson(neighbors, labels, k), distinct(labels))
}

pub fn ilisi_from_neighbors(neighbors: &[Vec<usize>], batches: &[usize], k: usize) -> Result<f64> {
    ilisi(&inverse_simpson(neighbors, batches, k), distinct(batches))
}
