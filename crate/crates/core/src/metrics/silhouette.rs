use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, RowMatrix};

/// Silhouette width of every row under Euclidean distance. Rows whose
/// group has a single member score 0.
pub fn silhouette_scores(x: &RowMatrix, groups: &[usize]) -> Result<Vec<f64>> {
    if groups.len() != x.rows() {
        return Err(Error::invalid("group vector length differs from row count"));
    }
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let mut sizes = vec![0usize; n_groups];
    for &g in groups {
        sizes[g] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::UndefinedMetric {
            metric: "silhouette",
            reason: "fewer than two groups".into(),
        });
    }
    Ok((0..x.rows())
        .into_par_iter()
        .map(|i| {
            let own = groups[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; n_groups];
            let xi = x.row(i);
            for (j, &g) in groups.iter().enumerate() {
                if j != i {
                    sums[g] += sq_dist(xi, x.row(j)).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_groups)
                .filter(|&g| g != own && sizes[g] > 0)
                .map(|g| sums[g] / sizes[g] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean of `(s + 1) / 2` over rows grouped by label.
pub fn asw_label(x: &RowMatrix, labels: &[usize]) -> Result<f64> {
    let s = silhouette_scores(x, labels)?;
    Ok(s.iter().map(|v| (v + 1.0) / 2.0).sum::<f64>() / s.len() as f64)
}

/// `1 - mean |s|` over rows grouped by batch.
pub fn asw_batch(x: &RowMatrix, batches: &[usize]) -> Result<f64> {
    let s = silhouette_scores(x, batches)?;
    Ok(1.0 - s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64)
}
