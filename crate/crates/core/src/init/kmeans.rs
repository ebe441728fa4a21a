//! Lloyd's k-means with k-means++ seeding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, RowMatrix};
use crate::rng::RandomSource;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: RowMatrix,
    /// Within-cluster sum of squares of the returned labels and centers.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_trace: Vec<f64>,
}

/// k-means++: first center uniform, later ones with probability
/// proportional to squared distance to the nearest chosen center.
pub fn kmeans_pp_seed(x: &RowMatrix, k: usize, source: &mut RandomSource) -> RowMatrix {
    let n = x.rows();
    let mut centers = RowMatrix::zeros(k, x.cols());
    let first = source.index(n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let pick = source.weighted_index(&d2);
        centers.row_mut(c).copy_from_slice(x.row(pick));
        let new_center = x.row(pick).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(sq_dist(x.row(i), &new_center));
        });
    }
    centers
}

/// Nearest center per row; ties go to the lowest index.
fn assign(x: &RowMatrix, centers: &RowMatrix) -> Vec<(usize, f64)> {
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let r = x.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..centers.rows() {
                let d = sq_dist(r, centers.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Gives every empty cluster the row farthest from its current center,
/// taken from clusters that can spare one.
fn repair_empty(x: &RowMatrix, centers: &mut RowMatrix, assigned: &mut [(usize, f64)]) {
    let k = centers.rows();
    let mut sizes = vec![0usize; k];
    for &(c, _) in assigned.iter() {
        sizes[c] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let far = assigned
            .iter()
            .enumerate()
            .filter(|(_, &(l, _))| sizes[l] > 1)
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("k <= n leaves a cluster with two or more rows");
        sizes[assigned[far].0] -= 1;
        sizes[c] = 1;
        centers.row_mut(c).copy_from_slice(x.row(far));
        assigned[far] = (c, 0.0);
    }
}

fn update_centers(x: &RowMatrix, labels: &[(usize, f64)], k: usize) -> RowMatrix {
    let d = x.cols();
    let mut sums = RowMatrix::zeros(k, d);
    let mut sizes = vec![0usize; k];
    for (i, &(c, _)) in labels.iter().enumerate() {
        sizes[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (c, &size) in sizes.iter().enumerate() {
        for s in sums.row_mut(c) {
            *s /= size as f64;
        }
    }
    sums
}

/// Lloyd iterations until the labels stop changing or `max_iter` updates.
pub fn lloyd_kmeans(x: &RowMatrix, k: usize, source: &mut RandomSource, max_iter: usize) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= K <= n, got K = {k}, n = {n}")));
    }
    let mut centers = kmeans_pp_seed(x, k, source);
    lloyd_from(x, &mut centers, max_iter)
}

/// Lowest-inertia result of `restarts` seeded runs drawn in sequence from
/// `source`; ties keep the earliest run.
pub fn kmeans_best_of(
    x: &RowMatrix,
    k: usize,
    source: &mut RandomSource,
    max_iter: usize,
    restarts: usize,
) -> Result<KMeansResult> {
    if restarts == 0 {
        return Err(Error::invalid("k-means needs at least one restart"));
    }
    let mut best = lloyd_kmeans(x, k, source, max_iter)?;
    for _ in 1..restarts {
        let r = lloyd_kmeans(x, k, source, max_iter)?;
        if r.inertia < best.inertia {
            best = r;
        }
    }
    Ok(best)
}

/// Lloyd iterations from the given starting centers.
pub fn lloyd_from(x: &RowMatrix, centers: &mut RowMatrix, max_iter: usize) -> Result<KMeansResult> {
    let k = centers.rows();
    if k == 0 || k > x.rows() {
        return Err(Error::invalid(format!("k-means needs 1 <= K <= n, got K = {k}, n = {}", x.rows())));
    }
    let mut assigned = assign(x, centers);
    repair_empty(x, centers, &mut assigned);
    let mut trace = vec![assigned.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        *centers = update_centers(x, &assigned, k);
        let mut next = assign(x, centers);
        repair_empty(x, centers, &mut next);
        trace.push(next.iter().map(|a| a.1).sum());
        let unchanged = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        labels: assigned.iter().map(|a| a.0).collect(),
        inertia: assigned.iter().map(|a| a.1).sum(),
        centers: centers.clone(),
        iterations,
        converged,
        inertia_trace: trace,
    })
}
