//! Hard-EM estimation of cluster means, batch effects and covariances, and
//! the final batch-effect subtraction.
//!
//! The objective for labels `a` and parameters `(mu, beta, Sigma)` is
//! `sum_{b,i} (x - mu_a - beta_ba)^T Sigma_a^{-1} (x - mu_a - beta_ba) + log|Sigma_a|`
//! subject to `sum_b n_bk beta_bk = 0` for every cluster.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;
use crate::types::{Assignment, ModelParams, MultiBatchDataset};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Lower bound applied to covariance eigenvalues.
    pub cov_floor: f64,
    /// `(b, k)` pairs with fewer cells get a zero batch effect and are left
    /// out of the cluster mean.
    pub min_cluster_batch: usize,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 100,
            cov_floor: 1e-6,
            min_cluster_batch: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("K must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1"));
        }
        if !(self.cov_floor > 0.0 && self.cov_floor.is_finite()) {
            return Err(Error::config("cov_floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub labels: Assignment,
    pub corrected: MultiBatchDataset,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Exact minimizer of the objective over parameters for fixed labels.
pub fn m_step(data: &MultiBatchDataset, labels: &Assignment, cfg: &FitConfig) -> Result<ModelParams> {
    cfg.validate()?;
    labels.check_shape(data)?;
    if labels.k() != cfg.k {
        return Err(Error::invalid(format!("labels use K = {}, config has K = {}", labels.k(), cfg.k)));
    }
    let (nb, k_count, d) = (data.n_batches(), cfg.k, data.d());
    let counts = labels.counts();
    for k in 0..k_count {
        let size: usize = counts.iter().map(|c| c[k]).sum();
        if size < d + 1 {
            return Err(Error::DegenerateCluster {
                cluster: k,
                size,
                required: d + 1,
                iteration: None,
            });
        }
    }

    let mut sums = vec![vec![DVector::<f64>::zeros(d); k_count]; nb];
    for (b, batch) in data.batches().iter().enumerate() {
        for (row, &l) in batch.data.iter_rows().zip(labels.batch_labels(b)) {
            for (s, v) in sums[b][l].iter_mut().zip(row) {
                *s += v;
            }
        }
    }

    let threshold = cfg.min_cluster_batch.max(1);
    let mut mu = Vec::with_capacity(k_count);
    let mut beta = vec![vec![DVector::<f64>::zeros(d); k_count]; nb];
    for k in 0..k_count {
        let eligible: Vec<usize> = (0..nb).filter(|&b| counts[b][k] >= threshold).collect();
        let pool: Vec<usize> = if eligible.is_empty() {
            (0..nb).collect()
        } else {
            eligible.clone()
        };
        let n_pool: usize = pool.iter().map(|&b| counts[b][k]).sum();
        let mut m = DVector::zeros(d);
        for &b in &pool {
            m += &sums[b][k];
        }
        m /= n_pool as f64;
        for &b in &eligible {
            beta[b][k] = &sums[b][k] / counts[b][k] as f64 - &m;
        }
        mu.push(m);
    }

    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); k_count];
    let mut r = vec![0.0; d];
    for (b, batch) in data.batches().iter().enumerate() {
        for (row, &l) in batch.data.iter_rows().zip(labels.batch_labels(b)) {
            for j in 0..d {
                r[j] = row[j] - mu[l][j] - beta[b][l][j];
            }
            let s = &mut scatter[l];
            for j in 0..d {
                for i in j..d {
                    s[(i, j)] += r[i] * r[j];
                }
            }
        }
    }
    let sigma = scatter
        .into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            let n_k: usize = counts.iter().map(|c| c[k]).sum();
            s /= n_k as f64;
            s.fill_upper_triangle_with_lower_triangle();
            floor_eigenvalues(s, cfg.cov_floor)
        })
        .collect();

    Ok(ModelParams {
        k: k_count,
        d,
        batch_ids: data.batch_ids(),
        mu,
        beta,
        sigma,
        counts,
    })
}

/// Symmetrizes and clamps eigenvalues at `floor`; matrices already above
/// the floor are returned unchanged.
pub fn floor_eigenvalues(s: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&s + s.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    (&out + out.transpose()) * 0.5
}

/// Cholesky factor (dense row-major lower triangle) and log-determinant.
struct Factor {
    l: Vec<f64>,
    log_det: f64,
}

fn factorize(params: &ModelParams) -> Result<Vec<Factor>> {
    let d = params.d;
    params
        .sigma
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let chol = s.clone().cholesky().ok_or(Error::NotPositiveDefinite { cluster: k })?;
            let l = chol.l();
            let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mut flat = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..=i {
                    flat[i * d + j] = l[(i, j)];
                }
            }
            Ok(Factor { l: flat, log_det })
        })
        .collect()
}

/// `r^T Sigma^{-1} r` by forward substitution; `r` is overwritten.
fn mahalanobis(f: &Factor, r: &mut [f64]) -> f64 {
    let d = r.len();
    let mut acc = 0.0;
    for i in 0..d {
        let row = &f.l[i * d..i * d + i];
        let mut v = r[i];
        for (lij, yj) in row.iter().zip(&r[..i]) {
            v -= lij * yj;
        }
        v /= f.l[i * d + i];
        r[i] = v;
        acc += v * v;
    }
    acc
}

struct Scorer {
    factors: Vec<Factor>,
    centers: Vec<Vec<Vec<f64>>>,
}

impl Scorer {
    fn new(params: &ModelParams) -> Result<Self> {
        Ok(Self {
            factors: factorize(params)?,
            centers: params
                .composite_means()
                .into_iter()
                .map(|row| row.into_iter().map(|v| v.as_slice().to_vec()).collect())
                .collect(),
        })
    }

    fn score(&self, b: usize, k: usize, x: &[f64], buf: &mut [f64]) -> f64 {
        for ((r, xi), c) in buf.iter_mut().zip(x).zip(&self.centers[b][k]) {
            *r = xi - c;
        }
        mahalanobis(&self.factors[k], buf) + self.factors[k].log_det
    }
}

/// Per-cell objective term for every cluster; rows follow the dataset order.
pub fn cell_scores(data: &MultiBatchDataset, params: &ModelParams) -> Result<Vec<Vec<Vec<f64>>>> {
    let scorer = Scorer::new(params)?;
    let d = data.d();
    Ok(data
        .batches()
        .iter()
        .enumerate()
        .map(|(b, batch)| {
            let mut buf = vec![0.0; d];
            batch
                .data
                .iter_rows()
                .map(|x| (0..params.k).map(|k| scorer.score(b, k, x, &mut buf)).collect())
                .collect()
        })
        .collect())
}

/// Reassigns every cell to its lowest-scoring cluster, ties to the lowest index.
pub fn e_step(data: &MultiBatchDataset, params: &ModelParams) -> Result<Assignment> {
    check_params(data, params)?;
    let scorer = Scorer::new(params)?;
    let d = data.d();
    let labels = data
        .batches()
        .iter()
        .enumerate()
        .map(|(b, batch)| {
            (0..batch.data.rows())
                .into_par_iter()
                .map_init(
                    || vec![0.0; d],
                    |buf, i| {
                        let x = batch.data.row(i);
                        let mut best = (0, f64::INFINITY);
                        for k in 0..params.k {
                            let s = scorer.score(b, k, x, buf);
                            if s < best.1 {
                                best = (k, s);
                            }
                        }
                        best.0
                    },
                )
                .collect()
        })
        .collect();
    Assignment::new(labels, params.k)
}

/// Objective value of `labels` under `params`.
pub fn objective(data: &MultiBatchDataset, labels: &Assignment, params: &ModelParams) -> Result<f64> {
    check_params(data, params)?;
    labels.check_shape(data)?;
    let scorer = Scorer::new(params)?;
    let mut buf = vec![0.0; data.d()];
    let mut total = 0.0;
    for (b, batch) in data.batches().iter().enumerate() {
        for (x, &l) in batch.data.iter_rows().zip(labels.batch_labels(b)) {
            if l >= params.k {
                return Err(Error::invalid(format!("label {} exceeds K = {}", l + 1, params.k)));
            }
            total += scorer.score(b, l, x, &mut buf);
        }
    }
    Ok(total)
}

fn check_params(data: &MultiBatchDataset, params: &ModelParams) -> Result<()> {
    if params.d != data.d() || params.n_batches() != data.n_batches() {
        return Err(Error::invalid(format!(
            "parameters have d = {}, B = {}; data has d = {}, B = {}",
            params.d,
            params.n_batches(),
            data.d(),
            data.n_batches()
        )));
    }
    Ok(())
}

/// Alternates parameter and assignment updates until the labels repeat or
/// `max_iter` rounds pass, then subtracts the fitted batch effects.
pub fn fit(data: &MultiBatchDataset, init: &Assignment, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    init.check_shape(data)?;
    let mut labels = init.with_k(cfg.k)?;
    let mut trace = Vec::new();
    let mut params = None;
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        iterations = t;
        let p = m_step(data, &labels, cfg).map_err(|e| match e {
            Error::DegenerateCluster { cluster, size, required, .. } => Error::DegenerateCluster {
                cluster,
                size,
                required,
                iteration: Some(t),
            },
            other => other,
        })?;
        trace.push(objective(data, &labels, &p)?);
        let next = e_step(data, &p)?;
        params = Some(p);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    let params = params.expect("max_iter >= 1 runs at least one m_step");
    let corrected = correct(data, &params, &labels)?;
    Ok(FitResult {
        params,
        labels,
        corrected,
        iterations,
        objective_trace: trace,
        converged,
    })
}

/// Subtracts `beta[b][label]` from every cell.
pub fn correct(data: &MultiBatchDataset, params: &ModelParams, labels: &Assignment) -> Result<MultiBatchDataset> {
    check_params(data, params)?;
    labels.check_shape(data)?;
    let d = data.d();
    let mut out = Vec::with_capacity(data.n_batches());
    for (b, batch) in data.batches().iter().enumerate() {
        let mut m = RowMatrix::zeros(batch.data.rows(), d);
        for (i, (x, &l)) in batch.data.iter_rows().zip(labels.batch_labels(b)).enumerate() {
            if l >= params.k {
                return Err(Error::invalid(format!(
                    "batch {}, row {}: label {} exceeds K = {}",
                    b + 1,
                    i + 1,
                    l + 1,
                    params.k
                )));
            }
            for ((o, xi), bj) in m.row_mut(i).iter_mut().zip(x).zip(params.beta[b][l].iter()) {
                *o = xi - bj;
            }
        }
        out.push(m);
    }
    data.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Batch;

    fn dataset(batches: &[&[&[f64]]]) -> MultiBatchDataset {
        MultiBatchDataset::new(
            batches
                .iter()
                .enumerate()
                .map(|(i, rows)| Batch {
                    id: format!("b{i}"),
                    data: RowMatrix::from_rows(rows).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn m_step_hand_example() {
        let data = dataset(&[&[&[0.0], &[2.0]], &[&[4.0]]]);
        let labels = Assignment::new(vec![vec![0, 0], vec![0]], 1).unwrap();
        let p = m_step(&data, &labels, &FitConfig::new(1)).unwrap();
        assert!((p.mu[0][0] - 2.0).abs() < 1e-15);
        assert!((p.beta[0][0][0] + 1.0).abs() < 1e-15);
        assert!((p.beta[1][0][0] - 2.0).abs() < 1e-15);
        assert!((p.sigma[0][(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let corrected = correct(&data, &p, &labels).unwrap();
        assert_eq!(corrected.batch(1).data.row(0), &[2.0]);
    }

    #[test]
    fn single_batch_has_zero_effects() {
        let data = dataset(&[&[&[0.0, 1.0], &[2.0, 0.5], &[1.0, 3.0], &[7.0, 7.0], &[8.0, 9.0], &[9.0, 7.5]]]);
        let labels = Assignment::new(vec![vec![0, 0, 0, 1, 1, 1]], 2).unwrap();
        let p = m_step(&data, &labels, &FitConfig::new(2)).unwrap();
        for v in &p.beta[0] {
            assert!(v.norm() < 1e-14);
        }
    }

    #[test]
    fn replicated_batches_give_pooled_covariance() {
        let rows: &[&[f64]] = &[&[0.0, 1.0], &[2.0, 0.5], &[1.0, 3.0], &[4.0, 0.0]];
        let two = dataset(&[rows, rows]);
        let one = dataset(&[rows]);
        let p2 = m_step(&two, &Assignment::new(vec![vec![0; 4]; 2], 1).unwrap(), &FitConfig::new(1)).unwrap();
        let p1 = m_step(&one, &Assignment::new(vec![vec![0; 4]], 1).unwrap(), &FitConfig::new(1)).unwrap();
        assert!(p2.beta.iter().flatten().all(|v| v.norm() < 1e-14));
        assert!((&p2.sigma[0] - &p1.sigma[0]).abs().max() < 1e-14);
    }

    #[test]
    fn degenerate_cluster_named() {
        let data = dataset(&[&[&[0.0], &[1.0], &[2.0]]]);
        let labels = Assignment::new(vec![vec![0, 0, 1]], 2).unwrap();
        match m_step(&data, &labels, &FitConfig::new(2)) {
            Err(Error::DegenerateCluster { cluster: 1, size: 1, required: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn params_1d(mu: &[f64], var: &[f64]) -> ModelParams {
        ModelParams {
            k: mu.len(),
            d: 1,
            batch_ids: vec!["b0".into()],
            mu: mu.iter().map(|&m| DVector::from_element(1, m)).collect(),
            beta: vec![vec![DVector::zeros(1); mu.len()]],
            sigma: var.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(),
            counts: vec![vec![1; mu.len()]],
        }
    }

    #[test]
    fn e_step_log_determinant_decides() {
        let data = dataset(&[&[&[2.0]]]);
        let a = e_step(&data, &params_1d(&[0.0, 4.0], &[1.0, 100.0])).unwrap();
        assert_eq!(a.batch_labels(0), &[0]);
        let s = cell_scores(&data, &params_1d(&[0.0, 4.0], &[1.0, 100.0])).unwrap();
        assert!((s[0][0][0] - 4.0).abs() < 1e-12);
        assert!((s[0][0][1] - (0.04 + 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn e_step_ties_go_low() {
        let data = dataset(&[&[&[2.0], &[0.0]]]);
        let a = e_step(&data, &params_1d(&[0.0, 4.0], &[1.0, 1.0])).unwrap();
        assert_eq!(a.batch_labels(0), &[0, 0]);
        let b = e_step(&dataset(&[&[&[4.0]]]), &params_1d(&[0.0, 4.0], &[1.0, 1.0])).unwrap();
        assert_eq!(b.batch_labels(0), &[1]);
    }

    #[test]
    fn floor_clamps_small_eigenvalues() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = floor_eigenvalues(s, 1e-6);
        let ev = f.symmetric_eigen().eigenvalues;
        assert!(ev.min() >= 1e-6 * (1.0 - 1e-9));
    }

    #[test]
    fn single_cluster_fit_equalizes_batch_means() {
        let data = dataset(&[&[&[0.0, 1.0], &[2.0, 2.0], &[1.0, 0.0]], &[&[5.0, 5.0], &[6.0, 4.0], &[7.0, 6.0]]]);
        let init = Assignment::new(vec![vec![0; 3]; 2], 1).unwrap();
        let r = fit(&data, &init, &FitConfig::new(1)).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        let means: Vec<Vec<f64>> = r
            .corrected
            .batches()
            .iter()
            .map(|b| (0..2).map(|j| b.data.iter_rows().map(|x| x[j]).sum::<f64>() / 3.0).collect())
            .collect();
        for j in 0..2 {
            assert!((means[0][j] - means[1][j]).abs() < 1e-12);
            assert!((means[0][j] - r.params.mu[0][j]).abs() < 1e-12);
        }
    }

    #[test]
    fn max_iter_one_runs_single_round() {
        let data = dataset(&[&[&[0.0], &[0.2], &[0.1], &[10.0], &[10.3], &[9.9]]]);
        let init = Assignment::new(vec![vec![0, 1, 0, 1, 0, 1]], 2).unwrap();
        let cfg = FitConfig { max_iter: 1, ..FitConfig::new(2) };
        let r = fit(&data, &init, &cfg).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.objective_trace.len(), 1);
        assert!(!r.converged);
        assert!(FitConfig { max_iter: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn min_cluster_batch_zeroes_small_pairs() {
        let data = dataset(&[&[&[0.0], &[1.0], &[2.0]], &[&[10.0]]]);
        let labels = Assignment::new(vec![vec![0, 0, 0], vec![0]], 1).unwrap();
        let cfg = FitConfig { min_cluster_batch: 2, ..FitConfig::new(1) };
        let p = m_step(&data, &labels, &cfg).unwrap();
        assert_eq!(p.beta[1][0][0], 0.0);
        assert!((p.mu[0][0] - 1.0).abs() < 1e-15);
        assert!(p.is_identifiable(1e-8));
    }
}
