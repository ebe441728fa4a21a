use modah_core::em::{e_step, fit, m_step, objective, FitConfig};
use modah_core::types::{Assignment, Batch, ModelParams, MultiBatchDataset, IDENTIFIABILITY_TOL};
use modah_core::{RandomSource, RowMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Small random instance whose every cluster has at least `d + 1` cells.
fn instance(seed: u64) -> (MultiBatchDataset, Assignment) {
    let mut src = RandomSource::new(seed);
    let d = 1 + src.index(3);
    let k = 1 + src.index(3);
    let nb = 1 + src.index(3);
    let n_min = k * (d + 1);
    let n = n_min + src.index(30 - n_min + 1);
    let mut pooled: Vec<usize> = (0..n).map(|i| if i < n_min { i / (d + 1) } else { src.index(k) }).collect();
    src.shuffle(&mut pooled);
    let mut sizes = vec![1usize; nb];
    for _ in nb..n {
        sizes[src.index(nb)] += 1;
    }
    let mut batches = Vec::new();
    let mut labels = Vec::new();
    let mut start = 0;
    for (b, &s) in sizes.iter().enumerate() {
        let lab = pooled[start..start + s].to_vec();
        let rows: Vec<Vec<f64>> = lab
            .iter()
            .map(|&l| (0..d).map(|j| 3.0 * (l + j) as f64 + b as f64 + src.standard_normal()).collect())
            .collect();
        batches.push(Batch {
            id: format!("b{b}"),
            data: RowMatrix::from_rows(&rows).unwrap(),
        });
        labels.push(lab);
        start += s;
    }
    (MultiBatchDataset::new(batches).unwrap(), Assignment::new(labels, k).unwrap())
}

/// Weighted means computed directly from the rows.
fn mean_oracle(data: &MultiBatchDataset, a: &Assignment) -> (Vec<DVector<f64>>, Vec<Vec<Option<DVector<f64>>>>) {
    let d = data.d();
    let mut total = vec![(DVector::zeros(d), 0usize); a.k()];
    let mut per = vec![vec![(DVector::zeros(d), 0usize); a.k()]; data.n_batches()];
    for b in 0..data.n_batches() {
        for (i, &l) in a.batch_labels(b).iter().enumerate() {
            let x = DVector::from_column_slice(data.batch(b).data.row(i));
            total[l].0 += &x;
            total[l].1 += 1;
            per[b][l].0 += &x;
            per[b][l].1 += 1;
        }
    }
    let mu: Vec<DVector<f64>> = total.iter().map(|(s, c)| s / *c as f64).collect();
    let beta = per
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, (s, c))| (*c > 0).then(|| s / *c as f64 - &mu[k]))
                .collect()
        })
        .collect();
    (mu, beta)
}

/// Random perturbation that keeps `sum_b n_bk beta_bk = 0` and `Sigma` positive definite.
fn perturb(p: &ModelParams, src: &mut RandomSource, scale: f64) -> ModelParams {
    let mut q = p.clone();
    let d = p.d;
    for k in 0..p.k {
        q.mu[k] += DVector::from_fn(d, |_, _| scale * src.standard_normal());
        let n_k: usize = p.counts.iter().map(|c| c[k]).sum();
        let deltas: Vec<DVector<f64>> = (0..p.n_batches())
            .map(|_| DVector::from_fn(d, |_, _| scale * src.standard_normal()))
            .collect();
        let mut weighted = DVector::zeros(d);
        for (b, delta) in deltas.iter().enumerate() {
            weighted += delta * p.counts[b][k] as f64;
        }
        let shift = weighted / n_k as f64;
        for (b, delta) in deltas.iter().enumerate() {
            q.beta[b][k] += delta - &shift;
        }
        let e = DMatrix::from_fn(d, d, |_, _| scale * src.standard_normal());
        let sym = (&e + e.transpose()) * 0.5;
        let candidate = &p.sigma[k] + sym;
        if candidate.clone().cholesky().is_some() {
            q.sigma[k] = candidate;
        }
    }
    q
}

fn relative_identifiability(p: &ModelParams) -> f64 {
    (0..p.k)
        .map(|k| p.identifiability_residual(k) / p.identifiability_scale(k).max(1.0))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn m_step_matches_weighted_mean_oracle(seed in any::<u64>()) {
        let (data, a) = instance(seed);
        let p = m_step(&data, &a, &FitConfig::new(a.k())).unwrap();
        let (mu, beta) = mean_oracle(&data, &a);
        for k in 0..a.k() {
            prop_assert!((&p.mu[k] - &mu[k]).amax() <= 1e-10);
            for b in 0..data.n_batches() {
                match &beta[b][k] {
                    Some(v) => prop_assert!((&p.beta[b][k] - v).amax() <= 1e-10),
                    None => prop_assert_eq!(p.beta[b][k].amax(), 0.0),
                }
            }
        }
        prop_assert!(relative_identifiability(&p) <= IDENTIFIABILITY_TOL);
    }

    #[test]
    fn m_step_beats_constrained_perturbations(seed in any::<u64>()) {
        let (data, a) = instance(seed);
        let p = m_step(&data, &a, &FitConfig::new(a.k())).unwrap();
        let best = objective(&data, &a, &p).unwrap();
        let mut src = RandomSource::new(seed ^ 0xa5a5);
        for i in 0..50 {
            let scale = [1e-3, 1e-2, 1e-1][i % 3];
            let q = perturb(&p, &mut src, scale);
            prop_assert!(q.is_identifiable(1e-8));
            let v = objective(&data, &a, &q).unwrap();
            prop_assert!(best <= v + 1e-9 * best.abs().max(1.0), "{} > {}", best, v);
        }
    }

    #[test]
    fn e_step_is_exhaustive_argmin(seed in any::<u64>()) {
        let (data, a) = instance(seed);
        let p = m_step(&data, &a, &FitConfig::new(a.k())).unwrap();
        let next = e_step(&data, &p).unwrap();
        for b in 0..data.n_batches() {
            for (i, &l) in next.batch_labels(b).iter().enumerate() {
                let x = DVector::from_column_slice(data.batch(b).data.row(i));
                let score = |k: usize| {
                    let r = &x - &p.mu[k] - &p.beta[b][k];
                    let inv = p.sigma[k].clone().try_inverse().unwrap();
                    (r.transpose() * inv * &r)[(0, 0)] + p.sigma[k].determinant().ln()
                };
                let chosen = score(l);
                for k in 0..p.k {
                    let s = score(k);
                    prop_assert!(chosen <= s + 1e-8 * s.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn fit_objective_never_increases(seed in any::<u64>()) {
        let (data, a) = instance(seed);
        if let Ok(r) = fit(&data, &a, &FitConfig::new(a.k())) {
            for w in r.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            prop_assert!(relative_identifiability(&r.params) <= IDENTIFIABILITY_TOL);
            prop_assert_eq!(r.corrected.n(), data.n());
        }
    }
}

#[test]
fn fit_is_deterministic() {
    let (data, a) = instance(77);
    let x = fit(&data, &a, &FitConfig::new(a.k())).unwrap();
    let y = fit(&data, &a, &FitConfig::new(a.k())).unwrap();
    assert_eq!(x, y);
}

#[test]
fn undersized_cluster_reports_degeneracy() {
    let (data, a) = instance(5);
    let k = a.k() + 1;
    let padded = a.with_k(k).unwrap();
    let err = m_step(&data, &padded, &FitConfig::new(k)).unwrap_err();
    assert!(matches!(err, modah_core::Error::DegenerateCluster { cluster, size: 0, .. } if cluster == k - 1));
}
