//! Synthetic multi-batch data with known ground truth.
//!
//! Batch sizes are `floor(base_b * u)`, cluster means are `v * e_k`, batch
//! effects are standard normal draws centred per cluster, and covariances are
//! `A^T A + I` with standard normal `A`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;
use crate::rng::RandomSource;
use crate::types::{Assignment, Batch, GeneratorTag, ModelParams, MultiBatchDataset, SimTruth};

/// Absorbs products such as `2000 * 0.3 = 599.999...` before flooring.
const FLOOR_GUARD: f64 = 1e-9;
const PI_ROW_TOL: f64 = 1e-12;

pub fn default_pi_4() -> Vec<Vec<f64>> {
    vec![
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.1, 0.2, 0.3, 0.4],
        vec![0.25, 0.25, 0.25, 0.25],
    ]
}

pub fn default_pi_10() -> Vec<Vec<f64>> {
    let rows: [[f64; 10]; 3] = [
        [0.5, 0.4, 0.3, 0.2, 0.1, 0.5, 0.4, 0.3, 0.2, 0.1],
        [0.1, 0.2, 0.3, 0.4, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5],
        [0.3; 10],
    ];
    rows.iter().map(|r| r.iter().map(|x| x / 3.0).collect()).collect()
}

pub fn default_pi_missing() -> Vec<Vec<f64>> {
    vec![
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.1, 0.2, 0.3, 0.4],
        vec![0.0, 0.3, 0.3, 0.4],
    ]
}

pub fn named_pi(name: &str) -> Option<Vec<Vec<f64>>> {
    match name {
        "pi4" => Some(default_pi_4()),
        "pi10" => Some(default_pi_10()),
        "pi_missing" => Some(default_pi_missing()),
        _ => None,
    }
}

pub const DEFAULT_BASE_SIZES: [usize; 3] = [1000, 1500, 2000];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Gaussian,
    StudentT { dof: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub u: f64,
    pub v: f64,
    pub b: usize,
    pub k: usize,
    pub d: usize,
    pub pi: Vec<Vec<f64>>,
    pub base_sizes: Vec<usize>,
    pub noise: Noise,
    pub seed: u64,
    /// Replaces the `v * e_k` layout when present; `v` is then unused.
    pub means: Option<Vec<Vec<f64>>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            u: 1.0,
            v: 5.0,
            b: 3,
            k: 4,
            d: 10,
            pi: default_pi_4(),
            base_sizes: DEFAULT_BASE_SIZES.to_vec(),
            noise: Noise::Gaussian,
            seed: 0,
            means: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PiSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

/// On-disk form of [`SimConfig`]; omitted keys take the default values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<PiSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Noise>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
}

impl SimConfigFile {
    /// Fills defaults and validates. `B` and `K` default to the shape of `pi`.
    pub fn resolve(self) -> Result<SimConfig> {
        let def = SimConfig::default();
        let pi = match self.pi {
            None => def.pi,
            Some(PiSpec::Matrix(m)) => m,
            Some(PiSpec::Named(name)) => named_pi(&name)
                .ok_or_else(|| Error::config(format!("unknown pi shorthand {name:?}")))?,
        };
        let b = self.b.unwrap_or(pi.len());
        let k = self.k.unwrap_or_else(|| pi.first().map_or(0, Vec::len));
        let base_sizes = match self.base_sizes {
            Some(s) => s,
            None if b == DEFAULT_BASE_SIZES.len() => DEFAULT_BASE_SIZES.to_vec(),
            None => return Err(Error::config(format!("base_sizes required when B = {b}"))),
        };
        let cfg = SimConfig {
            u: self.u.unwrap_or(def.u),
            v: self.v.unwrap_or(def.v),
            b,
            k,
            d: self.d.unwrap_or(def.d),
            pi,
            base_sizes,
            noise: self.noise.unwrap_or(def.noise),
            seed: self.seed.unwrap_or(def.seed),
            means: self.means,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SimConfigFile = serde_json::from_str(text)?;
        file.resolve()
    }

    pub fn to_file(&self) -> SimConfigFile {
        SimConfigFile {
            u: Some(self.u),
            v: Some(self.v),
            b: Some(self.b),
            k: Some(self.k),
            d: Some(self.d),
            pi: Some(PiSpec::Matrix(self.pi.clone())),
            base_sizes: Some(self.base_sizes.clone()),
            noise: Some(self.noise),
            seed: Some(self.seed),
            means: self.means.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::config(format!("u must be positive, got {}", self.u)));
        }
        if self.means.is_none() && !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::config(format!("v must be positive, got {}", self.v)));
        }
        if self.b == 0 || self.k == 0 || self.d == 0 {
            return Err(Error::config("B, K and d must be positive"));
        }
        if self.pi.len() != self.b {
            return Err(Error::config(format!("pi has {} rows, B = {}", self.pi.len(), self.b)));
        }
        for (i, row) in self.pi.iter().enumerate() {
            if row.len() != self.k {
                return Err(Error::config(format!("pi row {} has {} entries, K = {}", i + 1, row.len(), self.k)));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::config(format!("pi row {} has a negative or non-finite entry", i + 1)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > PI_ROW_TOL {
                return Err(Error::config(format!("pi row {} sums to {s}, expected 1", i + 1)));
            }
        }
        if self.base_sizes.len() != self.b || self.base_sizes.contains(&0) {
            return Err(Error::config("base_sizes must hold B positive integers"));
        }
        match &self.means {
            None if self.k > self.d => {
                return Err(Error::config(format!(
                    "default mean layout needs K <= d (K = {}, d = {})",
                    self.k, self.d
                )))
            }
            Some(m) if m.len() != self.k || m.iter().any(|r| r.len() != self.d) => {
                return Err(Error::config("means must be K rows of length d"))
            }
            Some(m) if m.iter().flatten().any(|x| !x.is_finite()) => {
                return Err(Error::config("means must be finite"))
            }
            _ => {}
        }
        if let Noise::StudentT { dof } = self.noise {
            if !(dof > 0.0 && dof.is_finite()) {
                return Err(Error::config(format!("student_t dof must be positive, got {dof}")));
            }
        }
        Ok(())
    }
}

fn guarded_floor(x: f64) -> usize {
    (x + FLOOR_GUARD * x.abs().max(1.0)).floor() as usize
}

/// Per-batch totals `n_b` and per-(batch, cluster) counts `n_bk`.
pub fn sample_sizes(config: &SimConfig) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    config.validate()?;
    let mut totals = Vec::with_capacity(config.b);
    let mut counts = Vec::with_capacity(config.b);
    for (b, (&base, row)) in config.base_sizes.iter().zip(&config.pi).enumerate() {
        let n_b = guarded_floor(base as f64 * config.u);
        if n_b == 0 {
            return Err(Error::config(format!(
                "scale u = {} too small: batch {} would be empty",
                config.u,
                b + 1
            )));
        }
        let mut c: Vec<usize> = row.iter().map(|&p| guarded_floor(n_b as f64 * p)).collect();
        let assigned: usize = c.iter().sum();
        let last = row.iter().rposition(|&p| p > 0.0).expect("pi rows sum to one");
        // Floors never overshoot by more than the guard, so this is a small nonnegative fix-up.
        c[last] = (c[last] + n_b).checked_sub(assigned).ok_or_else(|| {
            Error::config(format!("pi row {} over-allocates cells", b + 1))
        })?;
        totals.push(n_b);
        counts.push(c);
    }
    Ok((totals, counts))
}

/// Ground-truth parameters drawn from `source`.
pub fn generate_truth_params(config: &SimConfig, source: &mut RandomSource) -> Result<ModelParams> {
    let (_, counts) = sample_sizes(config)?;
    let (b_count, k_count, d) = (config.b, config.k, config.d);
    let mu: Vec<DVector<f64>> = match &config.means {
        Some(m) => m.iter().map(|r| DVector::from_column_slice(r)).collect(),
        None => (0..k_count)
            .map(|k| {
                let mut e = DVector::zeros(d);
                e[k] = config.v;
                e
            })
            .collect(),
    };

    let mut beta: Vec<Vec<DVector<f64>>> = (0..b_count)
        .map(|_| {
            (0..k_count)
                .map(|_| DVector::from_fn(d, |_, _| source.standard_normal()))
                .collect()
        })
        .collect();
    for k in 0..k_count {
        let n_k: usize = counts.iter().map(|c| c[k]).sum();
        if n_k == 0 {
            continue;
        }
        let mut weighted = DVector::zeros(d);
        for b in 0..b_count {
            weighted += &beta[b][k] * counts[b][k] as f64;
        }
        let shift = weighted / n_k as f64;
        for b in 0..b_count {
            if counts[b][k] > 0 {
                beta[b][k] -= &shift;
            }
        }
    }

    let sigma = (0..k_count)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| source.standard_normal());
            let s = a.transpose() * &a + DMatrix::identity(d, d);
            // Exact symmetry guards against rounding in the product.
            (&s + s.transpose()) * 0.5
        })
        .collect();

    Ok(ModelParams {
        k: k_count,
        d,
        batch_ids: (1..=b_count).map(|b| format!("batch{b}")).collect(),
        mu,
        beta,
        sigma,
        counts,
    })
}

/// Generates with a fresh source seeded from `config.seed`.
pub fn generate(config: &SimConfig) -> Result<SimTruth> {
    generate_with(config, &mut RandomSource::new(config.seed))
}

/// Generates while consuming draws from a caller-supplied source.
pub fn generate_with(config: &SimConfig, source: &mut RandomSource) -> Result<SimTruth> {
    let params = generate_truth_params(config, source)?;
    let d = config.d;
    let chi2 = match config.noise {
        Noise::StudentT { dof } => Some(ChiSquared::new(dof).map_err(|e| Error::config(e.to_string()))?),
        Noise::Gaussian => None,
    };
    let factors: Vec<DMatrix<f64>> = params
        .sigma
        .iter()
        .enumerate()
        .map(|(k, s)| {
            s.clone()
                .cholesky()
                .map(|c| c.l())
                .ok_or(Error::NotPositiveDefinite { cluster: k })
        })
        .collect::<Result<_>>()?;
    let centers = params.composite_means();

    let mut batches = Vec::with_capacity(config.b);
    let mut labels = Vec::with_capacity(config.b);
    for b in 0..config.b {
        let n_b: usize = params.counts[b].iter().sum();
        let mut rows = RowMatrix::zeros(n_b, d);
        let mut lab = Vec::with_capacity(n_b);
        let mut z = DVector::zeros(d);
        for k in 0..config.k {
            for _ in 0..params.counts[b][k] {
                for zj in z.iter_mut() {
                    *zj = source.standard_normal();
                }
                if let (Some(chi2), Noise::StudentT { dof }) = (&chi2, config.noise) {
                    let w: f64 = chi2.sample(source);
                    z *= (dof / w).sqrt();
                }
                let x = &centers[b][k] + &factors[k] * &z;
                rows.row_mut(lab.len()).copy_from_slice(x.as_slice());
                lab.push(k);
            }
        }
        let perm = source.permutation(n_b);
        let rows = rows.select_rows(&perm);
        let lab: Vec<usize> = perm.iter().map(|&i| lab[i]).collect();
        batches.push(Batch {
            id: params.batch_ids[b].clone(),
            data: rows,
        });
        labels.push(lab);
    }

    let generator_tag = match config.noise {
        Noise::StudentT { .. } => GeneratorTag::StudentT,
        Noise::Gaussian if params.counts.iter().flatten().any(|&c| c == 0) => GeneratorTag::MissingCluster,
        Noise::Gaussian => GeneratorTag::Gaussian,
    };
    Ok(SimTruth {
        dataset: MultiBatchDataset::new(batches)?,
        truth_labels: Assignment::new(labels, config.k)?,
        truth_params: params,
        generator_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_pi_matrices() {
        let p4 = default_pi_4();
        assert_eq!(p4[0][0], 0.4);
        assert_eq!(p4[2][3], 0.25);
        let pm = default_pi_missing();
        assert_eq!(pm[2], vec![0.0, 0.3, 0.3, 0.4]);
        // Independent sum of the printed entries, divided by 3 afterwards.
        let printed = [
            [0.5, 0.4, 0.3, 0.2, 0.1, 0.5, 0.4, 0.3, 0.2, 0.1],
            [0.1, 0.2, 0.3, 0.4, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5],
            [0.3; 10],
        ];
        for (row, printed) in default_pi_10().iter().zip(printed) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((printed.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        }
        for p in [p4, pm] {
            for row in p {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sizes_at_unit_scale() {
        let (n, c) = sample_sizes(&SimConfig::default()).unwrap();
        assert_eq!(n, vec![1000, 1500, 2000]);
        assert_eq!(c[2], vec![500, 500, 500, 500]);
        assert_eq!(c[0], vec![400, 300, 200, 100]);
        for (nb, row) in n.iter().zip(&c) {
            assert_eq!(row.iter().sum::<usize>(), *nb);
        }
    }

    #[test]
    fn sizes_tiny_scale() {
        let cfg = SimConfig {
            u: 0.001,
            ..SimConfig::default()
        };
        let (n, c) = sample_sizes(&cfg).unwrap();
        assert_eq!(n, vec![1, 1, 2]);
        for (nb, row) in n.iter().zip(&c) {
            assert_eq!(row.iter().sum::<usize>(), *nb);
        }
        let too_small = SimConfig {
            u: 0.0001,
            ..SimConfig::default()
        };
        assert!(sample_sizes(&too_small).is_err());
    }

    #[test]
    fn remainder_goes_to_last_nonzero_column() {
        let cfg = SimConfig {
            b: 1,
            k: 3,
            pi: vec![vec![0.5, 0.5, 0.0]],
            base_sizes: vec![3],
            ..SimConfig::default()
        };
        let (_, c) = sample_sizes(&cfg).unwrap();
        assert_eq!(c[0], vec![1, 2, 0]);
    }

    #[test]
    fn truth_params_layout() {
        let cfg = SimConfig::default();
        let p = generate_truth_params(&cfg, &mut RandomSource::new(3)).unwrap();
        let mut e1 = DVector::zeros(10);
        e1[0] = 5.0;
        assert_eq!(p.mu[0], e1);
        for s in &p.sigma {
            let ev = s.clone().symmetric_eigen().eigenvalues;
            assert!(ev.min() >= 1.0 - 1e-9);
        }
        for k in 0..4 {
            let mut acc = DVector::zeros(10);
            for b in 0..3 {
                acc += &p.beta[b][k] * p.counts[b][k] as f64;
            }
            assert!(acc.norm() <= 1e-8 * p.n() as f64);
        }
        let bad = SimConfig {
            k: 11,
            d: 10,
            pi: vec![vec![1.0 / 11.0; 11]; 3],
            ..SimConfig::default()
        };
        assert!(matches!(generate_truth_params(&bad, &mut RandomSource::new(0)), Err(Error::Config(_))));
    }

    #[test]
    fn missing_cluster_absent_from_batch_three() {
        let cfg = SimConfig {
            pi: default_pi_missing(),
            ..SimConfig::default()
        };
        let t = generate(&cfg).unwrap();
        assert_eq!(t.generator_tag, GeneratorTag::MissingCluster);
        assert!(t.truth_labels.batch_labels(2).iter().all(|&l| l != 0));
        assert_eq!(t.truth_params.counts[2][0], 0);
    }

    #[test]
    fn labels_match_counts_and_rows_are_shuffled() {
        let t = generate(&SimConfig::default()).unwrap();
        assert_eq!(t.truth_labels.counts(), t.truth_params.counts);
        assert_eq!(t.generator_tag, GeneratorTag::Gaussian);
        let first = t.truth_labels.batch_labels(0);
        assert!(first.windows(2).any(|w| w[0] > w[1]));
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let cfg = SimConfig {
            u: 0.2,
            ..SimConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&SimConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.dataset, c.dataset);
        assert_eq!(a.truth_params.counts, c.truth_params.counts);
    }

    fn single_cell_config(noise: Noise) -> SimConfig {
        SimConfig {
            b: 1,
            k: 1,
            d: 3,
            pi: vec![vec![1.0]],
            base_sizes: vec![20_000],
            noise,
            seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let t = generate(&single_cell_config(Noise::Gaussian)).unwrap();
        let p = &t.truth_params;
        let center = &p.composite_means()[0][0];
        let x = &t.dataset.batch(0).data;
        let n = x.rows() as f64;
        let mean: Vec<f64> = (0..3).map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / n).collect();
        let err = (DVector::from_vec(mean) - center).norm();
        let lmax = p.sigma[0].clone().symmetric_eigen().eigenvalues.max();
        assert!(err <= 5.0 * (lmax / n).sqrt() * 3f64.sqrt());
    }

    #[test]
    fn student_t_has_heavy_tails() {
        let t = generate(&single_cell_config(Noise::StudentT { dof: 5.0 })).unwrap();
        assert_eq!(t.generator_tag, GeneratorTag::StudentT);
        let x = &t.dataset.batch(0).data;
        let n = x.rows() as f64;
        for j in 0..3 {
            let m = x.iter_rows().map(|r| r[j]).sum::<f64>() / n;
            let m2 = x.iter_rows().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            let m4 = x.iter_rows().map(|r| (r[j] - m).powi(4)).sum::<f64>() / n;
            assert!(m4 / (m2 * m2) - 3.0 > 0.0);
        }
    }

    #[test]
    fn config_json_shorthands() {
        let cfg = SimConfig::from_json(r#"{"u": 2.0, "v": 5, "pi": "pi_missing", "seed": 9}"#).unwrap();
        assert_eq!(cfg.pi, default_pi_missing());
        assert_eq!((cfg.b, cfg.k, cfg.d), (3, 4, 10));
        let t = SimConfig::from_json(r#"{"noise": {"student_t": {"dof": 5}}}"#).unwrap();
        assert_eq!(t.noise, Noise::StudentT { dof: 5.0 });
        let err = SimConfig::from_json(r#"{"pi": [[0.5,0.4],[0.5,0.5]], "base_sizes": [10, 10], "d": 2}"#).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let back = SimConfig::from_json(&serde_json::to_string(&cfg.to_file()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn counts_always_sum_to_batch_size(u in 0.01f64..3.0, seed in 0u64..1000) {
            let cfg = SimConfig { u, seed, pi: default_pi_10(), k: 10, ..SimConfig::default() };
            let (n, c) = sample_sizes(&cfg).unwrap();
            for (nb, row) in n.iter().zip(&c) {
                prop_assert_eq!(row.iter().sum::<usize>(), *nb);
            }
        }
    }
}
