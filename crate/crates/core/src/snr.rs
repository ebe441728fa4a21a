//! Separability analysis: the minimum-norm point of each pairwise QDA
//! rejection region, the resulting signal-to-noise ratio, and the regularity
//! quantities that bound it.
//!
//! For batch `b` and ordered cluster pair `(k, k')`, after whitening by
//! `Sigma_k^{1/2}` the likelihood-ratio test prefers `k'` on
//! `A = { x : 0.5 x^T B x + c^T x + e <= 0 }` with
//! `B = S P S - I`, `c = S P delta`, `e = 0.5 delta^T P delta - 0.5 log|Sigma_k| + 0.5 log|Sigma_k'|`,
//! where `S = Sigma_k^{1/2}`, `P = Sigma_k'^{-1}` and `delta = mu_bk - mu_bk'`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::types::ModelParams;

/// Number of boundary directions used to certify each solve.
pub const CERTIFY_DIRECTIONS: usize = 10_000;
const CERTIFY_SEED: u64 = 0x5eed_0f_a11;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadricSet {
    pub bq: DMatrix<f64>,
    pub c: DVector<f64>,
    pub e: f64,
}

impl QuadricSet {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.bq * x)) + self.c.dot(x) + self.e
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.value(x) <= 0.0
    }

    pub fn d(&self) -> usize {
        self.c.len()
    }
}

fn sym_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt())) * q.transpose();
    (&r + r.transpose()) * 0.5
}

pub fn quadric_from_pair(params: &ModelParams, b: usize, k: usize, k2: usize) -> Result<QuadricSet> {
    if k == k2 {
        return Err(Error::invalid("quadric needs two distinct clusters"));
    }
    if b >= params.n_batches() || k >= params.k || k2 >= params.k {
        return Err(Error::invalid("batch or cluster index out of range"));
    }
    let d = params.d;
    let sk = &params.sigma[k];
    let chol_k = sk.clone().cholesky().ok_or(Error::NotPositiveDefinite { cluster: k })?;
    let chol_k2 = params.sigma[k2]
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { cluster: k2 })?;
    let log_det = |l: DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let (ld_k, ld_k2) = (log_det(chol_k.l()), log_det(chol_k2.l()));
    let p = chol_k2.inverse();
    let s = sym_sqrt(sk);
    let delta = (&params.mu[k] + &params.beta[b][k]) - (&params.mu[k2] + &params.beta[b][k2]);
    let sp = &s * &p;
    let bq = &sp * &s - DMatrix::identity(d, d);
    let bq = (&bq + bq.transpose()) * 0.5;
    let c = &sp * &delta;
    let e = 0.5 * delta.dot(&(&p * &delta)) - 0.5 * ld_k + 0.5 * ld_k2;
    Ok(QuadricSet { bq, c, e })
}

/// Smallest positive `r` with `0.5 r^2 a + r b + e = 0`, for `e > 0`.
fn first_positive_root(a: f64, b: f64, e: f64) -> Option<f64> {
    if a.abs() < 1e-300 {
        return (b < 0.0).then(|| -e / b);
    }
    // 0.5 a r^2 + b r + e = 0
    let disc = b * b - 2.0 * a * e;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let qv = -(b + b.signum() * sq);
    let roots = if qv == 0.0 {
        [f64::NAN, f64::NAN]
    } else {
        [qv / a, 2.0 * e / qv]
    };
    roots.into_iter().filter(|r| r.is_finite() && *r > 0.0).reduce(f64::min)
}

/// Unit directions: evenly spaced angles in 2D, seeded Gaussian directions otherwise.
fn certify_directions(d: usize) -> Vec<DVector<f64>> {
    if d == 1 {
        return vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
    }
    if d == 2 {
        return (0..CERTIFY_DIRECTIONS)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / CERTIFY_DIRECTIONS as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
    }
    let mut src = RandomSource::new(CERTIFY_SEED);
    (0..CERTIFY_DIRECTIONS)
        .map(|_| {
            let v = DVector::from_fn(d, |_, _| src.standard_normal());
            let n = v.norm();
            v / n
        })
        .collect()
}

/// Minimum over sampled directions of the distance to the set boundary.
/// Upper-bounds the true minimum norm.
pub fn sampled_boundary_min(q: &QuadricSet, directions: &[DVector<f64>]) -> f64 {
    if q.e <= 0.0 {
        return 0.0;
    }
    directions
        .iter()
        .filter_map(|u| first_positive_root(u.dot(&(&q.bq * u)), q.c.dot(u), q.e))
        .fold(f64::INFINITY, f64::min)
}

/// Certified solution of `min ||x||` over the set.
#[derive(Clone, Debug, PartialEq)]
pub struct MinNormSolution {
    pub norm: f64,
    pub point: DVector<f64>,
    /// KKT multiplier of the active constraint.
    pub multiplier: f64,
    pub residual: f64,
    pub sampled_bound: f64,
}

pub fn min_norm_on_set(q: &QuadricSet, tol: f64) -> Result<f64> {
    Ok(solve_min_norm(q, tol)?.norm)
}

/// Minimum-norm point via the secular equation in the KKT multiplier.
///
/// The minimizer satisfies `(I + nu B) x = -nu c` with `I + nu B` positive
/// semidefinite, so `nu` lies in `[0, -1/lambda_min)` (unbounded when
/// `B` is PSD). On that interval the constraint value along `x(nu)`,
/// `phi(nu) = e - sum_i ct_i^2 nu (1 + nu l_i / 2) / (1 + nu l_i)^2`,
/// strictly decreases, which makes the root unique and bisection safe.
pub fn solve_min_norm(q: &QuadricSet, tol: f64) -> Result<MinNormSolution> {
    let d = q.d();
    if q.e <= 0.0 {
        return Ok(MinNormSolution {
            norm: 0.0,
            point: DVector::zeros(d),
            multiplier: 0.0,
            residual: 0.0,
            sampled_bound: 0.0,
        });
    }
    let eig = q.bq.clone().symmetric_eigen();
    let lam = eig.eigenvalues.clone();
    let qm = eig.eigenvectors.clone();
    let ct = qm.transpose() * &q.c;
    let lam_min = lam.min();
    let lam_scale = lam.amax().max(1.0);
    let c_sq = ct.norm_squared();

    let phi = |nu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            let den = 1.0 + nu * lam[i];
            s += ct[i] * ct[i] * nu * (1.0 + 0.5 * nu * lam[i]) / (den * den);
        }
        q.e - s
    };
    let point_at = |nu: f64, skip: &[bool]| -> DVector<f64> {
        let xt = DVector::from_fn(d, |i, _| {
            if skip[i] {
                0.0
            } else {
                -nu * ct[i] / (1.0 + nu * lam[i])
            }
        });
        &qm * xt
    };
    let no_skip = vec![false; d];

    let (nu, point) = if lam_min < 0.0 {
        let nu_max = -1.0 / lam_min;
        let bottom: Vec<bool> = lam
            .iter()
            .map(|&l| l <= lam_min + 1e-12 * lam_scale)
            .collect();
        let bottom_weight: f64 = (0..d).filter(|&i| bottom[i]).map(|i| ct[i] * ct[i]).sum();
        // Constraint value at the pole with the bottom eigenspace removed.
        let phi_pole = {
            let mut s = 0.0;
            for i in (0..d).filter(|&i| !bottom[i]) {
                let den = 1.0 + nu_max * lam[i];
                s += ct[i] * ct[i] * nu_max * (1.0 + 0.5 * nu_max * lam[i]) / (den * den);
            }
            q.e - s
        };
        if bottom_weight <= 1e-24 * c_sq.max(1e-300) && phi_pole > 0.0 {
            // Hard case: move along the bottom eigenvector until the boundary.
            let base = point_at(nu_max, &bottom);
            let z = qm.column(bottom.iter().position(|&b| b).expect("lambda_min is attained")).into_owned();
            let t = (2.0 * phi_pole / -lam_min).sqrt();
            (nu_max, base + z * t)
        } else {
            let nu = bisect(&phi, 0.0, nu_max);
            (nu, point_at(nu, &no_skip))
        }
    } else {
        let mut hi = 1.0;
        while phi(hi) > 0.0 {
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(Error::NoKktSolution(format!(
                    "constraint stays positive along the multiplier path (e = {}, |c| = {}, lambda_min = {lam_min})",
                    q.e,
                    c_sq.sqrt()
                )));
            }
        }
        let nu = bisect(&phi, 0.0, hi);
        (nu, point_at(nu, &no_skip))
    };

    let norm = point.norm();
    let residual = q.value(&point).abs();
    let scale = 1.0 + q.e.abs() + q.c.norm() * norm + 0.5 * lam_scale * norm * norm;
    let sampled = sampled_boundary_min(q, &certify_directions(d));
    if residual > tol * scale {
        return Err(Error::NoKktSolution(format!(
            "boundary residual {residual:e} exceeds tolerance (multiplier {nu}, norm {norm})"
        )));
    }
    if norm > sampled * (1.0 + 1e-6) + tol {
        return Err(Error::NoKktSolution(format!(
            "solution norm {norm} exceeds sampled boundary distance {sampled}"
        )));
    }
    Ok(MinNormSolution {
        norm,
        point,
        multiplier: nu,
        residual,
        sampled_bound: sampled,
    })
}

/// Root of a decreasing function with `f(lo) > 0`; `hi` may be a pole.
fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Prefer the endpoint on the feasible side unless it is the pole itself.
    let f_hi = f(hi);
    if f_hi.is_finite() && f_hi.abs() <= f(lo).abs() {
        hi
    } else {
        lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairChi {
    pub b: usize,
    pub k: usize,
    #[serde(rename = "k'")]
    pub k2: usize,
    pub chi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrReport {
    pub snr: f64,
    /// Ordered pairs, 0-based indices.
    pub per_pair: Vec<PairChi>,
}

pub fn snr(params: &ModelParams) -> Result<f64> {
    Ok(snr_report(params)?.snr)
}

/// Twice the minimum norm for every batch and ordered cluster pair.
pub fn snr_report(params: &ModelParams) -> Result<SnrReport> {
    if params.k < 2 {
        return Err(Error::invalid("SNR needs at least two clusters"));
    }
    let triples: Vec<(usize, usize, usize)> = (0..params.n_batches())
        .flat_map(|b| (0..params.k).flat_map(move |k| (0..params.k).filter(move |&k2| k2 != k).map(move |k2| (b, k, k2))))
        .collect();
    let per_pair = triples
        .par_iter()
        .map(|&(b, k, k2)| {
            let q = quadric_from_pair(params, b, k, k2)?;
            Ok(PairChi {
                b,
                k,
                k2,
                chi: 2.0 * min_norm_on_set(&q, 1e-10)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let snr = per_pair.iter().map(|p| p.chi).fold(f64::INFINITY, f64::min);
    Ok(SnrReport { snr, per_pair })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub gamma_max: f64,
    pub omega: f64,
    #[serde(rename = "Omega")]
    pub omega_max: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

pub fn regularity_report(params: &ModelParams) -> RegularityReport {
    let present: Vec<usize> = params.counts.iter().flatten().copied().filter(|&c| c > 0).collect();
    let alpha = match (present.iter().min(), present.iter().max()) {
        (Some(&lo), Some(&hi)) => lo as f64 / hi as f64,
        _ => 0.0,
    };
    let comp = params.composite_means();
    let mut gamma = f64::INFINITY;
    let mut omega = f64::INFINITY;
    let mut gamma_max: f64 = 0.0;
    let mut omega_max: f64 = 0.0;
    for b in 0..params.n_batches() {
        for k in 0..params.k {
            gamma_max = gamma_max.max(params.beta[b][k].norm_squared());
            omega_max = omega_max.max(comp[b][k].norm_squared());
            for k2 in (k + 1)..params.k {
                gamma = gamma.min((&params.beta[b][k] - &params.beta[b][k2]).norm_squared());
                omega = omega.min((&comp[b][k] - &comp[b][k2]).norm_squared());
            }
        }
    }
    if params.k < 2 {
        gamma = 0.0;
        omega = 0.0;
    }
    let mut lambda_max = f64::NEG_INFINITY;
    let mut lambda_min = f64::INFINITY;
    for s in &params.sigma {
        let ev = s.clone().symmetric_eigen().eigenvalues;
        lambda_max = lambda_max.max(ev.max());
        lambda_min = lambda_min.min(ev.min());
    }
    RegularityReport {
        alpha,
        gamma,
        gamma_max,
        omega,
        omega_max,
        lambda_max,
        lambda_min,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prop1Bounds {
    pub applicable: bool,
    /// `2 d lambda_max log(lambda_max / lambda_min)`, compared against omega.
    pub condition: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Bounds `lower <= SNR <= upper`, valid when `applicable`.
pub fn prop1_bounds(report: &RegularityReport, d: usize) -> Prop1Bounds {
    let (lmax, lmin, omega) = (report.lambda_max, report.lambda_min, report.omega);
    let condition = 2.0 * d as f64 * lmax * (lmax / lmin).ln();
    Prop1Bounds {
        applicable: omega > 0.0 && lmin > 0.0 && omega >= condition,
        condition,
        lower: (lmin / lmax) * (omega / lmax).sqrt() / 3.0,
        upper: 2.0 * (omega / lmin).sqrt(),
    }
}
