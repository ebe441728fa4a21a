//! kBET: per-cell chi-squared test of local against global batch composition.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KbetResult {
    /// `1 - rejection rate` over tested cells.
    pub score: f64,
    pub rejection_rate: f64,
    pub tested: usize,
    /// Cells skipped because an expected count fell below 5.
    pub excluded: usize,
}

/// Tests each neighbour list against the global batch proportions.
pub fn kbet_from_neighbors(neighbors: &[Vec<usize>], batches: &[usize], k: usize, alpha: f64) -> Result<KbetResult> {
    let n_batches = batches.iter().max().map_or(0, |&b| b + 1);
    let mut global = vec![0usize; n_batches];
    for &b in batches {
        global[b] += 1;
    }
    let present = global.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::UndefinedMetric {
            metric: "kBET",
            reason: "needs at least two batches".into(),
        });
    }
    let n = batches.len() as f64;
    let props: Vec<f64> = global.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).collect();
    let index: Vec<usize> = {
        let mut idx = vec![usize::MAX; n_batches];
        let mut next = 0;
        for (b, &c) in global.iter().enumerate() {
            if c > 0 {
                idx[b] = next;
                next += 1;
            }
        }
        idx
    };
    let dist = ChiSquared::new((present - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;

    let mut rejected = 0usize;
    let mut tested = 0usize;
    let mut excluded = 0usize;
    let mut observed = vec![0usize; present];
    for list in neighbors {
        let list = &list[..k.min(list.len())];
        let m = list.len() as f64;
        if props.iter().any(|p| p * m < MIN_EXPECTED) {
            excluded += 1;
            continue;
        }
        observed.iter_mut().for_each(|o| *o = 0);
        for &j in list {
            observed[index[batches[j]]] += 1;
        }
        let stat: f64 = observed
            .iter()
            .zip(&props)
            .map(|(&o, &p)| {
                let e = p * m;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = dist.sf(stat);
        tested += 1;
        if p_value < alpha {
            rejected += 1;
        }
    }
    if tested == 0 {
        return Err(Error::UndefinedMetric {
            metric: "kBET",
            reason: format!("all {excluded} cells have an expected batch count below {MIN_EXPECTED}"),
        });
    }
    let rate = rejected as f64 / tested as f64;
    Ok(KbetResult {
        score: 1.0 - rate,
        rejection_rate: rate,
        tested,
        excluded,
    })
}
