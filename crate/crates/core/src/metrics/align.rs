use serde::Serialize;

use crate::error::{Error, Result};
use crate::hungarian::min_cost_assignment;

/// Maps estimated labels onto truth labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelAlignment {
    /// `mapping[est] = truth` for every estimated label.
    pub mapping: Vec<usize>,
    /// Estimated labels left over by the one-to-one matching and mapped to
    /// their highest-overlap truth label instead.
    pub unmatched: Vec<bool>,
    /// `overlap[est][truth]` cell counts.
    pub overlap: Vec<Vec<usize>>,
}

impl LabelAlignment {
    pub fn flagged(&self) -> bool {
        self.unmatched.iter().any(|&u| u)
    }

    pub fn map(&self, est: usize) -> usize {
        self.mapping[est]
    }
}

/// Maximum-total-overlap matching of estimated to true labels.
pub fn align_labels(est: &[usize], k_est: usize, truth: &[usize], k_true: usize) -> Result<LabelAlignment> {
    if est.len() != truth.len() {
        return Err(Error::invalid(format!(
            "label vectors differ in length ({} vs {})",
            est.len(),
            truth.len()
        )));
    }
    if k_est == 0 || k_true == 0 {
        return Err(Error::invalid("alignment needs at least one label on each side"));
    }
    let mut overlap = vec![vec![0usize; k_true]; k_est];
    for (&e, &t) in est.iter().zip(truth) {
        if e >= k_est || t >= k_true {
            return Err(Error::invalid("label outside declared range"));
        }
        overlap[e][t] += 1;
    }
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| row.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let matched = min_cost_assignment(&cost);
    let mut mapping = Vec::with_capacity(k_est);
    let mut unmatched = Vec::with_capacity(k_est);
    for (e, m) in matched.into_iter().enumerate() {
        match m {
            Some(t) => {
                mapping.push(t);
                unmatched.push(false);
            }
            None => {
                let best = (0..k_true)
                    .max_by(|&a, &b| overlap[e][a].cmp(&overlap[e][b]).then(b.cmp(&a)))
                    .expect("k_true >= 1");
                mapping.push(best);
                unmatched.push(true);
            }
        }
    }
    Ok(LabelAlignment {
        mapping,
        unmatched,
        overlap,
    })
}
