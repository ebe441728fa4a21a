//! Batch-correction loss and the misclustering diagnostics.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::metrics::align::LabelAlignment;
use crate::types::{Assignment, ModelParams, MultiBatchDataset};

fn check_pair(a: &Assignment, b: &Assignment) -> Result<()> {
    let same = a.labels().len() == b.labels().len()
        && a.labels().iter().zip(b.labels()).all(|(x, y)| x.len() == y.len());
    if same {
        Ok(())
    } else {
        Err(Error::invalid("assignments cover different datasets"))
    }
}

/// Mean squared distance between the applied and the oracle batch-effect
/// vectors, `(1/n) sum ||beta_hat[b][a_hat] - beta[b][a]||^2`.
///
/// Each cell is compared through the vector actually subtracted from it, so
/// the value does not depend on how estimated labels are named.
pub fn correction_loss(
    est_labels: &Assignment,
    est_beta: &[Vec<DVector<f64>>],
    truth_labels: &Assignment,
    truth_beta: &[Vec<DVector<f64>>],
) -> Result<f64> {
    check_pair(est_labels, truth_labels)?;
    if est_beta.len() != est_labels.labels().len() || truth_beta.len() != truth_labels.labels().len() {
        return Err(Error::invalid("batch-effect tables do not match the batch count"));
    }
    let mut total = 0.0;
    for (b, (est, truth)) in est_labels.labels().iter().zip(truth_labels.labels()).enumerate() {
        for (&e, &t) in est.iter().zip(truth) {
            let (be, bt) = (&est_beta[b][e], &truth_beta[b][t]);
            total += be.iter().zip(bt.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(total / est_labels.n() as f64)
}

/// Same loss computed from data: `(1/n) sum ||x_corrected - (x - beta[b][a])||^2`.
pub fn correction_loss_from_data(
    original: &MultiBatchDataset,
    corrected: &MultiBatchDataset,
    truth_labels: &Assignment,
    truth_beta: &[Vec<DVector<f64>>],
) -> Result<f64> {
    truth_labels.check_shape(original)?;
    truth_labels.check_shape(corrected)?;
    if original.d() != corrected.d() || truth_beta.len() != original.n_batches() {
        return Err(Error::invalid("original and corrected data do not match"));
    }
    let mut total = 0.0;
    for (b, (ob, cb)) in original.batches().iter().zip(corrected.batches()).enumerate() {
        for ((x, xc), &t) in ob.data.iter_rows().zip(cb.data.iter_rows()).zip(truth_labels.batch_labels(b)) {
            for ((xi, ci), bi) in x.iter().zip(xc).zip(truth_beta[b][t].iter()) {
                let oracle = xi - bi;
                total += (ci - oracle) * (ci - oracle);
            }
        }
    }
    Ok(total / original.n() as f64)
}

/// Squared composite-mean displacement summed over cells, with estimated
/// labels mapped through `align`.
pub fn ell_loss(a: &Assignment, truth_labels: &Assignment, truth: &ModelParams, align: &LabelAlignment) -> Result<f64> {
    check_pair(a, truth_labels)?;
    let comp = truth.composite_means();
    let mut total = 0.0;
    for (b, (est, tru)) in a.labels().iter().zip(truth_labels.labels()).enumerate() {
        for (&e, &t) in est.iter().zip(tru) {
            let m = align.map(e);
            if m != t {
                total += (&comp[b][m] - &comp[b][t]).norm_squared();
            }
        }
    }
    Ok(total)
}

pub fn misclustering_rate(a: &Assignment, truth_labels: &Assignment, align: &LabelAlignment) -> Result<f64> {
    check_pair(a, truth_labels)?;
    let wrong = a
        .pooled()
        .iter()
        .zip(truth_labels.pooled())
        .filter(|(&e, t)| align.map(e) != *t)
        .count();
    Ok(wrong as f64 / a.n() as f64)
}
