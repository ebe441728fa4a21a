//! All nine integration metrics from one shared neighbour search.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::knn::{knn_indices, KnnGraph};
use crate::metrics::isolated::{isolated_labels_f1, leiden_grid, DEFAULT_RESOLUTIONS};
use crate::metrics::{connectivity, kbet, lisi, partition, silhouette};
use crate::rng::RandomSource;
use crate::types::MultiBatchDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportConfig {
    pub lisi_k: usize,
    pub kbet_k: usize,
    pub kbet_alpha: f64,
    /// Neighbours for the graph used by connectivity and Leiden clustering.
    pub graph_k: usize,
    pub resolutions: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            lisi_k: 90,
            kbet_k: 50,
            kbet_alpha: 0.05,
            graph_k: 15,
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BioScores {
    pub isolated_f1: Option<f64>,
    pub nmi: Option<f64>,
    /// Clipped to `[0, 1]`; the raw value is `ari_raw`.
    pub ari: Option<f64>,
    pub ari_raw: Option<f64>,
    pub asw_label: Option<f64>,
    pub clisi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchScores {
    pub asw_batch: Option<f64>,
    pub ilisi: Option<f64>,
    pub kbet: Option<f64>,
    pub graph_connectivity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregates {
    pub bio_avg: Option<f64>,
    pub batch_avg: Option<f64>,
    /// `(5 bio_avg + 4 batch_avg) / 9`.
    pub total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub bio: BioScores,
    pub batch: BatchScores,
    pub aggregates: Aggregates,
    /// Resolution whose clustering scored the best NMI.
    pub leiden_resolution: Option<f64>,
    pub kbet_excluded: usize,
    pub flags: Vec<String>,
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn aggregate(bio: &BioScores, batch: &BatchScores) -> Aggregates {
    let bio_avg = mean_present(&[bio.isolated_f1, bio.nmi, bio.ari, bio.asw_label, bio.clisi]);
    let batch_avg = mean_present(&[batch.asw_batch, batch.ilisi, batch.kbet, batch.graph_connectivity]);
    let total = match (bio_avg, batch_avg) {
        (Some(b), Some(c)) => Some((5.0 * b + 4.0 * c) / 9.0),
        _ => None,
    };
    Aggregates {
        bio_avg,
        batch_avg,
        total,
    }
}

/// Keeps a value, or records an undefined metric as absent with a flag.
fn optional(r: Result<f64>, flags: &mut Vec<String>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric { metric, reason }) => {
            flags.push(format!("{metric} undefined: {reason}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Evaluates `data` (typically batch-corrected) against 0-based cell-type
/// `labels` in pooled order.
pub fn full_report(
    data: &MultiBatchDataset,
    labels: &[usize],
    cfg: &ReportConfig,
    source: &mut RandomSource,
) -> Result<MetricsReport> {
    let x = data.pooled();
    let n = x.rows();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} cells", labels.len())));
    }
    if n < 3 {
        return Err(Error::invalid("metrics need at least three cells"));
    }
    let batches = data.pooled_batch_index();
    let mut flags = Vec::new();
    let mut clamp = |name: &str, k: usize| {
        if k >= n {
            flags.push(format!("{name} neighbours reduced from {k} to {}", n - 1));
            n - 1
        } else {
            k
        }
    };
    let lisi_k = clamp("LISI", cfg.lisi_k);
    let kbet_k = clamp("kBET", cfg.kbet_k);
    let graph_k = clamp("graph", cfg.graph_k);
    let k_max = lisi_k.max(kbet_k).max(graph_k);
    let nn = knn_indices(&x, k_max)?;
    let prefix = |k: usize| -> Vec<Vec<usize>> { nn.iter().map(|l| l[..k].to_vec()).collect() };
    let graph = KnnGraph::from_neighbors(&prefix(graph_k));

    let clusterings = leiden_grid(&graph, &cfg.resolutions, source);
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in clusterings.iter().enumerate() {
        let v = partition::nmi(labels, c)?;
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, i));
        }
    }
    let (nmi, ari_raw, resolution) = match best {
        Some((v, i)) => (Some(v), Some(partition::ari(labels, &clusterings[i])?), Some(cfg.resolutions[i])),
        None => {
            flags.push("no Leiden resolutions given; NMI and ARI absent".into());
            (None, None, None)
        }
    };
    let isolated_f1 = if clusterings.is_empty() {
        None
    } else {
        Some(isolated_labels_f1(labels, &batches, &clusterings)?)
    };

    let asw_label = optional(silhouette::asw_label(&x, labels), &mut flags)?;
    let asw_batch = optional(silhouette::asw_batch(&x, &batches), &mut flags)?;
    let clisi = optional(lisi::clisi_from_neighbors(&nn, labels, lisi_k), &mut flags)?;
    let ilisi = optional(lisi::ilisi_from_neighbors(&nn, &batches, lisi_k), &mut flags)?;
    let (kbet_score, kbet_excluded) = match kbet::kbet_from_neighbors(&nn, &batches, kbet_k, cfg.kbet_alpha) {
        Ok(r) => {
            if r.excluded > 0 {
                flags.push(format!("kBET excluded {} cells with expected counts below 5", r.excluded));
            }
            (Some(r.score), r.excluded)
        }
        Err(Error::UndefinedMetric { metric, reason }) => {
            flags.push(format!("{metric} undefined: {reason}"));
            (None, 0)
        }
        Err(e) => return Err(e),
    };
    let gc = Some(connectivity::graph_connectivity(&graph, labels)?);

    let bio = BioScores {
        isolated_f1,
        nmi,
        ari: ari_raw.map(|a| a.clamp(0.0, 1.0)),
        ari_raw,
        asw_label,
        clisi,
    };
    let batch = BatchScores {
        asw_batch,
        ilisi,
        kbet: kbet_score,
        graph_connectivity: gc,
    };
    Ok(MetricsReport {
        aggregates: aggregate(&bio, &batch),
        bio,
        batch,
        leiden_resolution: resolution,
        kbet_excluded,
        flags,
    })
}

/// Fixed-width text table of the report.
pub fn scorecard(report: &MetricsReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "    --".to_string(), |x| format!("{x:6.4}"));
    let rows: [(&str, Option<f64>); 14] = [
        ("Isolated labels F1", report.bio.isolated_f1),
        ("Leiden NMI", report.bio.nmi),
        ("Leiden ARI", report.bio.ari),
        ("Silhouette label", report.bio.asw_label),
        ("cLISI", report.bio.clisi),
        ("Bio conservation", report.aggregates.bio_avg),
        ("", None),
        ("Silhouette batch", report.batch.asw_batch),
        ("iLISI", report.batch.ilisi),
        ("kBET", report.batch.kbet),
        ("Graph connectivity", report.batch.graph_connectivity),
        ("Batch correction", report.aggregates.batch_avg),
        ("", None),
        ("Total", report.aggregates.total),
    ];
    let mut out = String::new();
    let _ = writeln!(out, "{:<22}{:>8}", "metric", "score");
    let _ = writeln!(out, "{:-<22}{:->8}", "", "");
    for (name, v) in rows {
        if name.is_empty() {
            let _ = writeln!(out);
        } else {
            let _ = writeln!(out, "{name:<22}{:>8}", fmt(v));
        }
    }
    for f in &report.flags {
        let _ = writeln!(out, "note: {f}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RowMatrix;
    use crate::types::Batch;

    fn two_type_data(src: &mut RandomSource, batch_shift: f64) -> (MultiBatchDataset, Vec<usize>) {
        let mut batches = Vec::new();
        let mut labels = Vec::new();
        for b in 0..2 {
            let mut rows = Vec::new();
            for i in 0..60 {
                let t = i % 2;
                rows.push(vec![
                    10.0 * t as f64 + src.standard_normal(),
                    batch_shift * b as f64 + src.standard_normal(),
                ]);
                labels.push(t);
            }
            batches.push(Batch {
                id: format!("b{b}"),
                data: RowMatrix::from_rows(&rows).unwrap(),
            });
        }
        (MultiBatchDataset::new(batches).unwrap(), labels)
    }

    #[test]
    fn mixed_batches_beat_separated_batches() {
        let mut src = RandomSource::new(6);
        let (mixed, labels) = two_type_data(&mut src, 0.0);
        let (split, _) = two_type_data(&mut src, 40.0);
        let cfg = ReportConfig::default();
        let a = full_report(&mixed, &labels, &cfg, &mut RandomSource::new(1)).unwrap();
        let b = full_report(&split, &labels, &cfg, &mut RandomSource::new(1)).unwrap();
        assert!(a.aggregates.batch_avg.unwrap() > b.aggregates.batch_avg.unwrap());
        assert!(a.aggregates.bio_avg.unwrap() > b.aggregates.bio_avg.unwrap());
        let total = (5.0 * a.aggregates.bio_avg.unwrap() + 4.0 * a.aggregates.batch_avg.unwrap()) / 9.0;
        assert_eq!(a.aggregates.total.unwrap(), total);
        for v in [a.bio.nmi, a.bio.ari, a.bio.asw_label, a.bio.clisi, a.batch.kbet, a.batch.ilisi] {
            let v = v.unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        // LISI neighbours clamp to n - 1 = 119 only when needed.
        assert!(a.flags.iter().all(|f| !f.contains("LISI")));
    }

    #[test]
    fn deterministic_report() {
        let mut src = RandomSource::new(2);
        let (d, l) = two_type_data(&mut src, 1.0);
        let cfg = ReportConfig::default();
        let a = full_report(&d, &l, &cfg, &mut RandomSource::new(3)).unwrap();
        let b = full_report(&d, &l, &cfg, &mut RandomSource::new(3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(scorecard(&a).contains("Total"));
    }

    #[test]
    fn single_batch_marks_batch_metrics_absent() {
        let mut src = RandomSource::new(2);
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64 * 10.0 + src.standard_normal()]).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let d = MultiBatchDataset::new(vec![Batch {
            id: "a".into(),
            data: RowMatrix::from_rows(&rows).unwrap(),
        }])
        .unwrap();
        let r = full_report(&d, &labels, &ReportConfig::default(), &mut src).unwrap();
        assert!(r.batch.ilisi.is_none() && r.batch.kbet.is_none() && r.batch.asw_batch.is_none());
        assert!(r.aggregates.batch_avg.is_some());
        assert!(!r.flags.is_empty());
    }
}
