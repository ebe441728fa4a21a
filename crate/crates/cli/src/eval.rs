use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use modah_core::io::{read_dataset_csv, read_params, SCHEMA_VERSION};
use modah_core::metrics::{
    align_labels, correction_loss_from_data, ell_loss, full_report, misclustering_rate, scorecard, LabelAlignment,
    MetricsReport, ReportConfig,
};
use modah_core::RandomSource;
use serde::Serialize;

use crate::fit::read_fit_assignment;
use crate::manifest::{with_suffix, write_json, write_text, Manifest};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelsSource {
    /// The corrected CSV's label column, else the truth dataset's.
    #[default]
    Auto,
    Column,
    Truth,
}

impl std::str::FromStr for LabelsSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "column" => Ok(Self::Column),
            "truth" => Ok(Self::Truth),
            _ => Err(format!("unknown labels source {s:?}; expected auto, column or truth")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub corrected: PathBuf,
    /// Uncorrected dataset CSV with true labels.
    pub truth_data: Option<PathBuf>,
    pub truth_params: Option<PathBuf>,
    /// Fit log holding the estimated assignment.
    pub fit_log: Option<PathBuf>,
    pub labels: LabelsSource,
    pub knn: ReportConfig,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
pub struct LossSection {
    pub correction_loss: f64,
    pub ell_loss: Option<f64>,
    pub misclustering_rate: Option<f64>,
    /// `mapping[est] = truth`, 1-based.
    pub alignment: Option<AlignmentOut>,
}

#[derive(Serialize)]
pub struct AlignmentOut {
    pub mapping: Vec<usize>,
    pub unmatched: Vec<usize>,
    pub flagged: bool,
}

impl From<&LabelAlignment> for AlignmentOut {
    fn from(a: &LabelAlignment) -> Self {
        Self {
            mapping: a.mapping.iter().map(|m| m + 1).collect(),
            unmatched: a.unmatched.iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i + 1).collect(),
            flagged: a.flagged(),
        }
    }
}

#[derive(Serialize)]
pub struct EvalReport {
    pub schema_version: &'static str,
    pub inputs_hash: String,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSection>,
    pub flags: Vec<String>,
}

/// Writes `<out>.json`, `<out>.txt` and `<out>.manifest.json`.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let corrected = read_dataset_csv(&args.corrected).with_context(|| format!("reading {}", args.corrected.display()))?;
    let truth_data = match &args.truth_data {
        Some(p) => Some(read_dataset_csv(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let truth_params = match &args.truth_params {
        Some(p) => Some(read_params(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };

    let column = corrected.labels.as_ref();
    let from_truth = truth_data.as_ref().and_then(|t| t.labels.as_ref());
    let cell_types = match args.labels {
        LabelsSource::Auto => column.or(from_truth),
        LabelsSource::Column => column,
        LabelsSource::Truth => from_truth,
    };
    let Some(cell_types) = cell_types else {
        bail!("metrics need cell-type labels: add a label column or pass --truth-data with labels");
    };
    let pooled: Vec<usize> = cell_types.iter().flatten().copied().collect();
    if pooled.len() != corrected.dataset.n() {
        bail!("{} labels for {} corrected cells", pooled.len(), corrected.dataset.n());
    }

    let mut manifest = Manifest::new(
        "eval",
        args.seed,
        serde_json::json!({
            "labels": format!("{:?}", args.labels).to_lowercase(),
            "lisi_k": args.knn.lisi_k,
            "kbet_k": args.knn.kbet_k,
            "kbet_alpha": args.knn.kbet_alpha,
            "graph_k": args.knn.graph_k,
            "resolutions": args.knn.resolutions,
        }),
    )
    .input_file("corrected", &args.corrected)?;
    for (name, path) in [
        ("truth_data", &args.truth_data),
        ("truth_params", &args.truth_params),
        ("fit_log", &args.fit_log),
    ] {
        if let Some(p) = path {
            manifest = manifest.input_file(name, p)?;
        }
    }

    let metrics = full_report(&corrected.dataset, &pooled, &args.knn, &mut RandomSource::new(args.seed))?;
    let mut flags = Vec::new();

    let loss = match (&truth_data, &truth_params) {
        (Some(td), Some(tp)) => {
            let truth_labels = td
                .assignment(Some(tp.k))
                .context("truth dataset has no label column")??;
            let correction_loss = correction_loss_from_data(&td.dataset, &corrected.dataset, &truth_labels, &tp.beta)?;
            let (mut ell, mut mis, mut alignment) = (None, None, None);
            if let Some(path) = &args.fit_log {
                let est = read_fit_assignment(path)?;
                let a = align_labels(&est.pooled(), est.k(), &truth_labels.pooled(), truth_labels.k())?;
                let (k_est, k_true) = (est.k(), truth_labels.k());
                if k_est > k_true {
                    flags.push(format!(
                        "estimated K = {k_est} exceeds true K = {k_true}; surplus clusters mapped by overlap"
                    ));
                } else if k_est < k_true {
                    flags.push(format!(
                        "estimated K = {k_est} is below true K = {k_true}; {} true clusters unmatched",
                        k_true - k_est
                    ));
                }
                ell = Some(ell_loss(&est, &truth_labels, tp, &a)?);
                mis = Some(misclustering_rate(&est, &truth_labels, &a)?);
                let mut out = AlignmentOut::from(&a);
                out.flagged |= k_est != k_true;
                alignment = Some(out);
            }
            Some(LossSection {
                correction_loss,
                ell_loss: ell,
                misclustering_rate: mis,
                alignment,
            })
        }
        (None, None) => None,
        _ => bail!("loss needs both --truth-data and --truth-params"),
    };

    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        inputs_hash: manifest.inputs_hash.clone(),
        metrics,
        loss,
        flags,
    };
    let json_path = with_suffix(&args.out, ".json");
    let txt_path = with_suffix(&args.out, ".txt");
    write_json(&json_path, &report)?;
    let mut card = scorecard(&report.metrics);
    if let Some(l) = &report.loss {
        card.push_str(&format!("\n{:<22}{:>8.4}\n", "Correction loss", l.correction_loss));
    }
    for f in &report.flags {
        card.push_str(&format!("note: {f}\n"));
    }
    write_text(&txt_path, &card)?;
    manifest.output("report", &json_path)?;
    manifest.output("scorecard", &txt_path)?;
    manifest.write(&with_suffix(&args.out, ".manifest.json"))?;
    Ok(report)
}
