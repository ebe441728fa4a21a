use std::path::PathBuf;

use anyhow::{Context, Result};
use modah_core::io::{read_params, SCHEMA_VERSION};
use modah_core::snr::{prop1_bounds, regularity_report, snr_report, Prop1Bounds, RegularityReport};
use serde::Serialize;

use crate::manifest::{with_suffix, write_json, Manifest};

#[derive(Clone, Debug)]
pub struct SnrArgs {
    pub params: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
pub struct PairOut {
    /// 1-based batch and cluster indices.
    pub b: usize,
    pub k: usize,
    #[serde(rename = "k'")]
    pub k2: usize,
    pub chi: f64,
}

#[derive(Serialize)]
pub struct SnrOut {
    pub schema_version: &'static str,
    pub inputs_hash: String,
    pub snr: f64,
    pub per_pair: Vec<PairOut>,
    pub regularity: RegularityReport,
    pub prop1: Prop1Bounds,
}

/// Writes `<out>.json` and `<out>.manifest.json`.
pub fn cmd_snr(args: &SnrArgs) -> Result<SnrOut> {
    let params = read_params(&args.params).with_context(|| format!("reading {}", args.params.display()))?;
    let mut manifest = Manifest::new("snr", args.seed, serde_json::json!({})).input_file("params", &args.params)?;
    let report = snr_report(&params)?;
    let regularity = regularity_report(&params);
    let out = SnrOut {
        schema_version: SCHEMA_VERSION,
        inputs_hash: manifest.inputs_hash.clone(),
        snr: report.snr,
        per_pair: report
            .per_pair
            .iter()
            .map(|p| PairOut {
                b: p.b + 1,
                k: p.k + 1,
                k2: p.k2 + 1,
                chi: p.chi,
            })
            .collect(),
        prop1: prop1_bounds(&regularity, params.d),
        regularity,
    };
    let path = with_suffix(&args.out, ".json");
    write_json(&path, &out)?;
    manifest.output("snr", &path)?;
    manifest.write(&with_suffix(&args.out, ".manifest.json"))?;
    Ok(out)
}
