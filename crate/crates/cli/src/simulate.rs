use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use modah_core::io::{params_to_value, write_dataset_csv, SCHEMA_VERSION};
use modah_core::simgen::{generate, SimConfig, SimConfigFile};

use crate::manifest::{write_json, Manifest};

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    /// Defaults apply when absent.
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct SimulateOutputs {
    pub dataset: PathBuf,
    pub truth: PathBuf,
    pub manifest: PathBuf,
}

pub fn load_config(path: Option<&Path>) -> Result<(SimConfig, Vec<u8>)> {
    match path {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
            let file: SimConfigFile = serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", p.display()))?;
            let cfg = file.resolve().with_context(|| format!("invalid config {}", p.display()))?;
            Ok((cfg, bytes))
        }
        None => Ok((SimConfig::default(), Vec::new())),
    }
}

/// Writes `<out>.csv` (with labels), `<out>.truth.json` and `<out>.manifest.json`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateOutputs> {
    let (mut cfg, bytes) = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let truth = generate(&cfg)?;
    let outputs = SimulateOutputs {
        dataset: crate::manifest::with_suffix(&args.out, ".csv"),
        truth: crate::manifest::with_suffix(&args.out, ".truth.json"),
        manifest: crate::manifest::with_suffix(&args.out, ".manifest.json"),
    };
    let resolved = serde_json::to_value(cfg.to_file())?;
    let mut manifest = Manifest::new("simulate", cfg.seed, resolved).input_bytes("config", &bytes);

    crate::manifest::ensure_parent(&outputs.dataset)?;
    write_dataset_csv(&outputs.dataset, &truth.dataset, Some(&truth.truth_labels))
        .with_context(|| format!("writing {}", outputs.dataset.display()))?;
    let mut doc = params_to_value(&truth.truth_params);
    doc["generator_tag"] = serde_json::to_value(truth.generator_tag)?;
    doc["inputs_hash"] = manifest.inputs_hash.clone().into();
    doc["schema_version"] = SCHEMA_VERSION.into();
    write_json(&outputs.truth, &doc)?;

    manifest.output("dataset", &outputs.dataset)?;
    manifest.output("truth", &outputs.truth)?;
    manifest.write(&outputs.manifest)?;
    Ok(outputs)
}
