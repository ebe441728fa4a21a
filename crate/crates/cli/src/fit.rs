use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use modah_core::em::{fit, FitConfig};
use modah_core::init::{estimate_k, initialize, InitStrategy, DEFAULT_NEIGHBORS, DEFAULT_RESOLUTION};
use modah_core::io::{params_to_value, read_dataset_csv, write_dataset_csv, SCHEMA_VERSION};
use modah_core::{Assignment, RandomSource};
use serde::Serialize;

use crate::manifest::{with_suffix, write_json, Manifest};

#[derive(Clone, Debug)]
pub struct FitArgs {
    pub input: PathBuf,
    pub k: Option<usize>,
    pub estimate_k: bool,
    pub neighbors: usize,
    pub resolution: f64,
    pub init: InitStrategy,
    pub max_iter: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl FitArgs {
    pub fn new(input: PathBuf, out: PathBuf) -> Self {
        Self {
            input,
            k: None,
            estimate_k: false,
            neighbors: DEFAULT_NEIGHBORS,
            resolution: DEFAULT_RESOLUTION,
            init: InitStrategy::default(),
            max_iter: 100,
            seed: 0,
            out,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutputs {
    pub corrected: PathBuf,
    pub params: PathBuf,
    pub fit_log: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct EstimateLog {
    neighbors: usize,
    resolution: f64,
    k_hat: usize,
}

#[derive(Serialize)]
struct FitLog<'a> {
    schema_version: &'static str,
    inputs_hash: &'a str,
    #[serde(rename = "K")]
    k: usize,
    estimate: Option<EstimateLog>,
    init: String,
    lloyd_iterations: &'a [usize],
    iterations: usize,
    converged: bool,
    objective_trace: &'a [f64],
    /// Estimated clusters per batch, 1-based.
    assignment: Vec<Vec<usize>>,
}

/// Writes `<out>.corrected.csv`, `<out>.params.json`, `<out>.fitlog.json`
/// and `<out>.manifest.json`. Input labels, when present, are carried into
/// the corrected CSV unchanged.
pub fn cmd_fit(args: &FitArgs) -> Result<FitOutputs> {
    let input = read_dataset_csv(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let data = &input.dataset;
    let mut source = RandomSource::new(args.seed);

    let estimate = if args.estimate_k {
        let k_hat = estimate_k(data, args.neighbors, args.resolution, &mut source)?;
        Some(EstimateLog {
            neighbors: args.neighbors,
            resolution: args.resolution,
            k_hat,
        })
    } else {
        None
    };
    let k = match (args.k, &estimate) {
        (Some(k), None) => k,
        (None, Some(e)) => e.k_hat,
        (Some(_), Some(_)) => bail!("give either --k or --estimate-k, not both"),
        (None, None) => bail!("one of --k or --estimate-k is required"),
    };

    let init = initialize(data, k, args.init, &mut source)?;
    let cfg = FitConfig {
        max_iter: args.max_iter,
        ..FitConfig::new(k)
    };
    let result = fit(data, &init.assignment, &cfg).map_err(|e| {
        let hint = match &e {
            modah_core::Error::DegenerateCluster { .. } if k > 1 => format!("; retry with --k {}", k - 1),
            _ => String::new(),
        };
        anyhow::Error::new(e).context(format!("fitting K = {k} failed{hint}"))
    })?;

    let outputs = FitOutputs {
        corrected: with_suffix(&args.out, ".corrected.csv"),
        params: with_suffix(&args.out, ".params.json"),
        fit_log: with_suffix(&args.out, ".fitlog.json"),
        manifest: with_suffix(&args.out, ".manifest.json"),
    };
    let parameters = serde_json::json!({
        "K": args.k,
        "estimate_k": args.estimate_k,
        "neighbors": args.neighbors,
        "resolution": args.resolution,
        "init": args.init.to_string(),
        "max_iter": args.max_iter,
    });
    let mut manifest = Manifest::new("fit", args.seed, parameters).input_file("input", &args.input)?;

    let labels: Option<Assignment> = input.assignment(None).transpose()?;
    crate::manifest::ensure_parent(&outputs.corrected)?;
    write_dataset_csv(&outputs.corrected, &result.corrected, labels.as_ref())
        .with_context(|| format!("writing {}", outputs.corrected.display()))?;
    let mut params = params_to_value(&result.params);
    params["inputs_hash"] = manifest.inputs_hash.clone().into();
    write_json(&outputs.params, &params)?;
    let log = FitLog {
        schema_version: SCHEMA_VERSION,
        inputs_hash: &manifest.inputs_hash,
        k,
        estimate,
        init: init.strategy.to_string(),
        lloyd_iterations: &init.lloyd_iterations,
        iterations: result.iterations,
        converged: result.converged,
        objective_trace: &result.objective_trace,
        assignment: result
            .labels
            .labels()
            .iter()
            .map(|b| b.iter().map(|&l| l + 1).collect())
            .collect(),
    };
    write_json(&outputs.fit_log, &log)?;

    manifest.output("corrected", &outputs.corrected)?;
    manifest.output("params", &outputs.params)?;
    manifest.output("fit_log", &outputs.fit_log)?;
    manifest.write(&outputs.manifest)?;
    Ok(outputs)
}

/// Estimated assignment stored in a fit log.
pub fn read_fit_assignment(path: &std::path::Path) -> Result<Assignment> {
    #[derive(serde::Deserialize)]
    struct Partial {
        #[serde(rename = "K")]
        k: usize,
        assignment: Vec<Vec<usize>>,
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p: Partial = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut labels = Vec::with_capacity(p.assignment.len());
    for (b, batch) in p.assignment.into_iter().enumerate() {
        let mut out = Vec::with_capacity(batch.len());
        for (i, l) in batch.into_iter().enumerate() {
            if l == 0 || l > p.k {
                bail!("{}: batch {}, row {}: cluster {l} outside 1..={}", path.display(), b + 1, i + 1, p.k);
            }
            out.push(l - 1);
        }
        labels.push(out);
    }
    Ok(Assignment::new(labels, p.k)?)
}
