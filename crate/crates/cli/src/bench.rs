//! Seeded simulation sweeps: generate, initialize, fit and score every
//! grid value and replicate.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use modah_core::em::{fit, FitConfig};
use modah_core::init::{estimate_k, initialize, InitStrategy, DEFAULT_NEIGHBORS, DEFAULT_RESOLUTION};
use modah_core::metrics::correction_loss;
use modah_core::simgen::{default_pi_10, default_pi_missing, generate, Noise, SimConfig};
use modah_core::RandomSource;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{ensure_parent, Manifest};

/// Degrees of freedom of the heavy-tailed variant.
pub const STUDENT_T_DOF: f64 = 5.0;
/// Separates the fitting stream from the generating stream of a replicate.
const FIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Setting {
    /// Grid values are `log u`.
    LossVsU { v: f64 },
    /// Grid values are `v`.
    LossVsV { u: f64 },
    /// Grid values are the K passed to the fit.
    LossVsKinput { u: f64, v: f64 },
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LossVsU { v } => write!(f, "loss_vs_u(v={v})"),
            Self::LossVsV { u } => write!(f, "loss_vs_v(u={u})"),
            Self::LossVsKinput { u, v } => write!(f, "loss_vs_kinput(u={u},v={v})"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Gaussian,
    LargeK,
    StudentT,
    MissingCluster,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::LargeK => "large_k",
            Self::StudentT => "student_t",
            Self::MissingCluster => "missing_cluster",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    /// Inclusive of `stop` when it lies on the lattice.
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    bail!("grid range needs finite start <= stop and step > 0");
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                // Rounding keeps printed values like 0.6 instead of 0.6000000000000001.
                (0..n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
            }
        };
        if v.is_empty() {
            bail!("grid must be nonempty");
        }
        if v.iter().any(|x| !x.is_finite()) {
            bail!("grid values must be finite");
        }
        Ok(v)
    }
}

fn default_reps() -> usize {
    20
}
fn default_init() -> String {
    InitStrategy::default().to_string()
}
fn default_max_iter() -> usize {
    100
}
fn default_neighbors() -> usize {
    DEFAULT_NEIGHBORS
}
fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub setting: Setting,
    #[serde(default)]
    pub variant: Variant,
    pub grid: Grid,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Replicate `r` uses seed `base_seed + r`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Fit with the Leiden estimate of K instead of the true K.
    #[serde(default)]
    pub estimate_k: bool,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

impl BenchSpec {
    pub fn new(setting: Setting, grid: Vec<f64>, reps: usize) -> Self {
        Self {
            setting,
            variant: Variant::default(),
            grid: Grid::List(grid),
            reps,
            base_seed: 0,
            init: default_init(),
            max_iter: default_max_iter(),
            estimate_k: false,
            neighbors: DEFAULT_NEIGHBORS,
            resolution: DEFAULT_RESOLUTION,
        }
    }

    pub fn validate(&self) -> Result<Vec<f64>> {
        let grid = self.grid.values()?;
        if self.reps == 0 {
            bail!("reps must be at least 1");
        }
        if self.max_iter == 0 {
            bail!("max_iter must be at least 1");
        }
        self.init.parse::<InitStrategy>().map_err(anyhow::Error::msg)?;
        if let Setting::LossVsKinput { .. } = self.setting {
            if self.estimate_k {
                bail!("estimate_k cannot be combined with loss_vs_kinput");
            }
            if grid.iter().any(|&g| g < 1.0 || g.fract() != 0.0) {
                bail!("loss_vs_kinput grid values must be positive integers");
            }
        }
        Ok(grid)
    }

    /// Simulation config for one grid value and seed.
    pub fn sim_config(&self, grid_value: f64, seed: u64) -> SimConfig {
        let mut cfg = SimConfig {
            seed,
            ..SimConfig::default()
        };
        match self.variant {
            Variant::Gaussian => {}
            Variant::LargeK => {
                cfg.pi = default_pi_10();
                cfg.k = 10;
            }
            Variant::StudentT => cfg.noise = Noise::StudentT { dof: STUDENT_T_DOF },
            Variant::MissingCluster => cfg.pi = default_pi_missing(),
        }
        match self.setting {
            Setting::LossVsU { v } => {
                cfg.u = grid_value.exp();
                cfg.v = v;
            }
            Setting::LossVsV { u } => {
                cfg.u = u;
                cfg.v = grid_value;
            }
            Setting::LossVsKinput { u, v } => {
                cfg.u = u;
                cfg.v = v;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub grid_value: f64,
    pub rep: usize,
    pub seed: u64,
    pub loss: Option<f64>,
    pub iterations: Option<usize>,
    pub k_input: Option<usize>,
    pub k_hat: Option<usize>,
    pub error: Option<String>,
    pub runtime_ms: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub grid_value: f64,
    pub reps: usize,
    pub failed: usize,
    pub mean_loss: Option<f64>,
    /// Sample standard deviation; absent with fewer than two losses.
    pub sd_loss: Option<f64>,
}

struct Outcome {
    loss: f64,
    iterations: usize,
}

fn run_one(spec: &BenchSpec, grid_value: f64, seed: u64, k_input: &mut Option<usize>, k_hat: &mut Option<usize>) -> Result<Outcome> {
    let cfg = spec.sim_config(grid_value, seed);
    let truth = generate(&cfg)?;
    let mut source = RandomSource::new(seed ^ FIT_STREAM);
    if spec.estimate_k {
        *k_hat = Some(estimate_k(&truth.dataset, spec.neighbors, spec.resolution, &mut source)?);
    }
    let k = match spec.setting {
        Setting::LossVsKinput { .. } => grid_value as usize,
        _ => k_hat.unwrap_or(cfg.k),
    };
    *k_input = Some(k);
    let strategy: InitStrategy = spec.init.parse().map_err(anyhow::Error::msg)?;
    let init = initialize(&truth.dataset, k, strategy, &mut source)?;
    let fc = FitConfig {
        max_iter: spec.max_iter,
        ..FitConfig::new(k)
    };
    let r = fit(&truth.dataset, &init.assignment, &fc)?;
    let loss = correction_loss(&r.labels, &r.params.beta, &truth.truth_labels, &truth.truth_params.beta)?;
    Ok(Outcome {
        loss,
        iterations: r.iterations,
    })
}

/// Runs every grid value and replicate; failures are recorded per row.
/// Rows come back in grid-major order regardless of scheduling.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    let grid = spec.validate()?;
    let jobs: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|&g| (0..spec.reps).map(move |r| (g, r)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(grid_value, rep)| {
            let seed = spec.base_seed.wrapping_add(rep as u64);
            let start = Instant::now();
            let (mut k_input, mut k_hat) = (None, None);
            let outcome = run_one(spec, grid_value, seed, &mut k_input, &mut k_hat);
            let runtime_ms = start.elapsed().as_millis();
            let (loss, iterations, error) = match outcome {
                Ok(o) => (Some(o.loss), Some(o.iterations), None),
                Err(e) => (None, None, Some(format!("{e:#}"))),
            };
            BenchRow {
                grid_value,
                rep,
                seed,
                loss,
                iterations,
                k_input,
                k_hat,
                error,
                runtime_ms,
            }
        })
        .collect())
}

pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut groups: Vec<(f64, Vec<&BenchRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(g, _)| g.to_bits() == r.grid_value.to_bits()) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.grid_value, vec![r])),
        }
    }
    for (grid_value, group) in groups {
        let losses: Vec<f64> = group.iter().filter_map(|r| r.loss).collect();
        let n = losses.len();
        let mean = (n > 0).then(|| losses.iter().sum::<f64>() / n as f64);
        let sd = mean.filter(|_| n > 1).map(|m| {
            (losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        out.push(SummaryRow {
            grid_value,
            reps: group.len(),
            failed: group.len() - n,
            mean_loss: mean,
            sd_loss: sd,
        });
    }
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows(path: &Path, spec: &BenchSpec, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "setting", "variant", "grid_value", "rep", "seed", "loss", "log_loss", "iterations", "k_input", "k_hat", "error",
    ])?;
    let (setting, variant) = (spec.setting.to_string(), spec.variant.to_string());
    for r in rows {
        w.write_record([
            setting.clone(),
            variant.clone(),
            r.grid_value.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            opt(r.loss),
            opt(r.loss.map(f64::ln)),
            opt(r.iterations),
            opt(r.k_input),
            opt(r.k_hat),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, spec: &BenchSpec, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["setting", "variant", "grid_value", "reps", "failed", "mean_loss", "sd_loss", "log_mean_loss"])?;
    let (setting, variant) = (spec.setting.to_string(), spec.variant.to_string());
    for s in summary {
        w.write_record([
            setting.clone(),
            variant.clone(),
            s.grid_value.to_string(),
            s.reps.to_string(),
            s.failed.to_string(),
            opt(s.mean_loss),
            opt(s.sd_loss),
            opt(s.mean_loss.map(f64::ln)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_runtime(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["grid_value", "rep", "runtime_ms"])?;
    for r in rows {
        w.write_record([r.grid_value.to_string(), r.rep.to_string(), r.runtime_ms.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct BenchArgs {
    pub spec: PathBuf,
    /// Overrides the spec's base seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct BenchOutputs {
    pub rows: PathBuf,
    pub summary: PathBuf,
    pub runtime: PathBuf,
    pub manifest: PathBuf,
}

/// Sibling of `out` with its extension replaced by `ext`.
fn sibling(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

/// Writes the per-replicate CSV at `out`, plus `.summary.csv`,
/// `.runtime.csv` (wall-clock only) and `.manifest.json` siblings.
pub fn cmd_bench(args: &BenchArgs) -> Result<BenchOutputs> {
    let bytes = fs::read(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let mut spec: BenchSpec =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing bench spec {}", args.spec.display()))?;
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    let rows = run_bench(&spec).with_context(|| format!("invalid bench spec {}", args.spec.display()))?;
    let summary = summarize(&rows);

    let outputs = BenchOutputs {
        rows: args.out.clone(),
        summary: sibling(&args.out, "summary.csv"),
        runtime: sibling(&args.out, "runtime.csv"),
        manifest: sibling(&args.out, "manifest.json"),
    };
    ensure_parent(&outputs.rows)?;
    write_rows(&outputs.rows, &spec, &rows)?;
    write_summary(&outputs.summary, &spec, &summary)?;
    write_runtime(&outputs.runtime, &rows)?;

    let mut manifest = Manifest::new("bench", spec.base_seed, serde_json::to_value(&spec)?).input_bytes("spec", &bytes);
    manifest.output("rows", &outputs.rows)?;
    manifest.output("summary", &outputs.summary)?;
    manifest.write(&outputs.manifest)?;
    Ok(outputs)
}
