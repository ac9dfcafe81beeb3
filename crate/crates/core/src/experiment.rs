//! Declarative experiments: environments over seeds, both routes over the
//! lambda and theta grids, a comparison report and a manifest of every file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corrector::{solve_branch, SolverOptions};
use crate::effective::{aggregate_profiles, build_curve, sandwich_check, CurveOptions, EffectiveCurve, SandwichReport};
use crate::env::{generate_env, verify_hill, EnvConfig, EnvironmentSample};
use crate::gclass::{reduce, Branch, NonlinearityConfig, NonlinearitySpec};
use crate::io::{self, IoError};
use crate::pde::{estimate_slope, run, SchemeConfig, SlopeEstimate};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> ExperimentError {
    move |e| ExperimentError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub solver_tol: f64,
    pub pin_tol: f64,
    pub cross_route_tol: f64,
    pub sandwich_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver_tol: 1e-4,
            pin_tol: 1e-8,
            cross_route_tol: 5e-2,
            sandwich_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillQuery {
    pub h: f64,
    pub y: f64,
}

impl Default for HillQuery {
    fn default() -> Self {
        Self { h: 0.9, y: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    pub domain: (f64, f64),
    pub dx: f64,
    pub nonlinearity: NonlinearityConfig,
    pub beta: f64,
    /// Levels of the normalized nonlinearity (minimum value 0); must start at `beta`.
    pub lambdas: Vec<f64>,
    /// Slopes in the coordinates of the configured nonlinearity.
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub hill: HillQuery,
    /// Worker threads; `None` uses every logical processor.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_tail() -> f64 {
    0.5
}

/// Sets `a.b.c = value` in a JSON document. The value is parsed as JSON
/// when possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ExperimentError::Config(format!("empty path segment in `{key}`")));
        }
        let obj = match cur {
            Value::Object(map) => map,
            Value::Array(items) => {
                let k: usize = part
                    .parse()
                    .map_err(|_| ExperimentError::Config(format!("`{part}` does not index an array in `{key}`")))?;
                let len = items.len();
                let slot = items
                    .get_mut(k)
                    .ok_or_else(|| ExperimentError::Config(format!("index {k} out of range ({len}) in `{key}`")))?;
                if i + 1 == parts.len() {
                    *slot = value;
                    return Ok(());
                }
                cur = slot;
                continue;
            }
            _ => return Err(ExperimentError::Config(format!("`{key}` descends into a scalar"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Reads a JSON config and applies dotted overrides in order.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ExperimentError> {
    let mut doc: Value = io::read_json(path)?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| ExperimentError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if self.lambdas.first() != Some(&self.beta) {
            return bad(format!("the lambda grid must start at beta = {}", self.beta));
        }
        if self.lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("the lambda grid must be strictly increasing".into());
        }
        if (self.scheme.dx - self.dx).abs() > 1e-12 * self.dx {
            return bad(format!("scheme.dx = {} differs from dx = {}", self.scheme.dx, self.dx));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return bad(format!("tail_fraction must lie in (0, 1), got {}", self.tail_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub theta: f64,
    pub h_corrector: f64,
    pub h_pde_fitted: f64,
    pub h_pde_lower: f64,
    pub h_pde_upper: f64,
    pub abs_gap: f64,
    pub passed: bool,
}

impl ComparisonRow {
    /// Gap within `tol` and `h_lower - tol <= H_corrector <= h_upper + tol`.
    pub fn new(theta: f64, h_corrector: f64, slopes: &[SlopeEstimate<f64>], tol: f64) -> Self {
        let k = slopes.len() as f64;
        let fitted = slopes.iter().map(|s| s.fitted).sum::<f64>() / k;
        let lower = slopes.iter().map(|s| s.h_lower).fold(f64::INFINITY, f64::min);
        let upper = slopes.iter().map(|s| s.h_upper).fold(f64::NEG_INFINITY, f64::max);
        let abs_gap = (h_corrector - fitted).abs();
        Self {
            theta,
            h_corrector,
            h_pde_fitted: fitted,
            h_pde_lower: lower,
            h_pde_upper: upper,
            abs_gap,
            passed: abs_gap <= tol && lower - tol <= h_corrector && h_corrector <= upper + tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillSummary {
    pub seed: u64,
    pub h: f64,
    pub y: f64,
    pub satisfied: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub max_gap: f64,
    pub tolerance: f64,
    pub flat: (f64, f64),
    pub sandwich: Option<SandwichReport<f64>>,
    pub hill: Vec<HillSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub summary: ReportSummary,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub theta: f64,
    pub seed: u64,
    pub file: String,
}

/// Index of every artifact of a run, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub complete: bool,
    pub error: Option<String>,
    pub config: String,
    pub environments: Vec<String>,
    pub profiles: Vec<String>,
    pub curve: Option<String>,
    pub traces: Vec<TraceEntry>,
    pub report: Option<String>,
}

pub const MANIFEST: &str = "manifest.json";

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned()
}

/// Runs every stage, persisting as it goes. On failure the manifest is
/// still written, marked incomplete with the failing stage.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ComparisonReport, ExperimentError> {
    config.validate()?;
    let out = &config.output_dir;
    let mut manifest = Manifest {
        config: "config.json".into(),
        ..Default::default()
    };
    io::write_json(&out.join("config.json"), config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let result = pool.install(|| stages(config, &mut manifest));
    match &result {
        Ok(_) => manifest.complete = true,
        Err(e) => manifest.error = Some(e.to_string()),
    }
    io::write_json(&out.join(MANIFEST), &manifest)?;
    result
}

fn stages(config: &ExperimentConfig, manifest: &mut Manifest) -> Result<ComparisonReport, ExperimentError> {
    let out = &config.output_dir;
    let original = NonlinearitySpec::<f64>::from_config(&config.nonlinearity).map_err(stage("nonlinearity"))?;
    let reduction = reduce(&original).map_err(stage("nonlinearity"))?;
    let g = &reduction.normalized;
    let relabeling = reduction.relabeling;
    let beta = config.beta;

    let samples: Vec<EnvironmentSample<f64>> = config
        .seeds
        .par_iter()
        .map(|&seed| generate_env(&config.env, seed, config.domain, config.dx).map(|s| s.with_beta(beta)))
        .collect::<Result<_, _>>()
        .map_err(stage("env"))?;
    for s in &samples {
        let path = out.join(format!("env/seed{}.csv", s.seed()));
        io::write_env(&path, s)?;
        manifest.environments.push(rel(&path, out));
    }

    let opts = SolverOptions {
        solver_tol: config.tolerances.solver_tol,
        pin_tol: config.tolerances.pin_tol,
        ..config.solver
    };
    let jobs: Vec<(usize, usize)> = (0..config.lambdas.len())
        .flat_map(|l| (0..samples.len()).map(move |s| (l, s)))
        .collect();
    let solved = jobs
        .par_iter()
        .map(|&(l, k)| {
            let lambda = config.lambdas[l];
            let s = &samples[k];
            Ok((
                solve_branch(s, g, beta, lambda, Branch::Minus, &opts)?,
                solve_branch(s, g, beta, lambda, Branch::Plus, &opts)?,
            ))
        })
        .collect::<Result<Vec<_>, crate::corrector::CorrectorError>>()
        .map_err(stage("corrector"))?;
    let mut thetas = Vec::new();
    for (l, &lambda) in config.lambdas.iter().enumerate() {
        let pairs = &solved[l * samples.len()..(l + 1) * samples.len()];
        for (k, (minus, plus)) in pairs.iter().enumerate() {
            for p in [minus, plus] {
                let path = out.join(format!("profiles/seed{}_lambda{l}_{}.csv", samples[k].seed(), p.branch.as_str()));
                io::write_profile(&path, p, &samples[k])?;
                manifest.profiles.push(rel(&path, out));
            }
        }
        thetas.push(aggregate_profiles(lambda, pairs).map_err(stage("effective"))?);
    }
    let curve = build_curve(thetas, beta, relabeling, &CurveOptions::default()).map_err(stage("effective"))?;
    let curve_path = out.join("curve/curve.csv");
    io::write_curve(&curve_path, &curve, serde_json::json!({ "solver": opts, "seeds": config.seeds }))?;
    manifest.curve = Some(rel(&curve_path, out));
    let (lo, hi) = curve.theta_range();
    let (lo, hi) = (relabeling.theta_to_original(lo), relabeling.theta_to_original(hi));
    if let Some(t) = config.thetas.iter().find(|&&t| !(lo <= t && t <= hi)) {
        return Err(ExperimentError::Config(format!(
            "theta {t} lies outside [{lo}, {hi}], the range covered by the lambda grid"
        )));
    }

    let runs: Vec<(usize, usize)> = (0..config.thetas.len())
        .flat_map(|t| (0..samples.len()).map(move |s| (t, s)))
        .collect();
    let traces = runs
        .par_iter()
        .map(|&(t, k)| run(&samples[k], g, beta, relabeling.theta_to_normalized(config.thetas[t]), &config.scheme))
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("pde"))?;
    for (&(t, k), trace) in runs.iter().zip(&traces) {
        let path = out.join(format!("traces/seed{}_theta{t}.csv", samples[k].seed()));
        io::write_trace(&path, trace, serde_json::json!({ "seed": samples[k].seed(), "theta_original": config.thetas[t] }))?;
        manifest.traces.push(TraceEntry {
            theta: config.thetas[t],
            seed: samples[k].seed(),
            file: rel(&path, out),
        });
    }

    let hill = samples
        .iter()
        .map(|s| hill_summary(s, config.hill))
        .collect();
    let report = assemble_report(config, &curve, &traces, g, hill)?;
    let path = out.join("report.json");
    io::write_json(&path, &report)?;
    manifest.report = Some(rel(&path, out));
    Ok(report)
}

fn hill_summary(s: &EnvironmentSample<f64>, q: HillQuery) -> HillSummary {
    let (satisfied, detail) = match verify_hill(s, q.h, q.y) {
        Ok(w) => (true, serde_json::to_value(w).unwrap_or(Value::Null)),
        Err(f) => (false, serde_json::to_value(f).unwrap_or(Value::Null)),
    };
    HillSummary {
        seed: s.seed(),
        h: q.h,
        y: q.y,
        satisfied,
        detail,
    }
}

/// Builds the report from the curve and the traces (grouped by theta in
/// config order, seeds in config order).
fn assemble_report(
    config: &ExperimentConfig,
    curve: &EffectiveCurve<f64>,
    traces: &[crate::pde::SimulationTrace<f64>],
    g: &NonlinearitySpec<f64>,
    hill: Vec<HillSummary>,
) -> Result<ComparisonReport, ExperimentError> {
    let tol = config.tolerances.cross_route_tol;
    let per_theta = config.seeds.len();
    let mut rows = Vec::new();
    for (t, &theta) in config.thetas.iter().enumerate() {
        let h = curve.evaluate_original(theta).map_err(stage("compare"))?;
        let slopes = traces[t * per_theta..(t + 1) * per_theta]
            .iter()
            .map(|tr| {
                let mut s = estimate_slope(tr, config.tail_fraction)?;
                for v in [&mut s.h_lower, &mut s.fitted, &mut s.h_upper] {
                    *v = curve.relabeling.level_to_original(*v);
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>, crate::pde::PdeError>>()
            .map_err(stage("compare"))?;
        rows.push(ComparisonRow::new(theta, h, &slopes, tol));
    }
    let sandwich = g.eta().map(|eta| sandwich_check(curve, eta, g, config.tolerances.sandwich_tol));
    let max_gap = rows.iter().map(|r| r.abs_gap).fold(0.0, f64::max);
    let flat = (
        curve.relabeling.theta_to_original(curve.flat.0),
        curve.relabeling.theta_to_original(curve.flat.1),
    );
    Ok(ComparisonReport {
        passed: rows.iter().all(|r| r.passed),
        rows,
        summary: ReportSummary {
            max_gap,
            tolerance: tol,
            flat,
            sandwich,
            hill,
        },
    })
}

/// Recomputes the report of a finished run from the files on disk and
/// writes it to `compare.json`.
pub fn compare_dir(dir: &Path, tol: Option<f64>) -> Result<ComparisonReport, ExperimentError> {
    let manifest: Manifest = io::read_json(&dir.join(MANIFEST))?;
    if !manifest.complete {
        return Err(ExperimentError::Config(format!(
            "experiment in {} is incomplete: {}",
            dir.display(),
            manifest.error.unwrap_or_default()
        )));
    }
    let mut config: ExperimentConfig = io::read_json(&dir.join(&manifest.config))?;
    if let Some(t) = tol {
        config.tolerances.cross_route_tol = t;
    }
    let curve_file = manifest
        .curve
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("manifest lists no curve".into()))?;
    let (curve, _) = io::read_curve(&dir.join(curve_file))?;
    let g = reduce(&NonlinearitySpec::<f64>::from_config(&config.nonlinearity).map_err(stage("nonlinearity"))?)
        .map_err(stage("nonlinearity"))?
        .normalized;
    let mut traces = Vec::new();
    for &theta in &config.thetas {
        for &seed in &config.seeds {
            let entry = manifest
                .traces
                .iter()
                .find(|e| e.theta == theta && e.seed == seed)
                .ok_or_else(|| ExperimentError::Config(format!("no trace for theta {theta}, seed {seed}")))?;
            traces.push(io::read_trace(&dir.join(&entry.file))?);
        }
    }
    let hill = manifest
        .environments
        .iter()
        .map(|f| io::read_env(&dir.join(f)).map(|s| hill_summary(&s, config.hill)))
        .collect::<Result<Vec<_>, _>>()?;
    let report = assemble_report(&config, &curve, &traces, &g, hill)?;
    io::write_json(&dir.join("compare.json"), &report)?;
    Ok(report)
}
