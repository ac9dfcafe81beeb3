#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use hjhom::corrector::{solve_branch, SolverOptions};
use hjhom::effective::{
    aggregate_profiles, build_curve, build_glue, flat_piece_certificate, sandwich_check, theta_of_lambda, CurveOptions,
    GlueOptions,
};
use hjhom::env::{generate_env, verify_hill, EnvConfig};
use hjhom::experiment::{apply_override, compare_dir, load_config, run_experiment};
use hjhom::gclass::{check_quasiconvex, check_strict_monotone, reduce, validate_class, Branch, NonlinearityConfig, Reduction};
use hjhom::pde::{estimate_slope, run, SchemeConfig};
use hjhom::{io, Nonlinearity, Sample};

#[derive(Parser)]
#[command(name = "hjhom", version, about = "Homogenization experiments for viscous Hamilton-Jacobi equations in 1d")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// JSON config file plus dotted overrides, applied in order.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `path.to.key=value`; the value is read as JSON, or as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an environment sample and write it as CSV + JSON header.
    EnvGen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "env-kind")]
        kind: Option<String>,
        /// Generator parameter, e.g. `v_amp=0.5`.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [0.0, 1.0])]
        domain: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        dx: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Look for a hill witness; writes it (or the failure) as JSON.
    EnvHill {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        y: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a nonlinearity against the class bounds on a grid.
    GValidate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the corrector ODE on one or both branches.
    CorrectorSolve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// plus, minus or both.
        #[arg(long)]
        branch: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the effective curve over the given environments.
    EffectiveCurve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "env", required = true)]
        envs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference scheme from affine data.
    PdeRun {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        env: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the glued supersolution at lambda = beta and check its bound.
    GlueCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the report of a finished experiment directory.
    Compare {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run a whole experiment from one config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Domain(String),
}

type Outcome = Result<bool, Failure>;

fn domain<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Domain(e.to_string())
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn load<T: DeserializeOwned>(cfg: &ConfigArgs, extra: &[String]) -> Result<T, Failure> {
    let mut doc = match &cfg.config {
        Some(p) => io::read_json::<Value>(p).map_err(usage)?,
        None => json!({}),
    };
    for s in cfg.sets.iter().chain(extra) {
        apply_override(&mut doc, s).map_err(usage)?;
    }
    serde_json::from_value(doc).map_err(|e| Failure::Usage(format!("invalid config: {e}")))
}

fn set(key: &str, v: impl Serialize) -> String {
    format!("{key}={}", serde_json::to_string(&v).expect("plain values serialize"))
}

fn read_env(path: &Path) -> Result<Sample, Failure> {
    io::read_env(path).map_err(domain)
}

fn reduced(cfg: &NonlinearityConfig) -> Result<Reduction<f64>, Failure> {
    let g = Nonlinearity::from_config(cfg).map_err(domain)?;
    reduce(&g).map_err(domain)
}

fn report(path: Option<&Path>, value: &Value) -> Result<(), Failure> {
    match path {
        Some(p) => io::write_json(p, value).map_err(domain),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("json"));
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn env_gen(
    cfg: &ConfigArgs,
    kind: Option<String>,
    params: &[String],
    kappa: Option<f64>,
    beta: Option<f64>,
    seed: u64,
    domain_: &[f64],
    dx: f64,
    out: &Path,
) -> Outcome {
    let mut extra: Vec<String> = Vec::new();
    if let Some(k) = kind {
        extra.push(set("kind", k));
    }
    extra.extend(params.iter().cloned());
    if let Some(k) = kappa {
        extra.push(set("kappa", k));
    }
    if let Some(b) = beta {
        extra.push(set("beta", b));
    }
    let config: EnvConfig = load(cfg, &extra)?;
    let sample: Sample = generate_env(&config, seed, (domain_[0], domain_[1]), dx).map_err(domain)?;
    io::write_env(out, &sample).map_err(domain)?;
    println!("wrote {} points to {}", sample.len(), out.display());
    Ok(true)
}

fn env_hill(env: &Path, h: f64, y: f64, out: &Path) -> Outcome {
    if !(h > 0.0 && h < 1.0) || !(y > 0.0) {
        return Err(Failure::Domain(format!("need 0 < h < 1 and y > 0, got h = {h}, y = {y}")));
    }
    let sample = read_env(env)?;
    let (ok, doc) = match verify_hill(&sample, h, y) {
        Ok(w) => {
            println!("hill witness [{}, {}] with delta = {}", w.ell1, w.ell2, w.delta);
            (true, json!({ "satisfied": true, "witness": w }))
        }
        Err(f) => {
            eprintln!("no hill witness at h = {h}, y = {y}: {f:?}");
            (false, json!({ "satisfied": false, "failure": f }))
        }
    };
    io::write_json(out, &doc).map_err(domain)?;
    Ok(ok)
}

#[derive(Deserialize)]
struct GValidateConfig {
    nonlinearity: NonlinearityConfig,
    #[serde(default = "default_grid_max")]
    grid_max: f64,
    #[serde(default = "default_grid_points")]
    grid_points: usize,
}

fn default_grid_max() -> f64 {
    10.0
}

fn default_grid_points() -> usize {
    201
}

fn g_validate(cfg: &ConfigArgs, out: Option<&Path>) -> Outcome {
    let c: GValidateConfig = load(cfg, &[])?;
    if c.grid_points < 2 || !(c.grid_max > 0.0) {
        return Err(Failure::Usage("grid_points must be at least 2 and grid_max positive".into()));
    }
    let g = Nonlinearity::from_config(&c.nonlinearity).map_err(domain)?;
    let n = c.grid_points - 1;
    let grid: Vec<f64> = (0..=n).map(|i| -c.grid_max + 2.0 * c.grid_max * i as f64 / n as f64).collect();
    let class = validate_class(&g, g.alpha0(), g.alpha1(), g.gamma(), &grid);
    let quasi = check_quasiconvex(&g, &grid);
    let monotone = g.eta().map(|eta| check_strict_monotone(&g, eta, &grid));
    let worst: serde_json::Map<String, Value> = class
        .worst_cases()
        .iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let passed = class.passed() && quasi.quasiconvex && monotone.is_none_or(|m| m.is_ok());
    let doc = json!({
        "passed": passed,
        "in_class": class.passed(),
        "in_sqc": g.in_sqc(),
        "normalized": g.is_normalized(),
        "alpha0": g.alpha0(),
        "alpha1": g.alpha1(),
        "gamma": g.gamma(),
        "eta": g.eta(),
        "grid": [-c.grid_max, c.grid_max, c.grid_points],
        "worst_cases": worst,
        "quasiconvex": quasi,
        "strict_monotone": monotone.map(|m| match m {
            Ok(()) => json!({ "holds": true }),
            Err((b, p1, p2)) => json!({ "holds": false, "branch": b.as_str(), "p1": p1, "p2": p2 }),
        }),
    });
    report(out, &doc)?;
    Ok(passed)
}

#[derive(Deserialize)]
struct CorrectorConfig {
    nonlinearity: NonlinearityConfig,
    /// Level of the normalized nonlinearity.
    lambda: f64,
    /// Defaults to the value in the sample header.
    beta: Option<f64>,
    #[serde(default = "default_branch")]
    branch: String,
    #[serde(default)]
    solver: SolverOptions,
}

fn default_branch() -> String {
    "both".into()
}

fn branches(name: &str) -> Result<Vec<Branch>, Failure> {
    match name {
        "plus" => Ok(vec![Branch::Plus]),
        "minus" => Ok(vec![Branch::Minus]),
        "both" => Ok(vec![Branch::Minus, Branch::Plus]),
        other => Err(Failure::Usage(format!("branch must be plus, minus or both, got `{other}`"))),
    }
}

/// `out` itself for one branch, `<stem>_<branch>.<ext>` beside it for both.
fn branch_path(out: &Path, branch: Branch, both: bool) -> PathBuf {
    if !both {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_{}.{ext}", branch.as_str()))
}

fn corrector_solve(
    cfg: &ConfigArgs,
    env: &Path,
    lambda: Option<f64>,
    beta: Option<f64>,
    branch: Option<String>,
    out: &Path,
) -> Outcome {
    let mut extra = Vec::new();
    if let Some(l) = lambda {
        extra.push(set("lambda", l));
    }
    if let Some(b) = beta {
        extra.push(set("beta", b));
    }
    if let Some(b) = branch {
        extra.push(set("branch", b));
    }
    let c: CorrectorConfig = load(cfg, &extra)?;
    let which = branches(&c.branch)?;
    let sample = read_env(env)?;
    let beta = c.beta.unwrap_or(sample.beta());
    let g = reduced(&c.nonlinearity)?.normalized;
    for &b in &which {
        let profile = solve_branch(&sample, &g, beta, c.lambda, b, &c.solver)
            .map_err(|e| Failure::Domain(format!("{} branch: {e}", b.as_str())))?;
        let path = branch_path(out, b, which.len() > 1);
        io::write_profile(&path, &profile, &sample).map_err(domain)?;
        let theta = theta_of_lambda(&profile).map_err(domain)?;
        println!("{} branch: theta = {theta}, written to {}", b.as_str(), path.display());
    }
    Ok(true)
}

#[derive(Deserialize)]
struct CurveConfig {
    nonlinearity: NonlinearityConfig,
    beta: Option<f64>,
    /// Levels of the normalized nonlinearity, starting at beta.
    lambdas: Vec<f64>,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default)]
    curve: CurveOptions,
    #[serde(default = "default_sandwich_tol")]
    sandwich_tol: f64,
}

fn default_sandwich_tol() -> f64 {
    1e-3
}

fn effective_curve(cfg: &ConfigArgs, envs: &[PathBuf], out: &Path) -> Outcome {
    let c: CurveConfig = load(cfg, &[])?;
    let samples = envs.iter().map(|p| read_env(p)).collect::<Result<Vec<_>, _>>()?;
    let beta = c.beta.unwrap_or(samples[0].beta());
    let red = reduced(&c.nonlinearity)?;
    let g = &red.normalized;
    let mut thetas = Vec::new();
    for &lambda in &c.lambdas {
        let pairs = samples
            .iter()
            .map(|s| {
                Ok((
                    solve_branch(s, g, beta, lambda, Branch::Minus, &c.solver)?,
                    solve_branch(s, g, beta, lambda, Branch::Plus, &c.solver)?,
                ))
            })
            .collect::<Result<Vec<_>, hjhom::corrector::CorrectorError>>()
            .map_err(domain)?;
        thetas.push(aggregate_profiles(lambda, &pairs).map_err(domain)?);
    }
    let curve = build_curve(thetas, beta, red.relabeling, &c.curve).map_err(domain)?;
    let sandwich = g.eta().map(|eta| sandwich_check(&curve, eta, g, c.sandwich_tol));
    let settings = json!({
        "solver": c.solver,
        "environments": envs,
        "sandwich": sandwich,
    });
    io::write_curve(out, &curve, settings).map_err(domain)?;
    println!("flat piece [{}, {}] at level {beta}", curve.flat.0, curve.flat.1);
    if let Some(s) = &sandwich {
        println!("sandwich check: {}", if s.passed { "passed" } else { "failed" });
    }
    Ok(sandwich.is_none_or(|s| s.passed))
}

#[derive(Deserialize)]
struct PdeConfig {
    nonlinearity: NonlinearityConfig,
    beta: Option<f64>,
    /// Slope in the coordinates of the configured nonlinearity.
    theta: f64,
    #[serde(default)]
    scheme: SchemeConfig,
    #[serde(default = "default_tail")]
    tail_fraction: f64,
}

fn default_tail() -> f64 {
    0.5
}

fn pde_run(cfg: &ConfigArgs, env: &Path, theta: Option<f64>, out: &Path) -> Outcome {
    let extra: Vec<String> = theta.map(|t| set("theta", t)).into_iter().collect();
    let c: PdeConfig = load(cfg, &extra)?;
    let sample = read_env(env)?;
    let beta = c.beta.unwrap_or(sample.beta());
    let red = reduced(&c.nonlinearity)?;
    let rl = red.relabeling;
    let trace = run(&sample, &red.normalized, beta, rl.theta_to_normalized(c.theta), &c.scheme).map_err(domain)?;
    let mut est = estimate_slope(&trace, c.tail_fraction).map_err(domain)?;
    for v in [&mut est.h_lower, &mut est.fitted, &mut est.h_upper] {
        *v = rl.level_to_original(*v);
    }
    io::write_trace(out, &trace, json!({ "theta_original": c.theta, "slope": est })).map_err(domain)?;
    println!("H({}) ~ {} in [{}, {}]", c.theta, est.fitted, est.h_lower, est.h_upper);
    Ok(true)
}

#[derive(Deserialize)]
struct GlueConfig {
    nonlinearity: NonlinearityConfig,
    beta: Option<f64>,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_y0")]
    y0: f64,
    #[serde(default)]
    glue: GlueOptions,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default = "default_glue_tol")]
    tol: f64,
    /// When set, the scheme is run at this slope (original coordinates)
    /// and its slope is checked against `[beta, beta + K epsilon]`.
    theta: Option<f64>,
    #[serde(default)]
    scheme: SchemeConfig,
    #[serde(default = "default_tail")]
    tail_fraction: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_y0() -> f64 {
    2.0
}

fn default_glue_tol() -> f64 {
    1e-3
}

fn glue_check(cfg: &ConfigArgs, env: &Path, out: &Path) -> Outcome {
    let c: GlueConfig = load(cfg, &[])?;
    let sample = read_env(env)?;
    let beta = c.beta.unwrap_or(sample.beta());
    let red = reduced(&c.nonlinearity)?;
    let g = &red.normalized;
    let minus = solve_branch(&sample, g, beta, beta, Branch::Minus, &c.solver).map_err(domain)?;
    let plus = solve_branch(&sample, g, beta, beta, Branch::Plus, &c.solver).map_err(domain)?;
    let glue = build_glue(&sample, g, beta, c.epsilon, c.y0, &minus, &plus, &c.glue).map_err(domain)?;
    let bound_ok = glue.satisfies_bound(c.tol);
    println!(
        "max residual {} against K epsilon = {} ({})",
        glue.max_residual,
        glue.k * glue.epsilon,
        if bound_ok { "ok" } else { "exceeded" }
    );
    let certificate = match c.theta {
        Some(theta) => {
            let flat = (theta_of_lambda(&minus).map_err(domain)?, theta_of_lambda(&plus).map_err(domain)?);
            let theta = red.relabeling.theta_to_normalized(theta);
            let cert = flat_piece_certificate(&glue, &sample, g, flat, theta, &c.scheme, c.tail_fraction, c.tol)
                .map_err(domain)?;
            println!("flat-piece slope {} in [{}, {}]: {}", cert.fitted, cert.beta, cert.upper_bound, cert.passed);
            Some(cert)
        }
        None => None,
    };
    let passed = bound_ok && certificate.as_ref().is_none_or(|c| c.passed);
    io::write_json(out, &json!({ "passed": passed, "glue": glue, "certificate": certificate })).map_err(domain)?;
    Ok(passed)
}

fn compare(dir: &Path, tol: Option<f64>) -> Outcome {
    let report = compare_dir(dir, tol).map_err(domain)?;
    println!(
        "max gap {} (tolerance {}): {}",
        report.summary.max_gap,
        report.summary.tolerance,
        if report.passed { "passed" } else { "failed" }
    );
    Ok(report.passed)
}

fn run_cmd(config: &Path, sets: &[String], output_dir: Option<PathBuf>) -> Outcome {
    let mut sets = sets.to_vec();
    if let Some(d) = output_dir {
        sets.push(set("output_dir", d));
    }
    let cfg = load_config(config, &sets).map_err(usage)?;
    let report = run_experiment(&cfg).map_err(domain)?;
    for r in &report.rows {
        println!(
            "theta {:>10.4}  corrector {:>10.6}  scheme {:>10.6}  gap {:.2e}  {}",
            r.theta,
            r.h_corrector,
            r.h_pde_fitted,
            r.abs_gap,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(report.passed)
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::EnvGen {
            cfg,
            kind,
            params,
            kappa,
            beta,
            seed,
            domain,
            dx,
            out,
        } => env_gen(&cfg, kind, &params, kappa, beta, seed, &domain, dx, &out),
        Command::EnvHill { env, h, y, out } => env_hill(&env, h, y, &out),
        Command::GValidate { cfg, out } => g_validate(&cfg, out.as_deref()),
        Command::CorrectorSolve {
            cfg,
            env,
            lambda,
            beta,
            branch,
            out,
        } => corrector_solve(&cfg, &env, lambda, beta, branch, &out),
        Command::EffectiveCurve { cfg, envs, out } => effective_curve(&cfg, &envs, &out),
        Command::PdeRun { cfg, env, theta, out } => pde_run(&cfg, &env, theta, &out),
        Command::GlueCheck { cfg, env, out } => glue_check(&cfg, &env, &out),
        Command::Compare { dir, tol } => compare(&dir, tol),
        Command::Run {
            config,
            sets,
            output_dir,
        } => run_cmd(&config, &sets, output_dir),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}
