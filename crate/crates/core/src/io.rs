//! File formats. Numbers are written with 17 significant digits so every
//! `f64` reads back bit for bit; JSON sidecars sit next to each CSV with the
//! extension replaced by `.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrector::{CorrectorDiagnostics, CorrectorProfile, SolverOptions};
use crate::effective::{EffectiveCurve, ThetaSample};
use crate::env::{EnvError, EnvironmentSample, Period, SampleHeader};
use crate::gclass::{Branch, Relabeling};
use crate::pde::{SimulationTrace, Snapshot, TraceMeta};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.into(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.into(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.into(),
        source,
    })
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, IoError> {
    serde_json::from_str(&read(path)?).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })
}

/// Cells of a CSV body after its checked header row.
struct Table {
    rows: Vec<Vec<String>>,
    first_line: usize,
}

fn parse_table(path: &Path, text: &str, skip: usize, header: &[&str]) -> Result<Table, IoError> {
    let mut lines = text.lines().enumerate().skip(skip);
    let (hl, head) = lines.next().ok_or_else(|| IoError::Format {
        path: path.into(),
        line: skip + 1,
        msg: "missing column header".into(),
    })?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols != header {
        return Err(IoError::Format {
            path: path.into(),
            line: hl + 1,
            msg: format!("expected columns {}, found {head}", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cells.len() != header.len() {
            return Err(IoError::Format {
                path: path.into(),
                line: i + 1,
                msg: format!("expected {} fields, found {}", header.len(), cells.len()),
            });
        }
        rows.push(cells);
    }
    Ok(Table {
        rows,
        first_line: hl + 2,
    })
}

impl Table {
    fn column<V: std::str::FromStr>(&self, path: &Path, k: usize) -> Result<Vec<V>, IoError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[k].parse().map_err(|_| IoError::Format {
                    path: path.into(),
                    line: self.first_line + i,
                    msg: format!("cannot parse {:?}", r[k]),
                })
            })
            .collect()
    }
}

const ENV_COLUMNS: [&str; 2] = ["a", "v"];

/// `# {header json}` on the first line, then the `a,v` columns.
pub fn env_to_string(sample: &EnvironmentSample<f64>) -> String {
    let header = serde_json::to_string(&sample.header()).expect("header serializes");
    let mut out = format!("# {header}\n{}\n", ENV_COLUMNS.join(","));
    for (a, v) in sample.a().iter().zip(sample.v()) {
        let _ = writeln!(out, "{},{}", fmt_f64(*a), fmt_f64(*v));
    }
    out
}

pub fn env_from_str(path: &Path, text: &str) -> Result<EnvironmentSample<f64>, IoError> {
    let first = text.lines().next().unwrap_or("");
    let json = first.strip_prefix('#').ok_or_else(|| IoError::Format {
        path: path.into(),
        line: 1,
        msg: "missing `# {...}` header line".into(),
    })?;
    let h: SampleHeader = serde_json::from_str(json.trim()).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })?;
    let table = parse_table(path, text, 1, &ENV_COLUMNS)?;
    let a: Vec<f64> = table.column(path, 0)?;
    let v: Vec<f64> = table.column(path, 1)?;
    if a.len() != h.n {
        return Err(IoError::Format {
            path: path.into(),
            line: 1,
            msg: format!("header announces {} points, found {}", h.n, a.len()),
        });
    }
    let period = match (h.periodic, h.period, h.period_points) {
        (true, Some(length), Some(points)) => Some(Period { length, points }),
        (false, _, _) => None,
        _ => {
            return Err(IoError::Format {
                path: path.into(),
                line: 1,
                msg: "periodic header without period and period_points".into(),
            })
        }
    };
    Ok(EnvironmentSample::new(
        h.x0,
        h.dx,
        a,
        v,
        h.kappa,
        h.beta,
        h.seed,
        h.generator_id,
        period,
    )?)
}

pub fn write_env(path: &Path, sample: &EnvironmentSample<f64>) -> Result<(), IoError> {
    write_text(path, &env_to_string(sample))
}

pub fn read_env(path: &Path) -> Result<EnvironmentSample<f64>, IoError> {
    env_from_str(path, &read(path)?)
}

const PROFILE_COLUMNS: [&str; 7] = ["x", "a", "v", "f", "u", "residual", "pinned"];

/// Everything in a profile except the per-node columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSidecar {
    pub branch: Branch,
    pub lambda: f64,
    pub beta: f64,
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
    pub burn_in: std::ops::Range<usize>,
    pub period_points: Option<usize>,
    pub diagnostics: CorrectorDiagnostics<f64>,
    pub settings: SolverOptions,
    pub env_seed: u64,
}

pub fn write_profile(path: &Path, profile: &CorrectorProfile<f64>, sample: &EnvironmentSample<f64>) -> Result<(), IoError> {
    let mut out = format!("{}\n", PROFILE_COLUMNS.join(","));
    for i in 0..profile.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(profile.x(i)),
            fmt_f64(sample.a()[i]),
            fmt_f64(sample.v()[i]),
            fmt_f64(profile.f_values[i]),
            fmt_f64(profile.u_values[i]),
            fmt_f64(profile.residuals[i]),
            u8::from(profile.pinned_mask[i]),
        );
    }
    write_text(path, &out)?;
    write_json(
        &sidecar(path),
        &ProfileSidecar {
            branch: profile.branch,
            lambda: profile.lambda,
            beta: profile.beta,
            x0: profile.x0,
            dx: profile.dx,
            n: profile.len(),
            burn_in: profile.burn_in.clone(),
            period_points: profile.period_points,
            diagnostics: profile.diagnostics.clone(),
            settings: profile.settings,
            env_seed: sample.seed(),
        },
    )
}

pub fn read_profile(path: &Path) -> Result<CorrectorProfile<f64>, IoError> {
    let meta: ProfileSidecar = read_json(&sidecar(path))?;
    let table = parse_table(path, &read(path)?, 0, &PROFILE_COLUMNS)?;
    let pinned: Vec<u8> = table.column(path, 6)?;
    let f_values: Vec<f64> = table.column(path, 3)?;
    if f_values.len() != meta.n {
        return Err(IoError::Format {
            path: path.into(),
            line: 1,
            msg: format!("sidecar announces {} nodes, found {}", meta.n, f_values.len()),
        });
    }
    Ok(CorrectorProfile {
        branch: meta.branch,
        lambda: meta.lambda,
        beta: meta.beta,
        x0: meta.x0,
        dx: meta.dx,
        f_values,
        u_values: table.column(path, 4)?,
        residuals: table.column(path, 5)?,
        pinned_mask: pinned.into_iter().map(|p| p != 0).collect(),
        burn_in: meta.burn_in,
        period_points: meta.period_points,
        diagnostics: meta.diagnostics,
        settings: meta.settings,
    })
}

const CURVE_COLUMNS: [&str; 7] = [
    "lambda",
    "theta_minus",
    "theta_plus",
    "stderr_minus",
    "stderr_plus",
    "window_length",
    "seeds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSidecar {
    pub beta: f64,
    pub flat: (f64, f64),
    pub relabeling: Relabeling<f64>,
    pub settings: serde_json::Value,
}

pub fn write_curve(path: &Path, curve: &EffectiveCurve<f64>, settings: serde_json::Value) -> Result<(), IoError> {
    let mut out = format!("{}\n", CURVE_COLUMNS.join(","));
    for s in &curve.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(s.lambda),
            fmt_f64(s.theta_minus),
            fmt_f64(s.theta_plus),
            fmt_f64(s.stderr_minus),
            fmt_f64(s.stderr_plus),
            fmt_f64(s.window_length),
            s.seeds
        );
    }
    write_text(path, &out)?;
    write_json(
        &sidecar(path),
        &CurveSidecar {
            beta: curve.beta,
            flat: curve.flat,
            relabeling: curve.relabeling,
            settings,
        },
    )
}

pub fn read_curve(path: &Path) -> Result<(EffectiveCurve<f64>, serde_json::Value), IoError> {
    let meta: CurveSidecar = read_json(&sidecar(path))?;
    let table = parse_table(path, &read(path)?, 0, &CURVE_COLUMNS)?;
    let cols: Vec<Vec<f64>> = (0..6).map(|k| table.column(path, k)).collect::<Result<_, _>>()?;
    let seeds: Vec<usize> = table.column(path, 6)?;
    let samples = (0..seeds.len())
        .map(|i| ThetaSample {
            lambda: cols[0][i],
            theta_minus: cols[1][i],
            theta_plus: cols[2][i],
            stderr_minus: cols[3][i],
            stderr_plus: cols[4][i],
            window_length: cols[5][i],
            seeds: seeds[i],
        })
        .collect();
    Ok((
        EffectiveCurve {
            samples,
            beta: meta.beta,
            flat: meta.flat,
            relabeling: meta.relabeling,
        },
        meta.settings,
    ))
}

const TRACE_COLUMNS: [&str; 3] = ["t", "u_center", "slope"];
const SNAPSHOT_COLUMNS: [&str; 2] = ["x", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub x0: f64,
    pub dx: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub theta: f64,
    pub beta: f64,
    pub meta: TraceMeta<f64>,
    pub snapshots: Vec<SnapshotEntry>,
    pub extra: serde_json::Value,
}

fn snapshot_path(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    path.with_file_name(format!("{stem}.snapshot{k}.csv"))
}

/// `slope = u/t`, empty at `t = 0`.
pub fn write_trace(path: &Path, trace: &SimulationTrace<f64>, extra: serde_json::Value) -> Result<(), IoError> {
    let mut out = format!("{}\n", TRACE_COLUMNS.join(","));
    for (&t, &u) in trace.times.iter().zip(&trace.center_values) {
        let slope = if t > 0.0 { fmt_f64(u / t) } else { String::new() };
        let _ = writeln!(out, "{},{},{}", fmt_f64(t), fmt_f64(u), slope);
    }
    write_text(path, &out)?;
    let mut entries = Vec::new();
    for (k, snap) in trace.snapshots.iter().enumerate() {
        let file = snapshot_path(path, k);
        let mut out = format!("{}\n", SNAPSHOT_COLUMNS.join(","));
        for (i, &u) in snap.u.iter().enumerate() {
            let _ = writeln!(out, "{},{}", fmt_f64(snap.x0 + i as f64 * snap.dx), fmt_f64(u));
        }
        write_text(&file, &out)?;
        entries.push(SnapshotEntry {
            t: snap.t,
            x0: snap.x0,
            dx: snap.dx,
            file: file.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        });
    }
    write_json(
        &sidecar(path),
        &TraceSidecar {
            theta: trace.theta,
            beta: trace.beta,
            meta: trace.meta,
            snapshots: entries,
            extra,
        },
    )
}

pub fn read_trace(path: &Path) -> Result<SimulationTrace<f64>, IoError> {
    let meta: TraceSidecar = read_json(&sidecar(path))?;
    let table = parse_table(path, &read(path)?, 0, &TRACE_COLUMNS)?;
    let times = table.column(path, 0)?;
    let center_values = table.column(path, 1)?;
    let mut snapshots = Vec::new();
    for e in &meta.snapshots {
        let file = path.with_file_name(&e.file);
        let t = parse_table(&file, &read(&file)?, 0, &SNAPSHOT_COLUMNS)?;
        snapshots.push(Snapshot {
            t: e.t,
            x0: e.x0,
            dx: e.dx,
            u: t.column(&file, 1)?,
        });
    }
    Ok(SimulationTrace {
        theta: meta.theta,
        beta: meta.beta,
        times,
        center_values,
        snapshots,
        meta: meta.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_branch;
    use crate::effective::{build_curve, theta_sample, CurveOptions};
    use crate::env::{generate_env, EnvConfig};
    use crate::gclass::NonlinearitySpec;
    use crate::pde::{run, SchemeConfig};

    fn sample() -> EnvironmentSample<f64> {
        let cfg: EnvConfig = serde_json::from_value(serde_json::json!({
            "kind": "sinusoidal", "a_sqrt_mean": 0.5, "a_sqrt_amp": 0.3,
            "v_mean": 0.5, "v_amp": 0.5, "kappa": 10.0, "beta": 1.0
        }))
        .unwrap();
        generate_env(&cfg, 7, (0.0, 2.0), 0.02).unwrap()
    }

    #[test]
    fn env_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.csv");
        let s = sample();
        write_env(&path, &s).unwrap();
        assert_eq!(read_env(&path).unwrap(), s);
    }

    #[test]
    fn env_format_errors_name_the_line() {
        let p = Path::new("mem.csv");
        let good = env_to_string(&sample());
        assert!(matches!(env_from_str(p, "a,v\n"), Err(IoError::Format { line: 1, .. })));
        let mut lines: Vec<&str> = good.lines().collect();
        lines[2] = "zz,0.5";
        let bad = lines.join("\n");
        match env_from_str(p, &bad) {
            Err(IoError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short: String = good.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(env_from_str(p, &short), Err(IoError::Format { .. })));
    }

    #[test]
    fn profile_curve_trace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        let g = NonlinearitySpec::power_plus_linear(2.0, 1.0).unwrap();
        let p = solve_branch(&s, &g, 1.0, 1.5, Branch::Plus, &SolverOptions::default()).unwrap();
        let path = dir.path().join("profiles/plus.csv");
        write_profile(&path, &p, &s).unwrap();
        assert_eq!(read_profile(&path).unwrap(), p);

        let opts = SolverOptions::default();
        let samples = [1.0, 1.5]
            .iter()
            .map(|&l| theta_sample(std::slice::from_ref(&s), &g, 1.0, l, &opts).unwrap())
            .collect();
        let curve = build_curve(samples, 1.0, Relabeling::identity(), &CurveOptions::default()).unwrap();
        let path = dir.path().join("curve.csv");
        write_curve(&path, &curve, serde_json::json!({"dx": 0.02})).unwrap();
        let (back, settings) = read_curve(&path).unwrap();
        assert_eq!(back, curve);
        assert_eq!(settings["dx"], 0.02);

        let scheme = SchemeConfig {
            dx: 0.02,
            t_final: 0.5,
            record_times: vec![0.0, 0.25],
            ..Default::default()
        };
        let tr = run(&s, &g, 1.0, 0.3, &scheme).unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &tr, serde_json::Value::Null).unwrap();
        assert_eq!(read_trace(&path).unwrap(), tr);
        assert!(dir.path().join("trace.snapshot1.csv").exists());
    }
}
