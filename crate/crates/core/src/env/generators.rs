use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvironmentSample, GeneratorId, Period};
use crate::scalar::Real;

/// Generator configuration. `kappa` is the Lipschitz constant every
/// generated sample must respect; `beta` scales the potential in the
/// equations and is carried along as metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(flatten)]
    pub kind: EnvKind,
    pub kappa: f64,
    #[serde(default)]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvKind {
    Constant {
        a0: f64,
        v0: f64,
    },
    /// `sqrt(a) = a_sqrt_mean + a_sqrt_amp sin(2 pi x / a_period)` and
    /// `V = v_mean + v_amp sin(2 pi x / v_period)`, optionally clipped
    /// to `[0, 1]` (which creates plateaus at the extremes).
    Sinusoidal {
        #[serde(default)]
        a_sqrt_mean: f64,
        #[serde(default)]
        a_sqrt_amp: f64,
        #[serde(default = "one")]
        a_period: f64,
        v_mean: f64,
        v_amp: f64,
        #[serde(default = "one")]
        v_period: f64,
        #[serde(default)]
        v_clip: bool,
    },
    /// Each field is the maximum of tent bumps centred at the points of
    /// an independent Poisson process. `a` vanishes exactly where no
    /// centre lies within half a bump width.
    PoissonBumps {
        a_intensity: f64,
        a_width: f64,
        #[serde(default = "one")]
        a_height: f64,
        v_intensity: f64,
        v_width: f64,
        #[serde(default = "one")]
        v_height: f64,
    },
    /// Random trigonometric polynomials of period `period`, clipped to
    /// `[0, 1]`. Amplitudes are drawn from a normal law and rescaled so
    /// that their absolute sum is `a_sqrt_amp` (resp. `v_amp`).
    RandomFourier {
        period: f64,
        modes: usize,
        a_sqrt_mean: f64,
        a_sqrt_amp: f64,
        v_mean: f64,
        v_amp: f64,
    },
    /// `a = 0` exactly on the listed intervals (repeated with `repeat`
    /// when given), `sqrt(a) = min(a_sqrt_max, ramp_slope * dist)`
    /// elsewhere; `V` is sinusoidal.
    PiecewiseDegenerate {
        zero_intervals: Vec<[f64; 2]>,
        #[serde(default)]
        repeat: Option<f64>,
        ramp_slope: f64,
        #[serde(default = "one")]
        a_sqrt_max: f64,
        v_mean: f64,
        v_amp: f64,
        #[serde(default = "one")]
        v_period: f64,
    },
}

impl EnvKind {
    pub fn id(&self) -> GeneratorId {
        match self {
            EnvKind::Constant { .. } => GeneratorId::Constant,
            EnvKind::Sinusoidal { .. } => GeneratorId::Sinusoidal,
            EnvKind::PoissonBumps { .. } => GeneratorId::PoissonBumps,
            EnvKind::RandomFourier { .. } => GeneratorId::RandomFourier,
            EnvKind::PiecewiseDegenerate { .. } => GeneratorId::PiecewiseDegenerate,
        }
    }
}

fn param(msg: String) -> EnvError {
    EnvError::Parameter(msg)
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), EnvError> {
    if cond {
        Ok(())
    } else {
        Err(param(msg()))
    }
}

fn lipschitz_ok(name: &str, lip: f64, kappa: f64) -> Result<(), EnvError> {
    require(lip <= kappa * (1.0 + 1e-12), || {
        format!("{name} has Lipschitz constant {lip} exceeding kappa = {kappa}")
    })
}

fn range_ok(name: &str, lo: f64, hi: f64) -> Result<(), EnvError> {
    require(lo >= 0.0 && hi <= 1.0, || {
        format!("{name} ranges over [{lo}, {hi}], outside [0, 1]")
    })
}

/// `Some(k)` if `x` is within rounding of the positive integer `k`.
fn as_whole(x: f64) -> Option<usize> {
    let k = x.round();
    (k >= 1.0 && (x - k).abs() <= 1e-9 * k).then_some(k as usize)
}

/// Common period of two periodic components (either may be absent).
fn common_period(p: Option<f64>, q: Option<f64>) -> Option<f64> {
    match (p, q) {
        (None, None) => None,
        (Some(p), None) | (None, Some(p)) => Some(p),
        (Some(p), Some(q)) => {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            as_whole(hi / lo).map(|_| hi)
        }
    }
}

enum Periodicity {
    Aperiodic,
    /// Constant fields: periodic with any period, one grid step suffices.
    Any,
    Length(f64),
}

struct Fields {
    a: Box<dyn Fn(f64) -> f64>,
    v: Box<dyn Fn(f64) -> f64>,
    period: Periodicity,
}

/// Draws a sample of `config` on `[domain.0, domain.1]` with spacing `dx`.
/// Identical arguments give bit-identical samples.
pub fn generate_env<T: Real>(
    config: &EnvConfig,
    seed: u64,
    domain: (f64, f64),
    dx: f64,
) -> Result<EnvironmentSample<T>, EnvError> {
    let (lo, hi) = domain;
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(EnvError::Grid(format!("dx must be positive, got {dx}")));
    }
    if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(EnvError::Grid(format!("empty domain [{lo}, {hi}]")));
    }
    require(config.kappa > 0.0, || format!("kappa must be positive, got {}", config.kappa))?;
    require(config.beta >= 0.0, || format!("beta must be non-negative, got {}", config.beta))?;

    let steps = (hi - lo) / dx;
    let n = match as_whole(steps) {
        Some(k) => k + 1,
        None => steps.floor() as usize + 1,
    };
    let fields = build_fields(&config.kind, config.kappa, seed, (lo, hi))?;

    // Periodic fields are evaluated on one period and tiled, so that values
    // one period apart agree bit for bit.
    let period = match fields.period {
        Periodicity::Aperiodic => None,
        Periodicity::Any => Some((dx, 1)),
        Periodicity::Length(p) => as_whole(p / dx).map(|m| (p, m)),
    }
    .filter(|&(_, m)| m <= n);
    let eval_len = period.map_or(n, |(_, m)| m);
    let x_at = |i: usize| lo + i as f64 * dx;
    let base_a: Vec<f64> = (0..eval_len).map(|i| (fields.a)(x_at(i))).collect();
    let base_v: Vec<f64> = (0..eval_len).map(|i| (fields.v)(x_at(i))).collect();
    let a: Vec<T> = (0..n).map(|i| T::of(base_a[i % eval_len])).collect();
    let v: Vec<T> = (0..n).map(|i| T::of(base_v[i % eval_len])).collect();

    EnvironmentSample::new(
        T::of(lo),
        T::of(dx),
        a,
        v,
        T::of(config.kappa),
        T::of(config.beta),
        seed,
        config.kind.id(),
        period.map(|(p, m)| Period {
            length: T::of(p),
            points: m,
        }),
    )
}

fn build_fields(kind: &EnvKind, kappa: f64, seed: u64, (lo, hi): (f64, f64)) -> Result<Fields, EnvError> {
    use std::f64::consts::TAU;
    match *kind {
        EnvKind::Constant { a0, v0 } => {
            range_ok("a", a0, a0)?;
            range_ok("v", v0, v0)?;
            Ok(Fields {
                a: Box::new(move |_| a0),
                v: Box::new(move |_| v0),
                period: Periodicity::Any,
            })
        }
        EnvKind::Sinusoidal {
            a_sqrt_mean,
            a_sqrt_amp,
            a_period,
            v_mean,
            v_amp,
            v_period,
            v_clip,
        } => {
            require(a_period > 0.0 && v_period > 0.0, || "periods must be positive".into())?;
            range_ok("sqrt(a)", a_sqrt_mean - a_sqrt_amp.abs(), a_sqrt_mean + a_sqrt_amp.abs())?;
            if !v_clip {
                range_ok("v", v_mean - v_amp.abs(), v_mean + v_amp.abs())?;
            }
            lipschitz_ok("sqrt(a)", a_sqrt_amp.abs() * TAU / a_period, kappa)?;
            lipschitz_ok("v", v_amp.abs() * TAU / v_period, kappa)?;
            let period = common_period(
                (a_sqrt_amp != 0.0).then_some(a_period),
                (v_amp != 0.0).then_some(v_period),
            );
            Ok(Fields {
                a: Box::new(move |x| {
                    let s = a_sqrt_mean + a_sqrt_amp * (TAU * x / a_period).sin();
                    s * s
                }),
                v: Box::new(move |x| {
                    let v = v_mean + v_amp * (TAU * x / v_period).sin();
                    if v_clip {
                        v.clamp(0.0, 1.0)
                    } else {
                        v
                    }
                }),
                period: match period {
                    Some(p) => Periodicity::Length(p),
                    None if a_sqrt_amp == 0.0 && v_amp == 0.0 => Periodicity::Any,
                    None => Periodicity::Aperiodic,
                },
            })
        }
        EnvKind::PoissonBumps {
            a_intensity,
            a_width,
            a_height,
            v_intensity,
            v_width,
            v_height,
        } => {
            require(a_intensity >= 0.0 && v_intensity >= 0.0, || "intensities must be non-negative".into())?;
            require(a_width > 0.0 && v_width > 0.0, || "bump widths must be positive".into())?;
            range_ok("a_height", a_height, a_height)?;
            range_ok("v_height", v_height, v_height)?;
            lipschitz_ok("sqrt(a)", 2.0 * a_height / a_width, kappa)?;
            lipschitz_ok("v", 2.0 * v_height / v_width, kappa)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a_centres = poisson_points(&mut rng, a_intensity, lo - a_width, hi + a_width)?;
            let v_centres = poisson_points(&mut rng, v_intensity, lo - v_width, hi + v_width)?;
            Ok(Fields {
                a: Box::new(move |x| {
                    let s = tent_max(&a_centres, x, a_width, a_height);
                    s * s
                }),
                v: Box::new(move |x| tent_max(&v_centres, x, v_width, v_height)),
                period: Periodicity::Aperiodic,
            })
        }
        EnvKind::RandomFourier {
            period,
            modes,
            a_sqrt_mean,
            a_sqrt_amp,
            v_mean,
            v_amp,
        } => {
            require(period > 0.0, || "period must be positive".into())?;
            require(modes >= 1, || "at least one mode is required".into())?;
            range_ok("a_sqrt_mean", a_sqrt_mean, a_sqrt_mean)?;
            range_ok("v_mean", v_mean, v_mean)?;
            require(a_sqrt_amp >= 0.0 && v_amp >= 0.0, || "amplitudes must be non-negative".into())?;
            // sum_k |A_k| 2 pi k / P <= amp * 2 pi * modes / P
            let worst = TAU * modes as f64 / period;
            lipschitz_ok("sqrt(a)", a_sqrt_amp * worst, kappa)?;
            lipschitz_ok("v", v_amp * worst, kappa)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a_series = fourier_series(&mut rng, modes, a_sqrt_amp);
            let v_series = fourier_series(&mut rng, modes, v_amp);
            Ok(Fields {
                a: Box::new(move |x| {
                    let s = (a_sqrt_mean + eval_series(&a_series, x, period)).clamp(0.0, 1.0);
                    s * s
                }),
                v: Box::new(move |x| (v_mean + eval_series(&v_series, x, period)).clamp(0.0, 1.0)),
                period: Periodicity::Length(period),
            })
        }
        EnvKind::PiecewiseDegenerate {
            ref zero_intervals,
            repeat,
            ramp_slope,
            a_sqrt_max,
            v_mean,
            v_amp,
            v_period,
        } => {
            require(zero_intervals.iter().all(|iv| iv[0] <= iv[1]), || {
                "zero intervals must satisfy left <= right".into()
            })?;
            require(ramp_slope > 0.0, || "ramp_slope must be positive".into())?;
            require(v_period > 0.0, || "v_period must be positive".into())?;
            if let Some(r) = repeat {
                require(r > 0.0, || "repeat must be positive".into())?;
            }
            range_ok("a_sqrt_max", a_sqrt_max, a_sqrt_max)?;
            range_ok("v", v_mean - v_amp.abs(), v_mean + v_amp.abs())?;
            lipschitz_ok("sqrt(a)", ramp_slope, kappa)?;
            lipschitz_ok("v", v_amp.abs() * TAU / v_period, kappa)?;
            let intervals = zero_intervals.clone();
            let period = repeat.and_then(|r| common_period(Some(r), (v_amp != 0.0).then_some(v_period)).filter(|&p| p == r));
            Ok(Fields {
                a: Box::new(move |x| {
                    let d = distance_to_set(&intervals, repeat, x);
                    let s = (ramp_slope * d).min(a_sqrt_max);
                    s * s
                }),
                v: Box::new(move |x| v_mean + v_amp * (TAU * x / v_period).sin()),
                period: period.map_or(Periodicity::Aperiodic, Periodicity::Length),
            })
        }
    }
}

fn poisson_points(rng: &mut ChaCha8Rng, intensity: f64, lo: f64, hi: f64) -> Result<Vec<f64>, EnvError> {
    let mean = intensity * (hi - lo);
    if mean <= 0.0 {
        return Ok(Vec::new());
    }
    let count: f64 = Poisson::new(mean)
        .map_err(|e| param(format!("Poisson intensity: {e}")))?
        .sample(rng);
    let mut pts: Vec<f64> = (0..count as usize).map(|_| rng.random_range(lo..hi)).collect();
    pts.sort_by(f64::total_cmp);
    Ok(pts)
}

/// Maximum over sorted `centres` of `height * max(0, 1 - |x - c| / (width / 2))`.
fn tent_max(centres: &[f64], x: f64, width: f64, height: f64) -> f64 {
    let half = 0.5 * width;
    let start = centres.partition_point(|&c| c <= x - half);
    centres[start..]
        .iter()
        .take_while(|&&c| c < x + half)
        .map(|&c| height * (1.0 - (x - c).abs() / half).max(0.0))
        .fold(0.0, f64::max)
}

/// `(amplitude, phase)` per mode with `sum |amplitude| = total`.
fn fourier_series(rng: &mut ChaCha8Rng, modes: usize, total: f64) -> Vec<(f64, f64)> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let raw: Vec<(f64, f64)> = (0..modes)
        .map(|_| (normal.sample(rng), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let norm: f64 = raw.iter().map(|(a, _)| a.abs()).sum();
    if norm == 0.0 || total == 0.0 {
        return raw.into_iter().map(|(_, p)| (0.0, p)).collect();
    }
    raw.into_iter().map(|(a, p)| (a * total / norm, p)).collect()
}

fn eval_series(series: &[(f64, f64)], x: f64, period: f64) -> f64 {
    series
        .iter()
        .enumerate()
        .map(|(k, &(amp, phase))| amp * (std::f64::consts::TAU * (k + 1) as f64 * x / period + phase).cos())
        .sum()
}

fn distance_to_set(intervals: &[[f64; 2]], repeat: Option<f64>, x: f64) -> f64 {
    let dist = |l: f64, r: f64| (l - x).max(x - r).max(0.0);
    intervals
        .iter()
        .map(|&[l, r]| match repeat {
            None => dist(l, r),
            Some(p) => {
                let k = ((x - 0.5 * (l + r)) / p).round();
                [-1.0, 0.0, 1.0]
                    .iter()
                    .map(|&j| dist(l + (k + j) * p, r + (k + j) * p))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_v() -> EnvConfig {
        EnvConfig {
            kind: EnvKind::Sinusoidal {
                a_sqrt_mean: 0.0,
                a_sqrt_amp: 0.0,
                a_period: 1.0,
                v_mean: 0.5,
                v_amp: 0.5,
                v_period: 1.0,
                v_clip: false,
            },
            kappa: std::f64::consts::PI,
            beta: 1.0,
        }
    }

    #[test]
    fn constant_fields() {
        let cfg = EnvConfig {
            kind: EnvKind::Constant { a0: 0.5, v0: 1.0 },
            kappa: 1.0,
            beta: 0.0,
        };
        let s = generate_env::<f64>(&cfg, 1, (0.0, 2.0), 0.1).unwrap();
        assert_eq!(s.len(), 21);
        assert!(s.a().iter().all(|&a| a == 0.5));
        assert!(s.v().iter().all(|&v| v == 1.0));
        assert_eq!(s.period().unwrap().points, 1);
    }

    #[test]
    fn sinusoidal_potential_spans_unit_interval() {
        let s = generate_env::<f64>(&sine_v(), 0, (0.0, 3.0), 0.01).unwrap();
        let max = s.v().iter().copied().fold(0.0, f64::max);
        let min = s.v().iter().copied().fold(1.0, f64::min);
        assert!((max - 1.0).abs() < 1e-12 && min.abs() < 1e-12);
        assert!(s.a().iter().all(|&a| a == 0.0));
        let p = s.period().unwrap();
        assert_eq!(p.points, 100);
        for i in 100..s.len() {
            assert_eq!(s.v()[i], s.v()[i - 100]);
        }
    }

    #[test]
    fn kappa_below_derivative_bound_is_rejected() {
        let mut cfg = sine_v();
        cfg.kappa = 3.0;
        let err = generate_env::<f64>(&cfg, 0, (0.0, 1.0), 0.01).unwrap_err();
        assert!(err.to_string().contains("Lipschitz"), "{err}");
    }

    #[test]
    fn out_of_range_potential_is_rejected_unless_clipped() {
        let mut cfg = sine_v();
        if let EnvKind::Sinusoidal { ref mut v_mean, .. } = cfg.kind {
            *v_mean = 0.7;
        }
        assert!(generate_env::<f64>(&cfg, 0, (0.0, 1.0), 0.01).unwrap_err().to_string().contains("outside [0, 1]"));
        if let EnvKind::Sinusoidal { ref mut v_clip, .. } = cfg.kind {
            *v_clip = true;
        }
        let s = generate_env::<f64>(&cfg, 0, (0.0, 1.0), 0.01).unwrap();
        assert!(s.v().iter().filter(|&&v| v == 1.0).count() > 10);
    }

    #[test]
    fn same_seed_same_sample() {
        let cfg = EnvConfig {
            kind: EnvKind::PoissonBumps {
                a_intensity: 1.0,
                a_width: 1.0,
                a_height: 0.5,
                v_intensity: 0.5,
                v_width: 2.0,
                v_height: 1.0,
            },
            kappa: 1.0,
            beta: 1.0,
        };
        let s1 = generate_env::<f64>(&cfg, 42, (-5.0, 5.0), 0.01).unwrap();
        let s2 = generate_env::<f64>(&cfg, 42, (-5.0, 5.0), 0.01).unwrap();
        let s3 = generate_env::<f64>(&cfg, 43, (-5.0, 5.0), 0.01).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(s1.a(), s3.a());
        assert!(s1.a().contains(&0.0));
    }

    #[test]
    fn degenerate_intervals_are_exact_zeros() {
        let cfg = EnvConfig {
            kind: EnvKind::PiecewiseDegenerate {
                zero_intervals: vec![[0.0, 1.0]],
                repeat: None,
                ramp_slope: 1.0,
                a_sqrt_max: 1.0,
                v_mean: 0.5,
                v_amp: 0.1,
                v_period: 1.0,
            },
            kappa: 1.0,
            beta: 1.0,
        };
        let s = generate_env::<f64>(&cfg, 0, (-2.0, 3.0), 0.01).unwrap();
        for i in 0..s.len() {
            let x = s.x(i);
            if (0.0..=1.0).contains(&x) {
                assert_eq!(s.a()[i], 0.0, "x = {x}");
            } else if !(-0.015..=1.015).contains(&x) {
                assert!(s.a()[i] > 0.0, "x = {x}");
            }
        }
    }

    #[test]
    fn random_fourier_is_periodic_and_valid() {
        let cfg = EnvConfig {
            kind: EnvKind::RandomFourier {
                period: 2.0,
                modes: 4,
                a_sqrt_mean: 0.6,
                a_sqrt_amp: 0.05,
                v_mean: 0.5,
                v_amp: 0.05,
            },
            kappa: 1.0,
            beta: 1.0,
        };
        let s = generate_env::<f64>(&cfg, 7, (0.0, 6.0), 0.01).unwrap();
        assert_eq!(s.period().unwrap().points, 200);
    }

    #[test]
    fn invalid_grid_is_rejected() {
        assert!(generate_env::<f64>(&sine_v(), 0, (0.0, 1.0), 0.0).is_err());
        assert!(generate_env::<f64>(&sine_v(), 0, (1.0, 0.0), 0.1).is_err());
    }
}
