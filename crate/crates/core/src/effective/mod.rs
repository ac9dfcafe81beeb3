//! Effective Hamiltonian: the maps `lambda -> theta_pm(lambda)` from
//! corrector averages, their inversion into a quasiconvex curve with a flat
//! piece at level `beta`, and the glue supersolution certifying that piece.

mod glue;

pub use glue::{
    build_glue, certify_flat_slope, flat_piece_certificate, FlatPieceCertificate, GlueCandidate, GlueConstruction, GlueError, GlueKind,
    GlueMode, GlueOptions, GlueWindow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrector::{branch_interval, solve_branch, CorrectorError, CorrectorProfile, SolverOptions};
use crate::env::EnvironmentSample;
use crate::gclass::{branch_inverse, Branch, NonlinearitySpec, Relabeling};
use crate::scalar::{trapezoid, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectiveError {
    #[error("retained window has {nodes} nodes, shorter than one period of {period} points")]
    WindowTooShort { nodes: usize, period: usize },
    #[error("retained window is empty: the whole sample is burn-in; use a longer window")]
    EmptyWindow,
    #[error("no theta samples given")]
    NoSamples,
    #[error("lambda samples must be distinct and at least beta; got {0}")]
    BadLevels(String),
    #[error("the lambda = beta sample is missing; the flat interval cannot be located")]
    MissingFlatLevel,
    #[error(
        "theta_{branch} is not monotone between lambda = {lambda1} and {lambda2} ({theta1} -> {theta2}); the monotone sandwich diagnostic is violated"
    )]
    NonMonotone {
        branch: &'static str,
        lambda1: f64,
        lambda2: f64,
        theta1: f64,
        theta2: f64,
    },
    #[error("theta sample at lambda = {lambda} has stderr {stderr} above the threshold {threshold}")]
    Stderr { lambda: f64, stderr: f64, threshold: f64 },
    #[error("theta = {theta} lies outside the sampled range [{lo}, {hi}]; extrapolation refused")]
    OutOfRange { theta: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
}

/// `theta_pm(lambda)` averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ThetaSample<T> {
    pub lambda: T,
    pub theta_minus: T,
    pub theta_plus: T,
    pub stderr_minus: T,
    pub stderr_plus: T,
    /// Mean retained window length per seed.
    pub window_length: T,
    pub seeds: usize,
}

/// Spatial mean of `f` over the retained window; whole periods only for
/// periodic profiles.
pub fn theta_of_lambda<T: Real>(profile: &CorrectorProfile<T>) -> Result<T, EffectiveError> {
    let (mean, _) = mean_and_length(profile)?;
    Ok(mean)
}

fn mean_and_length<T: Real>(profile: &CorrectorProfile<T>) -> Result<(T, T), EffectiveError> {
    let range = match profile.period_points {
        Some(m) => {
            let periods = (profile.len() - 1) / m;
            if periods == 0 {
                return Err(EffectiveError::WindowTooShort {
                    nodes: profile.len(),
                    period: m,
                });
            }
            0..periods * m + 1
        }
        None => profile.retained(),
    };
    if range.len() < 2 {
        return Err(EffectiveError::EmptyWindow);
    }
    let length = profile.dx * T::of_usize(range.len() - 1);
    Ok((trapezoid(&profile.f_values[range], profile.dx) / length, length))
}

fn mean_stderr<T: Real>(xs: &[T]) -> (T, T) {
    let k = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / k;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (k - T::one());
    (mean, (var / k).sqrt())
}

/// Solves both branches at `lambda` on every sample (in parallel, in a
/// schedule-independent order) and averages the two thetas.
pub fn theta_sample<T: Real>(
    samples: &[EnvironmentSample<T>],
    g: &NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    opts: &SolverOptions,
) -> Result<ThetaSample<T>, EffectiveError> {
    if samples.is_empty() {
        return Err(EffectiveError::NoSamples);
    }
    let profiles = samples
        .par_iter()
        .map(|s| -> Result<_, EffectiveError> {
            Ok((
                solve_branch(s, g, beta, lambda, Branch::Minus, opts)?,
                solve_branch(s, g, beta, lambda, Branch::Plus, opts)?,
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_profiles(lambda, &profiles)
}

/// Seed average of `theta_pm` from already solved `(minus, plus)` pairs.
pub fn aggregate_profiles<T: Real>(
    lambda: T,
    pairs: &[(CorrectorProfile<T>, CorrectorProfile<T>)],
) -> Result<ThetaSample<T>, EffectiveError> {
    if pairs.is_empty() {
        return Err(EffectiveError::NoSamples);
    }
    let per_seed = pairs
        .iter()
        .map(|(minus, plus)| -> Result<(T, T, T), EffectiveError> {
            let (tm, lm) = mean_and_length(minus)?;
            let (tp, lp) = mean_and_length(plus)?;
            Ok((tm, tp, (lm + lp) * T::of(0.5)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let minus: Vec<T> = per_seed.iter().map(|r| r.0).collect();
    let plus: Vec<T> = per_seed.iter().map(|r| r.1).collect();
    let (theta_minus, stderr_minus) = mean_stderr(&minus);
    let (theta_plus, stderr_plus) = mean_stderr(&plus);
    let window_length = per_seed.iter().map(|r| r.2).sum::<T>() / T::of_usize(per_seed.len());
    Ok(ThetaSample {
        lambda,
        theta_minus,
        theta_plus,
        stderr_minus,
        stderr_plus,
        window_length,
        seeds: pairs.len(),
    })
}

/// Whether `theta_pm` lies in its branch interval (small slack allowed).
pub fn theta_confined<T: Real>(sample: &ThetaSample<T>, g: &NonlinearitySpec<T>, beta: T, slack: T) -> bool {
    let inside = |branch, theta: T| {
        branch_interval(g, beta, sample.lambda, branch)
            .map(|(lo, hi)| lo - slack <= theta && theta <= hi + slack)
            .unwrap_or(false)
    };
    inside(Branch::Minus, sample.theta_minus) && inside(Branch::Plus, sample.theta_plus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    /// Allowed decrease of `theta_plus` (increase of `theta_minus`) between levels.
    pub monotone_tol: f64,
    pub max_stderr: Option<f64>,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            monotone_tol: 1e-9,
            max_stderr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EffectiveCurve<T> {
    /// Sorted by `lambda`; the first one sits at `lambda = beta`.
    pub samples: Vec<ThetaSample<T>>,
    pub beta: T,
    /// `[theta_minus(beta), theta_plus(beta)]`.
    pub flat: (T, T),
    pub relabeling: Relabeling<T>,
}

/// Sorts and validates the samples and fixes the flat interval from the
/// `lambda = beta` sample.
pub fn build_curve<T: Real>(
    mut samples: Vec<ThetaSample<T>>,
    beta: T,
    relabeling: Relabeling<T>,
    opts: &CurveOptions,
) -> Result<EffectiveCurve<T>, EffectiveError> {
    if samples.is_empty() {
        return Err(EffectiveError::NoSamples);
    }
    if samples.iter().any(|s| !s.lambda.is_finite() || s.lambda < beta) {
        return Err(EffectiveError::BadLevels("a level lies below beta".into()));
    }
    samples.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).expect("finite levels"));
    if samples.windows(2).any(|w| w[1].lambda == w[0].lambda) {
        return Err(EffectiveError::BadLevels("duplicate levels".into()));
    }
    if samples[0].lambda != beta {
        return Err(EffectiveError::MissingFlatLevel);
    }
    if let Some(threshold) = opts.max_stderr {
        for s in &samples {
            let stderr = s.stderr_minus.max(s.stderr_plus).as_f64();
            if stderr > threshold {
                return Err(EffectiveError::Stderr {
                    lambda: s.lambda.as_f64(),
                    stderr,
                    threshold,
                });
            }
        }
    }
    let tol = T::of(opts.monotone_tol);
    for w in samples.windows(2) {
        let violation = |branch, t1: T, t2: T| EffectiveError::NonMonotone {
            branch,
            lambda1: w[0].lambda.as_f64(),
            lambda2: w[1].lambda.as_f64(),
            theta1: t1.as_f64(),
            theta2: t2.as_f64(),
        };
        if w[1].theta_plus < w[0].theta_plus - tol {
            return Err(violation("plus", w[0].theta_plus, w[1].theta_plus));
        }
        if w[1].theta_minus > w[0].theta_minus + tol {
            return Err(violation("minus", w[0].theta_minus, w[1].theta_minus));
        }
    }
    let flat = (samples[0].theta_minus, samples[0].theta_plus);
    Ok(EffectiveCurve {
        samples,
        beta,
        flat,
        relabeling,
    })
}

impl<T: Real> EffectiveCurve<T> {
    /// Sampled theta range `[theta_minus(lambda_max), theta_plus(lambda_max)]`.
    pub fn theta_range(&self) -> (T, T) {
        let last = self.samples.last().expect("non-empty curve");
        (last.theta_minus, last.theta_plus)
    }

    /// `H(theta)` for the normalized nonlinearity: `beta` on the flat
    /// interval, the piecewise-linear inverse of `theta_pm` elsewhere.
    pub fn evaluate(&self, theta: T) -> Result<T, EffectiveError> {
        let (lo, hi) = self.theta_range();
        if !(theta >= lo && theta <= hi) {
            return Err(EffectiveError::OutOfRange {
                theta: theta.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        if theta >= self.flat.0 && theta <= self.flat.1 {
            return Ok(self.beta);
        }
        let key = |s: &ThetaSample<T>| if theta > self.flat.1 { s.theta_plus } else { -s.theta_minus };
        let t = if theta > self.flat.1 { theta } else { -theta };
        // First level whose theta reaches t; the branch keys are non-decreasing.
        let k = self.samples.partition_point(|s| key(s) < t);
        let upper = &self.samples[k];
        if key(upper) == t {
            return Ok(upper.lambda);
        }
        let lower = &self.samples[k - 1];
        let (t0, t1) = (key(lower), key(upper));
        Ok(lower.lambda + (t - t0) / (t1 - t0) * (upper.lambda - lower.lambda))
    }

    /// `H(G)(theta) = H(G_normalized)(theta - p_min) + min G`.
    pub fn evaluate_original(&self, theta: T) -> Result<T, EffectiveError> {
        let h = self.evaluate(self.relabeling.theta_to_normalized(theta))?;
        Ok(self.relabeling.level_to_original(h))
    }

    /// Checks the shape on `grid`: non-increasing up to the flat interval,
    /// equal to `beta` on it, non-decreasing after, with `slack`.
    pub fn shape_check(&self, grid: &[T], slack: T) -> ShapeReport<T> {
        let mut report = ShapeReport {
            points: 0,
            worst_left: T::zero(),
            worst_flat: T::zero(),
            worst_right: T::zero(),
            below_beta: T::zero(),
            passed: true,
        };
        let mut prev: Option<(T, T)> = None;
        for &theta in grid {
            let Ok(h) = self.evaluate(theta) else { continue };
            report.points += 1;
            report.below_beta = report.below_beta.max(self.beta - h);
            if theta >= self.flat.0 && theta <= self.flat.1 {
                report.worst_flat = report.worst_flat.max((h - self.beta).abs());
            }
            if let Some((pt, ph)) = prev {
                if theta <= self.flat.0 {
                    report.worst_left = report.worst_left.max(h - ph);
                } else if pt >= self.flat.1 {
                    report.worst_right = report.worst_right.max(ph - h);
                }
            }
            prev = Some((theta, h));
        }
        report.passed = report.points > 0
            && report.worst_left <= slack
            && report.worst_right <= slack
            && report.worst_flat <= slack
            && report.below_beta <= slack;
        report
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ShapeReport<T> {
    pub points: usize,
    /// Largest increase left of the flat interval.
    pub worst_left: T,
    pub worst_flat: T,
    /// Largest decrease right of the flat interval.
    pub worst_right: T,
    pub below_beta: T,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SandwichRow<T> {
    pub branch: Branch,
    pub lambda1: T,
    pub lambda2: T,
    /// `|theta(lambda2) - theta(lambda1)|`
    pub delta_theta: T,
    /// `(lambda2 - lambda1) / C_R`
    pub lower: T,
    /// `(lambda2 - lambda1) / eta`
    pub upper: T,
    pub c_r: T,
    pub lower_margin: T,
    pub upper_margin: T,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SandwichReport<T> {
    pub eta: T,
    pub tol: T,
    pub rows: Vec<SandwichRow<T>>,
    pub passed: bool,
}

/// `(l2 - l1) / C_R - tol <= |delta theta| <= (l2 - l1) / eta + tol` for
/// consecutive levels on both branches; `C_R` is the Lipschitz constant of
/// `G` on `[-R, R]`, `R = max(-G_-^{-1}(l2), G_+^{-1}(l2))`.
pub fn sandwich_check<T: Real>(curve: &EffectiveCurve<T>, eta: T, g: &NonlinearitySpec<T>, tol: T) -> SandwichReport<T> {
    let mut rows = Vec::new();
    for w in curve.samples.windows(2) {
        let (l1, l2) = (w[0].lambda, w[1].lambda);
        let r = match (branch_inverse(g, Branch::Minus, l2), branch_inverse(g, Branch::Plus, l2)) {
            (Ok(m), Ok(p)) => (-m).max(p),
            _ => T::infinity(),
        };
        let c_r = g.lipschitz_on(r);
        for (branch, d) in [
            (Branch::Minus, w[0].theta_minus - w[1].theta_minus),
            (Branch::Plus, w[1].theta_plus - w[0].theta_plus),
        ] {
            let lower = (l2 - l1) / c_r;
            let upper = (l2 - l1) / eta;
            let lower_margin = d - (lower - tol);
            let upper_margin = upper + tol - d;
            rows.push(SandwichRow {
                branch,
                lambda1: l1,
                lambda2: l2,
                delta_theta: d,
                lower,
                upper,
                c_r,
                lower_margin,
                upper_margin,
                passed: lower_margin >= T::zero() && upper_margin >= T::zero(),
            });
        }
    }
    let passed = rows.iter().all(|r| r.passed);
    SandwichReport { eta, tol, rows, passed }
}
