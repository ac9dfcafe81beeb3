//! Random environments: seeded grid realizations of the diffusion
//! coefficient `a` and the potential `V`.
//!
//! A sample lives on a finite window `x0, x0 + dx, ..., x0 + (n-1) dx`.
//! Both fields take values in `[0, 1]`; `sqrt(a)` and `V` are
//! `kappa`-Lipschitz, checked on consecutive grid points.

mod generators;
mod hill;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use generators::{generate_env, EnvConfig, EnvKind};
pub use hill::{hill_integral, verify_hill, HillFailure, HillWitness};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("{field}[{index}] = {value} lies outside [0, 1]")]
    Range {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("Lipschitz bound violated for {field} between indices {index} and {next}: jump {jump} > kappa*dx = {bound}", next = .index + 1)]
    Lipschitz {
        field: &'static str,
        index: usize,
        jump: f64,
        bound: f64,
    },
    #[error("periodicity violated at index {index}: values differ from index {index} - {points}")]
    Period { index: usize, points: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid generator parameter: {0}")]
    Parameter(String),
    #[error("translation {offset} is not a multiple of dx = {dx}")]
    Misaligned { offset: f64, dx: f64 },
    #[error("translated window is empty (shift of {shift} points on {len} points)")]
    OutsideWindow { shift: i64, len: usize },
}

/// Which generator produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorId {
    Constant,
    Sinusoidal,
    PoissonBumps,
    RandomFourier,
    PiecewiseDegenerate,
    Custom,
}

impl GeneratorId {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorId::Constant => "constant",
            GeneratorId::Sinusoidal => "sinusoidal",
            GeneratorId::PoissonBumps => "poisson-bumps",
            GeneratorId::RandomFourier => "random-fourier",
            GeneratorId::PiecewiseDegenerate => "piecewise-degenerate",
            GeneratorId::Custom => "custom",
        }
    }
}

/// Period of a periodic sample, in space units and in grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period<T> {
    pub length: T,
    pub points: usize,
}

/// One grid realization of the pair `(a, V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EnvironmentSample<T> {
    x0: T,
    dx: T,
    a: Vec<T>,
    v: Vec<T>,
    kappa: T,
    beta: T,
    seed: u64,
    generator: GeneratorId,
    period: Option<Period<T>>,
}

/// Metadata describing a sample, everything except the two value columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleHeader {
    pub generator_id: GeneratorId,
    pub seed: u64,
    pub kappa: f64,
    pub beta: f64,
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
    pub periodic: bool,
    pub period: Option<f64>,
    pub period_points: Option<usize>,
}

impl<T: Real> EnvironmentSample<T> {
    /// Builds a sample from raw columns and validates every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x0: T,
        dx: T,
        a: Vec<T>,
        v: Vec<T>,
        kappa: T,
        beta: T,
        seed: u64,
        generator: GeneratorId,
        period: Option<Period<T>>,
    ) -> Result<Self, EnvError> {
        let sample = Self {
            x0,
            dx,
            a,
            v,
            kappa,
            beta,
            seed,
            generator,
            period,
        };
        sample.check_invariants()?;
        Ok(sample)
    }

    /// Convenience constructor for hand-made fields (tests, experiments).
    /// `kappa` is taken as the smallest constant the data satisfies.
    pub fn from_values(x0: T, dx: T, a: Vec<T>, v: Vec<T>, beta: T) -> Result<Self, EnvError> {
        let kappa = discrete_lipschitz(&a, &v, dx).max(T::epsilon());
        Self::new(x0, dx, a, v, kappa, beta, 0, GeneratorId::Custom, None)
    }

    pub fn x0(&self) -> T {
        self.x0
    }
    pub fn dx(&self) -> T {
        self.dx
    }
    pub fn len(&self) -> usize {
        self.a.len()
    }
    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
    pub fn a(&self) -> &[T] {
        &self.a
    }
    pub fn v(&self) -> &[T] {
        &self.v
    }
    pub fn kappa(&self) -> T {
        self.kappa
    }
    pub fn beta(&self) -> T {
        self.beta
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn generator(&self) -> GeneratorId {
        self.generator
    }
    pub fn period(&self) -> Option<Period<T>> {
        self.period
    }
    pub fn x(&self, i: usize) -> T {
        self.x0 + T::of_usize(i) * self.dx
    }
    pub fn xs(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }
    /// Right endpoint of the window.
    pub fn x_end(&self) -> T {
        self.x(self.len().saturating_sub(1))
    }

    /// Index of the grid node at `x`, if `x` is a node up to rounding.
    pub fn node_index(&self, x: T) -> Option<usize> {
        let r = (x - self.x0) / self.dx;
        let k = r.round();
        if k < T::zero() || (r - k).abs() > T::of(1e-6) {
            return None;
        }
        let k = k.to_usize()?;
        (k < self.len()).then_some(k)
    }

    pub fn with_beta(mut self, beta: T) -> Self {
        self.beta = beta;
        self
    }

    /// The same environment with `a` replaced by `max(a, floor)`.
    /// `sqrt(max(a, c)) = max(sqrt a, sqrt c)` keeps the Lipschitz bound.
    pub fn regularized(&self, floor: T) -> Self {
        let mut out = self.clone();
        for a in out.a.iter_mut() {
            *a = a.max(floor);
        }
        out
    }

    pub fn header(&self) -> SampleHeader {
        SampleHeader {
            generator_id: self.generator,
            seed: self.seed,
            kappa: self.kappa.as_f64(),
            beta: self.beta.as_f64(),
            x0: self.x0.as_f64(),
            dx: self.dx.as_f64(),
            n: self.len(),
            periodic: self.period.is_some(),
            period: self.period.map(|p| p.length.as_f64()),
            period_points: self.period.map(|p| p.points),
        }
    }

    /// Scans the grid for the range, Lipschitz and periodicity invariants.
    pub fn check_invariants(&self) -> Result<(), EnvError> {
        if !(self.dx > T::zero()) || !self.dx.is_finite() {
            return Err(EnvError::Grid(format!("dx must be positive, got {}", self.dx)));
        }
        if self.a.len() != self.v.len() {
            return Err(EnvError::Grid(format!(
                "column lengths differ: {} vs {}",
                self.a.len(),
                self.v.len()
            )));
        }
        if self.a.is_empty() {
            return Err(EnvError::Grid("empty sample".into()));
        }
        if !(self.kappa > T::zero()) {
            return Err(EnvError::Parameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.beta < T::zero() {
            return Err(EnvError::Parameter(format!("beta must be non-negative, got {}", self.beta)));
        }
        for (field, col) in [("a", &self.a), ("v", &self.v)] {
            for (index, &value) in col.iter().enumerate() {
                if !(value >= T::zero() && value <= T::one()) {
                    return Err(EnvError::Range {
                        field,
                        index,
                        value: value.as_f64(),
                    });
                }
            }
        }
        // Slack covers rounding of the node coordinates and of sqrt.
        let scale = T::one().max(self.x0.abs()).max(self.x_end().abs());
        let bound = self.kappa * self.dx + T::of(64.0) * T::epsilon() * (self.kappa * scale + T::one());
        let sqrt_a: Vec<T> = self.a.iter().map(|a| a.sqrt()).collect();
        for (field, col) in [("sqrt(a)", &sqrt_a), ("v", &self.v)] {
            for (index, w) in col.windows(2).enumerate() {
                let jump = (w[1] - w[0]).abs();
                if jump > bound {
                    return Err(EnvError::Lipschitz {
                        field,
                        index,
                        jump: jump.as_f64(),
                        bound: (self.kappa * self.dx).as_f64(),
                    });
                }
            }
        }
        if let Some(p) = self.period {
            if p.points == 0 || p.points > self.len() {
                return Err(EnvError::Grid(format!(
                    "period of {} points does not fit a window of {} points",
                    p.points,
                    self.len()
                )));
            }
            let implied = T::of_usize(p.points) * self.dx;
            if (implied - p.length).abs() > T::of(1e-9) * p.length.abs().max(T::one()) {
                return Err(EnvError::Grid(format!(
                    "period length {} is not {} grid steps",
                    p.length, p.points
                )));
            }
            for index in p.points..self.len() {
                if self.a[index] != self.a[index - p.points] || self.v[index] != self.v[index - p.points] {
                    return Err(EnvError::Period {
                        index,
                        points: p.points,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Smallest `kappa` compatible with the discrete Lipschitz invariants.
pub fn discrete_lipschitz<T: Real>(a: &[T], v: &[T], dx: T) -> T {
    let mut k = T::zero();
    for w in a.windows(2) {
        k = k.max((w[1].sqrt() - w[0].sqrt()).abs() / dx);
    }
    for w in v.windows(2) {
        k = k.max((w[1] - w[0]).abs() / dx);
    }
    k
}

/// Shift of the environment: the returned sample carries `a(x + z)`,
/// `V(x + z)` on the original coordinates.
///
/// Periodic samples keep their window and wrap indices modulo the period.
/// Other samples keep only the part of the window where the shifted
/// values are known (`x0` moves right when `z < 0`).
pub fn translate<T: Real>(sample: &EnvironmentSample<T>, z: T) -> Result<EnvironmentSample<T>, EnvError> {
    let ratio = z / sample.dx;
    let k = ratio.round();
    if (ratio - k).abs() > T::of(1e-9) * T::one().max(ratio.abs()) {
        return Err(EnvError::Misaligned {
            offset: z.as_f64(),
            dx: sample.dx.as_f64(),
        });
    }
    let shift = k.to_i64().ok_or_else(|| EnvError::Grid("shift overflow".into()))?;
    let n = sample.len();
    let mut out = sample.clone();
    match sample.period {
        Some(p) => {
            let m = p.points as i64;
            let s = shift.rem_euclid(m) as usize;
            // The stored window is a tiling of its first period.
            for i in 0..n {
                let j = (i + s) % p.points;
                out.a[i] = sample.a[j];
                out.v[i] = sample.v[j];
            }
        }
        None => {
            let len = n as i64 - shift.abs();
            if len < 1 {
                return Err(EnvError::OutsideWindow { shift, len: n });
            }
            let len = len as usize;
            if shift >= 0 {
                let s = shift as usize;
                out.a = sample.a[s..s + len].to_vec();
                out.v = sample.v[s..s + len].to_vec();
            } else {
                let s = (-shift) as usize;
                out.x0 = sample.x(s);
                out.a = sample.a[..len].to_vec();
                out.v = sample.v[..len].to_vec();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> EnvironmentSample<f64> {
        let n = 50;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64).powi(2)).collect();
        let v: Vec<f64> = (0..n).map(|i| 0.5 + 0.4 * (0.3 * i as f64).sin()).collect();
        EnvironmentSample::from_values(0.0, 0.1, a, v, 1.0).unwrap()
    }

    #[test]
    fn constructor_rejects_out_of_range_values() {
        let err = EnvironmentSample::new(0.0, 0.1, vec![0.5, 1.2], vec![0.0, 0.0], 10.0, 1.0, 0, GeneratorId::Custom, None)
            .unwrap_err();
        assert!(matches!(err, EnvError::Range { field: "a", index: 1, .. }));
    }

    #[test]
    fn constructor_rejects_steep_potential() {
        let err = EnvironmentSample::new(0.0, 0.1, vec![0.0, 0.0], vec![0.0, 0.5], 1.0, 1.0, 0, GeneratorId::Custom, None)
            .unwrap_err();
        assert!(matches!(err, EnvError::Lipschitz { field: "v", index: 0, .. }));
    }

    #[test]
    fn lipschitz_check_uses_square_root_of_a() {
        // a jumps from 0 to 0.01: sqrt jumps by 0.1 = kappa * dx.
        let ok = EnvironmentSample::new(0.0, 0.1, vec![0.0, 0.01], vec![0.0, 0.0], 1.0, 0.0, 0, GeneratorId::Custom, None);
        assert!(ok.is_ok());
        let bad = EnvironmentSample::new(0.0, 0.1, vec![0.0, 0.04], vec![0.0, 0.0], 1.0, 0.0, 0, GeneratorId::Custom, None);
        assert!(matches!(bad, Err(EnvError::Lipschitz { field: "sqrt(a)", .. })));
    }

    #[test]
    fn zero_shift_is_identity() {
        let s = ramp();
        assert_eq!(translate(&s, 0.0).unwrap(), s);
    }

    #[test]
    fn one_step_shift_reindexes() {
        let s = ramp();
        let t = translate(&s, 0.1).unwrap();
        assert_eq!(t.len(), s.len() - 1);
        assert_eq!(t.x0(), s.x0());
        for i in 0..t.len() {
            assert_eq!(t.a()[i], s.a()[i + 1]);
            assert_eq!(t.v()[i], s.v()[i + 1]);
        }
        let back = translate(&s, -0.1).unwrap();
        assert_eq!(back.a()[0], s.a()[0]);
        assert!((back.x0() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn misaligned_shift_is_rejected() {
        assert!(matches!(translate(&ramp(), 0.05), Err(EnvError::Misaligned { .. })));
    }

    #[test]
    fn shifting_past_the_window_is_rejected() {
        assert!(matches!(translate(&ramp(), 5.0), Err(EnvError::OutsideWindow { .. })));
    }

    #[test]
    fn node_index_finds_grid_points() {
        let s = ramp();
        assert_eq!(s.node_index(0.3), Some(3));
        assert_eq!(s.node_index(0.35), None);
        assert_eq!(s.node_index(-1.0), None);
    }

    #[test]
    fn regularization_keeps_invariants() {
        let s = ramp().regularized(0.25);
        assert!(s.a().iter().all(|&a| a >= 0.25));
        s.check_invariants().unwrap();
    }
}
