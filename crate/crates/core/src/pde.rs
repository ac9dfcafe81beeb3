//! Explicit monotone finite differences for `u_t = a u_xx + G(u_x) + beta V`
//! with affine initial data `theta x`, and long-time slope estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvironmentSample, Period};
use crate::gclass::{branch_inverse, Branch, ClassError, NonlinearitySpec};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid scheme configuration: {0}")]
    Config(String),
    #[error("cfl must lie in (0, 1], got {0}")]
    Cfl(f64),
    #[error("domain half-width {half_width} is below the required {required} (speed bound times T_final plus margin)")]
    DomainTooSmall { half_width: f64, required: f64 },
    #[error("periodic-perturbation mode needs a periodic sample covering a whole period")]
    NotPeriodic,
    #[error("the tail holds {0} samples; at least 10 are needed")]
    TailTooShort(usize),
    #[error("eps = {0} is not a power of two (pass allow_non_dyadic to run anyway)")]
    NonDyadic(f64),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NumericalHamiltonian {
    /// `max(G(max(p+, p*)), G(min(p-, p*)))` for quasiconvex `G` minimized at `p*`.
    /// The equation reads `u_t = +G(u_x)`, so the upwind side is mirrored
    /// with respect to the usual `u_t + H(u_x) = 0` form.
    #[default]
    GodunovQuasiconvex,
    /// `G((p- + p+)/2) + L (p+ - p-) / 2`.
    LaxFriedrichs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Evolve `u - theta x` on one period with wraparound.
    #[default]
    PeriodicPerturbation,
    /// Evolve `u` on the whole window; ghost nodes carry slope `theta` past the ends.
    LargeDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub dx: f64,
    pub cfl: f64,
    pub hamiltonian: NumericalHamiltonian,
    pub boundary: BoundaryMode,
    pub t_final: f64,
    pub record_times: Vec<f64>,
    /// Number of `u(t, 0)` samples kept over the run.
    pub center_samples: usize,
    /// Widening of the a-priori gradient range used for `L_G`.
    pub gradient_safety: f64,
    /// Extra half-width required in large-domain mode.
    pub margin: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dx: 0.01,
            cfl: 0.9,
            hamiltonian: NumericalHamiltonian::GodunovQuasiconvex,
            boundary: BoundaryMode::PeriodicPerturbation,
            t_final: 50.0,
            record_times: Vec::new(),
            center_samples: 2000,
            gradient_safety: 1.5,
            margin: 1.0,
        }
    }
}

pub fn numerical_hamiltonian<T: Real>(
    kind: NumericalHamiltonian,
    g: &NonlinearitySpec<T>,
    p_minus: T,
    p_plus: T,
    lipschitz: T,
) -> T {
    match kind {
        NumericalHamiltonian::GodunovQuasiconvex => {
            let p_star = g.p_min();
            g.eval(p_plus.max(p_star)).max(g.eval(p_minus.min(p_star)))
        }
        NumericalHamiltonian::LaxFriedrichs => {
            let half = T::of(0.5);
            g.eval((p_minus + p_plus) * half) + lipschitz * half * (p_plus - p_minus)
        }
    }
}

/// One explicit step at a node, as a pure function of its three inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Stencil<T> {
    pub dx: T,
    pub dt: T,
    pub beta: T,
    /// Added to difference quotients; `theta` when evolving `u - theta x`.
    pub gradient_shift: T,
    pub lipschitz: T,
    pub hamiltonian: NumericalHamiltonian,
}

impl<T: Real> Stencil<T> {
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn update(&self, g: &NonlinearitySpec<T>, a: T, v: T, left: T, center: T, right: T) -> T {
        let p_minus = (center - left) / self.dx + self.gradient_shift;
        let p_plus = (right - center) / self.dx + self.gradient_shift;
        let diffusion = a * (right - T::of(2.0) * center + left) / (self.dx * self.dx);
        let h = numerical_hamiltonian(self.hamiltonian, g, p_minus, p_plus, self.lipschitz);
        center + self.dt * (diffusion + h + self.beta * v)
    }

    /// Whether the update is non-decreasing in each input for diffusion up to `a_max`.
    pub fn is_monotone_for(&self, a_max: T) -> bool {
        self.dt * (T::of(2.0) * a_max / (self.dx * self.dx) + self.lipschitz / self.dx) <= T::one() + T::epsilon()
    }
}

/// `[lo, hi]` containing every gradient the solution can reach: the
/// correctors at a level `<= G(theta) + beta max V`, widened by `safety`.
pub fn gradient_range<T: Real>(
    g: &NonlinearitySpec<T>,
    beta: T,
    v_max: T,
    theta: T,
    safety: T,
) -> Result<(T, T), PdeError> {
    let level = g.eval(theta) + beta * v_max;
    let lo = branch_inverse(g, Branch::Minus, level)?.min(theta);
    let hi = branch_inverse(g, Branch::Plus, level)?.max(theta);
    Ok((lo * safety, hi * safety))
}

/// Time step `cfl / (2 max a / dx^2 + L_G / dx)`.
pub fn time_step<T: Real>(cfl: T, a_max: T, dx: T, lipschitz: T) -> T {
    cfl / (T::of(2.0) * a_max / (dx * dx) + lipschitz / dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TraceMeta<T> {
    pub dx: T,
    pub dt: T,
    pub cfl: T,
    pub steps: u64,
    pub t_final: T,
    pub lipschitz: T,
    pub gradient_range: (T, T),
    /// Extreme one-sided difference quotients met during the run.
    pub observed_gradient: (T, T),
    pub hamiltonian: NumericalHamiltonian,
    pub boundary: BoundaryMode,
    pub seed: u64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Snapshot<T> {
    pub t: T,
    pub x0: T,
    pub dx: T,
    pub u: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SimulationTrace<T> {
    pub theta: T,
    pub beta: T,
    pub times: Vec<T>,
    pub center_values: Vec<T>,
    pub snapshots: Vec<Snapshot<T>>,
    pub meta: TraceMeta<T>,
}

impl<T: Real> SimulationTrace<T> {
    pub fn gradient_confined(&self) -> bool {
        let (lo, hi) = self.meta.gradient_range;
        let (olo, ohi) = self.meta.observed_gradient;
        lo <= olo && ohi <= hi
    }
}

/// Explicit time stepper over a fixed grid.
#[derive(Debug, Clone)]
pub struct Simulator<'g, T> {
    g: &'g NonlinearitySpec<T>,
    a: Vec<T>,
    v: Vec<T>,
    x0: T,
    theta: T,
    stencil: Stencil<T>,
    boundary: BoundaryMode,
    center: usize,
    state: Vec<T>,
    next: Vec<T>,
    steps: u64,
    gradient_range: (T, T),
    observed: (T, T),
}

impl<'g, T: Real> Simulator<'g, T> {
    pub fn new(
        sample: &EnvironmentSample<T>,
        g: &'g NonlinearitySpec<T>,
        beta: T,
        theta: T,
        scheme: &SchemeConfig,
    ) -> Result<Self, PdeError> {
        if !(scheme.cfl > 0.0 && scheme.cfl <= 1.0) {
            return Err(PdeError::Cfl(scheme.cfl));
        }
        if !(scheme.gradient_safety >= 1.0) {
            return Err(PdeError::Config(format!("gradient_safety must be >= 1, got {}", scheme.gradient_safety)));
        }
        if !(beta >= T::zero()) {
            return Err(PdeError::Config(format!("beta must be non-negative, got {beta}")));
        }
        let dx = sample.dx();
        if (dx.as_f64() - scheme.dx).abs() > 1e-12 * scheme.dx {
            return Err(PdeError::Config(format!("scheme dx {} differs from the sample grid {}", scheme.dx, dx)));
        }
        let offset = -sample.x0() / dx;
        if (offset - offset.round()).abs() > T::of(1e-6) {
            return Err(PdeError::Config("x = 0 is not a grid node of the sample lattice".into()));
        }
        let offset = offset.round().to_i64().unwrap_or(i64::MIN);
        let (nodes, center) = match scheme.boundary {
            BoundaryMode::PeriodicPerturbation => {
                let Some(Period { points, .. }) = sample.period() else {
                    return Err(PdeError::NotPeriodic);
                };
                if points < 3 || sample.len() < points {
                    return Err(PdeError::NotPeriodic);
                }
                (points, offset.rem_euclid(points as i64) as usize)
            }
            BoundaryMode::LargeDomain => {
                if offset < 1 || offset as usize >= sample.len().saturating_sub(1) {
                    return Err(PdeError::Config("x = 0 must be an interior node in large-domain mode".into()));
                }
                (sample.len(), offset as usize)
            }
        };
        let a = sample.a()[..nodes].to_vec();
        let v = sample.v()[..nodes].to_vec();
        let a_max = a.iter().copied().fold(T::zero(), T::max);
        let v_max = v.iter().copied().fold(T::zero(), T::max);
        let gradient_range = gradient_range(g, beta, v_max, theta, T::of(scheme.gradient_safety))?;
        let lipschitz = g.lipschitz_on(gradient_range.0.abs().max(gradient_range.1.abs()));
        let dt = time_step(T::of(scheme.cfl), a_max, dx, lipschitz);
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(PdeError::Config(format!("time step {dt} is not positive")));
        }
        let periodic = scheme.boundary == BoundaryMode::PeriodicPerturbation;
        let state: Vec<T> = if periodic {
            vec![T::zero(); nodes]
        } else {
            (0..nodes).map(|i| theta * sample.x(i)).collect()
        };
        Ok(Self {
            g,
            a,
            v,
            x0: sample.x0(),
            theta,
            stencil: Stencil {
                dx,
                dt,
                beta,
                gradient_shift: if periodic { theta } else { T::zero() },
                lipschitz,
                hamiltonian: scheme.hamiltonian,
            },
            boundary: scheme.boundary,
            center,
            next: state.clone(),
            state,
            steps: 0,
            gradient_range,
            observed: (theta, theta),
        })
    }

    pub fn stencil(&self) -> &Stencil<T> {
        &self.stencil
    }
    pub fn dt(&self) -> T {
        self.stencil.dt
    }
    pub fn steps(&self) -> u64 {
        self.steps
    }
    pub fn time(&self) -> T {
        T::of(self.steps as f64) * self.stencil.dt
    }
    pub fn gradient_range(&self) -> (T, T) {
        self.gradient_range
    }
    pub fn observed_gradient(&self) -> (T, T) {
        self.observed
    }

    /// Evolved variable: `u - theta x` in periodic mode, `u` otherwise.
    pub fn state(&self) -> &[T] {
        &self.state
    }

    /// Replaces the evolved variable (comparison tests use other initial data).
    pub fn set_state(&mut self, state: Vec<T>) -> Result<(), PdeError> {
        if state.len() != self.state.len() {
            return Err(PdeError::Config(format!("state has {} nodes, expected {}", state.len(), self.state.len())));
        }
        self.next = state.clone();
        self.state = state;
        Ok(())
    }

    pub fn x(&self, i: usize) -> T {
        self.x0 + T::of_usize(i) * self.stencil.dx
    }

    /// `u(t, 0)`.
    pub fn center_value(&self) -> T {
        self.state[self.center]
    }

    /// The full solution `u` on the evolved nodes.
    pub fn solution(&self) -> Vec<T> {
        match self.boundary {
            BoundaryMode::PeriodicPerturbation => (0..self.state.len())
                .map(|i| self.state[i] + self.theta * self.x(i))
                .collect(),
            BoundaryMode::LargeDomain => self.state.clone(),
        }
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot {
            t: self.time(),
            x0: self.x0,
            dx: self.stencil.dx,
            u: self.solution(),
        }
    }

    pub fn step(&mut self) {
        let n = self.state.len();
        let s = &self.stencil;
        let u = &self.state;
        let (mut lo, mut hi) = self.observed;
        match self.boundary {
            BoundaryMode::PeriodicPerturbation => {
                for i in 0..n {
                    let l = u[if i == 0 { n - 1 } else { i - 1 }];
                    let r = u[if i + 1 == n { 0 } else { i + 1 }];
                    self.next[i] = s.update(self.g, self.a[i], self.v[i], l, u[i], r);
                    let p = (u[i] - l) / s.dx + s.gradient_shift;
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
            BoundaryMode::LargeDomain => {
                // Ghost nodes continue the initial slope past both ends.
                let ghost = self.theta * s.dx;
                for i in 0..n {
                    let l = if i == 0 { u[0] - ghost } else { u[i - 1] };
                    let r = if i + 1 == n { u[n - 1] + ghost } else { u[i + 1] };
                    self.next[i] = s.update(self.g, self.a[i], self.v[i], l, u[i], r);
                    let p = (u[i] - l) / s.dx;
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
        }
        self.observed = (lo, hi);
        std::mem::swap(&mut self.state, &mut self.next);
        self.steps += 1;
    }
}

/// Runs to `T_final`, recording `u(t, 0)` and snapshots at `record_times`.
pub fn run<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    theta: T,
    scheme: &SchemeConfig,
) -> Result<SimulationTrace<T>, PdeError> {
    if !(scheme.t_final > 0.0) {
        return Err(PdeError::Config(format!("T_final must be positive, got {}", scheme.t_final)));
    }
    if scheme.record_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(PdeError::Config("record_times must be sorted".into()));
    }
    let mut sim = Simulator::new(sample, g, beta, theta, scheme)?;
    if scheme.boundary == BoundaryMode::LargeDomain {
        let half_width = (-sample.x0()).min(sample.x_end()).as_f64();
        let required = sim.stencil.lipschitz.as_f64() * scheme.t_final + scheme.margin;
        if half_width <= required {
            return Err(PdeError::DomainTooSmall { half_width, required });
        }
    }
    let t_final = T::of(scheme.t_final);
    let steps = (t_final / sim.dt()).ceil().to_u64().unwrap_or(u64::MAX);
    let stride = (steps / scheme.center_samples.max(1) as u64).max(1);
    let mut times = vec![T::zero()];
    let mut center_values = vec![sim.center_value()];
    let mut snapshots = Vec::new();
    let mut pending = scheme.record_times.iter().map(|&t| T::of(t)).peekable();
    while pending.next_if(|&t| t <= T::zero()).is_some() {
        snapshots.push(sim.snapshot());
    }
    for k in 1..=steps {
        sim.step();
        if k % stride == 0 || k == steps {
            times.push(sim.time());
            center_values.push(sim.center_value());
        }
        while pending.next_if(|&t| t <= sim.time()).is_some() {
            snapshots.push(sim.snapshot());
        }
    }
    Ok(SimulationTrace {
        theta,
        beta,
        times,
        center_values,
        snapshots,
        meta: TraceMeta {
            dx: sim.stencil.dx,
            dt: sim.dt(),
            cfl: T::of(scheme.cfl),
            steps,
            t_final: sim.time(),
            lipschitz: sim.stencil.lipschitz,
            gradient_range: sim.gradient_range,
            observed_gradient: sim.observed,
            hamiltonian: scheme.hamiltonian,
            boundary: scheme.boundary,
            seed: sample.seed(),
            nodes: sim.state.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SlopeEstimate<T> {
    pub h_lower: T,
    pub h_upper: T,
    /// Least squares through the origin: a weighted mean of `u(t,0)/t`.
    pub fitted: T,
    /// Least squares with intercept, `u ~ slope t + c`.
    pub affine_slope: T,
    pub affine_intercept: T,
    /// `2 fitted(T) - fitted(T/2)`, when the half run has a long enough tail.
    pub richardson: Option<T>,
    pub tail_fraction: T,
    pub tail_start: T,
    pub tail_end: T,
    pub tail_samples: usize,
}

impl<T: Real> SlopeEstimate<T> {
    pub fn gap(&self) -> T {
        self.h_upper - self.h_lower
    }
}

struct TailFit<T> {
    lower: T,
    upper: T,
    fitted: T,
    slope: T,
    intercept: T,
    start: T,
    end: T,
    count: usize,
}

fn fit_tail<T: Real>(times: &[T], values: &[T], tail_fraction: T, t_end: T) -> Result<TailFit<T>, PdeError> {
    let start = tail_fraction * t_end;
    let tail: Vec<(T, T)> = times
        .iter()
        .zip(values)
        .filter(|&(&t, _)| t > T::zero() && t >= start && t <= t_end)
        .map(|(&t, &u)| (t, u))
        .collect();
    if tail.len() < 10 {
        return Err(PdeError::TailTooShort(tail.len()));
    }
    let (mut lower, mut upper) = (T::infinity(), T::neg_infinity());
    let (mut stu, mut stt, mut st, mut su) = (T::zero(), T::zero(), T::zero(), T::zero());
    for &(t, u) in &tail {
        let r = u / t;
        lower = lower.min(r);
        upper = upper.max(r);
        stu = stu + t * u;
        stt = stt + t * t;
        st = st + t;
        su = su + u;
    }
    let m = T::of_usize(tail.len());
    // Rounding can push the weighted mean a hair outside [min, max].
    let fitted = (stu / stt).max(lower).min(upper);
    let (tm, um) = (st / m, su / m);
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for &(t, u) in &tail {
        sxy = sxy + (t - tm) * (u - um);
        sxx = sxx + (t - tm) * (t - tm);
    }
    let slope = sxy / sxx;
    Ok(TailFit {
        lower,
        upper,
        fitted,
        slope,
        intercept: um - slope * tm,
        start,
        end: tail.last().map(|p| p.0).unwrap_or(t_end),
        count: tail.len(),
    })
}

pub fn estimate_slope<T: Real>(trace: &SimulationTrace<T>, tail_fraction: T) -> Result<SlopeEstimate<T>, PdeError> {
    if !(tail_fraction > T::zero() && tail_fraction < T::one()) {
        return Err(PdeError::Config(format!("tail_fraction must lie in (0, 1), got {tail_fraction}")));
    }
    let t_end = trace.times.last().copied().unwrap_or(T::zero());
    let full = fit_tail(&trace.times, &trace.center_values, tail_fraction, t_end)?;
    let richardson = fit_tail(&trace.times, &trace.center_values, tail_fraction, t_end * T::of(0.5))
        .ok()
        .map(|half| T::of(2.0) * full.fitted - half.fitted);
    Ok(SlopeEstimate {
        h_lower: full.lower,
        h_upper: full.upper,
        fitted: full.fitted,
        affine_slope: full.slope,
        affine_intercept: full.intercept,
        richardson,
        tail_fraction,
        tail_start: full.start,
        tail_end: full.end,
        tail_samples: full.count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RescaleReport<T> {
    pub eps: T,
    pub steps: u64,
    pub dyadic: bool,
    pub dt: T,
    pub dt_eps: T,
    /// `max |u_eps - eps u| / max(|eps u|, tiny)` over nodes and steps.
    pub max_relative: T,
    pub max_absolute: T,
    pub passed: bool,
}

/// `2^-k` for an integer `k >= 0`.
pub fn is_dyadic<T: Real>(eps: T) -> bool {
    if !(eps > T::zero() && eps <= T::one()) {
        return false;
    }
    let k = (-eps.log2()).round();
    k.to_i32().is_some_and(|k| T::of(2.0).powi(-k) == eps)
}

/// Runs the base problem and its `eps`-scaled version (`a -> eps a(x/eps)`,
/// grid `eps dx`, step `eps dt`) side by side and compares `u_eps` with
/// `eps u` node by node after every step.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_rescale_check<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    theta: T,
    scheme: &SchemeConfig,
    eps: T,
    steps: u64,
    allow_non_dyadic: bool,
) -> Result<RescaleReport<T>, PdeError> {
    let dyadic = is_dyadic(eps);
    if !dyadic && !(allow_non_dyadic && eps > T::zero() && eps <= T::one()) {
        return Err(PdeError::NonDyadic(eps.as_f64()));
    }
    let scaled = scale_sample(sample, eps)?;
    let scaled_scheme = SchemeConfig {
        dx: scheme.dx * eps.as_f64(),
        t_final: scheme.t_final * eps.as_f64(),
        ..scheme.clone()
    };
    let mut base = Simulator::new(sample, g, beta, theta, scheme)?;
    let mut small = Simulator::new(&scaled, g, beta, theta, &scaled_scheme)?;
    let tiny = T::min_positive_value();
    let (mut rel, mut abs) = (T::zero(), T::zero());
    let mut compare = |base: &Simulator<T>, small: &Simulator<T>| {
        for (&u, &w) in base.state().iter().zip(small.state()) {
            let d = (w - eps * u).abs();
            abs = abs.max(d);
            rel = rel.max(d / (eps * u).abs().max(tiny));
        }
    };
    compare(&base, &small);
    for _ in 0..steps {
        base.step();
        small.step();
        compare(&base, &small);
    }
    Ok(RescaleReport {
        eps,
        steps,
        dyadic,
        dt: base.dt(),
        dt_eps: small.dt(),
        max_relative: rel,
        max_absolute: abs,
        passed: rel <= T::of(1e-12),
    })
}

/// `(eps a(x/eps), V(x/eps))` on the grid `eps dx`: same node values, `a`
/// multiplied by `eps`. Lipschitz constants grow like `1/eps`.
fn scale_sample<T: Real>(sample: &EnvironmentSample<T>, eps: T) -> Result<EnvironmentSample<T>, PdeError> {
    let a = sample.a().iter().map(|&a| eps * a).collect();
    Ok(EnvironmentSample::new(
        eps * sample.x0(),
        eps * sample.dx(),
        a,
        sample.v().to_vec(),
        sample.kappa() / eps,
        sample.beta(),
        sample.seed(),
        sample.generator(),
        sample.period().map(|p| Period {
            length: eps * p.length,
            points: p.points,
        }),
    )?)
}
