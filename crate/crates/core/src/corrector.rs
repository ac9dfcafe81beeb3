//! Branch correctors: the derivative `f = u'` of a solution of
//! `a f' + G(f) + beta V = lambda`, confined to one monotone branch of `G`.
//!
//! Writing `f' = (lambda - beta V - G(f)) / a`, the plus branch attracts
//! forward in `x` and the minus branch backward, so each branch is swept
//! along its stable direction. Where `a <= a_floor` the equation collapses
//! to `G(f) = lambda - beta V` and the solution is pinned there.
//!
//! Steps use a three-stage L-stable SDIRK method (stiffly accurate, third
//! order) on a few substeps per grid cell, with the coefficients
//! interpolated cubically between nodes. Each stage is solved in the form
//! `a_s (f_s - base) = h gamma (lambda - beta V_s - G(f_s))`, which stays
//! well posed as `a_s -> 0`.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvironmentSample;
use crate::gclass::{branch_inverse, Branch, ClassError, NonlinearitySpec};
use crate::scalar::{cumulative_trapezoid, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("branch interval is empty: lambda = {lambda} < beta = {beta}")]
    BelowFlatLevel { lambda: f64, beta: f64 },
    #[error("beta must be non-negative, got {0}")]
    NegativeBeta(f64),
    #[error("G must be normalized (G(0) = 0 = min G); apply gclass::reduce first")]
    NotNormalized,
    #[error("G has no positive monotonicity rate eta; apply gclass::perturb first")]
    NotStrictlyQuasiconvex,
    #[error("a vanishes at x = {x}: infinite contraction, the Gronwall integral diverges")]
    InfiniteContraction { x: f64 },
    #[error("initial values must lie in the branch interval [{lo}, {hi}]")]
    OutsideBranch { lo: f64, hi: f64 },
    #[error("sample needs at least two grid points")]
    TooShort,
    #[error("regularization schedule must be a strictly increasing list of positive integers")]
    Schedule,
    #[error(transparent)]
    Class(#[from] ClassError),
}

/// Starting value at the inflow boundary of a non-periodic sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    #[default]
    Midpoint,
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Nodes with `a <= a_floor` are pinned.
    pub a_floor: f64,
    /// SDIRK substeps per grid cell.
    pub substeps: usize,
    /// The burn-in prefix ends once the Gronwall envelope drops below this.
    pub burn_in_tol: f64,
    pub init: Init,
    /// Bound for centered-difference residuals (a discretization tolerance).
    pub solver_tol: f64,
    pub pin_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            a_floor: 1e-12,
            substeps: 4,
            burn_in_tol: 1e-10,
            init: Init::Midpoint,
            solver_tol: 1e-4,
            pin_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CorrectorDiagnostics<T> {
    /// Over interior, non-pinned, retained nodes.
    pub max_residual: T,
    /// `|G(f) + beta V - lambda|` over pinned nodes.
    pub max_pin_residual: T,
    /// Gap ratio of sweeps started at the two ends of the branch interval
    /// (over one period for periodic samples, over the window otherwise).
    pub contraction_factor: T,
    /// `max(-G_-^{-1}(lambda), G_+^{-1}(lambda))`, a Lipschitz bound for `u`.
    pub lipschitz_bound: T,
    /// Largest estimated overshoot removed by clamping into the branch interval.
    pub max_clamp: T,
    pub branch_lo: T,
    pub branch_hi: T,
    /// Period-map evaluations spent on the periodic fixed point.
    pub periodic_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CorrectorProfile<T> {
    pub branch: Branch,
    pub lambda: T,
    pub beta: T,
    pub x0: T,
    pub dx: T,
    pub f_values: Vec<T>,
    /// Trapezoidal antiderivative of `f`, zero at `x = 0` (or at the first
    /// node when 0 is not a grid point).
    pub u_values: Vec<T>,
    pub residuals: Vec<T>,
    pub pinned_mask: Vec<bool>,
    /// Nodes still carrying memory of the initial value; empty for periodic
    /// samples and once a pinned node resets the sweep.
    pub burn_in: Range<usize>,
    pub period_points: Option<usize>,
    pub diagnostics: CorrectorDiagnostics<T>,
    pub settings: SolverOptions,
}

impl<T: Real> CorrectorProfile<T> {
    pub fn len(&self) -> usize {
        self.f_values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.f_values.is_empty()
    }
    pub fn x(&self, i: usize) -> T {
        self.x0 + T::of_usize(i) * self.dx
    }

    /// Complement of the burn-in range.
    pub fn retained(&self) -> Range<usize> {
        let n = self.len();
        if self.burn_in.is_empty() {
            0..n
        } else if self.burn_in.start == 0 {
            self.burn_in.end..n
        } else {
            0..self.burn_in.start
        }
    }
}

/// Marks nodes where `a <= a_floor`.
pub fn pinned_set<T: Real>(sample: &EnvironmentSample<T>, a_floor: T) -> Vec<bool> {
    sample.a().iter().map(|&a| a <= a_floor).collect()
}

/// `[G_+^{-1}(lambda - beta), G_+^{-1}(lambda)]` or
/// `[G_-^{-1}(lambda), G_-^{-1}(lambda - beta)]`.
pub fn branch_interval<T: Real>(
    g: &NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    branch: Branch,
) -> Result<(T, T), CorrectorError> {
    if !(beta >= T::zero()) {
        return Err(CorrectorError::NegativeBeta(beta.as_f64()));
    }
    if !(lambda >= beta) {
        return Err(CorrectorError::BelowFlatLevel {
            lambda: lambda.as_f64(),
            beta: beta.as_f64(),
        });
    }
    let near = branch_inverse(g, branch, lambda - beta)?;
    let far = branch_inverse(g, branch, lambda)?;
    Ok(match branch {
        Branch::Plus => (near, far),
        Branch::Minus => (far, near),
    })
}

fn check_g<T: Real>(g: &NonlinearitySpec<T>) -> Result<T, CorrectorError> {
    if !g.is_normalized() {
        return Err(CorrectorError::NotNormalized);
    }
    g.eta()
        .filter(|e| *e > T::zero())
        .ok_or(CorrectorError::NotStrictlyQuasiconvex)
}

// Alexander's SDIRK(3): L-stable, stiffly accurate.
const SDIRK_GAMMA: f64 = 0.435_866_521_508_459;

struct Tableau<T> {
    gamma: T,
    a21: T,
    b1: T,
    b2: T,
    c: [T; 3],
}

impl<T: Real> Tableau<T> {
    fn new() -> Self {
        let g = SDIRK_GAMMA;
        let tau = (1.0 + g) / 2.0;
        Self {
            gamma: T::of(g),
            a21: T::of(tau - g),
            b1: T::of(-(6.0 * g * g - 16.0 * g + 1.0) / 4.0),
            b2: T::of((6.0 * g * g - 20.0 * g + 5.0) / 4.0),
            c: [T::of(g), T::of(tau), T::one()],
        }
    }
}

/// Grid fields with periodic wraparound and in-cell interpolation.
struct Field<'a, T> {
    a: &'a [T],
    v: &'a [T],
    period: Option<usize>,
    a_floor: T,
}

impl<T: Real> Field<'_, T> {
    fn node(&self, j: isize) -> Option<(T, T)> {
        let k = match self.period {
            Some(m) => j.rem_euclid(m as isize) as usize,
            None if j >= 0 && (j as usize) < self.a.len() => j as usize,
            None => return None,
        };
        Some((self.a[k], self.v[k]))
    }

    fn pinned(&self, j: isize) -> bool {
        self.node(j).is_some_and(|(a, _)| a <= self.a_floor)
    }

    /// `(a, V)` at position `j + t` with `t` in `[0, 1]`: cubic Lagrange on
    /// four nodes where available, linear otherwise. `a` falls back to
    /// linear next to pinned nodes so zeros of `a` stay zeros.
    fn at(&self, j: isize, t: T) -> (T, T) {
        let (a0, v0) = self.node(j).expect("cell start inside the window");
        let (a1, v1) = self.node(j + 1).expect("cell end inside the window");
        if t == T::zero() {
            return (a0, v0);
        }
        if t == T::one() {
            return (a1, v1);
        }
        let lin = (a0 + t * (a1 - a0), v0 + t * (v1 - v0));
        let (Some((am, vm)), Some((ap, vp))) = (self.node(j - 1), self.node(j + 2)) else {
            return lin;
        };
        let one = T::one();
        let two = T::of(2.0);
        let six = T::of(6.0);
        let wm = -t * (t - one) * (t - two) / six;
        let w0 = (t + one) * (t - one) * (t - two) / two;
        let w1 = -(t + one) * t * (t - two) / two;
        let wp = (t + one) * t * (t - one) / six;
        let v = (wm * vm + w0 * v0 + w1 * v1 + wp * vp).max(T::zero()).min(one);
        let a = if [am, a0, a1, ap].iter().all(|&x| x > self.a_floor) {
            (wm * am + w0 * a0 + w1 * a1 + wp * ap).max(T::zero()).min(one)
        } else {
            lin.0
        };
        (a, v)
    }
}

/// One-branch integrator for fixed `(G, beta, lambda)`.
struct Sweeper<'a, T> {
    field: Field<'a, T>,
    g: &'a NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    branch: Branch,
    lo: T,
    hi: T,
    dx: T,
    substeps: usize,
    tab: Tableau<T>,
}

impl<T: Real> Sweeper<'_, T> {
    fn dir(&self) -> isize {
        match self.branch {
            Branch::Plus => 1,
            Branch::Minus => -1,
        }
    }

    fn pin_value(&self, v: T) -> T {
        let level = (self.lambda - self.beta * v).max(T::zero());
        branch_inverse(self.g, self.branch, level)
            .expect("normalized G with non-negative level")
            .max(self.lo)
            .min(self.hi)
    }

    /// Root of `a_s (f - base) - hg (level - G(f))` in the branch interval.
    /// The map is increasing there for either branch. Returns the root and
    /// the estimated distance clamped away, if any.
    fn stage(&self, a_s: T, v_s: T, base: T, hg: T) -> (T, T) {
        let g = self.g;
        let level = self.lambda - self.beta * v_s;
        let phi = |f: T| a_s * (f - base) - hg * (level - g.eval(f));
        let slope = |f: T| a_s + hg * g.derivative(f, self.branch);
        let (lo, hi) = (self.lo, self.hi);
        let p_lo = phi(lo);
        if p_lo >= T::zero() {
            let d = slope(lo);
            return (lo, if d > T::zero() { p_lo / d } else { T::zero() });
        }
        let p_hi = phi(hi);
        if p_hi <= T::zero() {
            let d = slope(hi);
            return (hi, if d > T::zero() { -p_hi / d } else { T::zero() });
        }
        let (mut l, mut r) = (lo, hi);
        let mut f = base.max(lo).min(hi);
        for _ in 0..200 {
            let p = phi(f);
            if p == T::zero() {
                break;
            }
            if p < T::zero() {
                l = f;
            } else {
                r = f;
            }
            let d = slope(f);
            let mut next = if d > T::zero() { f - p / d } else { T::nan() };
            if !(next > l && next < r) {
                next = (l + r) * T::of(0.5);
            }
            let done = (next - f).abs() <= T::epsilon() * (T::one() + f.abs()) || !(r - l > T::zero());
            f = next;
            if done || next == l || next == r {
                break;
            }
        }
        (f, T::zero())
    }

    /// Advances `f` from node `j` to node `j + dir` (`j` unwrapped).
    fn cell(&self, j: isize, mut f: T, clamp: &mut T) -> T {
        let dir = self.dir();
        let cell = if dir > 0 { j } else { j - 1 };
        let m = T::of_usize(self.substeps);
        let h = self.dx / m * T::of(dir as f64);
        let hg = h * self.tab.gamma;
        let pos = |k: usize, c: T| {
            let s = (T::of_usize(k) + c) / m;
            if dir > 0 {
                s
            } else {
                T::one() - s
            }
        };
        for k in 0..self.substeps {
            let stage = |c: T, base: T, clamp: &mut T| {
                let (a_s, v_s) = self.field.at(cell, pos(k, c));
                let (fs, cl) = self.stage(a_s, v_s, base, hg);
                *clamp = clamp.max(cl.abs());
                (fs, (fs - base) / hg)
            };
            let (_, k1) = stage(self.tab.c[0], f, clamp);
            let (_, k2) = stage(self.tab.c[1], f + h * self.tab.a21 * k1, clamp);
            let (f3, _) = stage(self.tab.c[2], f + h * (self.tab.b1 * k1 + self.tab.b2 * k2), clamp);
            f = f3;
        }
        f
    }

    /// Sweeps `count` cells starting at node `start` with value `f`;
    /// returns values at the `count + 1` visited nodes in visiting order.
    /// Pinned nodes reset the state.
    fn sweep(&self, start: isize, f: T, count: usize, clamp: &mut T) -> Vec<T> {
        let dir = self.dir();
        let mut out = Vec::with_capacity(count + 1);
        let mut cur = if self.field.pinned(start) {
            self.pin_value(self.field.node(start).expect("start node").1)
        } else {
            f
        };
        out.push(cur);
        let mut j = start;
        for _ in 0..count {
            let next = j + dir;
            cur = if self.field.pinned(next) {
                self.pin_value(self.field.node(next).expect("node inside window").1)
            } else {
                self.cell(j, cur, clamp)
            };
            out.push(cur);
            j = next;
        }
        out
    }
}

/// Solves the corrector ODE on one branch over the whole sample.
pub fn solve_branch<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    branch: Branch,
    opts: &SolverOptions,
) -> Result<CorrectorProfile<T>, CorrectorError> {
    let eta = check_g(g)?;
    let (lo, hi) = branch_interval(g, beta, lambda, branch)?;
    let n = sample.len();
    if n < 2 {
        return Err(CorrectorError::TooShort);
    }
    let period = sample.period().map(|p| p.points);
    let sw = Sweeper {
        field: Field {
            a: sample.a(),
            v: sample.v(),
            period,
            a_floor: T::of(opts.a_floor),
        },
        g,
        beta,
        lambda,
        branch,
        lo,
        hi,
        dx: sample.dx(),
        substeps: opts.substeps.max(1),
        tab: Tableau::new(),
    };
    let pinned = pinned_set(sample, T::of(opts.a_floor));
    let mut clamp = T::zero();
    let mut sweeps = 0;
    let (f_values, burn_in, contraction) = match period {
        Some(m) => {
            let (vals, factor, count) = solve_periodic(&sw, m, &pinned, &mut clamp);
            sweeps = count;
            let f: Vec<T> = (0..n).map(|i| vals[i % m]).collect();
            (f, 0..0, factor)
        }
        None => {
            let start = match opts.init {
                Init::Midpoint => (lo + hi) * T::of(0.5),
                Init::Low => lo,
                Init::High => hi,
            };
            let f = sweep_open(&sw, start, &mut clamp);
            let burn = burn_in_range(sample, &pinned, branch, hi - lo, eta, T::of(opts.burn_in_tol));
            let mut scratch = T::zero();
            let f_lo = sweep_open(&sw, lo, &mut scratch);
            let f_hi = sweep_open(&sw, hi, &mut scratch);
            let end = if branch == Branch::Plus { n - 1 } else { 0 };
            let factor = ratio(f_hi[end] - f_lo[end], hi - lo);
            (f, burn, factor)
        }
    };

    let residuals = residuals(sample, g, beta, lambda, &f_values, &pinned);
    let retained = if burn_in.is_empty() {
        0..n
    } else if burn_in.start == 0 {
        burn_in.end..n
    } else {
        0..burn_in.start
    };
    let mut max_residual = T::zero();
    let mut max_pin = T::zero();
    for i in retained {
        if pinned[i] {
            max_pin = max_pin.max(residuals[i]);
        } else if i > 0 && i + 1 < n {
            max_residual = max_residual.max(residuals[i]);
        }
    }
    let lipschitz_bound = (-branch_inverse(g, Branch::Minus, lambda)?).max(branch_inverse(g, Branch::Plus, lambda)?);

    let mut u_values = cumulative_trapezoid(&f_values, sample.dx());
    if let Some(k) = sample.node_index(T::zero()) {
        let anchor = u_values[k];
        for u in u_values.iter_mut() {
            *u = *u - anchor;
        }
        u_values[k] = T::zero();
    }

    Ok(CorrectorProfile {
        branch,
        lambda,
        beta,
        x0: sample.x0(),
        dx: sample.dx(),
        f_values,
        u_values,
        residuals,
        pinned_mask: pinned,
        burn_in,
        period_points: period,
        diagnostics: CorrectorDiagnostics {
            max_residual,
            max_pin_residual: max_pin,
            contraction_factor: contraction,
            lipschitz_bound,
            max_clamp: clamp,
            branch_lo: lo,
            branch_hi: hi,
            periodic_sweeps: sweeps,
        },
        settings: *opts,
    })
}

fn ratio<T: Real>(num: T, den: T) -> T {
    if den > T::zero() {
        (num / den).abs()
    } else {
        T::zero()
    }
}

/// Full-window sweep from the inflow end, returned in index order.
fn sweep_open<T: Real>(sw: &Sweeper<'_, T>, start: T, clamp: &mut T) -> Vec<T> {
    let n = sw.field.a.len();
    match sw.branch {
        Branch::Plus => sw.sweep(0, start, n - 1, clamp),
        Branch::Minus => {
            let mut f = sw.sweep(n as isize - 1, start, n - 1, clamp);
            f.reverse();
            f
        }
    }
}

/// Fixed point of the period map, then one stored sweep over a period.
/// Returns values at period indices `0..m`, the period-map contraction
/// factor and the number of period sweeps spent.
fn solve_periodic<T: Real>(sw: &Sweeper<'_, T>, m: usize, pinned: &[bool], clamp: &mut T) -> (Vec<T>, T, usize) {
    let (lo, hi) = (sw.lo, sw.hi);
    let store = |start: isize, f0: T, clamp: &mut T| {
        let path = sw.sweep(start, f0, m, clamp);
        let mut vals = vec![T::zero(); m];
        let dir = sw.dir();
        for (k, &f) in path.iter().take(m).enumerate() {
            let j = (start + dir * k as isize).rem_euclid(m as isize) as usize;
            vals[j] = f;
        }
        vals
    };
    if let Some(p) = pinned[..m].iter().position(|&b| b) {
        // A pinned node fixes the state; a single sweep from it is exact.
        return (store(p as isize, T::zero(), clamp), T::zero(), 1);
    }
    let start: isize = if sw.dir() > 0 { 0 } else { m as isize };
    let mut scratch = T::zero();
    let map = |f: T, scratch: &mut T| *sw.sweep(start, f, m, scratch).last().expect("non-empty sweep");
    let p_lo = map(lo, &mut scratch);
    let p_hi = map(hi, &mut scratch);
    let factor = ratio(p_hi - p_lo, hi - lo);
    let mut sweeps = 2;
    // g(f) = P(f) - f is decreasing with g(lo) >= 0 >= g(hi): Illinois regula falsi.
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (p_lo - lo, p_hi - hi);
    let mut fixed = if ga <= T::zero() {
        lo
    } else if gb >= T::zero() {
        hi
    } else {
        let mut side = 0i8;
        let mut x = a;
        for _ in 0..200 {
            x = (a * gb - b * ga) / (gb - ga);
            if !(x > a && x < b) {
                x = (a + b) * T::of(0.5);
            }
            let gx = map(x, &mut scratch) - x;
            sweeps += 1;
            if gx.abs() <= T::of(4.0) * T::epsilon() * (T::one() + x.abs()) || !(b - a > T::epsilon() * (T::one() + x.abs())) {
                break;
            }
            if gx > T::zero() {
                a = x;
                ga = gx;
                if side == 1 {
                    gb = gb * T::of(0.5);
                }
                side = 1;
            } else {
                b = x;
                gb = gx;
                if side == -1 {
                    ga = ga * T::of(0.5);
                }
                side = -1;
            }
        }
        x
    };
    fixed = fixed.max(lo).min(hi);
    let s = start.rem_euclid(m as isize);
    (store(s, fixed, clamp), factor, sweeps)
}

/// Nodes before the Gronwall envelope `(hi - lo) exp(-eta int dx/a)` falls
/// below `tol`, counted from the inflow end; cut short by the first pinned node.
fn burn_in_range<T: Real>(
    sample: &EnvironmentSample<T>,
    pinned: &[bool],
    branch: Branch,
    width: T,
    eta: T,
    tol: T,
) -> Range<usize> {
    let n = sample.len();
    if !(width > tol) {
        return 0..0;
    }
    let needed = (width / tol).ln() / eta;
    let order: Vec<usize> = match branch {
        Branch::Plus => (0..n).collect(),
        Branch::Minus => (0..n).rev().collect(),
    };
    let a = sample.a();
    let dx = sample.dx();
    let mut integral = T::zero();
    let mut stop = n;
    for (k, &i) in order.iter().enumerate() {
        if pinned[i] {
            stop = k;
            break;
        }
        if k > 0 {
            let prev = order[k - 1];
            integral = integral + dx * T::of(0.5) * (T::one() / a[prev] + T::one() / a[i]);
        }
        if integral >= needed {
            stop = k;
            break;
        }
    }
    match branch {
        Branch::Plus => 0..stop,
        Branch::Minus => n - stop..n,
    }
}

/// `|a f' + G(f) + beta V - lambda|` per node: centered differences inside
/// smooth stretches, one-sided next to pinned nodes and at the window ends,
/// the algebraic residual at pinned nodes.
pub(crate) fn residuals<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    f: &[T],
    pinned: &[bool],
) -> Vec<T> {
    let n = f.len();
    let dx = sample.dx();
    let (a, v) = (sample.a(), sample.v());
    (0..n)
        .map(|i| {
            let algebraic = g.eval(f[i]) + beta * v[i] - lambda;
            if pinned[i] {
                return algebraic.abs();
            }
            let left = i > 0 && !pinned[i - 1];
            let right = i + 1 < n && !pinned[i + 1];
            let df = match (left, right) {
                (true, true) => (f[i + 1] - f[i - 1]) / (dx * T::of(2.0)),
                (false, true) => (f[i + 1] - f[i]) / dx,
                (true, false) => (f[i] - f[i - 1]) / dx,
                (false, false) => T::zero(),
            };
            (a[i] * df + algebraic).abs()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GronwallTrace<T> {
    pub branch: Branch,
    /// Grid positions in the stable integration order.
    pub x: Vec<T>,
    pub low: Vec<T>,
    pub high: Vec<T>,
    pub gap: Vec<T>,
    /// `(f_high - f_low) exp(-eta int dx/a)` along the same path.
    pub envelope: Vec<T>,
    pub eta: T,
    /// `int dx / a` over the whole path.
    pub integral: T,
}

impl<T: Real> GronwallTrace<T> {
    /// Final gap over initial gap (0 when the seeds coincide).
    pub fn gap_ratio(&self) -> T {
        ratio(*self.gap.last().expect("non-empty trace"), self.gap[0])
    }
    pub fn envelope_ratio(&self) -> T {
        (-self.eta * self.integral).exp()
    }
    /// Whether the measured gap stays below `envelope (1 + slack)` everywhere.
    pub fn within(&self, slack: T) -> bool {
        self.gap
            .iter()
            .zip(&self.envelope)
            .all(|(&g, &e)| g <= e * (T::one() + slack))
    }
}

/// Evolves two solutions seeded at `f_low <= f_high` along the stable
/// direction and compares their gap with the Gronwall envelope.
#[allow(clippy::too_many_arguments)]
pub fn gronwall_gap<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    branch: Branch,
    f_low: T,
    f_high: T,
    opts: &SolverOptions,
) -> Result<GronwallTrace<T>, CorrectorError> {
    let eta = check_g(g)?;
    let (lo, hi) = branch_interval(g, beta, lambda, branch)?;
    if !(lo <= f_low && f_low <= f_high && f_high <= hi) {
        return Err(CorrectorError::OutsideBranch {
            lo: lo.as_f64(),
            hi: hi.as_f64(),
        });
    }
    let n = sample.len();
    if n < 2 {
        return Err(CorrectorError::TooShort);
    }
    if let Some(i) = sample.a().iter().position(|&a| a <= T::of(opts.a_floor)) {
        return Err(CorrectorError::InfiniteContraction {
            x: sample.x(i).as_f64(),
        });
    }
    let sw = Sweeper {
        field: Field {
            a: sample.a(),
            v: sample.v(),
            period: None,
            a_floor: T::of(opts.a_floor),
        },
        g,
        beta,
        lambda,
        branch,
        lo,
        hi,
        dx: sample.dx(),
        substeps: opts.substeps.max(1),
        tab: Tableau::new(),
    };
    let mut scratch = T::zero();
    let start = match branch {
        Branch::Plus => 0,
        Branch::Minus => n as isize - 1,
    };
    let low = sw.sweep(start, f_low, n - 1, &mut scratch);
    let high = sw.sweep(start, f_high, n - 1, &mut scratch);
    let order: Vec<usize> = match branch {
        Branch::Plus => (0..n).collect(),
        Branch::Minus => (0..n).rev().collect(),
    };
    let inv: Vec<T> = order.iter().map(|&i| T::one() / sample.a()[i]).collect();
    let cumulative = cumulative_trapezoid(&inv, sample.dx());
    let gap0 = f_high - f_low;
    Ok(GronwallTrace {
        branch,
        x: order.iter().map(|&i| sample.x(i)).collect(),
        gap: low.iter().zip(&high).map(|(&l, &h)| (h - l).abs()).collect(),
        envelope: cumulative.iter().map(|&c| gap0 * (-eta * c).exp()).collect(),
        low,
        high,
        eta,
        integral: *cumulative.last().expect("non-empty"),
    })
}

/// Increasing list of `n` for the regularization `a_n = max(a, 1/n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSchedule {
    pub ns: Vec<u32>,
    /// Tolerance per step (reported, not enforced).
    pub tolerances: Vec<f64>,
}

impl RegularizationSchedule {
    pub fn new(ns: Vec<u32>) -> Result<Self, CorrectorError> {
        if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CorrectorError::Schedule);
        }
        let tolerances = vec![SolverOptions::default().solver_tol; ns.len()];
        Ok(Self { ns, tolerances })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RegularizedFamily<T> {
    pub ns: Vec<u32>,
    pub profiles: Vec<CorrectorProfile<T>>,
    /// Sup distance between consecutive profiles on their common retained nodes.
    pub consecutive: Vec<T>,
    /// Sup distance of each profile to the unregularized solve.
    pub to_limit: Vec<T>,
    pub limit: CorrectorProfile<T>,
}

/// Sup distance on nodes retained by both profiles.
pub fn sup_distance<T: Real>(p: &CorrectorProfile<T>, q: &CorrectorProfile<T>) -> T {
    let (rp, rq) = (p.retained(), q.retained());
    let range = rp.start.max(rq.start)..rp.end.min(rq.end);
    range
        .map(|i| (p.f_values[i] - q.f_values[i]).abs())
        .fold(T::zero(), T::max)
}

/// Solves with `a` replaced by `max(a, 1/n)` for each `n` in the schedule.
pub fn regularized_family<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    lambda: T,
    branch: Branch,
    schedule: &RegularizationSchedule,
    opts: &SolverOptions,
) -> Result<RegularizedFamily<T>, CorrectorError> {
    if schedule.ns.is_empty() || schedule.ns[0] == 0 || schedule.ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CorrectorError::Schedule);
    }
    let limit = solve_branch(sample, g, beta, lambda, branch, opts)?;
    let profiles = schedule
        .ns
        .iter()
        .map(|&n| {
            let floor = T::one() / T::of(n as f64);
            solve_branch(&sample.regularized(floor), g, beta, lambda, branch, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let consecutive = profiles.windows(2).map(|w| sup_distance(&w[0], &w[1])).collect();
    let to_limit = profiles.iter().map(|p| sup_distance(p, &limit)).collect();
    Ok(RegularizedFamily {
        ns: schedule.ns.clone(),
        profiles,
        consecutive,
        to_limit,
        limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_env, EnvConfig, EnvKind, Period};
    use crate::env::GeneratorId;
    use crate::gclass::perturb;

    fn g() -> NonlinearitySpec<f64> {
        NonlinearitySpec::power_plus_linear(2.0, 1.0).unwrap()
    }

    fn periodic(a: Vec<f64>, v: Vec<f64>, dx: f64, m: usize) -> EnvironmentSample<f64> {
        let kappa = crate::env::discrete_lipschitz(&a, &v, dx).max(1e-9) * 1.01;
        EnvironmentSample::new(
            0.0,
            dx,
            a,
            v,
            kappa,
            1.0,
            0,
            GeneratorId::Custom,
            Some(Period {
                length: dx * m as f64,
                points: m,
            }),
        )
        .unwrap()
    }

    fn sine(a: f64, dx: f64, periods: usize) -> EnvironmentSample<f64> {
        let m = (1.0 / dx).round() as usize;
        let n = m * periods + 1;
        let v: Vec<f64> = (0..m)
            .map(|i| 0.5 * (1.0 + (2.0 * std::f64::consts::PI * i as f64 * dx).sin()))
            .cycle()
            .take(n)
            .collect();
        periodic(vec![a; n], v, dx, m)
    }

    #[test]
    fn constant_environment_gives_constant_solution() {
        let s = EnvironmentSample::from_values(0.0, 0.05, vec![0.3; 200], vec![0.4; 200], 1.0).unwrap();
        for branch in [Branch::Plus, Branch::Minus] {
            let p = solve_branch(&s, &g(), 1.0, 2.0, branch, &SolverOptions::default()).unwrap();
            let expected = branch_inverse(&g(), branch, 2.0 - 0.4).unwrap();
            for &f in &p.f_values[p.retained()] {
                assert!((f - expected).abs() < 1e-9, "{f} vs {expected}");
            }
            assert!(p.diagnostics.max_residual < 1e-9);
        }
    }

    #[test]
    fn fully_degenerate_environment_is_pinned_pointwise() {
        let s = sine(0.0, 0.01, 1);
        for branch in [Branch::Plus, Branch::Minus] {
            let p = solve_branch(&s, &g(), 1.0, 2.0, branch, &SolverOptions::default()).unwrap();
            assert!(p.pinned_mask.iter().all(|&b| b));
            for (i, &f) in p.f_values.iter().enumerate() {
                let expected = branch_inverse(&g(), branch, 2.0 - s.v()[i]).unwrap();
                assert_eq!(f, expected);
            }
            assert!(p.diagnostics.max_pin_residual < 1e-12);
            assert_eq!(p.burn_in, 0..0);
        }
    }

    #[test]
    fn lambda_below_beta_is_rejected() {
        let s = sine(1.0, 0.05, 1);
        let err = solve_branch(&s, &g(), 1.0, 0.5, Branch::Plus, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, CorrectorError::BelowFlatLevel { .. }));
        assert!(err.to_string().contains("branch interval is empty"));
    }

    #[test]
    fn non_strict_g_is_rejected() {
        let s = sine(1.0, 0.05, 1);
        let sq = NonlinearitySpec::power_plus_linear(2.0, 0.0).unwrap();
        assert_eq!(
            solve_branch(&s, &sq, 1.0, 2.0, Branch::Plus, &SolverOptions::default()).unwrap_err(),
            CorrectorError::NotStrictlyQuasiconvex
        );
        assert!(solve_branch(&s, &perturb(&sq, 4).unwrap(), 1.0, 2.0, Branch::Plus, &SolverOptions::default()).is_ok());
    }

    #[test]
    fn periodic_profile_is_periodic_and_confined() {
        let s = sine(1.0, 0.01, 3);
        for branch in [Branch::Plus, Branch::Minus] {
            let p = solve_branch(&s, &g(), 1.0, 2.0, branch, &SolverOptions::default()).unwrap();
            let (lo, hi) = (p.diagnostics.branch_lo, p.diagnostics.branch_hi);
            assert!(p.f_values.iter().all(|&f| lo <= f && f <= hi));
            assert_eq!(p.f_values[0], p.f_values[100]);
            assert!(p.diagnostics.max_residual < 1e-3, "{}", p.diagnostics.max_residual);
            assert!(p.diagnostics.contraction_factor < (-1.0f64).exp() + 1e-3);
        }
    }

    #[test]
    fn flat_level_touches_zero() {
        let s = sine(1.0, 0.02, 1);
        let p = solve_branch(&s, &g(), 1.0, 1.0, Branch::Plus, &SolverOptions::default()).unwrap();
        assert_eq!(p.diagnostics.branch_lo, 0.0);
        assert!(p.f_values.iter().all(|&f| f >= 0.0));
    }

    #[test]
    fn open_window_burn_in_and_uniqueness() {
        let n = 1001;
        let v: Vec<f64> = (0..n).map(|i| 0.5 + 0.4 * (i as f64 * 0.013).sin()).collect();
        let s = EnvironmentSample::from_values(-5.0, 0.01, vec![0.5; n], v, 1.0).unwrap();
        for branch in [Branch::Plus, Branch::Minus] {
            let mut opts = SolverOptions {
                init: Init::Low,
                ..Default::default()
            };
            let low = solve_branch(&s, &g(), 1.0, 1.7, branch, &opts).unwrap();
            opts.init = Init::High;
            let high = solve_branch(&s, &g(), 1.0, 1.7, branch, &opts).unwrap();
            assert!(!low.burn_in.is_empty());
            assert_eq!(low.burn_in, high.burn_in);
            assert!(sup_distance(&low, &high) < 1e-8);
            assert_eq!(low.u_values[500], 0.0);
        }
    }

    #[test]
    fn pinned_node_ends_burn_in() {
        let n = 400;
        let a: Vec<f64> = (0..n).map(|i| if i == 50 { 0.0 } else { 1.0 }).collect();
        let s = EnvironmentSample::from_values(0.0, 0.01, a, vec![0.5; n], 1.0).unwrap();
        let p = solve_branch(&s, &g(), 1.0, 2.0, Branch::Plus, &SolverOptions::default()).unwrap();
        assert_eq!(p.burn_in, 0..50);
        let q = solve_branch(&s, &g(), 1.0, 2.0, Branch::Minus, &SolverOptions::default()).unwrap();
        assert_eq!(q.burn_in, 51..400);
    }

    #[test]
    fn gronwall_identical_seeds_have_zero_gap() {
        let s = sine(1.0, 0.02, 2);
        let t = gronwall_gap(&s, &g(), 1.0, 2.0, Branch::Plus, 0.8, 0.8, &SolverOptions::default()).unwrap();
        assert!(t.gap.iter().all(|&x| x == 0.0));
        assert_eq!(t.gap_ratio(), 0.0);
    }

    #[test]
    fn gronwall_gap_decays_below_envelope() {
        let s = sine(1.0, 0.01, 5);
        for branch in [Branch::Plus, Branch::Minus] {
            let (lo, hi) = branch_interval(&g(), 1.0, 1.5, branch).unwrap();
            let t = gronwall_gap(&s, &g(), 1.0, 1.5, branch, lo, hi, &SolverOptions::default()).unwrap();
            assert!(t.within(1e-2));
            assert!(t.gap.windows(2).all(|w| w[1] <= w[0]));
            assert!((t.integral - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gronwall_reports_infinite_contraction() {
        let mut a = vec![1.0; 100];
        a[40] = 0.0;
        let s = EnvironmentSample::from_values(0.0, 0.01, a, vec![0.5; 100], 1.0).unwrap();
        let err = gronwall_gap(&s, &g(), 1.0, 2.0, Branch::Plus, 0.7, 0.9, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, CorrectorError::InfiniteContraction { .. }));
    }

    #[test]
    fn pinned_set_marks_exact_zeros() {
        let cfg: EnvConfig = serde_json::from_value(serde_json::json!({
            "kind": "piecewise-degenerate",
            "zero_intervals": [[0.0, 1.0]],
            "ramp_slope": 1.0,
            "v_mean": 0.5,
            "v_amp": 0.1,
            "kappa": 2.0
        }))
        .unwrap();
        let s: EnvironmentSample<f64> = generate_env(&cfg, 1, (-1.0, 2.0), 0.01).unwrap();
        let mask = pinned_set(&s, 1e-12);
        for (i, &m) in mask.iter().enumerate() {
            let x = s.x(i);
            assert_eq!(m, (-1e-9..=1.0 + 1e-9).contains(&x), "x = {x}");
        }
        assert!(pinned_set(&s, 1.0).iter().all(|&b| b));
        let ones = EnvironmentSample::from_values(0.0, 0.1, vec![1.0; 10], vec![0.0; 10], 0.0).unwrap();
        assert!(pinned_set(&ones, 1e-12).iter().all(|&b| !b));
        let _ = EnvKind::Constant { a0: 1.0, v0: 0.0 };
    }

    #[test]
    fn regularization_inactive_above_floor() {
        let s = sine(0.5, 0.02, 2);
        let sched = RegularizationSchedule::new(vec![4, 8]).unwrap();
        let fam = regularized_family(&s, &g(), 1.0, 2.0, Branch::Plus, &sched, &SolverOptions::default()).unwrap();
        for p in &fam.profiles {
            assert_eq!(p.f_values, fam.limit.f_values);
        }
    }

    #[test]
    fn regularization_converges_to_pinned_formula() {
        let s = sine(0.0, 0.01, 1);
        let sched = RegularizationSchedule::new(vec![1, 2, 4, 8, 16, 32]).unwrap();
        let fam = regularized_family(&s, &g(), 1.0, 2.0, Branch::Plus, &sched, &SolverOptions::default()).unwrap();
        assert!(fam.to_limit.windows(2).all(|w| w[1] < w[0]), "{:?}", fam.to_limit);
        assert!(RegularizationSchedule::new(vec![2, 2]).is_err());
    }
}
