//! Glue supersolution at level `beta`: interpolate the minus and plus
//! correctors across a window where `int dx/a` is large and the two are
//! `epsilon`-close, so that `a f' + G(f) + beta V <= beta + K epsilon`
//! with `K = 2 (C_R + 2)`. Where `a` has a fat zero set, the two correctors
//! are joined at a single pinned point instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrector::CorrectorProfile;
use crate::env::EnvironmentSample;
use crate::gclass::{branch_inverse, Branch, NonlinearitySpec};
use crate::pde::{self, PdeError, SchemeConfig};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlueError {
    #[error("the glue needs beta > 0, got {0}")]
    NonPositiveBeta(f64),
    #[error("epsilon must be positive and y0 at least 2 (got epsilon = {epsilon}, y0 = {y0})")]
    Parameters { epsilon: f64, y0: f64 },
    #[error("profiles must be the minus and plus correctors at lambda = beta on this sample: {0}")]
    Profiles(String),
    #[error("no admissible glue window in the sample{}", match .best {
        Some(b) => format!("; best candidate [{}, {}] with int dx/a = {} and corrector gap {}", b.l1, b.l2, b.integral, b.max_gap),
        None => String::from("; no component of {a > 0} carries int dx/a >= y0"),
    })]
    NoAdmissibleWindow { best: Option<GlueCandidate<f64>> },
    #[error("no zero of a in the sample for the pinned crossing")]
    NoPinnedPoint,
}

/// How to choose between the two constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GlueMode {
    /// Pinned crossing when `a` vanishes on two consecutive nodes, window
    /// otherwise (falling back to a crossing if no window qualifies).
    #[default]
    Auto,
    Window,
    PinnedCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlueKind {
    Window,
    PinnedCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlueOptions {
    pub mode: GlueMode,
    pub a_floor: f64,
}

impl Default for GlueOptions {
    fn default() -> Self {
        Self {
            mode: GlueMode::Auto,
            a_floor: 1e-12,
        }
    }
}

/// A window tried by the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GlueCandidate<T> {
    pub ell1: T,
    pub ell2: T,
    pub l1: T,
    pub l2: T,
    /// Left Riemann sum of `dx / a` over `[l1, l2)`.
    pub integral: T,
    /// `max (f_plus - f_minus)` on `[l1, l2]`.
    pub max_gap: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GlueWindow<T> {
    pub ell1: T,
    pub l1: T,
    pub l2: T,
    pub ell2: T,
    pub r: T,
    /// Mollifier index: the kernel is supported on `[-1/n, 1/n]`.
    pub n: u64,
    pub integral: T,
    pub a_min: T,
    pub max_gap: T,
    /// `max (f_plus - f_minus)` on `[l1 - r, l2 + r]`; the estimate needs `< 4 epsilon`.
    pub margin_gap: T,
    /// Whether the window is the middle third of its component.
    pub thirds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GlueConstruction<T> {
    pub kind: GlueKind,
    pub epsilon: T,
    pub y0: T,
    pub beta: T,
    pub window: Option<GlueWindow<T>>,
    /// Crossing point of the pinned construction.
    pub x0: Option<T>,
    pub c_r: T,
    pub k: T,
    pub xi_values: Vec<T>,
    pub f_eps_values: Vec<T>,
    /// `a f_eps' + G(f_eps) + beta V - beta` per node.
    pub residual_values: Vec<T>,
    pub max_residual: T,
    /// `max a xi'` over the transition region.
    pub max_a_xi_prime: T,
}

impl<T: Real> GlueConstruction<T> {
    /// `beta + K epsilon`.
    pub fn upper_level(&self) -> T {
        self.beta + self.k * self.epsilon
    }

    /// Supersolution inequality at every node, up to `tol`.
    pub fn satisfies_bound(&self, tol: T) -> bool {
        self.max_residual <= self.k * self.epsilon + tol
    }

    /// `xi` non-decreasing from exactly 0 to exactly 1.
    pub fn xi_is_monotone(&self) -> bool {
        self.xi_values.windows(2).all(|w| w[1] >= w[0])
            && self.xi_values.first() == Some(&T::zero())
            && self.xi_values.last() == Some(&T::one())
    }
}

/// Flat-piece certificate: the PDE slope at `theta` against
/// `[beta - tol, beta + K epsilon + tol]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FlatPieceCertificate<T> {
    pub theta: T,
    pub flat: (T, T),
    pub beta: T,
    pub epsilon: T,
    pub k: T,
    pub upper_bound: T,
    pub fitted: T,
    pub h_lower: T,
    pub h_upper: T,
    pub tol: T,
    pub inside_flat: bool,
    pub passed: bool,
}

pub fn certify_flat_slope<T: Real>(
    glue: &GlueConstruction<T>,
    flat: (T, T),
    theta: T,
    (h_lower, fitted, h_upper): (T, T, T),
    tol: T,
) -> FlatPieceCertificate<T> {
    let upper_bound = glue.upper_level();
    let inside_flat = flat.0 < theta && theta < flat.1;
    FlatPieceCertificate {
        theta,
        flat,
        beta: glue.beta,
        epsilon: glue.epsilon,
        k: glue.k,
        upper_bound,
        fitted,
        h_lower,
        h_upper,
        tol,
        inside_flat,
        passed: inside_flat && fitted <= upper_bound + tol && fitted >= glue.beta - tol,
    }
}

/// Measures the long-time PDE slope at `theta` and certifies it against the glue bound.
#[allow(clippy::too_many_arguments)]
pub fn flat_piece_certificate<T: Real>(
    glue: &GlueConstruction<T>,
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    flat: (T, T),
    theta: T,
    scheme: &SchemeConfig,
    tail_fraction: T,
    tol: T,
) -> Result<FlatPieceCertificate<T>, PdeError> {
    let trace = pde::run(sample, g, glue.beta, theta, scheme)?;
    let est = pde::estimate_slope(&trace, tail_fraction)?;
    Ok(certify_flat_slope(glue, flat, theta, (est.h_lower, est.fitted, est.h_upper), tol))
}

/// Builds the glue from the level-`beta` correctors of both branches.
#[allow(clippy::too_many_arguments)]
pub fn build_glue<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    epsilon: T,
    y0: T,
    minus: &CorrectorProfile<T>,
    plus: &CorrectorProfile<T>,
    opts: &GlueOptions,
) -> Result<GlueConstruction<T>, GlueError> {
    if !(beta > T::zero()) {
        return Err(GlueError::NonPositiveBeta(beta.as_f64()));
    }
    if !(epsilon > T::zero()) || !(y0 >= T::of(2.0)) {
        return Err(GlueError::Parameters {
            epsilon: epsilon.as_f64(),
            y0: y0.as_f64(),
        });
    }
    let n = sample.len();
    if minus.branch != Branch::Minus || plus.branch != Branch::Plus {
        return Err(GlueError::Profiles("branches must be (minus, plus)".into()));
    }
    if minus.len() != n || plus.len() != n {
        return Err(GlueError::Profiles(format!("lengths {} and {} differ from {n}", minus.len(), plus.len())));
    }
    if minus.lambda != beta || plus.lambda != beta {
        return Err(GlueError::Profiles("both profiles must be solved at lambda = beta".into()));
    }
    let r_bound = (-branch_inverse(g, Branch::Minus, beta).map_err(|e| GlueError::Profiles(e.to_string()))?)
        .max(branch_inverse(g, Branch::Plus, beta).map_err(|e| GlueError::Profiles(e.to_string()))?);
    let c_r = g.lipschitz_on(r_bound);
    let k = T::of(2.0) * (c_r + T::of(2.0));

    let floor = T::of(opts.a_floor);
    let pinned: Vec<bool> = sample.a().iter().map(|&a| a <= floor).collect();
    let fat = pinned.windows(2).any(|w| w[0] && w[1]);
    let fm = &minus.f_values;
    let fp = &plus.f_values;

    let (kind, xi, window, x0, max_a_xi) = match opts.mode {
        GlueMode::PinnedCrossing => crossing(sample, &pinned)?,
        GlueMode::Auto if fat => crossing(sample, &pinned)?,
        mode => match window_glue(sample, &pinned, fm, fp, epsilon, y0) {
            Ok(found) => found,
            Err(e) if mode == GlueMode::Auto && pinned.iter().any(|&b| b) => {
                let _ = e;
                crossing(sample, &pinned)?
            }
            Err(e) => return Err(e),
        },
    };

    let f_eps: Vec<T> = (0..n).map(|i| (T::one() - xi[i]) * fm[i] + xi[i] * fp[i]).collect();
    let residual_values = signed_residuals(sample, g, beta, &f_eps, fm, fp, &pinned);
    let max_residual = residual_values.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(GlueConstruction {
        kind,
        epsilon,
        y0,
        beta,
        window,
        x0,
        c_r,
        k,
        xi_values: xi,
        f_eps_values: f_eps,
        residual_values,
        max_residual,
        max_a_xi_prime: max_a_xi,
    })
}

type Built<T> = (GlueKind, Vec<T>, Option<GlueWindow<T>>, Option<T>, T);

/// Step glue at the zero of `a` with the largest `V`, preferring zeros
/// inside a run of zeros.
fn crossing<T: Real>(sample: &EnvironmentSample<T>, pinned: &[bool]) -> Result<Built<T>, GlueError> {
    let n = pinned.len();
    let interior = |i: usize| i > 0 && i + 1 < n && pinned[i - 1] && pinned[i + 1];
    let pick = |filter: &dyn Fn(usize) -> bool| {
        (0..n)
            .filter(|&i| pinned[i] && filter(i))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if sample.v()[b] >= sample.v()[i] => Some(b),
                _ => Some(i),
            })
    };
    let i0 = pick(&interior).or_else(|| pick(&|_| true)).ok_or(GlueError::NoPinnedPoint)?;
    let xi = (0..n).map(|i| if i <= i0 { T::zero() } else { T::one() }).collect();
    Ok((GlueKind::PinnedCrossing, xi, None, Some(sample.x(i0)), T::zero()))
}

/// Maximal index runs of `a > a_floor` with room for margins.
fn components(pinned: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &p) in pinned.iter().chain(std::iter::once(&true)).enumerate() {
        match (p, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                if i > s + 6 {
                    out.push((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn window_glue<T: Real>(
    sample: &EnvironmentSample<T>,
    pinned: &[bool],
    fm: &[T],
    fp: &[T],
    epsilon: T,
    y0: T,
) -> Result<Built<T>, GlueError> {
    let dx = sample.dx();
    let a = sample.a();
    let gap: Vec<T> = fp.iter().zip(fm).map(|(&p, &m)| p - m).collect();
    let max_gap = |lo: usize, hi: usize| gap[lo..=hi].iter().copied().fold(T::neg_infinity(), T::max);
    let mut best: Option<GlueCandidate<T>> = None;
    let mut chosen: Option<(usize, usize, usize, usize, T, T, bool)> = None;

    'comps: for (s, e) in components(pinned) {
        // prefix[k] = dx * sum_{s <= j < k} 1/a_j  (left Riemann)
        let mut prefix = vec![T::zero(); e - s + 2];
        for j in s..=e {
            prefix[j - s + 1] = prefix[j - s] + dx / a[j];
        }
        let y = |l1: usize, l2: usize| prefix[l2 - s] - prefix[l1 - s];
        let candidate = |l1: usize, l2: usize| GlueCandidate {
            ell1: sample.x(s),
            ell2: sample.x(e),
            l1: sample.x(l1),
            l2: sample.x(l2),
            integral: y(l1, l2),
            max_gap: max_gap(l1, l2),
        };
        let (lo, hi) = (s + 2, e - 2);
        // Middle third of the component, as in the existence argument.
        let total = prefix[e - s + 1];
        if total >= T::of(3.0) * y0 {
            let first_at = |level: T| (s..=e).find(|&j| prefix[j - s] >= level);
            if let (Some(l1), Some(l2)) = (first_at(total / T::of(3.0)), first_at(total * T::of(2.0) / T::of(3.0))) {
                let l1 = l1.max(lo);
                let l2 = (l2.max(l1 + 1)..=hi).find(|&k| y(l1, k) >= y0);
                if let Some(l2) = l2 {
                    let c = candidate(l1, l2);
                    if c.max_gap <= epsilon {
                        chosen = Some((s, e, l1, l2, c.integral, c.max_gap, true));
                        break 'comps;
                    }
                    best = better(best, c);
                }
            }
        }
        // Otherwise the shortest windows with int dx/a >= y0, smallest gap first.
        let mut l2 = lo + 1;
        let mut local: Option<GlueCandidate<T>> = None;
        let mut local_idx = (0, 0);
        for l1 in lo..hi {
            l2 = l2.max(l1 + 1);
            while l2 <= hi && y(l1, l2) < y0 {
                l2 += 1;
            }
            if l2 > hi {
                break;
            }
            let c = candidate(l1, l2);
            if local.is_none_or(|b| c.max_gap < b.max_gap) {
                local = Some(c);
                local_idx = (l1, l2);
            }
        }
        if let Some(c) = local {
            if c.max_gap <= epsilon {
                chosen = Some((s, e, local_idx.0, local_idx.1, c.integral, c.max_gap, false));
                break 'comps;
            }
            best = better(best, c);
        }
    }

    let Some((s, e, l1, l2, integral, gap_in, thirds)) = chosen else {
        return Err(GlueError::NoAdmissibleWindow {
            best: best.map(|b| GlueCandidate {
                ell1: b.ell1.as_f64(),
                ell2: b.ell2.as_f64(),
                l1: b.l1.as_f64(),
                l2: b.l2.as_f64(),
                integral: b.integral.as_f64(),
                max_gap: b.max_gap.as_f64(),
            }),
        });
    };

    // Largest margin with [l1 - 2r, l2 + 2r] inside the component, shrunk
    // until the corrector gap on [l1 - r, l2 + r] is below 4 epsilon.
    let mut steps = ((l1 - s).min(e - l2) / 2).max(1);
    while steps > 1 && max_gap(l1 - steps, l2 + steps) >= T::of(4.0) * epsilon {
        steps -= 1;
    }
    let r = dx * T::of_usize(steps);
    let margin_gap = max_gap(l1 - steps, l2 + steps);
    let a_min = a[l1 - 2 * steps..=l2 + 2 * steps].iter().copied().fold(T::infinity(), T::min);
    let needed = (T::one() / r).max(T::of(2.0) * sample.kappa() / a_min);
    let n_moll = (T::of(2.0) * needed).floor().to_u64().unwrap_or(u64::MAX).saturating_add(1);
    let width = T::one() / T::of(n_moll as f64);
    let half = (width / dx).floor().to_usize().unwrap_or(0).min(steps.saturating_sub(1));

    // Biweight kernel on the grid, normalized to unit sum.
    let kernel: Vec<T> = (0..=2 * half)
        .map(|j| {
            let z = if half == 0 {
                T::zero()
            } else {
                T::of(j as f64 - half as f64) * dx / width
            };
            let w = T::one() - z * z;
            w * w
        })
        .collect();
    let ksum: T = kernel.iter().copied().sum();
    let kernel: Vec<T> = kernel.iter().map(|&w| w / ksum).collect();

    let total = integral;
    let n = a.len();
    let mut zeta = vec![T::zero(); n];
    for (z, &aj) in zeta[l1..l2].iter_mut().zip(&a[l1..l2]) {
        *z = T::one() / (total * aj);
    }
    let mut zeta_n = vec![T::zero(); n];
    for (j, &zj) in zeta.iter().enumerate().take(l2).skip(l1) {
        for (q, &w) in kernel.iter().enumerate() {
            let i = j + q - half;
            zeta_n[i] = zeta_n[i] + w * zj;
        }
    }
    let mut xi = vec![T::zero(); n];
    let end = l2 + half;
    for i in 1..n {
        xi[i] = if i > end {
            T::one()
        } else {
            (xi[i - 1] + dx * zeta_n[i - 1]).min(T::one())
        };
    }
    let max_a_xi = (0..n - 1)
        .filter(|&i| zeta_n[i] > T::zero())
        .map(|i| a[i].max(a[i + 1]) * zeta_n[i])
        .fold(T::zero(), T::max);
    let window = GlueWindow {
        ell1: sample.x(s),
        l1: sample.x(l1),
        l2: sample.x(l2),
        ell2: sample.x(e),
        r,
        n: n_moll,
        integral,
        a_min,
        max_gap: gap_in,
        margin_gap,
        thirds,
    };
    Ok((GlueKind::Window, xi, Some(window), None, max_a_xi))
}

fn better<T: Real>(best: Option<GlueCandidate<T>>, c: GlueCandidate<T>) -> Option<GlueCandidate<T>> {
    match best {
        Some(b) if b.max_gap <= c.max_gap => Some(b),
        _ => Some(c),
    }
}

/// Signed `a f' + G(f) + beta V - beta`: centered differences, one-sided
/// next to pinned nodes; at the ends of a periodic sample the glued
/// function continues as the minus (left) or plus (right) corrector.
fn signed_residuals<T: Real>(
    sample: &EnvironmentSample<T>,
    g: &NonlinearitySpec<T>,
    beta: T,
    f: &[T],
    fm: &[T],
    fp: &[T],
    pinned: &[bool],
) -> Vec<T> {
    let n = f.len();
    let dx = sample.dx();
    let (a, v) = (sample.a(), sample.v());
    let period = sample.period().map(|p| p.points);
    let left_of_start = period.map(|m| fm[(n - 1 - (n - 1) % m + m - 1) % m.max(1)]);
    let right_of_end = period.map(|m| fp[n % m]);
    (0..n)
        .map(|i| {
            let algebraic = g.eval(f[i]) + beta * v[i] - beta;
            if pinned[i] {
                return algebraic;
            }
            let left = if i > 0 {
                (!pinned[i - 1]).then(|| f[i - 1])
            } else {
                left_of_start.filter(|_| !pinned[n - 1])
            };
            let right = if i + 1 < n {
                (!pinned[i + 1]).then(|| f[i + 1])
            } else {
                right_of_end.filter(|_| !pinned[0])
            };
            let df = match (left, right) {
                (Some(l), Some(r)) => (r - l) / (dx * T::of(2.0)),
                (None, Some(r)) => (r - f[i]) / dx,
                (Some(l), None) => (f[i] - l) / dx,
                (None, None) => T::zero(),
            };
            a[i] * df + algebraic
        })
        .collect()
}
