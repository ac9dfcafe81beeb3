//! The nonlinearity `G`: closed-form families, class checks on grids,
//! normalization (`G(p_min) = 0` at `p = 0`), the `|p| / n^2`
//! perturbation and the monotone branch inverses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassError {
    #[error("level {0} is negative; branch inverses are defined on [0, inf)")]
    NegativeLevel(f64),
    #[error("G is not normalized: minimum {min_value} attained at p = {p_min}, expected G(0) = 0 = min G")]
    NotNormalized { p_min: f64, min_value: f64 },
    #[error("G is not coercive: its minimizer cannot be bracketed ({0})")]
    NotCoercive(String),
    #[error("invalid nonlinearity: {0}")]
    Invalid(String),
}

/// Which monotone branch of a normalized `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `p >= 0`, where `G` is non-decreasing.
    Plus,
    /// `p <= 0`, where `G` is non-increasing.
    Minus,
}

impl Branch {
    pub fn sign<T: Real>(self) -> T {
        match self {
            Branch::Plus => T::one(),
            Branch::Minus => -T::one(),
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        }
    }
}

/// Closed-form families, plus a tabulated fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameters", rename_all = "kebab-case")]
#[serde(bound = "T: Real")]
pub enum Family<T> {
    /// `|p|^gamma + c |p|`
    PowerPlusLinear { gamma: T, c: T },
    /// `|p - shift|^gamma + c |p - shift| + offset`
    ShiftedPower { gamma: T, c: T, shift: T, offset: T },
    /// Piecewise linear through `(p[i], g[i])`, extended linearly beyond
    /// the table. Exactness is limited to the nodes.
    Tabulated { p: Vec<T>, g: Vec<T> },
}

/// JSON form: `{family, parameters, alpha0?, alpha1?, gamma?, eta?}`.
/// Missing class constants are derived from the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityConfig {
    #[serde(flatten)]
    pub family: Family<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

/// A nonlinearity together with its class constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NonlinearitySpec<T> {
    family: Family<T>,
    alpha0: T,
    alpha1: T,
    gamma: T,
    eta: Option<T>,
    p_min: T,
    min_value: T,
    in_sqc: bool,
}

impl<T: Real> NonlinearitySpec<T> {
    pub fn power_plus_linear(gamma: T, c: T) -> Result<Self, ClassError> {
        check_power(gamma, c)?;
        Ok(Self::finish(Family::PowerPlusLinear { gamma, c }, None))
    }

    pub fn shifted_power(gamma: T, c: T, shift: T, offset: T) -> Result<Self, ClassError> {
        check_power(gamma, c)?;
        if !shift.is_finite() || !offset.is_finite() {
            return Err(ClassError::Invalid("shift and offset must be finite".into()));
        }
        Ok(Self::finish(
            Family::ShiftedPower {
                gamma,
                c,
                shift,
                offset,
            },
            None,
        ))
    }

    /// Piecewise-linear table; class constants must be supplied.
    pub fn tabulated(p: Vec<T>, g: Vec<T>, alpha0: T, alpha1: T, gamma: T) -> Result<Self, ClassError> {
        if p.len() != g.len() || p.len() < 2 {
            return Err(ClassError::Invalid("a table needs at least two (p, G) pairs of equal length".into()));
        }
        if p.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ClassError::Invalid("table abscissae must be strictly increasing".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(ClassError::Invalid("table values must be finite".into()));
        }
        let mut spec = Self::finish(Family::Tabulated { p, g }, None);
        spec.alpha0 = alpha0;
        spec.alpha1 = alpha1;
        spec.gamma = gamma;
        Ok(spec)
    }

    /// Samples an arbitrary function on `grid` into a table.
    pub fn tabulate(f: impl Fn(T) -> T, grid: &[T], alpha0: T, alpha1: T, gamma: T) -> Result<Self, ClassError> {
        Self::tabulated(grid.to_vec(), grid.iter().map(|&p| f(p)).collect(), alpha0, alpha1, gamma)
    }

    pub fn from_config(cfg: &NonlinearityConfig) -> Result<Self, ClassError> {
        let cast = |xs: &[f64]| xs.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        let mut spec = match &cfg.family {
            Family::PowerPlusLinear { gamma, c } => Self::power_plus_linear(T::of(*gamma), T::of(*c))?,
            Family::ShiftedPower {
                gamma,
                c,
                shift,
                offset,
            } => Self::shifted_power(T::of(*gamma), T::of(*c), T::of(*shift), T::of(*offset))?,
            Family::Tabulated { p, g } => {
                let (Some(a0), Some(a1), Some(gm)) = (cfg.alpha0, cfg.alpha1, cfg.gamma) else {
                    return Err(ClassError::Invalid("tabulated G requires alpha0, alpha1 and gamma".into()));
                };
                Self::tabulated(cast(p), cast(g), T::of(a0), T::of(a1), T::of(gm))?
            }
        };
        if let Some(a0) = cfg.alpha0 {
            spec.alpha0 = T::of(a0);
        }
        if let Some(a1) = cfg.alpha1 {
            spec.alpha1 = T::of(a1);
        }
        if let Some(g) = cfg.gamma {
            spec.gamma = T::of(g);
        }
        if let Some(eta) = cfg.eta {
            if !(eta > 0.0) {
                return Err(ClassError::Invalid(format!("eta must be positive, got {eta}")));
            }
            spec.eta = Some(T::of(eta));
            spec.in_sqc = spec.is_normalized();
        }
        Ok(spec)
    }

    pub fn to_config(&self) -> NonlinearityConfig {
        let cast = |xs: &[T]| xs.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let family = match &self.family {
            Family::PowerPlusLinear { gamma, c } => Family::PowerPlusLinear {
                gamma: gamma.as_f64(),
                c: c.as_f64(),
            },
            Family::ShiftedPower {
                gamma,
                c,
                shift,
                offset,
            } => Family::ShiftedPower {
                gamma: gamma.as_f64(),
                c: c.as_f64(),
                shift: shift.as_f64(),
                offset: offset.as_f64(),
            },
            Family::Tabulated { p, g } => Family::Tabulated { p: cast(p), g: cast(g) },
        };
        NonlinearityConfig {
            family,
            alpha0: Some(self.alpha0.as_f64()),
            alpha1: Some(self.alpha1.as_f64()),
            gamma: Some(self.gamma.as_f64()),
            eta: self.eta.map(|e| e.as_f64()),
        }
    }

    /// Fills in minimizer, class constants and `eta` from the family.
    fn finish(family: Family<T>, eta_override: Option<T>) -> Self {
        let (alpha0, alpha1, gamma) = default_constants(&family);
        let (p_min, min_value) = minimizer(&family);
        let eta = eta_override.or_else(|| default_eta(&family));
        let mut spec = Self {
            family,
            alpha0,
            alpha1,
            gamma,
            eta,
            p_min,
            min_value,
            in_sqc: false,
        };
        spec.in_sqc = spec.eta.is_some() && spec.is_normalized();
        spec
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }
    pub fn alpha0(&self) -> T {
        self.alpha0
    }
    pub fn alpha1(&self) -> T {
        self.alpha1
    }
    pub fn gamma(&self) -> T {
        self.gamma
    }
    /// Monotonicity rate of the branches, when known (empirical for tables).
    pub fn eta(&self) -> Option<T> {
        self.eta
    }
    pub fn p_min(&self) -> T {
        self.p_min
    }
    pub fn min_value(&self) -> T {
        self.min_value
    }
    pub fn in_sqc(&self) -> bool {
        self.in_sqc
    }

    /// `G(0) = 0 = min G`.
    pub fn is_normalized(&self) -> bool {
        self.p_min == T::zero() && self.min_value == T::zero() && self.eval(T::zero()) == T::zero()
    }

    pub fn eval(&self, p: T) -> T {
        match &self.family {
            Family::PowerPlusLinear { gamma, c } => {
                let q = p.abs();
                // The PDE loop evaluates G billions of times; skip powf for squares.
                let pow = if *gamma == T::of(2.0) { q * q } else { q.powf(*gamma) };
                pow + *c * q
            }
            Family::ShiftedPower {
                gamma,
                c,
                shift,
                offset,
            } => {
                let q = (p - *shift).abs();
                q.powf(*gamma) + *c * q + *offset
            }
            Family::Tabulated { p: ps, g } => {
                let i = segment(ps, p);
                let t = (p - ps[i]) / (ps[i + 1] - ps[i]);
                g[i] + t * (g[i + 1] - g[i])
            }
        }
    }

    /// One-sided derivative: right derivative for `Branch::Plus`, left for `Minus`.
    pub fn derivative(&self, p: T, side: Branch) -> T {
        let power = |q: T, gamma: T, c: T| {
            let s = if q > T::zero() {
                T::one()
            } else if q < T::zero() {
                -T::one()
            } else {
                side.sign()
            };
            s * (gamma * q.abs().powf(gamma - T::one()) + c)
        };
        match &self.family {
            Family::PowerPlusLinear { gamma, c } => power(p, *gamma, *c),
            Family::ShiftedPower { gamma, c, shift, .. } => power(p - *shift, *gamma, *c),
            Family::Tabulated { p: ps, g } => {
                let mut i = segment(ps, p);
                if side == Branch::Minus && p == ps[i] && i > 0 {
                    i -= 1;
                }
                (g[i + 1] - g[i]) / (ps[i + 1] - ps[i])
            }
        }
    }

    /// A Lipschitz constant of `G` on `[-r, r]`.
    pub fn lipschitz_on(&self, r: T) -> T {
        let r = r.abs();
        match &self.family {
            Family::PowerPlusLinear { gamma, c } => *gamma * r.powf(*gamma - T::one()) + *c,
            Family::ShiftedPower { gamma, c, shift, .. } => {
                *gamma * (r + shift.abs()).powf(*gamma - T::one()) + *c
            }
            Family::Tabulated { p, g } => {
                let last = p.len() - 2;
                (0..=last)
                    .filter(|&i| (i == 0 || p[i] <= r) && (i == last || p[i + 1] >= -r))
                    .map(|i| ((g[i + 1] - g[i]) / (p[i + 1] - p[i])).abs())
                    .fold(T::zero(), T::max)
            }
        }
    }
}

fn check_power<T: Real>(gamma: T, c: T) -> Result<(), ClassError> {
    if !(gamma > T::one()) {
        return Err(ClassError::Invalid(format!("gamma must exceed 1, got {gamma}")));
    }
    // c < 0 would create two wells, breaking quasiconvexity.
    if !(c >= T::zero()) {
        return Err(ClassError::Invalid(format!("linear coefficient must be non-negative, got {c}")));
    }
    Ok(())
}

/// Index `i` of the table segment `[p[i], p[i+1]]` used to evaluate at `x`.
fn segment<T: Real>(ps: &[T], x: T) -> usize {
    let k = ps.partition_point(|&p| p <= x);
    k.saturating_sub(1).min(ps.len() - 2)
}

/// Conservative `(alpha0, alpha1, gamma)` for the closed forms.
fn default_constants<T: Real>(family: &Family<T>) -> (T, T, T) {
    let two = T::of(2.0);
    match family {
        Family::PowerPlusLinear { gamma, c } => (T::one(), *gamma + *c, *gamma),
        Family::ShiftedPower {
            gamma,
            c,
            shift,
            offset,
        } => {
            let s = shift.abs();
            let g1 = *gamma - T::one();
            // |p|^g <= 2^(g-1) (|p - s|^g + s^g)
            let lower_slope = two.powf(-g1);
            let lower_const = (s.powf(*gamma) - *offset).max(T::zero());
            let alpha0 = if lower_const > T::zero() {
                lower_slope.min(T::one() / lower_const)
            } else {
                lower_slope
            };
            let growth = two.powf(g1) * (T::one() + s.powf(*gamma)) + *c * (T::one() + s) + offset.abs();
            let lipschitz = *gamma * T::one().max(s).powf(g1) + *c;
            (alpha0, growth.max(lipschitz), *gamma)
        }
        Family::Tabulated { .. } => (T::one(), T::one(), two),
    }
}

fn minimizer<T: Real>(family: &Family<T>) -> (T, T) {
    match family {
        Family::PowerPlusLinear { .. } => (T::zero(), T::zero()),
        Family::ShiftedPower { shift, offset, .. } => (*shift, *offset),
        Family::Tabulated { p, g } => {
            let min = g.iter().copied().fold(T::infinity(), T::min);
            let first = g.iter().position(|&v| v == min).unwrap_or(0);
            let mut last = first;
            while last + 1 < g.len() && g[last + 1] == min {
                last += 1;
            }
            // Flat bottom: the midpoint of the minimizing set.
            let p_min = if first == last {
                p[first]
            } else {
                (p[first] + p[last]) * T::of(0.5)
            };
            (p_min, min)
        }
    }
}

fn default_eta<T: Real>(family: &Family<T>) -> Option<T> {
    match family {
        Family::PowerPlusLinear { c, .. } | Family::ShiftedPower { c, .. } => (*c > T::zero()).then_some(*c),
        Family::Tabulated { p, g } => {
            // Empirical rate: smallest branch-wise difference quotient away from the minimum.
            let (p_min, _) = minimizer(family);
            let slopes = p.windows(2).zip(g.windows(2)).map(|(pw, gw)| {
                let s = (gw[1] - gw[0]) / (pw[1] - pw[0]);
                if pw[0] >= p_min {
                    s
                } else if pw[1] <= p_min {
                    -s
                } else {
                    T::infinity()
                }
            });
            let eta = slopes.fold(T::infinity(), T::min);
            (eta > T::zero() && eta.is_finite()).then_some(eta)
        }
    }
}

/// Outcome of the normalization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Reduction<T> {
    pub normalized: NonlinearitySpec<T>,
    pub relabeling: Relabeling<T>,
}

/// Maps results for the normalized `G` back to the original one:
/// `H(G)(theta) = H(G_normalized)(theta - p_min) + min_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relabeling<T> {
    pub p_min: T,
    pub min_value: T,
}

impl<T: Real> Relabeling<T> {
    pub fn identity() -> Self {
        Self {
            p_min: T::zero(),
            min_value: T::zero(),
        }
    }
    pub fn theta_to_original(&self, theta: T) -> T {
        theta + self.p_min
    }
    pub fn theta_to_normalized(&self, theta: T) -> T {
        theta - self.p_min
    }
    pub fn level_to_original(&self, lambda: T) -> T {
        lambda + self.min_value
    }
}

/// `G_normalized(p) = G(p + p_min) - min G`.
pub fn reduce<T: Real>(g: &NonlinearitySpec<T>) -> Result<Reduction<T>, ClassError> {
    let relabeling = Relabeling {
        p_min: g.p_min,
        min_value: g.min_value,
    };
    let mut normalized = match &g.family {
        Family::PowerPlusLinear { .. } => g.clone(),
        Family::ShiftedPower { gamma, c, .. } => NonlinearitySpec::power_plus_linear(*gamma, *c)?,
        Family::Tabulated { p, g: vals } => {
            let first_min = vals.iter().position(|&v| v == g.min_value).unwrap_or(0);
            let last_min = vals.iter().rposition(|&v| v == g.min_value).unwrap_or(0);
            if first_min == 0 || last_min == vals.len() - 1 {
                return Err(ClassError::NotCoercive(format!(
                    "table minimum {} sits at the edge of the table",
                    g.min_value
                )));
            }
            let mut ps: Vec<T> = p.iter().map(|&x| x - g.p_min).collect();
            let mut gs: Vec<T> = vals.iter().map(|&v| v - g.min_value).collect();
            // Make p = 0 a node so that G(0) = 0 exactly.
            let k = ps.partition_point(|&x| x < T::zero());
            if ps[k] != T::zero() {
                ps.insert(k, T::zero());
                gs.insert(k, T::zero());
            }
            NonlinearitySpec::tabulated(ps, gs, g.alpha0, g.alpha1, g.gamma)?
        }
    };
    if !matches!(g.family, Family::PowerPlusLinear { .. }) {
        normalized.eta = default_eta(&normalized.family);
        normalized.in_sqc = normalized.eta.is_some() && normalized.is_normalized();
    }
    Ok(Reduction { normalized, relabeling })
}

/// `G_n(p) = G(p) + |p| / n^2`, in the strictly quasiconvex class with
/// `eta = 1 / n^2`.
pub fn perturb<T: Real>(g: &NonlinearitySpec<T>, n: u32) -> Result<NonlinearitySpec<T>, ClassError> {
    if !g.is_normalized() {
        return Err(ClassError::NotNormalized {
            p_min: g.p_min.as_f64(),
            min_value: g.min_value.as_f64(),
        });
    }
    if n == 0 {
        return Err(ClassError::Invalid("perturbation index must be at least 1".into()));
    }
    let bump = T::one() / T::of(n as f64).powi(2);
    let family = match &g.family {
        Family::PowerPlusLinear { gamma, c } => Family::PowerPlusLinear {
            gamma: *gamma,
            c: *c + bump,
        },
        Family::ShiftedPower { gamma, c, .. } => Family::PowerPlusLinear {
            gamma: *gamma,
            c: *c + bump,
        },
        Family::Tabulated { p, g: vals } => Family::Tabulated {
            p: p.clone(),
            g: p.iter().zip(vals).map(|(&x, &v)| v + bump * x.abs()).collect(),
        },
    };
    Ok(NonlinearitySpec {
        family,
        alpha0: g.alpha0,
        alpha1: g.alpha1 + bump,
        gamma: g.gamma,
        eta: Some(bump),
        p_min: T::zero(),
        min_value: T::zero(),
        in_sqc: true,
    })
}

/// `G_+^{-1}(lambda) >= 0` or `G_-^{-1}(lambda) <= 0` for a normalized `G`,
/// by bisection on the monotone branch.
pub fn branch_inverse<T: Real>(g: &NonlinearitySpec<T>, side: Branch, lambda: T) -> Result<T, ClassError> {
    if !(lambda >= T::zero()) {
        return Err(ClassError::NegativeLevel(lambda.as_f64()));
    }
    if !g.is_normalized() {
        return Err(ClassError::NotNormalized {
            p_min: g.p_min.as_f64(),
            min_value: g.min_value.as_f64(),
        });
    }
    if lambda == T::zero() {
        return Ok(T::zero());
    }
    let s: T = side.sign();
    let h = |q: T| g.eval(s * q);
    // Upper bracket from alpha0 |p|^gamma - 1/alpha0 <= G(p), widened if needed.
    let mut hi = ((lambda + T::one() / g.alpha0) / g.alpha0).powf(T::one() / g.gamma);
    if !hi.is_finite() || hi <= T::zero() {
        hi = T::one();
    }
    let mut widen = 0;
    while h(hi) < lambda {
        hi = hi * T::of(2.0);
        widen += 1;
        if widen > 200 || !hi.is_finite() {
            return Err(ClassError::NotCoercive(format!("G stays below {lambda} on the {} branch", side.as_str())));
        }
    }
    let mut lo = T::zero();
    for _ in 0..400 {
        let mid = (lo + hi) * T::of(0.5);
        if !(mid > lo && mid < hi) {
            break;
        }
        if h(mid) < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = if (h(lo) - lambda).abs() <= (h(hi) - lambda).abs() { lo } else { hi };
    Ok(s * q)
}

/// Worst violation of one inequality of the class definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation<T> {
    pub p: T,
    pub q: Option<T>,
    /// How far the inequality fails: `lhs - rhs > 0`.
    pub excess: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ClassReport<T> {
    pub alpha0: T,
    pub alpha1: T,
    pub gamma: T,
    pub grid_points: usize,
    /// `alpha0 |p|^gamma - 1/alpha0 <= G(p)`
    pub g1_lower: Vec<Violation<T>>,
    /// `G(p) <= alpha1 (|p|^gamma + 1)`
    pub g1_upper: Vec<Violation<T>>,
    /// `|G(p) - G(q)| <= alpha1 (|p| + |q| + 1)^(gamma-1) |p - q|`
    pub g2: Vec<Violation<T>>,
}

impl<T: Real> ClassReport<T> {
    pub fn passed(&self) -> bool {
        self.g1_lower.is_empty() && self.g1_upper.is_empty() && self.g2.is_empty()
    }

    fn worst(v: &[Violation<T>]) -> Option<Violation<T>> {
        v.iter().copied().reduce(|a, b| if b.excess > a.excess { b } else { a })
    }

    /// Worst case per inequality, `None` when it holds on the grid.
    pub fn worst_cases(&self) -> [(&'static str, Option<Violation<T>>); 3] {
        [
            ("G1-lower", Self::worst(&self.g1_lower)),
            ("G1-upper", Self::worst(&self.g1_upper)),
            ("G2", Self::worst(&self.g2)),
        ]
    }
}

/// Checks the growth and local Lipschitz bounds on every point (and pair)
/// of `p_grid`.
pub fn validate_class<T: Real>(g: &NonlinearitySpec<T>, alpha0: T, alpha1: T, gamma: T, p_grid: &[T]) -> ClassReport<T> {
    assert!(alpha0 > T::zero() && alpha1 > T::zero() && gamma > T::one(), "class constants out of range");
    let slack = |x: T| T::of(1e-12) * (T::one() + x.abs());
    let vals: Vec<T> = p_grid.iter().map(|&p| g.eval(p)).collect();
    let mut report = ClassReport {
        alpha0,
        alpha1,
        gamma,
        grid_points: p_grid.len(),
        g1_lower: Vec::new(),
        g1_upper: Vec::new(),
        g2: Vec::new(),
    };
    for (&p, &gp) in p_grid.iter().zip(&vals) {
        let pg = p.abs().powf(gamma);
        let lower = alpha0 * pg - T::one() / alpha0;
        if lower - gp > slack(gp) {
            report.g1_lower.push(Violation {
                p,
                q: None,
                excess: lower - gp,
            });
        }
        let upper = alpha1 * (pg + T::one());
        if gp - upper > slack(gp) {
            report.g1_upper.push(Violation {
                p,
                q: None,
                excess: gp - upper,
            });
        }
    }
    for i in 0..p_grid.len() {
        for j in i + 1..p_grid.len() {
            let (p, q) = (p_grid[i], p_grid[j]);
            let lhs = (vals[i] - vals[j]).abs();
            let rhs = alpha1 * (p.abs() + q.abs() + T::one()).powf(gamma - T::one()) * (p - q).abs();
            if lhs - rhs > slack(lhs) {
                report.g2.push(Violation {
                    p,
                    q: Some(q),
                    excess: lhs - rhs,
                });
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiconvexCheck<T> {
    pub quasiconvex: bool,
    /// Abscissa of the first interior local maximum found.
    pub violation: Option<T>,
}

/// Grid form of quasiconvexity: the sampled values are non-increasing and
/// then non-decreasing (exact ties allowed).
pub fn check_quasiconvex<T: Real>(g: &NonlinearitySpec<T>, p_grid: &[T]) -> QuasiconvexCheck<T> {
    let vals: Vec<T> = p_grid.iter().map(|&p| g.eval(p)).collect();
    let mut ascending = false;
    for i in 1..vals.len() {
        if vals[i] > vals[i - 1] {
            ascending = true;
        } else if vals[i] < vals[i - 1] && ascending {
            return QuasiconvexCheck {
                quasiconvex: false,
                violation: Some(p_grid[i - 1]),
            };
        }
    }
    QuasiconvexCheck {
        quasiconvex: true,
        violation: None,
    }
}

/// First grid pair `0 <= p1 < p2` (or its mirror) violating
/// `G(+-p2) - G(+-p1) >= eta (p2 - p1)`.
pub fn check_strict_monotone<T: Real>(g: &NonlinearitySpec<T>, eta: T, q_grid: &[T]) -> Result<(), (Branch, T, T)> {
    let slack = T::of(1e-12);
    let mut qs: Vec<T> = q_grid.iter().map(|q| q.abs()).collect();
    qs.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    qs.dedup();
    for side in [Branch::Plus, Branch::Minus] {
        let s: T = side.sign();
        for i in 0..qs.len() {
            for j in i + 1..qs.len() {
                let (p1, p2) = (qs[i], qs[j]);
                let rise = g.eval(s * p2) - g.eval(s * p1);
                if rise < eta * (p2 - p1) - slack * (T::one() + rise.abs()) {
                    return Err((side, s * p1, s * p2));
                }
            }
        }
    }
    Ok(())
}
