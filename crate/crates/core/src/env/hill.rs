//! Finite-window check of the scaled hill condition.

use serde::{Deserialize, Serialize};

use super::EnvironmentSample;
use crate::scalar::Real;

/// An interval `[ell1, ell2]` on which `V >= h` and
/// `int dx / max(a, delta) >= y` (trapezoidal rule on the grid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillWitness<T> {
    pub ell1: T,
    pub ell2: T,
    pub delta: T,
    pub h: T,
    pub y: T,
    pub achieved_integral: T,
    pub first: usize,
    pub last: usize,
}

/// Why no witness exists on the sampled window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HillFailure<T> {
    /// No two consecutive grid points with `V >= h`.
    EmptyHillSet,
    /// Hill intervals exist but the largest reachable integral is `best`.
    IntegralTooSmall { best: T },
}

/// Trapezoidal `int dx / max(a, delta)` over grid points `first..=last`.
pub fn hill_integral<T: Real>(sample: &EnvironmentSample<T>, first: usize, last: usize, delta: T) -> T {
    let w = |i: usize| T::one() / sample.a()[i].max(delta);
    let inner: T = (first + 1..last).map(w).sum();
    sample.dx() * (inner + T::of(0.5) * (w(first) + w(last)))
}

/// Maximal runs of consecutive grid points with `V >= h`, at least two points long.
fn hill_runs<T: Real>(v: &[T], h: T) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &vi) in v.iter().enumerate() {
        match (vi >= h, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - 1 > s {
                    runs.push((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if v.len() - 1 > s {
            runs.push((s, v.len() - 1));
        }
    }
    runs
}

/// Searches the window for a hill witness at level `h` and size `y`.
///
/// Runs of `V >= h` are visited left to right. If `delta = 1` already
/// gives an integral of at least `y`, the run is cut at the first grid
/// point where the integral reaches `y`. Otherwise `delta` is bisected
/// (geometrically) towards the largest value that still reaches `y`.
pub fn verify_hill<T: Real>(sample: &EnvironmentSample<T>, h: T, y: T) -> Result<HillWitness<T>, HillFailure<T>> {
    assert!(h > T::zero() && h < T::one(), "hill level must lie in (0, 1)");
    assert!(y > T::zero(), "hill size must be positive");
    let runs = hill_runs(sample.v(), h);
    if runs.is_empty() {
        return Err(HillFailure::EmptyHillSet);
    }
    let mut best = T::zero();
    for &(first, last) in &runs {
        let witness = |last: usize, delta: T, achieved: T| HillWitness {
            ell1: sample.x(first),
            ell2: sample.x(last),
            delta,
            h,
            y,
            achieved_integral: achieved,
            first,
            last,
        };
        if hill_integral(sample, first, last, T::one()) >= y {
            // Smallest prefix of the run reaching y; the integral is monotone in `last`.
            let (mut lo, mut hi) = (first, last);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if hill_integral(sample, first, mid, T::one()) >= y {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(witness(hi, T::one(), hill_integral(sample, first, hi, T::one())));
        }
        // Find some delta reaching y, halving from 1.
        let a_min = sample.a()[first..=last].iter().copied().fold(T::one(), T::min);
        let mut lo = T::one();
        let mut reached = false;
        for _ in 0..2000 {
            lo = lo * T::of(0.5);
            if hill_integral(sample, first, last, lo) >= y {
                reached = true;
                break;
            }
            if lo < a_min || lo < T::min_positive_value() {
                break;
            }
        }
        if !reached {
            best = best.max(hill_integral(sample, first, last, a_min.max(T::min_positive_value())));
            continue;
        }
        let mut hi = lo * T::of(2.0);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if !(mid > lo && mid < hi) {
                break;
            }
            if hill_integral(sample, first, last, mid) >= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(witness(last, lo, hill_integral(sample, first, last, lo)));
    }
    Err(HillFailure::IntegralTooSmall { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(a: f64, v: f64, n: usize) -> EnvironmentSample<f64> {
        EnvironmentSample::from_values(0.0, 0.01, vec![a; n], vec![v; n], 1.0).unwrap()
    }

    #[test]
    fn unit_fields_cut_at_exact_length() {
        let w = verify_hill(&constant(1.0, 1.0, 1001), 0.5, 3.0).unwrap();
        assert!((w.ell2 - w.ell1 - 3.0).abs() < 1e-12);
        assert_eq!(w.delta, 1.0);
        assert!((w.achieved_integral - 3.0).abs() < 1e-12);
        assert!(w.achieved_integral >= 3.0);
    }

    #[test]
    fn empty_hill_set_fails() {
        assert_eq!(verify_hill(&constant(1.0, 0.4, 100), 0.5, 1.0), Err(HillFailure::EmptyHillSet));
    }

    #[test]
    fn strictly_elliptic_short_hill_fails_with_best_integral() {
        // integral with a = 0.5 over length 0.99 is 1.98 at most
        match verify_hill(&constant(0.5, 1.0, 100), 0.5, 3.0) {
            Err(HillFailure::IntegralTooSmall { best }) => assert!((best - 1.98).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn small_diffusion_needs_small_delta() {
        let w = verify_hill(&constant(0.01, 1.0, 11), 0.5, 5.0).unwrap();
        // length 0.1, integral 0.1 / delta >= 5 => delta close to 0.02
        assert!(w.achieved_integral >= 5.0);
        assert!((w.delta - 0.02).abs() < 1e-9, "{}", w.delta);
    }

    #[test]
    fn runs_require_two_points() {
        assert_eq!(hill_runs(&[0.0, 1.0, 0.0, 1.0, 1.0], 0.5), vec![(3, 4)]);
        assert_eq!(hill_runs(&[1.0, 1.0, 0.0], 0.5), vec![(0, 1)]);
    }
}
