use hjhom::corrector::{branch_interval, solve_branch, sup_distance, CorrectorProfile, Init, SolverOptions};
use hjhom::env::{generate_env, translate, EnvConfig, EnvKind, EnvironmentSample};
use hjhom::gclass::{branch_inverse, Branch, NonlinearitySpec};
use ode_solvers::{Dopri5, System, Vector1};
use proptest::prelude::*;
use std::f64::consts::PI;

fn sinusoidal(a_mean: f64, a_amp: f64, v_mean: f64, v_amp: f64, period: f64, window: (f64, f64), dx: f64) -> EnvironmentSample<f64> {
    let cfg = EnvConfig {
        kind: EnvKind::Sinusoidal {
            a_sqrt_mean: a_mean,
            a_sqrt_amp: a_amp,
            a_period: period,
            v_mean,
            v_amp,
            v_period: period,
            v_clip: false,
        },
        kappa: 10.0,
        beta: 1.0,
    };
    generate_env(&cfg, 0, window, dx).unwrap()
}

fn unit_sine(dx: f64) -> EnvironmentSample<f64> {
    sinusoidal(1.0, 0.0, 0.5, 0.5, 1.0, (0.0, 1.0), dx)
}

/// `f' = lambda - beta V(x) - G(f)` for `a = 1`. The minus branch is
/// integrated in the reflected variable `s = 1 - x`, so that both branches
/// run forward and stay stable.
struct CellOde {
    lambda: f64,
    beta: f64,
    reflected: bool,
}

impl System<f64, Vector1<f64>> for CellOde {
    fn system(&self, s: f64, y: &Vector1<f64>, dy: &mut Vector1<f64>) {
        let x = if self.reflected { 1.0 - s } else { s };
        let v = 0.5 * (1.0 + (2.0 * PI * x).sin());
        let f = y[0];
        let rhs = self.lambda - self.beta * v - (f * f + f.abs());
        dy[0] = if self.reflected { -rhs } else { rhs };
    }
}

/// Periodic solution by an adaptive Dormand–Prince integrator: run along
/// the stable direction until the initial value is forgotten, then sample
/// one more period on the grid.
fn oracle(lambda: f64, branch: Branch, dx: f64) -> Vec<f64> {
    let reflected = branch == Branch::Minus;
    let ode = || CellOde { lambda, beta: 1.0, reflected };
    let y0 = if reflected { -0.8 } else { 0.8 };
    // The coefficients have period 1, so the state at s = 40 seeds s = 0.
    let mut warm = Dopri5::new(ode(), 0.0, 40.0, 1.0, Vector1::new(y0), 1e-13, 1e-13);
    warm.integrate().unwrap();
    // Dense output at integer s; the extra endpoint sample is not used.
    let k = warm.x_out().iter().position(|&s| s == 39.0).unwrap();
    let seed = warm.y_out()[k][0];
    let mut run = Dopri5::new(ode(), 0.0, 1.0, dx, Vector1::new(seed), 1e-13, 1e-13);
    run.integrate().unwrap();
    let m = (1.0 / dx).round() as usize;
    let mut out = vec![f64::NAN; m + 1];
    for (s, y) in run.x_out().iter().zip(run.y_out()) {
        let k = (s / dx).round();
        if (s - k * dx).abs() < 1e-9 && k >= 0.0 && (k as usize) <= m {
            let i = if reflected { m - k as usize } else { k as usize };
            // Keep the first sample; the solver appends a duplicate endpoint.
            if out[i].is_nan() {
                out[i] = y[0];
            }
        }
    }
    assert!(out.iter().all(|v| v.is_finite()));
    out
}

#[test]
fn unit_diffusion_matches_adaptive_oracle() {
    let g = NonlinearitySpec::power_plus_linear(2.0, 1.0).unwrap();
    let dx = 0.01;
    let s = unit_sine(dx);
    for branch in [Branch::Plus, Branch::Minus] {
        let p = solve_branch(&s, &g, 1.0, 2.0, branch, &SolverOptions::default()).unwrap();
        let reference = oracle(2.0, branch, dx);
        let err = p
            .f_values
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{branch:?}: sup error {err:e}");
    }
}

fn quad_lin(gamma: f64, c: f64) -> NonlinearitySpec<f64> {
    NonlinearitySpec::power_plus_linear(gamma, c).unwrap()
}

fn env_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.3f64..0.9, 0.0f64..1.0, 0.2f64..0.8, 0.0f64..1.0).prop_map(|(am, af, vm, vf)| {
        let a_amp = af * am.min(1.0 - am) * 0.9;
        let v_amp = vf * vm.min(1.0 - vm) * 0.9;
        (am, a_amp, vm, v_amp)
    })
}

fn g_strategy() -> impl Strategy<Value = NonlinearitySpec<f64>> {
    (1.5f64..3.0, 0.3f64..1.5).prop_map(|(gamma, c)| quad_lin(gamma, c))
}

fn branch_strategy() -> impl Strategy<Value = Branch> {
    prop_oneof![Just(Branch::Plus), Just(Branch::Minus)]
}

fn confined(p: &CorrectorProfile<f64>) -> bool {
    let (lo, hi) = (p.diagnostics.branch_lo, p.diagnostics.branch_hi);
    p.f_values.iter().all(|&f| lo <= f && f <= hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn confinement_and_residual(
        (am, aa, vm, va) in env_strategy(),
        g in g_strategy(),
        beta in 0.0f64..2.0,
        excess in 0.0f64..2.0,
        branch in branch_strategy(),
    ) {
        let s = sinusoidal(am, aa, vm, va, 2.0, (0.0, 4.0), 0.01);
        let opts = SolverOptions::default();
        let p = solve_branch(&s, &g, beta, beta + excess, branch, &opts).unwrap();
        prop_assert!(confined(&p));
        prop_assert!(p.diagnostics.max_residual <= 10.0 * opts.solver_tol, "residual {}", p.diagnostics.max_residual);
        prop_assert_eq!(p.u_values[0], 0.0);
    }

    #[test]
    fn pinning_at_zeros_of_a(
        slope in 0.5f64..3.0,
        vm in 0.2f64..0.8,
        beta in 0.0f64..2.0,
        excess in 0.0f64..2.0,
        branch in branch_strategy(),
    ) {
        let cfg: EnvConfig = serde_json::from_value(serde_json::json!({
            "kind": "piecewise-degenerate",
            "zero_intervals": [[0.0, 1.0]],
            "ramp_slope": slope,
            "v_mean": vm,
            "v_amp": 0.1,
            "kappa": 4.0
        })).unwrap();
        let s: EnvironmentSample<f64> = generate_env(&cfg, 3, (-2.0, 3.0), 0.01).unwrap();
        let g = quad_lin(2.0, 1.0);
        let lambda = beta + excess;
        let p = solve_branch(&s, &g, beta, lambda, branch, &SolverOptions::default()).unwrap();
        prop_assert!(confined(&p));
        let mut pinned = 0;
        for i in 0..s.len() {
            if p.pinned_mask[i] {
                pinned += 1;
                let r = (g.eval(p.f_values[i]) + beta * s.v()[i] - lambda).abs();
                prop_assert!(r <= 1e-8, "pin residual {} at {}", r, s.x(i));
            }
        }
        prop_assert!(pinned >= 100);
    }

    #[test]
    fn uniqueness_surrogate(
        (am, aa, vm, va) in env_strategy(),
        beta in 0.2f64..2.0,
        excess in 0.0f64..1.0,
        branch in branch_strategy(),
    ) {
        let periodic = sinusoidal(am, aa, vm, va, 1.3, (-30.0, 30.0), 0.02);
        let s = EnvironmentSample::from_values(periodic.x0(), periodic.dx(), periodic.a().to_vec(), periodic.v().to_vec(), beta).unwrap();
        let g = quad_lin(2.0, 1.0);
        let mut opts = SolverOptions { init: Init::Low, ..Default::default() };
        let low = solve_branch(&s, &g, beta, beta + excess, branch, &opts).unwrap();
        opts.init = Init::High;
        let high = solve_branch(&s, &g, beta, beta + excess, branch, &opts).unwrap();
        prop_assert!(low.retained().len() > s.len() / 4);
        prop_assert!(sup_distance(&low, &high) <= 1e-8, "{}", sup_distance(&low, &high));
    }

    #[test]
    fn stationarity_under_translation(
        (am, aa, vm, va) in env_strategy(),
        shift in 1usize..50,
        excess in 0.0f64..2.0,
        branch in branch_strategy(),
    ) {
        let s = sinusoidal(am, aa, vm, va, 1.0, (0.0, 2.0), 0.02);
        let g = quad_lin(2.0, 1.0);
        let t = translate(&s, shift as f64 * s.dx()).unwrap();
        let opts = SolverOptions::default();
        let p = solve_branch(&s, &g, 1.0, 1.0 + excess, branch, &opts).unwrap();
        let q = solve_branch(&t, &g, 1.0, 1.0 + excess, branch, &opts).unwrap();
        let m = s.period().unwrap().points;
        for i in 0..t.len() {
            let d = (q.f_values[i] - p.f_values[(i + shift) % m]).abs();
            prop_assert!(d <= 1e-10, "index {}: {}", i, d);
        }
    }

    #[test]
    fn monotone_sandwich(
        (am, aa, vm, va) in env_strategy(),
        g in g_strategy(),
        l1 in 0.0f64..2.0,
        dl in 0.01f64..1.0,
        branch in branch_strategy(),
    ) {
        let beta = 1.0;
        let s = sinusoidal(am, aa, vm, va, 1.0, (0.0, 1.0), 0.01);
        let opts = SolverOptions::default();
        let (lam1, lam2) = (beta + l1, beta + l1 + dl);
        let p1 = solve_branch(&s, &g, beta, lam1, branch, &opts).unwrap();
        let p2 = solve_branch(&s, &g, beta, lam2, branch, &opts).unwrap();
        let r = (-branch_inverse(&g, Branch::Minus, lam2).unwrap()).max(branch_inverse(&g, Branch::Plus, lam2).unwrap());
        let c_r = g.lipschitz_on(r);
        let eta = g.eta().unwrap();
        let tol = 1e-6;
        for i in 0..s.len() {
            let d = branch.sign::<f64>() * (p2.f_values[i] - p1.f_values[i]);
            prop_assert!(d >= dl / c_r - tol, "lower: {} < {}", d, dl / c_r);
            prop_assert!(d <= dl / eta + tol, "upper: {} > {}", d, dl / eta);
        }
    }
}

#[test]
fn branch_interval_edges() {
    let g = quad_lin(2.0, 1.0);
    assert_eq!(branch_interval(&g, 1.0, 1.0, Branch::Plus).unwrap().0, 0.0);
    assert_eq!(branch_interval(&g, 1.0, 1.0, Branch::Minus).unwrap().1, 0.0);
    let (lo, hi) = branch_interval(&g, 0.0, 2.0, Branch::Plus).unwrap();
    assert_eq!((lo, hi), (1.0, 1.0));
}
