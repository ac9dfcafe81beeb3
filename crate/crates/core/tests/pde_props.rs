use hjhom::env::{generate_env, EnvConfig, EnvironmentSample};
use hjhom::gclass::NonlinearitySpec;
use hjhom::pde::{estimate_slope, run, BoundaryMode, NumericalHamiltonian, SchemeConfig, Simulator};
use proptest::prelude::*;

fn sinusoidal(a_sqrt_mean: f64, a_frac: f64, v_mean: f64, v_frac: f64, dx: f64) -> EnvironmentSample<f64> {
    let cfg: EnvConfig = serde_json::from_value(serde_json::json!({
        "kind": "sinusoidal",
        "a_sqrt_mean": a_sqrt_mean,
        "a_sqrt_amp": a_frac * a_sqrt_mean.min(1.0 - a_sqrt_mean),
        "a_period": 1.0,
        "v_mean": v_mean,
        "v_amp": v_frac * v_mean.min(1.0 - v_mean),
        "v_period": 1.0,
        "kappa": 20.0,
        "beta": 1.0
    }))
    .unwrap();
    generate_env(&cfg, 0, (0.0, 1.0), dx).unwrap()
}

fn hamiltonian() -> impl Strategy<Value = NumericalHamiltonian> {
    prop_oneof![Just(NumericalHamiltonian::GodunovQuasiconvex), Just(NumericalHamiltonian::LaxFriedrichs)]
}

fn g_strategy() -> impl Strategy<Value = NonlinearitySpec<f64>> {
    (1.5f64..3.0, 0.2f64..1.5).prop_map(|(gamma, c)| NonlinearitySpec::power_plus_linear(gamma, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stencil_is_monotone_in_each_input(
        g in g_strategy(),
        kind in hamiltonian(),
        theta in -2.0f64..2.0,
        a in 0.0f64..1.0,
        v in 0.0f64..1.0,
        inputs in proptest::array::uniform3(-0.002f64..0.002),
        which in 0usize..3,
        bump in 0.0f64..0.002,
    ) {
        let s = sinusoidal(0.5, 0.5, 0.5, 0.5, 0.02);
        let scheme = SchemeConfig { dx: 0.02, hamiltonian: kind, ..Default::default() };
        let sim = Simulator::new(&s, &g, 1.0, theta, &scheme).unwrap();
        let st = *sim.stencil();
        let a_max = s.a().iter().copied().fold(0.0, f64::max);
        let a = a * a_max;
        prop_assert!(st.is_monotone_for(a_max));
        // Inputs are offsets from the affine data, small enough that every
        // difference quotient stays inside the range behind L_G.
        let [l, c, r] = inputs;
        let before = st.update(&g, a, v, l, c, r);
        let mut bumped = [l, c, r];
        bumped[which] += bump;
        let after = st.update(&g, a, v, bumped[0], bumped[1], bumped[2]);
        prop_assert!(after >= before, "{after} < {before}");
    }

    #[test]
    fn discrete_comparison(
        g in g_strategy(),
        theta in -1.5f64..1.5,
        bumps in proptest::collection::vec(0.0f64..0.002, 50),
        steps in 1usize..200,
    ) {
        let s = sinusoidal(0.4, 0.8, 0.5, 0.8, 0.02);
        let scheme = SchemeConfig { dx: 0.02, ..Default::default() };
        let mut low = Simulator::new(&s, &g, 1.0, theta, &scheme).unwrap();
        let mut high = low.clone();
        let raised: Vec<f64> = (0..50).map(|i| 0.005 * (i as f64 * 0.3).sin() + bumps[i]).collect();
        let lowered: Vec<f64> = (0..50).map(|i| 0.005 * (i as f64 * 0.3).sin()).collect();
        high.set_state(raised).unwrap();
        low.set_state(lowered).unwrap();
        for _ in 0..steps {
            low.step();
            high.step();
            for (l, h) in low.state().iter().zip(high.state()) {
                prop_assert!(h >= l);
            }
        }
    }

    #[test]
    fn gradients_stay_in_range_and_slopes_are_sandwiched(
        g in g_strategy(),
        theta in -2.0f64..2.0,
        a_mean in 0.1f64..0.9,
        beta in 0.0f64..2.0,
    ) {
        let s = sinusoidal(a_mean, 0.9, 0.5, 0.9, 0.05);
        let scheme = SchemeConfig { dx: 0.05, t_final: 5.0, ..Default::default() };
        let tr = run(&s, &g, beta, theta, &scheme).unwrap();
        prop_assert!(tr.gradient_confined(), "{:?} outside {:?}", tr.meta.observed_gradient, tr.meta.gradient_range);
        let est = estimate_slope(&tr, 0.5).unwrap();
        prop_assert!(est.h_lower <= est.fitted && est.fitted <= est.h_upper);
    }

    #[test]
    fn zero_potential_strength_gives_g(
        g in g_strategy(),
        theta in -2.0f64..2.0,
        a_mean in 0.1f64..0.9,
        kind in hamiltonian(),
    ) {
        // Affine data solve the equation exactly; the scheme preserves them.
        let s = sinusoidal(a_mean, 0.9, 0.5, 0.9, 0.05);
        let scheme = SchemeConfig { dx: 0.05, t_final: 2.0, hamiltonian: kind, ..Default::default() };
        let tr = run(&s, &g, 0.0, theta, &scheme).unwrap();
        let est = estimate_slope(&tr, 0.5).unwrap();
        prop_assert!((est.fitted - g.eval(theta)).abs() <= 1e-9 * (1.0 + g.eval(theta)));
    }
}

#[test]
fn large_domain_mode_agrees_with_periodic_mode() {
    let cfg: EnvConfig = serde_json::from_value(serde_json::json!({
        "kind": "sinusoidal", "a_sqrt_mean": 0.5, "a_sqrt_amp": 0.3,
        "v_mean": 0.5, "v_amp": 0.5, "kappa": 10.0, "beta": 1.0
    }))
    .unwrap();
    let s: EnvironmentSample<f64> = generate_env(&cfg, 0, (-25.0, 25.0), 0.05).unwrap();
    let g = NonlinearitySpec::power_plus_linear(2.0, 1.0).unwrap();
    let mut scheme = SchemeConfig { dx: 0.05, t_final: 3.0, ..Default::default() };
    let periodic = run(&s, &g, 1.0, -0.7, &scheme).unwrap();
    scheme.boundary = BoundaryMode::LargeDomain;
    let wide = run(&s, &g, 1.0, -0.7, &scheme).unwrap();
    for (p, w) in periodic.center_values.iter().zip(&wide.center_values) {
        assert!((p - w).abs() < 1e-9, "{p} vs {w}");
    }
}
