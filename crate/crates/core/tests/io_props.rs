use hjhom::env::{EnvironmentSample, GeneratorId, Period};
use hjhom::io::{env_from_str, env_to_string, fmt_f64};
use proptest::prelude::*;
use std::path::Path;

proptest! {
    #[test]
    fn decimal_form_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn env_files_round_trip(
        values in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..200),
        x0 in -100.0f64..100.0,
        dx in 1e-4f64..1.0,
        beta in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let (a, v): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        let kappa = hjhom::env::discrete_lipschitz(&a, &v, dx) * 2.0 + 1.0;
        let s = EnvironmentSample::new(x0, dx, a, v, kappa, beta, seed, GeneratorId::Custom, None).unwrap();
        let back = env_from_str(Path::new("mem"), &env_to_string(&s)).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn periodic_header_survives() {
    let n = 20;
    let s = EnvironmentSample::new(
        0.0,
        0.05,
        vec![0.3; n],
        vec![0.7; n],
        1.0,
        1.0,
        3,
        GeneratorId::Constant,
        Some(Period { length: 0.05, points: 1 }),
    )
    .unwrap();
    let back = env_from_str(Path::new("mem"), &env_to_string(&s)).unwrap();
    assert_eq!(back.period(), s.period());
}
