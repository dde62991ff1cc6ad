use proptest::prelude::*;

use stokes_transport::assembly::AssembledForms;
use stokes_transport::config::{ConfigFile, ExperimentConfig, Preset, Profile};
use stokes_transport::dynamics::NoisePath;
use stokes_transport::fields::{FnField, ZeroField};
use stokes_transport::gd::GradientDiscretisation;
use stokes_transport::measures::{eoc, shift_defect, Estimate};
use stokes_transport::rheology::{Mat2, RheologyParams};

fn mat() -> impl Strategy<Value = Mat2> {
    prop::array::uniform4(-3.0f64..3.0).prop_map(|[a, b, c, d]| Mat2::new(a, b, c, d))
}

fn rheology() -> impl Strategy<Value = RheologyParams> {
    (1.2f64..4.0, 0.01f64..1.0).prop_map(|(p, kappa)| RheologyParams::new(p, kappa).unwrap())
}

proptest! {
    #[test]
    fn stress_is_monotone(r in rheology(), a in mat(), b in mat()) {
        let gap = r.stress(&a).unwrap() - r.stress(&b).unwrap();
        let d = a - b;
        prop_assert!(gap.ddot(&d) >= -1e-12 * (1.0 + d.norm_sq()));
    }

    #[test]
    fn stress_points_along_its_argument(r in rheology(), a in mat()) {
        prop_assert!(r.stress(&a).unwrap().ddot(&a) >= 0.0);
    }

    #[test]
    fn derivative_is_positive_semidefinite(r in rheology(), a in mat(), h in mat()) {
        let dh = r.stress_derivative(&a, &h).unwrap();
        prop_assert!(dh.ddot(&h) >= -1e-12 * h.norm_sq());
    }

    #[test]
    fn shift_defect_is_bounded_by_the_telescoped_sum(
        series in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 40), 1..6),
        n in 1usize..10,
        horizon in 1usize..30,
    ) {
        let views: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        let sup = series.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = shift_defect(&views, n, horizon).unwrap();
        prop_assert!(d.mean <= 2.0 * n.min(horizon) as f64 * sup / horizon as f64 + 1e-12);
        prop_assert!(d.standard_error >= 0.0);
    }

    #[test]
    fn shift_defect_rejects_short_series(len in 1usize..20, n in 1usize..10) {
        let s = vec![0.0; len];
        prop_assert!(shift_defect(&[&s], n, len + 1 - n.min(len)).is_err());
    }

    #[test]
    fn constant_samples_have_zero_error(x in -1e3f64..1e3, len in 1usize..50) {
        let e = Estimate::from_samples(&vec![x; len]);
        prop_assert!((e.mean - x).abs() <= 1e-12 * x.abs().max(1.0));
        prop_assert!(e.standard_error <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn eoc_recovers_the_halving_exponent(c in 1e-6f64..1e6, k in 0i32..4) {
        prop_assert!((eoc(c, c / 2f64.powi(k)) - k as f64).abs() < 1e-12);
    }

    #[test]
    fn noise_increments_are_reproducible(seed in any::<u64>(), traj in 1u64..1000, n in 1usize..10_000) {
        let a = NoisePath::new(seed, traj);
        prop_assert_eq!(a.increment(n, 0.25), NoisePath::new(seed, traj).increment(n, 0.25));
        prop_assert!((a.increment(n, 0.25) - 0.5 * a.standard_normal(n)).abs() < 1e-15);
        prop_assert_eq!(NoisePath::deterministic().increment(n, 0.25), 0.0);
    }

    #[test]
    fn distinct_trajectories_draw_distinct_increments(seed in any::<u64>(), traj in 1u64..1000) {
        let a: Vec<f64> = (1..=8).map(|n| NoisePath::new(seed, traj).standard_normal(n)).collect();
        let b: Vec<f64> = (1..=8).map(|n| NoisePath::new(seed, traj + 1).standard_normal(n)).collect();
        prop_assert_ne!(a, b);
    }

    #[test]
    fn resolved_configs_survive_a_toml_round_trip(
        preset in prop_oneof![Just(Preset::Exp1), Just(Preset::Exp2), Just(Preset::Custom)],
        paper in any::<bool>(),
        nx in 2usize..20,
        p in 1.2f64..4.0,
        k in 3i32..10,
        steps in 1usize..64,
        seed in any::<u64>(),
    ) {
        let tau = 2f64.powi(-k);
        let cfg = ExperimentConfig::resolve(ConfigFile {
            preset: Some(preset),
            profile: Some(if paper { Profile::Paper } else { Profile::Desk }),
            mesh: Some([nx, nx + 1]),
            p: Some(p),
            tau: Some(tau),
            horizon: Some(tau * steps as f64),
            seed: Some(seed),
            ..ConfigFile::default()
        }).unwrap();
        let text = toml::to_string(&cfg.to_file()).unwrap();
        let back = ExperimentConfig::resolve(ConfigFile::parse(&text).unwrap()).unwrap();
        prop_assert_eq!(back.steps(), steps);
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noise_form_is_skew_for_any_transport_field(c in prop::array::uniform4(-2.0f64..2.0), nx in 3usize..6) {
        let gd = GradientDiscretisation::uniform(nx, nx).unwrap();
        let sigma = FnField(move |x: [f64; 2]| {
            [c[0] * (3.0 * x[1]).sin() + c[1] * x[0] * x[1], c[2] * (2.0 * x[0]).cos() + c[3] * x[1] * x[1]]
        });
        let g = vec![0.0; gd.dim_full()];
        let forms = AssembledForms::assemble_static(&gd, &sigma, &g, &ZeroField).unwrap();
        prop_assert!(forms.noise.max_transpose_defect(-1.0) < 1e-12);
        let v: Vec<f64> = (0..gd.dim_x0()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        prop_assert!(forms.mass.bilinear(&v, &v) > 0.0);
    }
}
