//! Cross-module properties over random inputs.

use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

use thetawalk::lattice::{height_field, path_feasible, GridSpec, ParticleConfig, Real, YoungDiagram};
use thetawalk::loopcheck::{random_setup, residue_check, BMap, Preset, DEFAULT_NODES, DEFAULT_RADIUS};
use thetawalk::sampler::{exact_distribution, sample_forward_stream, TransferProblem};
use thetawalk::surface::Profile;
use thetawalk::symfun::{macdonald_principal, macdonald_principal_gamma, QParams};
use thetawalk::variational::{corridor, entropy_functional, solve_limit_shape, SolverOptions, VariationalProblem};
use thetawalk::weights::{DriftProfile, WeightMode};

fn theta_strategy() -> impl Strategy<Value = Real> {
    prop::sample::select(vec![(1, 3), (1, 2), (1, 1), (2, 1), (7, 3)]).prop_map(|(p, q)| Real::ratio(p, q).unwrap())
}

fn config_strategy(max_n: usize) -> impl Strategy<Value = ParticleConfig> {
    (theta_strategy(), prop::collection::vec(0i64..3, 1..=max_n)).prop_map(|(theta, gaps)| {
        let mut shape = vec![0i64; gaps.len()];
        for i in (0..gaps.len() - 1).rev() {
            shape[i] = shape[i + 1] + gaps[i];
        }
        ParticleConfig::new(theta, Real::integer(0), shape).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_marginals_are_probability_vectors(y in config_strategy(4), steps in 1usize..4) {
        let p = TransferProblem::new(y, None, steps, DriftProfile::unit(steps), WeightMode::Plain).unwrap();
        let d = exact_distribution(&p, true).unwrap();
        let em = d.exact_marginals.as_ref().unwrap();
        for slice in em {
            let total: BigRational = slice.iter().fold(BigRational::zero(), |a, (_, m)| a + m);
            prop_assert_eq!(total, BigRational::one());
        }
        prop_assert_eq!(d.exact_prob.unwrap(), BigRational::one());
    }

    #[test]
    fn forward_samples_are_feasible_walks(y in config_strategy(5), steps in 1usize..8, seed in any::<u64>()) {
        let w = sample_forward_stream(&y, steps, &DriftProfile::unit(steps), WeightMode::Plain, seed, 0).unwrap();
        prop_assert!(path_feasible(&y, &w.config(steps), steps).unwrap());
        let n = y.len();
        let grid = GridSpec::for_walk(&w, n, 64);
        let hf = height_field(&w, n, grid).unwrap();
        let theta = y.theta().value();
        for j in 0..=grid.nt {
            let row = hf.row(j);
            prop_assert!(row.windows(2).all(|p| p[1] >= p[0] - 1e-12));
            prop_assert!(row.iter().all(|&h| (-1e-12..=theta + 1e-12).contains(&h)));
        }
    }

    #[test]
    fn macdonald_forms_agree(mut rows in prop::collection::vec(0u32..5, 0..4), q in 0.2f64..0.9, theta in 0.3f64..2.5) {
        rows.sort_unstable_by(|a, b| b.cmp(a));
        let lam = YoungDiagram::new(rows).unwrap();
        let n = 4;
        let p = QParams::new(q, theta).unwrap();
        let a = macdonald_principal(&lam, n, p).unwrap().log_value;
        let b = macdonald_principal_gamma(&lam, n, p).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn loop_residues_vanish(n in 1usize..7, theta in theta_strategy(), seed in any::<u64>(), q in prop::option::of(0.3f64..0.95)) {
        let b = q.map_or(BMap::Identity, |q| BMap::QPower { q });
        for preset in Preset::ALL {
            let setup = random_setup(n, theta, b, preset, seed, 0).unwrap();
            let r = residue_check(&setup, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
            prop_assert!(r.max_residue < 1e-9, "{:?}", r);
        }
    }

    #[test]
    fn real_json_roundtrip(p in -50i64..50, q in 1i64..20, x in -1e3f64..1e3) {
        for r in [Real::ratio(p, q).unwrap(), Real::float(x)] {
            let text = serde_json::to_string(&r).unwrap();
            let back: Real = serde_json::from_str(&text).unwrap();
            prop_assert!(back.same(&r), "{} -> {}", r, text);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn solved_field_beats_the_corridor_extremes(a in 0.0f64..0.3, rho0 in 0.6f64..1.0, shrink in 0.6f64..1.0) {
        // h_T below h_0 and within speed one of it.
        let rho1 = (rho0 * shrink).max(0.6);
        let problem = VariationalProblem::with_cells(
            Profile::ramp_with_density(0.0, 1.0, rho0),
            Profile::ramp_with_density(a, 1.0, rho1),
            1.0,
            1.0,
            32,
        ).unwrap();
        let sol = solve_limit_shape(&problem, &SolverOptions::default()).unwrap();
        prop_assert!(sol.field.max_violation() <= 1e-9);
        let (hmax, hmin) = corridor(&problem).unwrap();
        let best = sol.report.entropy_term;
        prop_assert!(best >= entropy_functional(&hmax).unwrap() - 1e-12);
        prop_assert!(best >= entropy_functional(&hmin).unwrap() - 1e-12);
    }
}
