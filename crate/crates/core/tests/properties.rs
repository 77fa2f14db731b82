use proptest::prelude::*;

use rons_core::assembler::{assemble_crons, assemble_srons, assemble_srons_monte_carlo, metric_l2_kernels, CollocationGrid};
use rons_core::gausspoly::inner_product;
use rons_core::oracle::quadrature::{adaptive, integrate_box};
use rons_core::{DriftModel, DriftTerm, GaussPoly, HilbertChoice, MixtureState, Polynomial, TimeGrid};

fn state_strategy(dim: usize, max_terms: usize) -> impl Strategy<Value = MixtureState> {
    (1..=max_terms).prop_flat_map(move |r| {
        (
            prop::collection::vec(0.3f64..1.5, r),
            prop::collection::vec(0.4f64..1.5, r),
            prop::collection::vec(prop::collection::vec(-1.5f64..1.5, dim), r),
        )
            .prop_map(move |(a, l, c)| MixtureState::new(dim, a, l, c).unwrap())
    })
}

fn drift_strategy(dim: usize) -> impl Strategy<Value = DriftModel> {
    let term = (prop::collection::vec(0u8..=2, dim), -1.0f64..1.0);
    (
        prop::collection::vec(prop::collection::vec(term, 1..4), dim),
        prop::collection::vec(0.05f64..1.0, dim),
    )
        .prop_map(move |(comps, nu)| {
            let components = comps
                .into_iter()
                .map(|c| c.into_iter().map(|(e, v)| DriftTerm::constant(&e, v)).collect())
                .collect();
            DriftModel::polynomial(dim, components, nu).unwrap()
        })
}

fn max_rel(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_families_equal_generic_metric(state in (1usize..=3).prop_flat_map(|d| state_strategy(d, 3))) {
        let drift = DriftModel::zero(state.dim(), 0.5).unwrap();
        let generic = assemble_srons(&drift, &state, 0.0, 0.0).unwrap().metric;
        let kernels = metric_l2_kernels(&state);
        prop_assert!(max_rel(&kernels, &generic) <= 1e-12);
    }

    #[test]
    fn one_dimensional_system_matches_quadrature(state in state_strategy(1, 3), drift in drift_strategy(1)) {
        let sys = assemble_srons(&drift, &state, 0.0, 0.0).unwrap();
        let partials = state.partial_gauss_polys();
        let lp = drift.apply_fp_operator(&state, 0.0).unwrap();
        let n = state.n_params();
        let quad = |f: &dyn Fn(f64) -> f64| adaptive(f, -14.0, 14.0, 1e-13, 1e-300);
        let scale_m = sys.metric.amax();
        for i in 0..n {
            for j in i..n {
                let (pi, pj) = (&partials[i], &partials[j]);
                let q = quad(&|x| pi.evaluate(&[x]).unwrap() * pj.evaluate(&[x]).unwrap());
                prop_assert!((sys.metric[(i, j)] - q).abs() <= 1e-10 * scale_m);
            }
            let pi = &partials[i];
            let q = quad(&|x| pi.evaluate(&[x]).unwrap() * lp.evaluate(&[x]).unwrap());
            prop_assert!((sys.rhs[i] - q).abs() <= 1e-10 * (sys.rhs.amax() + scale_m));
        }
    }

    #[test]
    fn collocation_metric_is_positive_semidefinite(
        state in state_strategy(2, 3),
        drift in drift_strategy(2),
        weighted in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let grid = CollocationGrid::random_uniform(&[-4.0, -4.0], &[4.0, 4.0], 300, seed).unwrap();
        let sys = assemble_crons(&drift, &state, 0.0, 0.0, &grid, weighted).unwrap();
        let eig = sys.metric.clone().symmetric_eigenvalues();
        let scale = sys.metric.amax();
        prop_assert!(eig.iter().all(|v| *v >= -1e-10 * scale));
    }

    #[test]
    fn monte_carlo_srons_equals_crons(
        dim in 1usize..=2,
        state in state_strategy(2, 3),
        drift in drift_strategy(2),
        seed in any::<u64>(),
    ) {
        // the strategies draw 2D values; project onto the first `dim` axes
        let state = if dim == 2 { state } else { project(&state) };
        let drift = if dim == 2 { drift } else { DriftModel::ornstein_uhlenbeck(0.7, 0.9).unwrap() };
        let lower = vec![-5.0; dim];
        let upper = vec![5.0; dim];
        let grid = CollocationGrid::random_uniform(&lower, &upper, 400, seed).unwrap();
        let volume = 10f64.powi(dim as i32);
        let mc = assemble_srons_monte_carlo(&drift, &state, 0.2, 0.0, &grid, volume).unwrap();
        let col = assemble_crons(&drift, &state, 0.2, 0.0, &grid, false).unwrap();
        let scale = grid.len() as f64 / volume;
        prop_assert!(max_rel(&(&mc.metric * scale), &col.metric) <= 1e-12);
        let df = (&mc.rhs * scale - &col.rhs).amax() / col.rhs.amax();
        prop_assert!(df <= 1e-12);
    }

    #[test]
    fn constrained_velocity_is_tangent_to_the_constraint(
        state in state_strategy(2, 4),
        drift in drift_strategy(2),
        alpha in 1e-8f64..1e-2,
    ) {
        let state = state.normalized();
        let sys = assemble_srons(&drift, &state, 0.0, alpha).unwrap();
        let sol = sys.solve().unwrap();
        let g = &sys.constraint_grad;
        let along = g.dot(&sol.theta_dot).abs();
        prop_assert!(along <= 1e-9 * g.norm() * sol.theta_dot.norm().max(1e-300));
    }

    #[test]
    fn inner_product_is_symmetric_and_matches_quadrature(
        c1 in -1.0f64..1.0, c2 in -1.0f64..1.0,
        w1 in 0.4f64..1.4, w2 in 0.4f64..1.4,
        coeffs in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mut p = Polynomial::zero(1);
        let mut q = Polynomial::zero(1);
        for (k, c) in coeffs.iter().enumerate() {
            p.add_term(&[k as u8], *c);
            q.add_term(&[(3 - k) as u8], c * 0.5 + 0.1);
        }
        let g1 = GaussPoly::new(p, vec![c1], w1).unwrap();
        let g2 = GaussPoly::new(q, vec![c2], w2).unwrap();
        let ab = inner_product(&g1, &g2).unwrap();
        let ba = inner_product(&g2, &g1).unwrap();
        // roundoff scales with the integral of |g1 g2|, not with the (possibly cancelling) result
        let scale = integrate_box(&[-14.0], &[14.0], 64, 8, |x| (g1.evaluate(x).unwrap() * g2.evaluate(x).unwrap()).abs());
        prop_assert!((ab - ba).abs() <= 1e-14 * scale, "{ab} vs {ba}, scale {scale}");
        let quad = integrate_box(&[-14.0], &[14.0], 64, 8, |x| g1.evaluate(x).unwrap() * g2.evaluate(x).unwrap());
        prop_assert!((ab - quad).abs() <= 1e-11 * scale);
    }

    #[test]
    fn flat_parameters_round_trip(state in state_strategy(3, 4)) {
        let back = MixtureState::from_flat(3, &state.to_flat()).unwrap();
        prop_assert_eq!(back, state);
    }

    #[test]
    fn normalization_gives_unit_mass_and_keeps_shape(state in state_strategy(2, 4)) {
        let n = state.normalized();
        prop_assert!((n.total_probability() - 1.0).abs() <= 1e-13);
        let ratio = n.evaluate(&[0.1, -0.2]).unwrap() / state.evaluate(&[0.1, -0.2]).unwrap();
        prop_assert!((ratio * state.total_probability() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(n.widths(), state.widths());
    }

    #[test]
    fn mixture_moments_match_quadrature(state in state_strategy(1, 3)) {
        let s = state.normalized();
        let m = integrate_box(&[-14.0], &[14.0], 64, 8, |x| x[0] * s.evaluate(x).unwrap());
        let v = integrate_box(&[-14.0], &[14.0], 64, 8, |x| (x[0] - m).powi(2) * s.evaluate(x).unwrap());
        prop_assert!((s.mean()[0] - m).abs() <= 1e-12);
        prop_assert!((s.covariance()[0] - v).abs() <= 1e-12 * v.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trajectories_conserve_probability(state in separated_strategy(3), weighted in any::<bool>()) {
        let drift = DriftModel::bistable(0.5).unwrap();
        let state = state.normalized();
        let space = if weighted {
            HilbertChoice::weighted_collocation(CollocationGrid::equidistant(&[-4.0], &[4.0], &[100]).unwrap())
        } else {
            HilbertChoice::l2_symbolic()
        };
        let grid = TimeGrid::new(0.0, 0.5).tolerances(1e-7, 1e-9).uniform_checkpoints(5);
        let tr = rons_core::integrate(&drift, &state, &space, 1e-4, &grid).unwrap();
        prop_assert!(tr.max_conservation_error() <= 1e-8);
        prop_assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }
}

// terms at least 0.9 apart with moderate widths; coincident terms make the metric singular
fn separated_strategy(max_terms: usize) -> impl Strategy<Value = MixtureState> {
    (1..=max_terms).prop_flat_map(|r| {
        (
            prop::collection::vec(0.6f64..1.2, r),
            prop::collection::vec(0.5f64..0.9, r),
            prop::collection::vec(-0.2f64..0.2, r),
        )
            .prop_map(move |(a, l, jitter)| {
                let centers = jitter.iter().enumerate().map(|(k, j)| vec![1.3 * k as f64 - 1.3 + j]).collect();
                MixtureState::new(1, a, l, centers).unwrap()
            })
    })
}

fn project(state: &MixtureState) -> MixtureState {
    let centers = (0..state.terms()).map(|k| vec![state.center(k)[0]]).collect();
    MixtureState::new(1, state.amps().to_vec(), state.widths().to_vec(), centers).unwrap()
}
