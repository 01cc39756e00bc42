use nalgebra::{DMatrix, DVector};
use neurint::baselines::{lerp, slerp};
use neurint::eval::{first_principal_component, frechet_gaussian_distance, smoothness, FnCurve, GaussianFit};
use neurint::training::{lambda_at, seeded_rng, LambdaSchedule};
use neurint::{
    Checkpoint, InterpolatorKind, ModelBundle, RunConfig, SolverConfig, SolverMethod, Tensor, Trajectory,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

fn gaussian(d: usize) -> impl Strategy<Value = GaussianFit> {
    (prop::collection::vec(-1.0f64..1.0, d), prop::collection::vec(-1.0f64..1.0, d * d)).prop_map(move |(m, a)| {
        let a = DMatrix::from_vec(d, d, a);
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 1e-3;
        let cov = (&cov + cov.transpose()) * 0.5;
        GaussianFit::new(DVector::from_vec(m), cov).unwrap()
    })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frechet_is_zero_on_self_symmetric_and_nonnegative(a in gaussian(3), b in gaussian(3)) {
        prop_assert!(frechet_gaussian_distance(&a, &a).unwrap() < 1e-9);
        let ab = frechet_gaussian_distance(&a, &b).unwrap();
        let ba = frechet_gaussian_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
    }

    #[test]
    fn frechet_mean_shift_with_equal_covariance(a in gaussian(2), shift in prop::collection::vec(-3.0f64..3.0, 2)) {
        let mut b = a.clone();
        b.mean += DVector::from_vec(shift.clone());
        let expected: f64 = shift.iter().map(|s| s * s).sum();
        let got = frechet_gaussian_distance(&a, &b).unwrap();
        prop_assert!((got - expected).abs() < 1e-8 * (1.0 + expected));
    }

    #[test]
    fn frechet_is_translation_invariant(a in gaussian(2), b in gaussian(2), shift in prop::collection::vec(-3.0f64..3.0, 2)) {
        let s = DVector::from_vec(shift);
        let (mut a2, mut b2) = (a.clone(), b.clone());
        a2.mean += &s;
        b2.mean += &s;
        let d1 = frechet_gaussian_distance(&a, &b).unwrap();
        let d2 = frechet_gaussian_distance(&a2, &b2).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-8 * (1.0 + d1));
    }

    #[test]
    fn principal_component_beats_random_directions(x in matrix(30, 3), probes in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 100)) {
        let pc = first_principal_component(&x).unwrap();
        let fit = GaussianFit::fit(&x).unwrap();
        let rayleigh = |u: &[f64]| {
            let v = DVector::from_row_slice(u);
            (v.transpose() * &fit.cov * &v)[(0, 0)]
        };
        prop_assert!((rayleigh(&pc.direction) - pc.variance).abs() < 1e-9);
        for p in probes {
            if p.iter().map(|v| v * v).sum::<f64>() < 1e-6 {
                continue;
            }
            prop_assert!(rayleigh(&unit(&p)) <= pc.variance + 1e-8);
        }
    }

    #[test]
    fn lerp_and_slerp_hit_endpoints(a in prop::collection::vec(-2.0f64..2.0, 4), b in prop::collection::vec(-2.0f64..2.0, 4)) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        prop_assert_eq!(lerp(&a, &b, 0.0, 1.0).unwrap(), a.clone());
        prop_assert_eq!(lerp(&a, &b, 1.0, 1.0).unwrap(), b.clone());
        for (got, want) in slerp(&a, &b, 0.0, 1.0).unwrap().iter().zip(&a) {
            prop_assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in slerp(&a, &b, 1.0, 1.0).unwrap().iter().zip(&b) {
            prop_assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn slerp_of_unit_vectors_stays_on_the_sphere(a in prop::collection::vec(-1.0f64..1.0, 3), b in prop::collection::vec(-1.0f64..1.0, 3), s in 0.0f64..1.0) {
        prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-2 && b.iter().map(|v| v * v).sum::<f64>() > 1e-2);
        let (a, b) = (unit(&a), unit(&b));
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        prop_assume!(cos.abs() < 0.999);
        let p = slerp(&a, &b, s, 1.0).unwrap();
        let n: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hermite_dense_output_is_exact_at_nodes(z in matrix(5, 2), v in matrix(5, 2)) {
        let times = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let positions: Vec<Tensor> = (0..5).map(|i| Tensor::matrix(1, 2, z.row(i).to_vec())).collect();
        let slopes: Vec<Tensor> = (0..5).map(|i| Tensor::matrix(1, 2, v.row(i).to_vec())).collect();
        let traj = Trajectory::new(times.clone(), positions.clone(), slopes, true).unwrap();
        for (t, p) in times.iter().zip(&positions) {
            let got = traj.evaluate_at(*t).unwrap();
            prop_assert_eq!(got.data(), p.data());
        }
    }

    #[test]
    fn lambda_schedule_stays_between_endpoints(start in 100.0f64..2000.0, frac in 0.0f64..1.0, decay in 0.5f64..50.0, e1 in 0.0f64..100.0, e2 in 0.0f64..100.0) {
        let s = LambdaSchedule { start, end: start * frac, decay_epochs: decay };
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (a, b) = (lambda_at(&s, lo), lambda_at(&s, hi));
        prop_assert!(a >= b);
        prop_assert!(b >= s.end && a <= s.start);
    }

    #[test]
    fn smoothness_ignores_added_lines(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, n in 3usize..40) {
        let quad = FnCurve { total: 1.0, f: move |t: f64| Tensor::matrix(1, 1, vec![c * t * t]) };
        let shifted = FnCurve { total: 1.0, f: move |t: f64| Tensor::matrix(1, 1, vec![c * t * t + a * t + b]) };
        let s1 = smoothness(&quad, n).unwrap();
        let s2 = smoothness(&shifted, n).unwrap();
        prop_assert!((s1 - 4.0 * c * c).abs() < 1e-4 * (1.0 + s1));
        prop_assert!((s1 - s2).abs() < 1e-4 * (1.0 + s1));
    }

    #[test]
    fn transpose_is_an_involution_and_reverses_products(a in matrix(3, 4), b in matrix(4, 2)) {
        prop_assert_eq!(a.transpose().unwrap().transpose().unwrap(), a.clone());
        let lhs = a.matmul(&b).unwrap().transpose().unwrap();
        let rhs = b.transpose().unwrap().matmul(&a.transpose().unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn config_echo_round_trips(steps in 1usize..10_000, lr in 1e-6f64..1.0, lat in 1usize..32, solver_steps in 5usize..100, euler in any::<bool>(), seed in any::<u64>()) {
        let mut cfg = RunConfig::default();
        cfg.train.steps = steps;
        cfg.train.optimizer.learning_rate = lr;
        cfg.model.latent_dim = lat;
        cfg.train.solver = SolverConfig::new(if euler { SolverMethod::Euler } else { SolverMethod::Rk4 }, solver_steps, 1.0).unwrap();
        cfg.set_seed(seed);
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), kind_index in 0usize..5, hidden in 1usize..6) {
        let kinds = [InterpolatorKind::NeurInt, InterpolatorKind::Lerp, InterpolatorKind::Slerp, InterpolatorKind::FirstOrderPlain, InterpolatorKind::FirstOrderConditioned];
        let mut cfg = RunConfig::default();
        cfg.kind = kinds[kind_index];
        cfg.model.encoder_hidden = hidden;
        cfg.model.generator_hidden = vec![hidden, hidden + 1];
        let mut rng = seeded_rng(seed);
        let bundle = ModelBundle::init(cfg.model.clone(), cfg.kind, &mut rng).unwrap();
        let ck = Checkpoint {
            config: cfg.clone(),
            bundle,
            optimizers: neurint::training::Optimizers::new(cfg.train.optimizer),
            rng,
            step: seed as usize % 1000,
            scope: neurint::training::TrainScope::full(),
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
