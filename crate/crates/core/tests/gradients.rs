use neurint::bundle::sample_initial_velocity;
use neurint::gradcheck::{check_training_objective, relative_error};
use neurint::ode::{AugmentedState, LatentTrajectory};
use neurint::training::{seeded_rng, TrainBatch};
use neurint::{
    Activation, InterpolatorKind, Mlp, MlpSpec, ModelBundle, ModelConfig, SolverConfig, SolverMethod, Tape, Tensor,
    TrainConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn fd_tensor(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut out = Tensor::zeros_like(x);
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + H;
        let up = f(&probe);
        probe.data_mut()[i] = orig - H;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * H);
    }
    out
}

fn assert_close(analytic: &Tensor, numeric: &Tensor, tol: f64) {
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        assert!(relative_error(*a, *n, FLOOR) < tol, "analytic {a} vs numeric {n}");
    }
}

#[test]
fn mlp_parameter_and_input_gradients() {
    let mut rng = seeded_rng(3);
    let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Activation::Identity).unwrap();
    let mlp = Mlp::init(spec.clone(), 1.0, &mut rng);
    let x = random(&mut rng, 5, 3);
    let c = random(&mut rng, 5, 2);
    let loss_of = |m: &Mlp, x: &Tensor| m.apply(x).unwrap().mul(&c).unwrap().sum();

    let tape = Tape::recording();
    let bound = mlp.bind(&tape, true);
    let xv = tape.param(x.clone());
    let loss = bound.forward(&xv).unwrap().mul(&tape.constant(c.clone())).unwrap().sum().unwrap();
    let grads = tape.backward(&loss).unwrap();

    assert_close(grads.get(&xv).unwrap(), &fd_tensor(&x, |x| loss_of(&mlp, x)), 1e-6);
    for (p, g) in bound.grads(&grads).iter().enumerate() {
        let numeric = fd_tensor(mlp.params()[p], |t| {
            let mut m = mlp.clone();
            *m.params_mut()[p] = t.clone();
            loss_of(&m, &x)
        });
        assert_close(g, &numeric, 1e-6);
    }
}

#[test]
fn integrated_endpoint_gradient_wrt_initial_velocity() {
    let mut rng = seeded_rng(5);
    let spec = MlpSpec::new(vec![4, 6, 2], Activation::Tanh, Activation::Identity).unwrap();
    let field = Mlp::init(spec, 1.0, &mut rng);
    let z0 = random(&mut rng, 3, 2);
    let v0 = random(&mut rng, 3, 2);
    for method in [SolverMethod::Euler, SolverMethod::Rk4] {
        let solver = SolverConfig::new(method, 8, 1.0).unwrap();
        let end_loss = |v: &Tensor| {
            let tape = Tape::inert();
            let f = field.bind(&tape, false);
            let state = AugmentedState::new(tape.constant(z0.clone()), tape.constant(v.clone())).unwrap();
            let traj = LatentTrajectory::integrate(&f, state, &solver).unwrap();
            traj.end().z.value().squared_norm()
        };
        let tape = Tape::recording();
        let f = field.bind(&tape, false);
        let vv = tape.param(v0.clone());
        let state = AugmentedState::new(tape.constant(z0.clone()), vv.clone()).unwrap();
        let traj = LatentTrajectory::integrate(&f, state, &solver).unwrap();
        let loss = traj.end().z.square().unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_close(grads.get(&vv).unwrap(), &fd_tensor(&v0, end_loss), 1e-6);
    }
}

#[test]
fn reparameterized_velocity_norm_gradient() {
    let mut rng = seeded_rng(9);
    let mu = random(&mut rng, 4, 3);
    let sigma = random(&mut rng, 4, 3).map(|s| s.abs() + 0.1);
    let eps = random(&mut rng, 4, 3);
    let tape = Tape::recording();
    let m = tape.param(mu.clone());
    let v0 = sample_initial_velocity(&m, &tape.constant(sigma.clone()), &tape.constant(eps.clone())).unwrap();
    let loss = v0.square().unwrap().sum().unwrap();
    let grads = tape.backward(&loss).unwrap();
    let g = grads.get(&m).unwrap();
    // d‖μ + εσ‖²/dμ = 2(μ + εσ)
    let exact = mu.add(&eps.mul(&sigma).unwrap()).unwrap().scale(2.0);
    assert!(g.sub(&exact).unwrap().max_abs() < 1e-12);
    let numeric = fd_tensor(&mu, |mu| mu.add(&eps.mul(&sigma).unwrap()).unwrap().squared_norm());
    assert_close(g, &numeric, 1e-6);
}

fn mini_model() -> ModelConfig {
    ModelConfig {
        latent_dim: 2,
        encoder_hidden: 4,
        velocity_hidden: 4,
        field_hidden: 4,
        generator_hidden: vec![4],
        discriminator_hidden: vec![4],
        field_init_scale: 1.0,
        ..ModelConfig::points(2)
    }
}

fn mini_batch(rng: &mut ChaCha8Rng) -> TrainBatch {
    let b = 3;
    TrainBatch {
        source: random(rng, b, 2),
        target: random(rng, b, 2),
        real: vec![random(rng, 2 * b, 2)],
        eps: random(rng, b, 2),
        grid_index: vec![1, 3, 2, 2, 1, 3],
    }
}

#[test]
fn full_objective_matches_finite_differences() {
    let mut config = TrainConfig::default();
    config.solver = SolverConfig::new(SolverMethod::Rk4, 4, 1.0).unwrap();
    config.time_samples = 2;
    for (seed, kind) in [
        InterpolatorKind::NeurInt,
        InterpolatorKind::FirstOrderPlain,
        InterpolatorKind::FirstOrderConditioned,
        InterpolatorKind::Lerp,
        InterpolatorKind::Slerp,
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = seeded_rng(seed as u64 + 20);
        let bundle = ModelBundle::init(mini_model(), kind, &mut rng).unwrap();
        let batch = mini_batch(&mut rng);
        let report = check_training_objective(&bundle, &batch, &config, 7.0, H, FLOOR).unwrap();
        assert!(report.checked > 50);
        assert!(
            report.max_relative_error < 1e-4,
            "{kind}: max relative error {} at {:?}",
            report.max_relative_error,
            report.worst
        );
    }
}

#[test]
fn saturating_objective_matches_finite_differences() {
    let mut config = TrainConfig::default();
    config.solver = SolverConfig::new(SolverMethod::Euler, 4, 1.0).unwrap();
    config.time_samples = 2;
    config.generator_loss = neurint::GeneratorLoss::Saturating;
    let mut rng = seeded_rng(40);
    let bundle = ModelBundle::init(mini_model(), InterpolatorKind::NeurInt, &mut rng).unwrap();
    let batch = mini_batch(&mut rng);
    let report = check_training_objective(&bundle, &batch, &config, 0.5, H, FLOOR).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn elementwise_product_sum_gradient() {
    let mut rng = seeded_rng(1);
    let a = random(&mut rng, 3, 3);
    let b = random(&mut rng, 3, 3);
    let tape = Tape::recording();
    let av = tape.param(a.clone());
    let loss = av.mul(&tape.constant(b.clone())).unwrap().sum().unwrap();
    let grads = tape.backward(&loss).unwrap();
    let numeric = fd_tensor(&a, |a| a.mul(&b).unwrap().sum());
    assert_close(grads.get(&av).unwrap(), &numeric, 1e-6);
}

#[test]
fn tanh_derivative_at_point_three() {
    let tape = Tape::recording();
    let x = tape.param(Tensor::scalar(0.3));
    let grads = tape.backward(&x.tanh().unwrap()).unwrap();
    let numeric = fd_tensor(&Tensor::scalar(0.3), |x| x.item().tanh());
    assert_close(grads.get(&x).unwrap(), &numeric, 1e-7);
}

#[test]
fn mean_gradient_is_one_over_n() {
    let mut rng = seeded_rng(2);
    let x = random(&mut rng, 4, 5);
    let tape = Tape::recording();
    let xv = tape.param(x.clone());
    let grads = tape.backward(&xv.mean().unwrap()).unwrap();
    let g = grads.get(&xv).unwrap();
    assert!(g.data().iter().all(|&v| v == 1.0 / 20.0));
    assert_close(g, &fd_tensor(&x, |x| x.mean()), 1e-6);
}

#[test]
fn generator_step_gradients_skip_the_discriminator() {
    let mut config = TrainConfig::default();
    config.solver = SolverConfig::new(SolverMethod::Rk4, 4, 1.0).unwrap();
    config.time_samples = 2;
    let mut rng = seeded_rng(11);
    let bundle = ModelBundle::init(mini_model(), InterpolatorKind::NeurInt, &mut rng).unwrap();
    let batch = mini_batch(&mut rng);
    let tape = Tape::recording();
    let bound = bundle.bind(&tape, &neurint::NetworkId::GENERATOR_SIDE);
    let total = neurint::training::generator_objective(&bound, &batch, &config, 3.0).unwrap().total;
    let grads = tape.backward(&total).unwrap();
    for id in neurint::NetworkId::GENERATOR_SIDE {
        let net = bound.network(id);
        assert!(net.params().iter().all(|p| grads.get(p).is_some()), "{id:?}");
        assert!(net.grads(&grads).iter().any(|g| g.max_abs() > 0.0), "{id:?}");
    }
    let d = bound.network(neurint::NetworkId::Discriminator);
    assert!(d.params().iter().all(|p| grads.get(p).is_none()));
}
