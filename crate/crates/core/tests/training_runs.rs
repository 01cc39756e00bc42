//! Short end-to-end training runs on ring2d.

use neurint::baselines::train_variant;
use neurint::data::manifold_residual;
use neurint::eval::{endpoint_mse, eval_generation, EvalConfig};
use neurint::model::generate_curve;
use neurint::training::{seeded_rng, train};
use neurint::{Dataset, DatasetName, InterpolatorKind, ModelBundle, ModelConfig, Support, Tensor, TrainConfig, Trainer};

fn ring() -> Dataset {
    Dataset::generate(DatasetName::Ring2d, 2000, 0).unwrap()
}

fn autoencoder_error(bundle: &ModelBundle, data: &Dataset) -> f64 {
    let x = data.subset(Support::Train);
    let rec = bundle.decode(&bundle.encode_position(&x).unwrap()).unwrap();
    rec.sub(&x).unwrap().squared_norm() / x.rows() as f64
}

#[test]
fn every_variant_trains_with_finite_losses() {
    let data = ring();
    let config = TrainConfig {
        steps: 200,
        ..TrainConfig::default()
    };
    for kind in InterpolatorKind::ALL {
        let (bundle, history) = train_variant(kind, &data, &ModelConfig::points(2), &config).unwrap();
        assert!(!history.is_empty(), "{kind}");
        for r in &history {
            assert!(
                r.reconstruction.is_finite() && r.discriminator.is_finite() && r.generator.is_finite(),
                "{kind}: {r:?}"
            );
        }
        assert!(autoencoder_error(&bundle, &data).is_finite());
    }
}

#[test]
fn without_adversary_training_is_an_endpoint_autoencoder() {
    let data = ring();
    let config = TrainConfig {
        adversarial: false,
        ..TrainConfig::default()
    };
    let mut rng = seeded_rng(config.seed);
    let bundle = ModelBundle::init(ModelConfig::points(2), InterpolatorKind::NeurInt, &mut rng).unwrap();
    let mut trainer = Trainer::with_rng(bundle, config, &data, rng).unwrap();
    let mut errors = vec![autoencoder_error(&trainer.bundle, &data)];
    for _ in 0..5 {
        trainer.run(&data, 20).unwrap();
        errors.push(autoencoder_error(&trainer.bundle, &data));
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(trainer.history.iter().all(|r| r.generator == 0.0 && r.discriminator == 0.0));
}

#[test]
fn default_training_reconstructs_endpoints_and_beats_untrained() {
    let data = ring();
    let model = ModelConfig::points(2);
    let config = TrainConfig::default();
    let (trained, _) = train(&data, &model, InterpolatorKind::NeurInt, &config).unwrap();
    let untrained = ModelBundle::init(model, InterpolatorKind::NeurInt, &mut seeded_rng(config.seed)).unwrap();
    let eval = EvalConfig::default();

    let mse = endpoint_mse(&trained, &data, &eval, &config.solver).unwrap();
    assert!(mse < 1e-2, "endpoint mse {mse}");
    assert!(autoencoder_error(&trained, &data) < 1e-2);

    let fid_trained = eval_generation(&trained, &data, &eval, &config.solver).unwrap();
    let fid_untrained = eval_generation(&untrained, &data, &eval, &config.solver).unwrap();
    assert!(fid_trained < fid_untrained, "{fid_trained} vs {fid_untrained}");

    // Source equal to target with zero noise: both ends decode the same point.
    let x = data.subset(Support::Train).select_rows(&(0..200).collect::<Vec<_>>()).unwrap();
    let eps = Tensor::zeros(&[200, trained.config.latent_dim]);
    let curve = generate_curve(&trained, &x, &x, Some(eps), &config.solver, &mut seeded_rng(1)).unwrap();
    let (c0, ct) = (curve.at(0.0).unwrap(), curve.at(config.solver.total_time).unwrap());
    let mut gap = 0.0;
    let mut rec = 0.0;
    for r in 0..200 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        gap += d(c0.row(r), ct.row(r));
        rec += (d(c0.row(r), x.row(r)) + d(ct.row(r), x.row(r))) / 2.0;
    }
    assert!(gap < 2.0 * rec, "gap {gap} vs reconstruction {rec}");
}

#[test]
fn lerp_midpoint_of_antipodal_points_leaves_the_ring() {
    let a = [0.6, 0.8];
    let b = [-0.6, -0.8];
    let mid = neurint::baselines::lerp(&a, &b, 0.5, 1.0).unwrap();
    let r = manifold_residual(DatasetName::Ring2d, &Tensor::matrix(1, 2, mid)).unwrap();
    assert!((r[0] - 1.0).abs() < 1e-12);
}
