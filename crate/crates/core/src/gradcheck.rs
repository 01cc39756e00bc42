//! Central finite-difference checks of reverse-mode gradients.

use crate::autograd::Tape;
use crate::bundle::{ModelBundle, NetworkId};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::training::{discriminator_loss, generator_objective, TrainBatch, TrainConfig};

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Network, parameter tensor, element, analytic, numeric.
    pub worst: Option<(NetworkId, usize, usize, f64, f64)>,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            checked: 0,
            max_relative_error: 0.0,
            worst: None,
        }
    }

    fn record(&mut self, id: NetworkId, p: usize, i: usize, a: f64, n: f64, floor: f64) {
        let e = relative_error(a, n, floor);
        self.checked += 1;
        if e > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = self.max_relative_error.max(e);
            self.worst = Some((id, p, i, a, n));
        }
    }

    fn merge(mut self, other: GradCheck) -> Self {
        self.checked += other.checked;
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
        self
    }
}

/// Compares `grads[id][p]` with central differences of `loss` for every
/// parameter element of the listed networks.
pub fn check_bundle(
    bundle: &ModelBundle,
    nets: &[NetworkId],
    grads: &[(NetworkId, Vec<Tensor>)],
    loss: impl Fn(&ModelBundle) -> Result<f64>,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let mut report = GradCheck::new();
    let mut probe = bundle.clone();
    for &id in nets {
        let analytic = &grads.iter().find(|(g, _)| *g == id).expect("gradients for every checked network").1;
        for (p, grad) in analytic.iter().enumerate() {
            for i in 0..grad.len() {
                let orig = probe.network(id).params()[p].data()[i];
                probe.network_mut(id).params_mut()[p].data_mut()[i] = orig + h;
                let up = loss(&probe)?;
                probe.network_mut(id).params_mut()[p].data_mut()[i] = orig - h;
                let down = loss(&probe)?;
                probe.network_mut(id).params_mut()[p].data_mut()[i] = orig;
                report.record(id, p, i, grad.data()[i], (up - down) / (2.0 * h), floor);
            }
        }
    }
    Ok(report)
}

/// Checks the full training objective: the generator-side objective with
/// respect to every network, and the discriminator loss (on fakes from the
/// current model) with respect to the discriminator.
pub fn check_training_objective(
    bundle: &ModelBundle,
    batch: &TrainBatch,
    config: &TrainConfig,
    lambda: f64,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let gen_loss = |b: &ModelBundle| -> Result<f64> {
        let tape = Tape::inert();
        let bound = b.bind(&tape, &[]);
        Ok(generator_objective(&bound, batch, config, lambda)?.total.value().item())
    };
    let tape = Tape::recording();
    let bound = bundle.bind(&tape, &NetworkId::ALL);
    let total = generator_objective(&bound, batch, config, lambda)?.total;
    let grads = tape.backward(&total)?;
    let analytic: Vec<_> = NetworkId::ALL.iter().map(|&id| (id, bound.network(id).grads(&grads))).collect();
    let gen_report = check_bundle(bundle, &NetworkId::ALL, &analytic, gen_loss, h, floor)?;

    let fakes = {
        let tape = Tape::inert();
        let bound = bundle.bind(&tape, &[]);
        let path = crate::model::latent_path(
            &bound,
            &tape.constant(batch.source.clone()),
            &tape.constant(batch.target.clone()),
            &tape.constant(batch.eps.clone()),
            &config.solver,
        )?;
        bound.generator.forward(&path.gather(&batch.grid_index)?)?.value().clone()
    };
    let real = &batch.real[0];
    let disc_loss = |b: &ModelBundle| -> Result<f64> {
        let tape = Tape::inert();
        let d = b.discriminator.bind(&tape, false);
        let l = discriminator_loss(&d.forward(&tape.constant(real.clone()))?, &d.forward(&tape.constant(fakes.clone()))?)?;
        Ok(l.value().item())
    };
    let tape = Tape::recording();
    let d = bundle.discriminator.bind(&tape, true);
    let l = discriminator_loss(&d.forward(&tape.constant(real.clone()))?, &d.forward(&tape.constant(fakes.clone()))?)?;
    let grads = tape.backward(&l)?;
    let analytic = vec![(NetworkId::Discriminator, d.grads(&grads))];
    let disc_report = check_bundle(bundle, &[NetworkId::Discriminator], &analytic, disc_loss, h, floor)?;
    Ok(gen_report.merge(disc_report))
}
