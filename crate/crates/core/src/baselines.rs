//! Comparison interpolators: closed-form LERP/SLERP, first-order latent
//! ODEs, and the decoupled pretrain-then-interpolate ablation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{CustomOp, Tape, Var};
use crate::bundle::{InterpolatorKind, ModelBundle, ModelConfig, NetworkId};
use crate::data::{Dataset, Support};
use crate::error::{Error, Result};
use crate::ode::{integrate, SolverConfig};
use crate::optim::Optimizer;
use crate::tensor::{Tensor, TensorError};
use crate::training::{self, LossReport, TrainConfig, TrainScope, Trainer};

/// SLERP degrades to LERP when the angle is within this of 0 or π.
pub const SLERP_ANGLE_EPS: f64 = 1e-6;

fn check_time(t: f64, total: f64) -> Result<f64> {
    if total > 0.0 && (0.0..=total).contains(&t) {
        Ok(t / total)
    } else {
        Err(Error::TimeOutOfRange { t, total })
    }
}

/// `(1 - t/T)·z₀ + (t/T)·z_T`.
pub fn lerp(z0: &[f64], zt: &[f64], t: f64, total: f64) -> Result<Vec<f64>> {
    let s = check_time(t, total)?;
    if z0.len() != zt.len() {
        return Err(shape_error("lerp", z0.len(), zt.len()));
    }
    Ok(z0.iter().zip(zt).map(|(a, b)| (1.0 - s) * a + s * b).collect())
}

/// Great-circle interpolation; falls back to [`lerp`] for (anti)parallel inputs.
pub fn slerp(z0: &[f64], zt: &[f64], t: f64, total: f64) -> Result<Vec<f64>> {
    let s = check_time(t, total)?;
    if z0.len() != zt.len() {
        return Err(shape_error("slerp", z0.len(), zt.len()));
    }
    let w = SlerpWeights::new(z0, zt, s)?;
    Ok(z0.iter().zip(zt).map(|(a, b)| w.p * a + w.q * b).collect())
}

fn shape_error(op: &'static str, a: usize, b: usize) -> Error {
    TensorError::ShapeMismatch {
        op,
        left: vec![a],
        right: vec![b],
    }
    .into()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-row SLERP coefficients `out = p·z₀ + q·z_T` and what the backward pass needs.
struct SlerpWeights {
    p: f64,
    q: f64,
    /// `None` on the LERP fallback branch.
    angle: Option<SlerpAngle>,
}

struct SlerpAngle {
    omega: f64,
    cos: f64,
    norm_a: f64,
    norm_b: f64,
}

impl SlerpWeights {
    fn new(a: &[f64], b: &[f64], s: f64) -> Result<Self> {
        let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
        if na == 0.0 || nb == 0.0 {
            return Err(TensorError::Domain { op: "slerp of a zero vector" }.into());
        }
        let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
        let omega = cos.acos();
        if !(SLERP_ANGLE_EPS..=std::f64::consts::PI - SLERP_ANGLE_EPS).contains(&omega) {
            return Ok(Self {
                p: 1.0 - s,
                q: s,
                angle: None,
            });
        }
        let sin = omega.sin();
        Ok(Self {
            p: ((1.0 - s) * omega).sin() / sin,
            q: (s * omega).sin() / sin,
            angle: Some(SlerpAngle {
                omega,
                cos,
                norm_a: na,
                norm_b: nb,
            }),
        })
    }
}

/// Backward rule for row-wise SLERP at a fixed fraction `s`.
struct SlerpOp {
    z0: Tensor,
    zt: Tensor,
    s: f64,
}

impl CustomOp for SlerpOp {
    fn name(&self) -> &'static str {
        "slerp"
    }

    fn backward(&self, grad: &Tensor) -> std::result::Result<Vec<Tensor>, TensorError> {
        let s = self.s;
        let mut ga = Tensor::zeros_like(&self.z0);
        let mut gb = Tensor::zeros_like(&self.zt);
        for r in 0..self.z0.rows() {
            let (a, b, g) = (self.z0.row(r), self.zt.row(r), grad.row(r));
            let w = SlerpWeights::new(a, b, s).map_err(|_| TensorError::Domain { op: "slerp backward" })?;
            let (ga_row, gb_row) = (ga.row_mut(r), gb.row_mut(r));
            for k in 0..a.len() {
                ga_row[k] = w.p * g[k];
                gb_row[k] = w.q * g[k];
            }
            if let Some(an) = w.angle {
                let sin = an.omega.sin();
                let cos_o = an.omega.cos();
                let dp = ((1.0 - s) * ((1.0 - s) * an.omega).cos() * sin - ((1.0 - s) * an.omega).sin() * cos_o)
                    / (sin * sin);
                let dq = (s * (s * an.omega).cos() * sin - (s * an.omega).sin() * cos_o) / (sin * sin);
                // dΩ/dcos = -1/sin Ω.
                let upstream = (dot(g, a) * dp + dot(g, b) * dq) * (-1.0 / sin);
                let nab = an.norm_a * an.norm_b;
                for k in 0..a.len() {
                    ga_row[k] += upstream * (b[k] / nab - an.cos * a[k] / (an.norm_a * an.norm_a));
                    gb_row[k] += upstream * (a[k] / nab - an.cos * b[k] / (an.norm_b * an.norm_b));
                }
            }
        }
        Ok(vec![ga, gb])
    }
}

/// Row-wise SLERP of two `[batch, d]` vars at time `t`, differentiable in both.
pub fn slerp_var<'t>(z0: &Var<'t>, zt: &Var<'t>, t: f64, total: f64) -> Result<Var<'t>> {
    let s = check_time(t, total)?;
    if z0.shape() != zt.shape() || z0.value().rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "slerp",
            left: z0.shape().to_vec(),
            right: zt.shape().to_vec(),
        }
        .into());
    }
    let (a, b) = (z0.value(), zt.value());
    let mut out = Tensor::zeros_like(a);
    for r in 0..a.rows() {
        let w = SlerpWeights::new(a.row(r), b.row(r), s)?;
        for (k, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = w.p * a.row(r)[k] + w.q * b.row(r)[k];
        }
    }
    let op = SlerpOp {
        z0: a.clone(),
        zt: b.clone(),
        s,
    };
    Ok(Var::custom(&[z0, zt], out, Box::new(op))?)
}

/// Row-wise LERP of two `[batch, d]` vars at time `t`.
pub fn lerp_var<'t>(z0: &Var<'t>, zt: &Var<'t>, t: f64, total: f64) -> Result<Var<'t>> {
    let s = check_time(t, total)?;
    Ok(Var::lincomb(&[(1.0 - s, z0), (s, zt)])?)
}

/// Field input for a first-order variant: `z`, or `z ∥ z_C` when conditioned.
fn first_order_input<'t>(z: &Var<'t>, conditioning: Option<&Var<'t>>) -> Result<Var<'t>> {
    Ok(match conditioning {
        Some(c) => Var::concat_cols(&[z, c])?,
        None => z.clone(),
    })
}

/// Evaluates a first-order field at `z`.
pub fn first_order_field<'t>(
    field: &crate::nets::BoundMlp<'t>,
    z: &Var<'t>,
    conditioning: Option<&Var<'t>>,
) -> Result<Var<'t>> {
    Ok(field.forward(&first_order_input(z, conditioning)?)?)
}

/// Solves `dz/dt = f(z)` or `dz/dt = f(z, z_C)` from `z0`; `z_C` is fixed
/// for the whole trajectory. Returns the state at every grid time.
pub fn first_order_integrate<'t>(
    field: &crate::nets::BoundMlp<'t>,
    z0: Var<'t>,
    conditioning: Option<&Var<'t>>,
    solver: &SolverConfig,
) -> Result<Vec<Var<'t>>> {
    integrate(&|z: &Var<'t>| first_order_field(field, z, conditioning), z0, solver)
}

/// Trains any interpolator kind with the shared training loop; only the
/// latent-path construction differs between kinds.
pub fn train_variant(
    kind: InterpolatorKind,
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelBundle, Vec<LossReport>)> {
    if kind == InterpolatorKind::NeurIntPt {
        let out = train_neurint_pt(dataset, model, config)?;
        return Ok((out.bundle, out.phase2));
    }
    training::train(dataset, model, kind, config)
}

/// Draws `n` standard-normal latents and decodes them with `G`.
pub fn sample_prior(bundle: &ModelBundle, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let z = standard_normal(rng, n, bundle.config.latent_dim);
    Ok(bundle.decode(&z)?)
}

pub(crate) fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Per-phase loss histories of the decoupled ablation.
pub struct PretrainedRun {
    pub bundle: ModelBundle,
    /// Step, discriminator loss and generator loss of the prior GAN.
    pub gan: Vec<(usize, f64, f64)>,
    /// Pixel MSE of the post-hoc encoder fit.
    pub encoder: Vec<f64>,
    pub phase2: Vec<LossReport>,
}

/// Phase 1 trains `G` and `D` as a plain GAN on an `N(0, I)` prior and then
/// fits `E` by pixel MSE with `G` frozen; phase 2 trains `E`, `V` and `f`
/// with the interpolation losses while `G` and `D` stay fixed.
///
/// Each phase runs for `config.steps` updates.
pub fn train_neurint_pt(dataset: &Dataset, model: &ModelConfig, config: &TrainConfig) -> Result<PretrainedRun> {
    config.validate()?;
    let bundle = {
        let mut rng = training::seeded_rng(config.seed);
        ModelBundle::init(model.clone(), InterpolatorKind::NeurIntPt, &mut rng)?
    };
    let mut trainer = Trainer::new(bundle, config.clone(), dataset)?;
    let gan = pretrain_prior_gan(&mut trainer, dataset)?;
    let encoder = fit_encoder(&mut trainer, dataset)?;
    trainer.set_scope(TrainScope::interpolator_only());
    trainer.run(dataset, config.steps)?;
    Ok(PretrainedRun {
        bundle: trainer.bundle,
        gan,
        encoder,
        phase2: trainer.history,
    })
}

fn pretrain_prior_gan(trainer: &mut Trainer, dataset: &Dataset) -> Result<Vec<(usize, f64, f64)>> {
    let config = trainer.config.clone();
    let n = config.batch_size * config.time_samples;
    let d = trainer.bundle.config.latent_dim;
    let mut g_opt = Optimizer::new(config.optimizer);
    let mut d_opt = Optimizer::new(config.optimizer);
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let real = dataset.sample_batch(Support::Train, n, &mut trainer.rng)?;
        let z = standard_normal(&mut trainer.rng, n, d);
        let fake = trainer.bundle.decode(&z)?;

        let tape = Tape::recording();
        let disc = trainer.bundle.discriminator.bind(&tape, true);
        let d_real = disc.forward(&tape.constant(real))?;
        let d_fake = disc.forward(&tape.constant(fake))?;
        let d_loss = training::discriminator_loss(&d_real, &d_fake)?;
        let d_value = d_loss.value().item();
        let grads = tape.backward(&d_loss)?;
        d_opt.step(&mut trainer.bundle.discriminator.params_mut(), &disc.grads(&grads))?;

        let tape = Tape::recording();
        let gen = trainer.bundle.generator.bind(&tape, true);
        let disc = trainer.bundle.discriminator.bind(&tape, false);
        let d_fake = disc.forward(&gen.forward(&tape.constant(z))?)?;
        let g_loss = training::generator_loss(&d_fake, config.generator_loss)?;
        let g_value = g_loss.value().item();
        let grads = tape.backward(&g_loss)?;
        g_opt.step(&mut trainer.bundle.generator.params_mut(), &gen.grads(&grads))?;

        if !(d_value.is_finite() && g_value.is_finite()) {
            return Err(Error::Diverged {
                step,
                reason: "non-finite prior GAN loss".into(),
            });
        }
        history.push((step, d_value, g_value));
    }
    Ok(history)
}

fn fit_encoder(trainer: &mut Trainer, dataset: &Dataset) -> Result<Vec<f64>> {
    let config = trainer.config.clone();
    let mut e_opt = Optimizer::new(config.optimizer);
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let x = dataset.sample_batch(Support::Train, config.batch_size, &mut trainer.rng)?;
        let tape = Tape::recording();
        let bound = trainer.bundle.bind(&tape, &[NetworkId::Encoder]);
        let xv = tape.constant(x);
        let recon = bound.generator.forward(&bound.encode_position(&xv)?)?;
        let loss = recon.sub(&xv)?.square()?.mean()?;
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "non-finite encoder loss".into(),
            });
        }
        let grads = tape.backward(&loss)?;
        e_opt.step(&mut trainer.bundle.encoder.params_mut(), &bound.encoder.grads(&grads))?;
        history.push(value);
    }
    Ok(history)
}
