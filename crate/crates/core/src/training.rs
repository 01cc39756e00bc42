//! Minimax training: endpoint reconstruction plus an adversarial loss on
//! decoded samples from the interior of each latent path.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::bundle::{BoundBundle, InterpolatorKind, ModelBundle, ModelConfig, NetworkId};
use crate::data::{Dataset, Support};
use crate::error::{Error, Result};
use crate::model::{draw_eps, latent_path, PathGrid};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::ode::SolverConfig;
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-7;

/// Generator-side adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorLoss {
    /// `-log D(G(z))`.
    NonSaturating,
    /// `log(1 - D(G(z)))`, the fake term of the value function itself.
    Saturating,
}

impl GeneratorLoss {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorLoss::NonSaturating => "non-saturating",
            GeneratorLoss::Saturating => "saturating",
        }
    }
}

impl fmt::Display for GeneratorLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-saturating" => Ok(GeneratorLoss::NonSaturating),
            "saturating" => Ok(GeneratorLoss::Saturating),
            _ => Err(Error::Config(format!("unknown generator loss '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Generator-side updates.
    pub steps: usize,
    pub batch_size: usize,
    /// Interior time samples per pair (`N`).
    pub time_samples: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Length of the linear decay; `None` decays over the first half of training.
    pub lambda_decay_epochs: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub solver: SolverConfig,
    pub seed: u64,
    pub disc_steps: usize,
    /// When false the adversarial terms are dropped and only `λ·L_AE` is minimized.
    pub adversarial: bool,
    pub generator_loss: GeneratorLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            time_samples: 4,
            lambda_start: 1000.0,
            lambda_end: 100.0,
            lambda_decay_epochs: None,
            optimizer: OptimizerConfig::default(),
            solver: SolverConfig::default(),
            seed: 0,
            disc_steps: 1,
            adversarial: true,
            generator_loss: GeneratorLoss::NonSaturating,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.disc_steps == 0 {
            return bad("batch_size and disc_steps must be positive".into());
        }
        if self.time_samples == 0 || self.time_samples + 1 > self.solver.steps {
            return bad(format!(
                "time_samples must be in 1..={} for {} solver steps",
                self.solver.steps.saturating_sub(1),
                self.solver.steps
            ));
        }
        if !(self.lambda_end > 0.0 && self.lambda_start >= self.lambda_end) {
            return bad(format!(
                "need lambda_start >= lambda_end > 0, got {} and {}",
                self.lambda_start, self.lambda_end
            ));
        }
        if let Some(e) = self.lambda_decay_epochs {
            if !(e > 0.0) {
                return bad(format!("lambda_decay_epochs must be positive, got {e}"));
            }
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size).max(1)
    }

    pub fn schedule(&self, n_train: usize) -> LambdaSchedule {
        let total_epochs = self.steps as f64 / self.steps_per_epoch(n_train) as f64;
        LambdaSchedule {
            start: self.lambda_start,
            end: self.lambda_end,
            decay_epochs: self.lambda_decay_epochs.unwrap_or(total_epochs / 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_epochs: f64,
}

/// Linear decay from `start` to `end` over `decay_epochs`, constant after.
pub fn lambda_at(schedule: &LambdaSchedule, epoch: f64) -> f64 {
    if epoch >= schedule.decay_epochs || schedule.decay_epochs <= 0.0 {
        return schedule.end;
    }
    let frac = epoch.max(0.0) / schedule.decay_epochs;
    schedule.start + (schedule.end - schedule.start) * frac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub epoch: f64,
    pub lambda: f64,
    pub reconstruction: f64,
    pub discriminator: f64,
    pub generator: f64,
}

pub const HISTORY_HEADER: &str = "step,epoch,lambda,l_ae,l_gan_disc,l_gan_gen";

pub fn write_history_csv(out: &mut impl Write, history: &[LossReport]) -> Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.epoch, r.lambda, r.reconstruction, r.discriminator, r.generator
        )?;
    }
    Ok(())
}

/// `‖x_S − G(z₀)‖² + ‖x_T − G(z_T)‖²`, averaged over the batch.
pub fn reconstruction_loss<'t>(
    bound: &BoundBundle<'t>,
    source: &Var<'t>,
    target: &Var<'t>,
    path: &PathGrid<'t>,
) -> Result<Var<'t>> {
    let batch = source.value().rows() as f64;
    let rs = bound.generator.forward(path.start())?.sub(source)?.square()?.sum()?;
    let rt = bound.generator.forward(path.end())?.sub(target)?.square()?.sum()?;
    Ok(rs.add(&rt)?.scale(1.0 / batch)?)
}

/// Distinct interior grid indices, uniform over `1..steps`.
pub fn sample_timepoints(rng: &mut impl Rng, n: usize, solver: &SolverConfig) -> Result<Vec<usize>> {
    let interior = solver.steps.saturating_sub(1);
    if n == 0 || n > interior {
        return Err(Error::Config(format!(
            "cannot draw {n} distinct interior times from {interior} grid points"
        )));
    }
    Ok(index::sample(rng, interior, n).into_iter().map(|i| i + 1).collect())
}

fn log_floor<'t>(p: &Var<'t>) -> Result<Var<'t>> {
    Ok(p.clamp(LOG_FLOOR, 1.0)?.log()?)
}

/// `-mean[log D(x) + log(1 − D(G(z)))]` from discriminator outputs.
pub fn discriminator_loss<'t>(d_real: &Var<'t>, d_fake: &Var<'t>) -> Result<Var<'t>> {
    let real = log_floor(d_real)?.mean()?;
    let fake = log_floor(&d_fake.scale(-1.0)?.add_scalar(1.0)?)?.mean()?;
    Ok(real.add(&fake)?.scale(-1.0)?)
}

pub fn generator_loss<'t>(d_fake: &Var<'t>, kind: GeneratorLoss) -> Result<Var<'t>> {
    Ok(match kind {
        GeneratorLoss::NonSaturating => log_floor(d_fake)?.mean()?.scale(-1.0)?,
        GeneratorLoss::Saturating => log_floor(&d_fake.scale(-1.0)?.add_scalar(1.0)?)?.mean()?,
    })
}

/// Discriminator and generator losses for equal-sized real and fake batches;
/// the fakes are decoded from `fake_latents` with the bound generator.
pub fn adversarial_losses<'t>(
    bound: &BoundBundle<'t>,
    real: &Var<'t>,
    fake_latents: &Var<'t>,
    kind: GeneratorLoss,
) -> Result<(Var<'t>, Var<'t>)> {
    if real.value().rows() != fake_latents.value().rows() {
        return Err(Error::Config(format!(
            "adversarial batch needs equal counts, got {} real and {} fake",
            real.value().rows(),
            fake_latents.value().rows()
        )));
    }
    let fake = bound.generator.forward(fake_latents)?;
    let d_real = bound.discriminator.forward(real)?;
    let d_fake = bound.discriminator.forward(&fake)?;
    Ok((discriminator_loss(&d_real, &d_fake)?, generator_loss(&d_fake, kind)?))
}

/// Which networks a training step updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainScope {
    pub generator_side: Vec<NetworkId>,
    pub discriminator: bool,
}

impl TrainScope {
    pub fn full() -> Self {
        Self {
            generator_side: NetworkId::GENERATOR_SIDE.to_vec(),
            discriminator: true,
        }
    }

    /// `E`, `V` and `f` only; `G` and `D` frozen.
    pub fn interpolator_only() -> Self {
        Self {
            generator_side: vec![NetworkId::Encoder, NetworkId::Velocity, NetworkId::Field],
            discriminator: false,
        }
    }
}

/// One optimizer per network, indexed like [`NetworkId::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers(pub Vec<Optimizer>);

impl Optimizers {
    pub fn new(config: OptimizerConfig) -> Self {
        Self(NetworkId::ALL.iter().map(|_| Optimizer::new(config)).collect())
    }

    pub fn get_mut(&mut self, id: NetworkId) -> &mut Optimizer {
        let i = NetworkId::ALL.iter().position(|&n| n == id).unwrap();
        &mut self.0[i]
    }
}

/// Inputs of one training step.
pub struct TrainBatch {
    pub source: Tensor,
    pub target: Tensor,
    /// One `[batch·N, data]` real batch per discriminator step.
    pub real: Vec<Tensor>,
    /// `[batch, latent]` noise.
    pub eps: Tensor,
    /// Interior grid index per fake sample, `(sample, pair)` order.
    pub grid_index: Vec<usize>,
}

impl TrainBatch {
    pub fn draw(dataset: &Dataset, config: &TrainConfig, latent_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let b = config.batch_size;
        let (source, target) = dataset.sample_pairs(Support::Train, b, rng)?;
        let real = (0..config.disc_steps)
            .map(|_| dataset.sample_batch(Support::Train, b * config.time_samples, rng))
            .collect::<Result<Vec<_>>>()?;
        let eps = draw_eps(rng, b, latent_dim);
        let per_pair = (0..b)
            .map(|_| sample_timepoints(rng, config.time_samples, &config.solver))
            .collect::<Result<Vec<_>>>()?;
        let grid_index = (0..config.time_samples)
            .flat_map(|n| per_pair.iter().map(move |p| p[n]))
            .collect();
        Ok(Self {
            source,
            target,
            real,
            eps,
            grid_index,
        })
    }
}

/// Losses observed during one step; the discriminator value is from before
/// its update. Terms a step does not compute are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub reconstruction: f64,
    pub discriminator: f64,
    pub generator: f64,
}

/// Generator-side objective `λ·L_AE + L_gen` and its parts.
pub struct Objective<'t> {
    pub total: Var<'t>,
    pub reconstruction: Var<'t>,
    /// `None` when the adversarial term is switched off.
    pub generator: Option<Var<'t>>,
}

/// Builds the generator-side objective for `batch` on `bound`'s tape.
pub fn generator_objective<'t>(
    bound: &BoundBundle<'t>,
    batch: &TrainBatch,
    config: &TrainConfig,
    lambda: f64,
) -> Result<Objective<'t>> {
    let tape = bound.generator.params()[0].tape();
    let source = tape.constant(batch.source.clone());
    let target = tape.constant(batch.target.clone());
    let path = latent_path(bound, &source, &target, &tape.constant(batch.eps.clone()), &config.solver)?;
    let reconstruction = reconstruction_loss(bound, &source, &target, &path)?;
    let mut total = reconstruction.scale(lambda)?;
    let mut generator = None;
    if config.adversarial {
        let fake = bound.generator.forward(&path.gather(&batch.grid_index)?)?;
        let d_fake = bound.discriminator.forward(&fake)?;
        let gen = generator_loss(&d_fake, config.generator_loss)?;
        total = total.add(&gen)?;
        generator = Some(gen);
    }
    Ok(Objective {
        total,
        reconstruction,
        generator,
    })
}

/// Discriminator ascent step(s) followed by one descent step of the
/// generator-side networks on `L_gen + λ·L_AE`.
pub fn train_step(
    bundle: &mut ModelBundle,
    optimizers: &mut Optimizers,
    batch: &TrainBatch,
    config: &TrainConfig,
    lambda: f64,
    scope: &TrainScope,
) -> Result<StepLosses> {
    let mut disc_value = 0.0;
    if config.adversarial && scope.discriminator {
        // Fakes come from an untracked pass; only D is on the tape.
        let fakes = {
            let tape = Tape::inert();
            let bound = bundle.bind(&tape, &[]);
            let path = latent_path(
                &bound,
                &tape.constant(batch.source.clone()),
                &tape.constant(batch.target.clone()),
                &tape.constant(batch.eps.clone()),
                &config.solver,
            )?;
            bound.generator.forward(&path.gather(&batch.grid_index)?)?.value().clone()
        };
        for real in &batch.real {
            let tape = Tape::recording();
            let disc = bundle.discriminator.bind(&tape, true);
            let d_real = disc.forward(&tape.constant(real.clone()))?;
            let d_fake = disc.forward(&tape.constant(fakes.clone()))?;
            let loss = discriminator_loss(&d_real, &d_fake)?;
            disc_value = loss.value().item();
            let grads = tape.backward(&loss)?;
            optimizers
                .get_mut(NetworkId::Discriminator)
                .step(&mut bundle.discriminator.params_mut(), &disc.grads(&grads))?;
        }
    }

    let tape = Tape::recording();
    let bound = bundle.bind(&tape, &scope.generator_side);
    let objective = generator_objective(&bound, batch, config, lambda)?;
    let total = objective.total;
    let rec_value = objective.reconstruction.value().item();
    let gen_value = objective.generator.map_or(0.0, |g| g.value().item());
    if !total.value().item().is_finite() {
        return Err(Error::Diverged {
            step: 0,
            reason: format!("non-finite loss (L_AE = {rec_value}, L_gen = {gen_value})"),
        });
    }
    let grads = tape.backward(&total)?;
    for &id in &scope.generator_side {
        let g = bound.network(id).grads(&grads);
        optimizers.get_mut(id).step(&mut bundle.network_mut(id).params_mut(), &g)?;
    }
    Ok(StepLosses {
        reconstruction: rec_value,
        discriminator: disc_value,
        generator: gen_value,
    })
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Training state that can be advanced step by step and checkpointed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    pub optimizers: Optimizers,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub history: Vec<LossReport>,
    pub scope: TrainScope,
    schedule: LambdaSchedule,
    steps_per_epoch: usize,
}

impl Trainer {
    /// Starts from `bundle` with the rng stream continuing from `seed`'s
    /// state after bundle initialization, as [`train`] does.
    pub fn new(bundle: ModelBundle, config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        let mut rng = seeded_rng(config.seed);
        // Advance past the draws used by initialization so a trainer built
        // from a freshly initialized bundle matches `train`.
        let _ = ModelBundle::init(bundle.config.clone(), bundle.kind, &mut rng)?;
        Self::with_rng(bundle, config, dataset, rng)
    }

    pub fn with_rng(bundle: ModelBundle, config: TrainConfig, dataset: &Dataset, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if dataset.data_dim() != bundle.config.data_dim {
            return Err(Error::Config(format!(
                "dataset has {} coordinates, model expects {}",
                dataset.data_dim(),
                bundle.config.data_dim
            )));
        }
        let n_train = dataset.indices(Support::Train).len();
        if n_train < 2 {
            return Err(Error::Data(format!("training needs at least 2 train items, got {n_train}")));
        }
        Ok(Self {
            optimizers: Optimizers::new(config.optimizer),
            schedule: config.schedule(n_train),
            steps_per_epoch: config.steps_per_epoch(n_train),
            bundle,
            config,
            rng,
            step: 0,
            history: Vec::new(),
            scope: TrainScope::full(),
        })
    }

    pub fn set_scope(&mut self, scope: TrainScope) {
        self.scope = scope;
    }

    pub fn schedule(&self) -> &LambdaSchedule {
        &self.schedule
    }

    pub fn epoch(&self) -> f64 {
        self.step as f64 / self.steps_per_epoch as f64
    }

    pub fn step(&mut self, dataset: &Dataset) -> Result<LossReport> {
        let epoch = self.epoch();
        let lambda = lambda_at(&self.schedule, epoch);
        let batch = TrainBatch::draw(dataset, &self.config, self.bundle.config.latent_dim, &mut self.rng)?;
        let losses = train_step(
            &mut self.bundle,
            &mut self.optimizers,
            &batch,
            &self.config,
            lambda,
            &self.scope,
        )
        .map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged { step: self.step, reason },
            other => other,
        })?;
        let report = LossReport {
            step: self.step,
            epoch,
            lambda,
            reconstruction: losses.reconstruction,
            discriminator: losses.discriminator,
            generator: losses.generator,
        };
        self.history.push(report);
        self.step += 1;
        Ok(report)
    }

    pub fn run(&mut self, dataset: &Dataset, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(dataset)?;
        }
        Ok(())
    }
}

/// Initializes a bundle of the given kind from `config.seed` and trains it
/// for `config.steps` steps.
pub fn train(
    dataset: &Dataset,
    model: &ModelConfig,
    kind: InterpolatorKind,
    config: &TrainConfig,
) -> Result<(ModelBundle, Vec<LossReport>)> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let bundle = ModelBundle::init(model.clone(), kind, &mut rng)?;
    let mut trainer = Trainer::with_rng(bundle, config.clone(), dataset, rng)?;
    trainer.run(dataset, config.steps)?;
    Ok((trainer.bundle, trainer.history))
}
