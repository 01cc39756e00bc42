//! The full set of networks: position encoder `E`, velocity encoder `V`,
//! vector field `f`, generator `G` and discriminator `D`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::nets::{Activation, BoundMlp, Mlp, MlpSpec};
use crate::tensor::{Result, Tensor, TensorError};

/// Bounds on the velocity encoder's log-σ output.
pub const LOG_SIGMA_MIN: f64 = -8.0;
pub const LOG_SIGMA_MAX: f64 = 4.0;

/// How the latent path between source and target is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterpolatorKind {
    /// Second-order ODE with a sampled initial velocity.
    NeurInt,
    /// Same generative process, generator pretrained with a fixed prior and frozen.
    NeurIntPt,
    Lerp,
    Slerp,
    /// `dz/dt = f(z)`.
    FirstOrderPlain,
    /// `dz/dt = f(z, z_C)` with `z_C` drawn from the velocity prior.
    FirstOrderConditioned,
}

impl InterpolatorKind {
    pub const ALL: [InterpolatorKind; 6] = [
        InterpolatorKind::NeurInt,
        InterpolatorKind::NeurIntPt,
        InterpolatorKind::Lerp,
        InterpolatorKind::Slerp,
        InterpolatorKind::FirstOrderPlain,
        InterpolatorKind::FirstOrderConditioned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterpolatorKind::NeurInt => "neurint",
            InterpolatorKind::NeurIntPt => "neurint-pt",
            InterpolatorKind::Lerp => "lerp",
            InterpolatorKind::Slerp => "slerp",
            InterpolatorKind::FirstOrderPlain => "fo1",
            InterpolatorKind::FirstOrderConditioned => "fo2",
        }
    }

    pub fn is_second_order(self) -> bool {
        matches!(self, InterpolatorKind::NeurInt | InterpolatorKind::NeurIntPt)
    }

    pub fn is_first_order(self) -> bool {
        matches!(
            self,
            InterpolatorKind::FirstOrderPlain | InterpolatorKind::FirstOrderConditioned
        )
    }

    pub fn is_closed_form(self) -> bool {
        matches!(self, InterpolatorKind::Lerp | InterpolatorKind::Slerp)
    }

    /// Whether the path draws noise `ε` through the velocity encoder.
    pub fn is_stochastic(self) -> bool {
        self.is_second_order() || self == InterpolatorKind::FirstOrderConditioned
    }
}

impl fmt::Display for InterpolatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterpolatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        InterpolatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown interpolator '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkId {
    Encoder,
    Velocity,
    Field,
    Generator,
    Discriminator,
}

impl NetworkId {
    pub const ALL: [NetworkId; 5] = [
        NetworkId::Encoder,
        NetworkId::Velocity,
        NetworkId::Field,
        NetworkId::Generator,
        NetworkId::Discriminator,
    ];

    /// Everything the generator-side objective updates.
    pub const GENERATOR_SIDE: [NetworkId; 4] = [
        NetworkId::Encoder,
        NetworkId::Velocity,
        NetworkId::Field,
        NetworkId::Generator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetworkId::Encoder => "E",
            NetworkId::Velocity => "V",
            NetworkId::Field => "f",
            NetworkId::Generator => "G",
            NetworkId::Discriminator => "D",
        }
    }
}

/// Widths and nonlinearities for every network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub velocity_hidden: usize,
    pub field_hidden: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub generator_output: Activation,
    pub field_init_scale: f64,
}

impl ModelConfig {
    /// Defaults for 2-D point data (latent 8, unbounded generator output).
    pub fn points(data_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim: 8,
            encoder_hidden: 64,
            velocity_hidden: 64,
            field_hidden: 32,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            leaky_slope: 0.2,
            generator_output: Activation::Identity,
            field_init_scale: 0.1,
        }
    }

    /// Defaults for image-like data in `[-1, 1]` (latent 16, tanh generator).
    pub fn images(data_dim: usize) -> Self {
        Self {
            latent_dim: 16,
            generator_output: Activation::Tanh,
            ..Self::points(data_dim)
        }
    }

    fn leaky(&self) -> Activation {
        Activation::LeakyRelu(self.leaky_slope)
    }

    pub fn spec(&self, net: NetworkId, kind: InterpolatorKind) -> Result<MlpSpec> {
        let d = self.latent_dim;
        match net {
            NetworkId::Encoder => MlpSpec::new(
                vec![self.data_dim, self.encoder_hidden, d],
                self.leaky(),
                Activation::Identity,
            ),
            NetworkId::Velocity => MlpSpec::new(
                vec![2 * d, self.velocity_hidden, 2 * d],
                self.leaky(),
                Activation::Identity,
            ),
            NetworkId::Field => {
                let input = if kind == InterpolatorKind::FirstOrderPlain { d } else { 2 * d };
                MlpSpec::new(
                    vec![input, self.field_hidden, self.field_hidden, d],
                    Activation::Tanh,
                    Activation::Identity,
                )
            }
            NetworkId::Generator => {
                let mut widths = vec![d];
                widths.extend(&self.generator_hidden);
                widths.push(self.data_dim);
                MlpSpec::new(widths, self.leaky(), self.generator_output)
            }
            NetworkId::Discriminator => {
                let mut widths = vec![self.data_dim];
                widths.extend(&self.discriminator_hidden);
                widths.push(1);
                MlpSpec::new(widths, self.leaky(), Activation::Sigmoid)
            }
        }
    }
}

/// All parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub kind: InterpolatorKind,
    pub encoder: Mlp,
    pub velocity: Mlp,
    pub field: Mlp,
    pub generator: Mlp,
    pub discriminator: Mlp,
}

impl ModelBundle {
    pub fn init(config: ModelConfig, kind: InterpolatorKind, rng: &mut impl Rng) -> Result<Self> {
        let mut net = |id: NetworkId| -> Result<Mlp> {
            let scale = if id == NetworkId::Field { config.field_init_scale } else { 1.0 };
            Ok(Mlp::init(config.spec(id, kind)?, scale, rng))
        };
        let encoder = net(NetworkId::Encoder)?;
        let velocity = net(NetworkId::Velocity)?;
        let field = net(NetworkId::Field)?;
        let generator = net(NetworkId::Generator)?;
        let discriminator = net(NetworkId::Discriminator)?;
        Ok(Self {
            config,
            kind,
            encoder,
            velocity,
            field,
            generator,
            discriminator,
        })
    }

    pub fn network(&self, id: NetworkId) -> &Mlp {
        match id {
            NetworkId::Encoder => &self.encoder,
            NetworkId::Velocity => &self.velocity,
            NetworkId::Field => &self.field,
            NetworkId::Generator => &self.generator,
            NetworkId::Discriminator => &self.discriminator,
        }
    }

    pub fn network_mut(&mut self, id: NetworkId) -> &mut Mlp {
        match id {
            NetworkId::Encoder => &mut self.encoder,
            NetworkId::Velocity => &mut self.velocity,
            NetworkId::Field => &mut self.field,
            NetworkId::Generator => &mut self.generator,
            NetworkId::Discriminator => &mut self.discriminator,
        }
    }

    /// Binds every network to `tape`; those listed in `trainable` are tracked.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: &[NetworkId]) -> BoundBundle<'t> {
        let b = |id: NetworkId| self.network(id).bind(tape, trainable.contains(&id));
        BoundBundle {
            kind: self.kind,
            latent_dim: self.config.latent_dim,
            encoder: b(NetworkId::Encoder),
            velocity: b(NetworkId::Velocity),
            field: b(NetworkId::Field),
            generator: b(NetworkId::Generator),
            discriminator: b(NetworkId::Discriminator),
        }
    }

    pub fn encode_position(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.apply(x)
    }

    /// `(μ_v, σ_v)` for a batch of `(z₀, E(x_T))` rows.
    pub fn encode_velocity(&self, z0: &Tensor, target_feat: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::inert();
        let bound = self.bind(&tape, &[]);
        let (mu, sigma) = bound.encode_velocity(&tape.constant(z0.clone()), &tape.constant(target_feat.clone()))?;
        Ok((mu.value().clone(), sigma.value().clone()))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.apply(z)
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        self.discriminator.apply(x)
    }
}

/// A [`ModelBundle`] placed on a tape.
pub struct BoundBundle<'t> {
    pub kind: InterpolatorKind,
    pub latent_dim: usize,
    pub encoder: BoundMlp<'t>,
    pub velocity: BoundMlp<'t>,
    pub field: BoundMlp<'t>,
    pub generator: BoundMlp<'t>,
    pub discriminator: BoundMlp<'t>,
}

impl<'t> BoundBundle<'t> {
    pub fn network(&self, id: NetworkId) -> &BoundMlp<'t> {
        match id {
            NetworkId::Encoder => &self.encoder,
            NetworkId::Velocity => &self.velocity,
            NetworkId::Field => &self.field,
            NetworkId::Generator => &self.generator,
            NetworkId::Discriminator => &self.discriminator,
        }
    }

    /// `z₀ = E(x_S)`.
    pub fn encode_position(&self, x: &Var<'t>) -> Result<Var<'t>> {
        self.encoder.forward(x)
    }

    /// `(μ_v, σ_v) = V(z₀, E(x_T))` with `σ_v = exp(clamp(log σ, -8, 4))`.
    pub fn encode_velocity(&self, z0: &Var<'t>, target_feat: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        if z0.shape() != target_feat.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "encode_velocity",
                left: z0.shape().to_vec(),
                right: target_feat.shape().to_vec(),
            });
        }
        let d = self.latent_dim;
        let out = self.velocity.forward(&Var::concat_cols(&[z0, target_feat])?)?;
        let mu = out.slice_cols(0, d)?;
        let sigma = out.slice_cols(d, d)?.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)?.exp()?;
        Ok((mu, sigma))
    }
}

/// Reparameterized draw `v₀ = μ_v + ε ⊙ σ_v`.
pub fn sample_initial_velocity<'t>(mu: &Var<'t>, sigma: &Var<'t>, eps: &Var<'t>) -> Result<Var<'t>> {
    if mu.shape() != sigma.shape() || mu.shape() != eps.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "sample_initial_velocity",
            left: mu.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    mu.add(&eps.mul(sigma)?)
}
