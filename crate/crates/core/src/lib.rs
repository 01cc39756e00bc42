//! Latent second-order neural ODE interpolation between data points.
//!
//! An encoder maps the source point to an initial latent position, a
//! velocity encoder gives a Gaussian over the initial latent velocity, and
//! a learned acceleration field is integrated over `[0, T]`. A generator
//! decodes the latent path, and a discriminator keeps the decoded
//! intermediates on the data manifold during training.
//!
//! ```
//! use neurint::{Dataset, DatasetName, InterpolatorKind, ModelBundle, ModelConfig, SolverConfig};
//! use neurint::model::generate_curve;
//! use neurint::training::seeded_rng;
//!
//! let data = Dataset::generate(DatasetName::Ring2d, 100, 0).unwrap();
//! let mut rng = seeded_rng(0);
//! let bundle = ModelBundle::init(ModelConfig::points(2), InterpolatorKind::NeurInt, &mut rng).unwrap();
//! let (s, t) = data.sample_pairs(neurint::Support::Train, 4, &mut rng).unwrap();
//! let curve = generate_curve(&bundle, &s, &t, None, &SolverConfig::default(), &mut rng).unwrap();
//! assert_eq!(curve.at(0.5).unwrap().shape(), &[4, 2]);
//! ```

pub mod autograd;
pub mod baselines;
pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nets;
pub mod ode;
pub mod optim;
pub mod render;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Tape, Var};
pub use bundle::{InterpolatorKind, ModelBundle, ModelConfig, NetworkId};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{Dataset, DatasetName, Support};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport};
pub use model::{InterpolationCurve, LatentCurve};
pub use nets::{Activation, Mlp, MlpSpec};
pub use ode::{SolverConfig, SolverMethod, Trajectory};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::{Tensor, TensorError};
pub use training::{GeneratorLoss, LossReport, TrainConfig, Trainer};
