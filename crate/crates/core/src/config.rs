//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys are dotted
//! (`train.steps`, `solver.method`). Unknown or repeated keys are rejected.
//! Model defaults depend on the dataset, so `dataset` is applied first.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bundle::{InterpolatorKind, ModelConfig};
use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::nets::Activation;
use crate::ode::{SolverConfig, SolverMethod};
use crate::optim::OptimizerKind;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub n_items: usize,
    pub noise: f64,
    pub kind: InterpolatorKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(dataset: DatasetName) -> Self {
        let model = if dataset.is_image() {
            ModelConfig::images(dataset.data_dim())
        } else {
            ModelConfig::points(dataset.data_dim())
        };
        Self {
            dataset,
            n_items: 2000,
            noise: dataset.default_noise(),
            kind: InterpolatorKind::NeurInt,
            model,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            out: PathBuf::from("out"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Sets the seed used for data generation, initialization, training and evaluation.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.train.solver
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", i + 1)));
            }
        }
        let mut cfg = match entries.remove("dataset") {
            Some(d) => Self::new(parse_value("dataset", &d)?),
            None => Self::new(DatasetName::Ring2d),
        };
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_items < 2 {
            return Err(Error::Config(format!("n_items must be at least 2, got {}", self.n_items)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.model.data_dim != self.dataset.data_dim() {
            return Err(Error::Config(format!(
                "model.data_dim is {} but {} has {} coordinates",
                self.model.data_dim,
                self.dataset,
                self.dataset.data_dim()
            )));
        }
        if self.eval.pairs == 0 || self.eval.samples_per_pair == 0 {
            return Err(Error::Config("eval.pairs and eval.samples_per_pair must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "dataset" => {
                let keep = (self.kind, self.train.clone(), self.eval, self.out.clone());
                *self = Self::new(parse_value(key, v)?);
                (self.kind, self.train, self.eval, self.out) = keep;
            }
            "n_items" => self.n_items = parse_value(key, v)?,
            "noise" => self.noise = parse_value(key, v)?,
            "kind" => self.kind = parse_value(key, v)?,
            "seed" => self.set_seed(parse_value(key, v)?),
            "out" => self.out = PathBuf::from(v),
            "model.data_dim" => self.model.data_dim = parse_value(key, v)?,
            "model.latent_dim" => self.model.latent_dim = parse_value(key, v)?,
            "model.encoder_hidden" => self.model.encoder_hidden = parse_value(key, v)?,
            "model.velocity_hidden" => self.model.velocity_hidden = parse_value(key, v)?,
            "model.field_hidden" => self.model.field_hidden = parse_value(key, v)?,
            "model.generator_hidden" => self.model.generator_hidden = parse_list(key, v)?,
            "model.discriminator_hidden" => self.model.discriminator_hidden = parse_list(key, v)?,
            "model.leaky_slope" => self.model.leaky_slope = parse_value(key, v)?,
            "model.generator_output" => {
                self.model.generator_output = match v {
                    "none" => Activation::Identity,
                    "tanh" => Activation::Tanh,
                    "sigmoid" => Activation::Sigmoid,
                    _ => return Err(bad_value(key, v, "none | tanh | sigmoid")),
                }
            }
            "model.field_init_scale" => self.model.field_init_scale = parse_value(key, v)?,
            "solver.method" => self.train.solver.method = parse_value(key, v)?,
            "solver.steps" => self.train.solver.steps = parse_value(key, v)?,
            "solver.total_time" => self.train.solver.total_time = parse_value(key, v)?,
            "train.steps" => self.train.steps = parse_value(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, v)?,
            "train.time_samples" => self.train.time_samples = parse_value(key, v)?,
            "train.lambda_start" => self.train.lambda_start = parse_value(key, v)?,
            "train.lambda_end" => self.train.lambda_end = parse_value(key, v)?,
            "train.lambda_decay_epochs" => {
                self.train.lambda_decay_epochs = match v {
                    "auto" => None,
                    _ => Some(parse_value(key, v)?),
                }
            }
            "train.disc_steps" => self.train.disc_steps = parse_value(key, v)?,
            "train.adversarial" => self.train.adversarial = parse_value(key, v)?,
            "train.generator_loss" => self.train.generator_loss = parse_value(key, v)?,
            "train.optimizer" => {
                self.train.optimizer.kind = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(bad_value(key, v, "adam | sgd")),
                }
            }
            "train.learning_rate" => self.train.optimizer.learning_rate = parse_value(key, v)?,
            "train.beta1" => self.train.optimizer.beta1 = parse_value(key, v)?,
            "train.beta2" => self.train.optimizer.beta2 = parse_value(key, v)?,
            "train.epsilon" => self.train.optimizer.epsilon = parse_value(key, v)?,
            "eval.pairs" => self.eval.pairs = parse_value(key, v)?,
            "eval.samples_per_pair" => self.eval.samples_per_pair = parse_value(key, v)?,
            "eval.support" => self.eval.support = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every setting, defaults included, in the format [`RunConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let list = |v: &[usize]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", self.dataset.to_string());
        kv("n_items", self.n_items.to_string());
        kv("noise", self.noise.to_string());
        kv("kind", self.kind.to_string());
        kv("seed", t.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("model.data_dim", m.data_dim.to_string());
        kv("model.latent_dim", m.latent_dim.to_string());
        kv("model.encoder_hidden", m.encoder_hidden.to_string());
        kv("model.velocity_hidden", m.velocity_hidden.to_string());
        kv("model.field_hidden", m.field_hidden.to_string());
        kv("model.generator_hidden", list(&m.generator_hidden));
        kv("model.discriminator_hidden", list(&m.discriminator_hidden));
        kv("model.leaky_slope", m.leaky_slope.to_string());
        kv("model.generator_output", m.generator_output.name().to_string());
        kv("model.field_init_scale", m.field_init_scale.to_string());
        kv("solver.method", t.solver.method.to_string());
        kv("solver.steps", t.solver.steps.to_string());
        kv("solver.total_time", t.solver.total_time.to_string());
        kv("train.steps", t.steps.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.time_samples", t.time_samples.to_string());
        kv("train.lambda_start", t.lambda_start.to_string());
        kv("train.lambda_end", t.lambda_end.to_string());
        kv(
            "train.lambda_decay_epochs",
            t.lambda_decay_epochs.map_or("auto".to_string(), |e| e.to_string()),
        );
        kv("train.disc_steps", t.disc_steps.to_string());
        kv("train.adversarial", t.adversarial.to_string());
        kv("train.generator_loss", t.generator_loss.to_string());
        kv(
            "train.optimizer",
            match t.optimizer.kind {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .to_string(),
        );
        kv("train.learning_rate", t.optimizer.learning_rate.to_string());
        kv("train.beta1", t.optimizer.beta1.to_string());
        kv("train.beta2", t.optimizer.beta2.to_string());
        kv("train.epsilon", t.optimizer.epsilon.to_string());
        kv("eval.pairs", self.eval.pairs.to_string());
        kv("eval.samples_per_pair", self.eval.samples_per_pair.to_string());
        kv("eval.support", self.eval.support.to_string());
        s
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new(DatasetName::Ring2d)
    }
}

fn bad_value(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key}: cannot parse {value:?} (expected {expected})"))
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad_value(key, value, std::any::type_name::<T>()))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse_value(key, w.trim())).collect()
}

/// Parses a solver method/steps pair such as `rk4:32`.
pub fn parse_solver(spec: &str, total_time: f64) -> Result<SolverConfig> {
    let (m, s) = spec
        .split_once(':')
        .ok_or_else(|| bad_value("solver", spec, "method:steps"))?;
    SolverConfig::new(parse_value::<SolverMethod>("solver", m)?, parse_value("solver", s)?, total_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        for name in DatasetName::ALL {
            let mut cfg = RunConfig::new(name);
            cfg.train.lambda_decay_epochs = Some(12.5);
            cfg.noise = 0.1 + 0.2;
            let back = RunConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn comments_defaults_and_dataset_order() {
        let text = "# run\ntrain.steps = 10  # short\nmodel.latent_dim = 3\ndataset = bars8x8\n\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.model.latent_dim, 3);
        assert_eq!(cfg.model.data_dim, 64);
        assert_eq!(cfg.model.generator_output, Activation::Tanh);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "train.stepz = 3",
            "train.steps = 3\ntrain.steps = 4",
            "train.steps = many",
            "just a line",
            "solver.steps = 0",
            "model.generator_output = relu",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn solver_spec() {
        let s = parse_solver("euler:12", 1.0).unwrap();
        assert_eq!((s.method, s.steps), (SolverMethod::Euler, 12));
        assert!(parse_solver("rk4", 1.0).is_err());
    }
}
