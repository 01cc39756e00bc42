//! Multilayer perceptrons: the building block of every network in the model.

use std::fmt;

use rand::Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<'t>(self, x: &Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::LeakyRelu(slope) => x.leaky_relu(slope),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "none",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu(slope) => write!(f, "leaky_relu({slope})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Layer widths plus the hidden and output nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(TensorError::Invalid {
                op: "mlp spec",
                msg: format!("need at least two positive widths, got {widths:?}"),
            });
        }
        Ok(Self {
            widths,
            hidden,
            output,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Weights are `[fan_in, fan_out]`, biases `[1, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; the final layer's weights are
    /// multiplied by `final_scale`.
    pub fn init(spec: MlpSpec, final_scale: f64, rng: &mut impl Rng) -> Self {
        let n = spec.layers();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l + 1 == n { final_scale } else { 1.0 };
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound) * scale)
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data));
            biases.push(Tensor::zeros(&[1, fan_out]));
        }
        Self {
            spec,
            weights,
            biases,
        }
    }

    /// Builds a network from explicit parameters, checking their shapes.
    pub fn from_params(spec: MlpSpec, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        let mut mlp = Self {
            spec,
            weights: Vec::new(),
            biases: Vec::new(),
        };
        for (l, pair) in mlp.spec.widths.windows(2).enumerate() {
            let (w, b) = (weights.get(l), biases.get(l));
            let expected_w = [pair[0], pair[1]];
            let expected_b = [1, pair[1]];
            match (w, b) {
                (Some(w), Some(b)) if w.shape() == expected_w && b.shape() == expected_b => {}
                _ => {
                    return Err(TensorError::ShapeMismatch {
                        op: "mlp parameters",
                        left: expected_w.to_vec(),
                        right: w.map(|w| w.shape().to_vec()).unwrap_or_default(),
                    })
                }
            }
        }
        if weights.len() != mlp.spec.layers() || biases.len() != mlp.spec.layers() {
            return Err(TensorError::Invalid {
                op: "mlp parameters",
                msg: format!("expected {} layers, got {}", mlp.spec.layers(), weights.len()),
            });
        }
        mlp.weights = weights;
        mlp.biases = biases;
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Parameters in layer order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Places the parameters on `tape`, tracked when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (tape.leaf(w.clone(), trainable), tape.leaf(b.clone(), trainable)))
            .collect();
        BoundMlp {
            spec: self.spec.clone(),
            layers,
        }
    }

    /// Untracked forward pass.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inert();
        let bound = self.bind(&tape, false);
        Ok(bound.forward(&tape.constant(x.clone()))?.value().clone())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct BoundMlp<'t> {
    spec: MlpSpec,
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundMlp<'t> {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn forward(&self, x: &Var<'t>) -> Result<Var<'t>> {
        if x.value().rank() != 2 || x.value().cols() != self.spec.input_width() {
            return Err(TensorError::ShapeMismatch {
                op: "mlp input",
                left: x.shape().to_vec(),
                right: vec![x.value().rows(), self.spec.input_width()],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            h = h.linear(w, b)?;
            h = if l == last {
                self.spec.output.apply(&h)?
            } else {
                self.spec.hidden.apply(&h)?
            };
        }
        Ok(h)
    }

    /// Parameter vars in the same order as [`Mlp::params`].
    pub fn params(&self) -> Vec<&Var<'t>> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    /// Gradients in [`Mlp::params`] order; zeros where the loss did not reach.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.params().into_iter().map(|p| grads.get_or_zeros(p)).collect()
    }
}
