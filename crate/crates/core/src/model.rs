//! The generative process: a (source, target) pair and a noise draw `ε`
//! define a latent path, and the generator maps it to data space.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::baselines::{first_order_field, first_order_integrate, lerp_var, slerp_var, standard_normal};
use crate::bundle::{sample_initial_velocity, BoundBundle, InterpolatorKind, ModelBundle};
use crate::error::{Error, Result};
use crate::nets::Mlp;
use crate::ode::{AugmentedState, LatentTrajectory, SolverConfig, Trajectory};
use crate::tensor::{Tensor, TensorError};

/// Latent positions of a batch of paths at every solver grid time.
pub struct PathGrid<'t> {
    pub times: Vec<f64>,
    /// `steps + 1` tensors of shape `[batch, latent]`.
    pub positions: Vec<Var<'t>>,
    /// Velocity channel of second-order paths.
    pub velocities: Option<Vec<Var<'t>>>,
    /// `z_C` of the conditioned first-order variant.
    pub conditioning: Option<Var<'t>>,
    /// Velocity prior parameters, when the kind has one.
    pub prior: Option<(Var<'t>, Var<'t>)>,
}

impl<'t> PathGrid<'t> {
    pub fn start(&self) -> &Var<'t> {
        &self.positions[0]
    }

    pub fn end(&self) -> &Var<'t> {
        self.positions.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.positions[0].value().rows()
    }

    /// Gathers `positions[grid_index[r]]` row `r % batch` for every `r`,
    /// where `grid_index` lists one entry per output row in `(sample, pair)`
    /// order: output row `n·batch + b` is pair `b` at `grid_index[n·batch + b]`.
    pub fn gather(&self, grid_index: &[usize]) -> Result<Var<'t>> {
        let b = self.batch();
        if !grid_index.len().is_multiple_of(b) {
            return Err(Error::Config(format!(
                "{} grid indices do not tile a batch of {b}",
                grid_index.len()
            )));
        }
        let all: Vec<&Var<'t>> = self.positions.iter().collect();
        let stacked = Var::concat_rows(&all)?;
        let rows: Vec<usize> = grid_index
            .iter()
            .enumerate()
            .map(|(r, &g)| g * b + r % b)
            .collect();
        Ok(stacked.select_rows(&rows)?)
    }
}

/// Builds the latent path of the bundle's interpolator kind on the grid of
/// `solver`. `eps` is the `[batch, latent]` noise; kinds without a
/// stochastic channel ignore it.
pub fn latent_path<'t>(
    bound: &BoundBundle<'t>,
    source: &Var<'t>,
    target: &Var<'t>,
    eps: &Var<'t>,
    solver: &SolverConfig,
) -> Result<PathGrid<'t>> {
    if source.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "source/target pair",
            left: source.shape().to_vec(),
            right: target.shape().to_vec(),
        }
        .into());
    }
    solver.validate()?;
    let times = solver.grid_times();
    let z0 = bound.encode_position(source)?;
    let feat = bound.encode_position(target)?;
    let mut grid = PathGrid {
        times,
        positions: Vec::new(),
        velocities: None,
        conditioning: None,
        prior: None,
    };
    match bound.kind {
        InterpolatorKind::NeurInt | InterpolatorKind::NeurIntPt => {
            let (mu, sigma) = bound.encode_velocity(&z0, &feat)?;
            let v0 = sample_initial_velocity(&mu, &sigma, eps)?;
            let traj = LatentTrajectory::integrate(&bound.field, AugmentedState::new(z0, v0)?, solver)?;
            let (zs, vs) = traj.states.into_iter().map(|s| (s.z, s.v)).unzip();
            grid.positions = zs;
            grid.velocities = Some(vs);
            grid.prior = Some((mu, sigma));
        }
        InterpolatorKind::Lerp | InterpolatorKind::Slerp => {
            let total = solver.total_time;
            grid.positions = grid
                .times
                .iter()
                .map(|&t| match (t, bound.kind) {
                    // Grid endpoints are the encodings themselves, bit for bit.
                    (0.0, _) => Ok(z0.clone()),
                    (t, _) if t == total => Ok(feat.clone()),
                    (t, InterpolatorKind::Lerp) => lerp_var(&z0, &feat, t, total),
                    (t, _) => slerp_var(&z0, &feat, t, total),
                })
                .collect::<Result<_>>()?;
        }
        InterpolatorKind::FirstOrderPlain => {
            grid.positions = first_order_integrate(&bound.field, z0, None, solver)?;
        }
        InterpolatorKind::FirstOrderConditioned => {
            let (mu, sigma) = bound.encode_velocity(&z0, &feat)?;
            let zc = sample_initial_velocity(&mu, &sigma, eps)?;
            grid.positions = first_order_integrate(&bound.field, z0, Some(&zc), solver)?;
            grid.conditioning = Some(zc);
            grid.prior = Some((mu, sigma));
        }
    }
    Ok(grid)
}

/// Continuous-time latent path of a batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentCurve {
    /// Integrated path with Hermite dense output.
    Ode(Trajectory),
    Lerp { start: Tensor, end: Tensor, total: f64 },
    Slerp { start: Tensor, end: Tensor, total: f64 },
}

impl LatentCurve {
    pub fn total_time(&self) -> f64 {
        match self {
            LatentCurve::Ode(tr) => tr.total_time(),
            LatentCurve::Lerp { total, .. } | LatentCurve::Slerp { total, .. } => *total,
        }
    }

    pub fn batch(&self) -> usize {
        match self {
            LatentCurve::Ode(tr) => tr.batch(),
            LatentCurve::Lerp { start, .. } | LatentCurve::Slerp { start, .. } => start.rows(),
        }
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            LatentCurve::Ode(tr) => Some(tr),
            _ => None,
        }
    }

    /// Every batch row at time `t`.
    pub fn at(&self, t: f64) -> Result<Tensor> {
        self.at_rows(&vec![t; self.batch()])
    }

    /// Row `i` at `times[i]`.
    pub fn at_rows(&self, times: &[f64]) -> Result<Tensor> {
        match self {
            LatentCurve::Ode(tr) => tr.evaluate_rows(times),
            LatentCurve::Lerp { start, end, total } | LatentCurve::Slerp { start, end, total } => {
                if times.len() != start.rows() {
                    return Err(Error::Config(format!(
                        "need one time per batch row ({}), got {}",
                        start.rows(),
                        times.len()
                    )));
                }
                let slerp = matches!(self, LatentCurve::Slerp { .. });
                let mut out = Tensor::zeros_like(start);
                for (r, &t) in times.iter().enumerate() {
                    let (a, b) = (start.row(r), end.row(r));
                    let row = if t == 0.0 {
                        a.to_vec()
                    } else if t == *total {
                        b.to_vec()
                    } else if slerp {
                        crate::baselines::slerp(a, b, t, *total)?
                    } else {
                        crate::baselines::lerp(a, b, t, *total)?
                    };
                    out.row_mut(r).copy_from_slice(&row);
                }
                Ok(out)
            }
        }
    }
}

/// A sampled interpolation curve `t ↦ G(z(t))` for a batch of pairs.
///
/// The noise draw is stored so the curve can be regenerated exactly.
#[derive(Debug, Clone)]
pub struct InterpolationCurve<'b> {
    generator: &'b Mlp,
    latent: LatentCurve,
    eps: Tensor,
    solver: SolverConfig,
    pub source: Tensor,
    pub target: Tensor,
}

impl<'b> InterpolationCurve<'b> {
    pub fn latent(&self) -> &LatentCurve {
        &self.latent
    }

    pub fn eps(&self) -> &Tensor {
        &self.eps
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn total_time(&self) -> f64 {
        self.latent.total_time()
    }

    pub fn batch(&self) -> usize {
        self.latent.batch()
    }

    /// Data-space points of every batch row at time `t`, `[batch, data]`.
    pub fn at(&self, t: f64) -> Result<Tensor> {
        Ok(self.generator.apply(&self.latent.at(t)?)?)
    }

    /// Row `i` of the result is pair `i` at `times[i]`.
    pub fn at_rows(&self, times: &[f64]) -> Result<Tensor> {
        Ok(self.generator.apply(&self.latent.at_rows(times)?)?)
    }

    /// Images at each of `times`, time-major: row `k·batch + b` is pair `b`
    /// at `times[k]`. For a single pair this is `[times.len(), data]`.
    pub fn sample_images(&self, times: &[f64]) -> Result<Tensor> {
        let latents = times.iter().map(|&t| self.latent.at(t)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = latents.iter().collect();
        Ok(self.generator.apply(&Tensor::concat_rows(&refs)?)?)
    }
}

/// `[rows, latent]` standard-normal noise for [`generate_curve`].
pub fn draw_eps(rng: &mut impl Rng, rows: usize, latent_dim: usize) -> Tensor {
    standard_normal(rng, rows, latent_dim)
}

/// Samples an interpolation curve for each row pair of `source`/`target`.
/// A fresh `ε` is drawn from `rng` when none is given.
pub fn generate_curve<'b>(
    bundle: &'b ModelBundle,
    source: &Tensor,
    target: &Tensor,
    eps: Option<Tensor>,
    solver: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<InterpolationCurve<'b>> {
    let d = bundle.config.latent_dim;
    let eps = eps.unwrap_or_else(|| draw_eps(rng, source.rows(), d));
    if source.rank() != 2 || eps.shape() != [source.rows(), d] {
        return Err(TensorError::ShapeMismatch {
            op: "generate_curve noise",
            left: vec![source.rows(), d],
            right: eps.shape().to_vec(),
        }
        .into());
    }
    let tape = Tape::inert();
    let bound = bundle.bind(&tape, &[]);
    let grid = latent_path(
        &bound,
        &tape.constant(source.clone()),
        &tape.constant(target.clone()),
        &tape.constant(eps.clone()),
        solver,
    )?;
    let latent = latent_curve(&bound, grid)?;
    Ok(InterpolationCurve {
        generator: &bundle.generator,
        latent,
        eps,
        solver: *solver,
        source: source.clone(),
        target: target.clone(),
    })
}

fn latent_curve<'t>(bound: &BoundBundle<'t>, grid: PathGrid<'t>) -> Result<LatentCurve> {
    let total = *grid.times.last().unwrap();
    match bound.kind {
        InterpolatorKind::Lerp | InterpolatorKind::Slerp => {
            let start = grid.start().value().clone();
            let end = grid.end().value().clone();
            Ok(if bound.kind == InterpolatorKind::Lerp {
                LatentCurve::Lerp { start, end, total }
            } else {
                LatentCurve::Slerp { start, end, total }
            })
        }
        _ => {
            let positions: Vec<Tensor> = grid.positions.iter().map(|z| z.value().clone()).collect();
            let (slopes, second_order) = match &grid.velocities {
                Some(vs) => (vs.iter().map(|v| v.value().clone()).collect(), true),
                None => (
                    grid.positions
                        .iter()
                        .map(|z| Ok(first_order_field(&bound.field, z, grid.conditioning.as_ref())?.value().clone()))
                        .collect::<Result<Vec<_>>>()?,
                    false,
                ),
            };
            Ok(LatentCurve::Ode(Trajectory::new(grid.times, positions, slopes, second_order)?))
        }
    }
}

/// `k` curves for one pair with independent noise draws.
pub fn sample_trajectory_family<'b>(
    bundle: &'b ModelBundle,
    source: &Tensor,
    target: &Tensor,
    k: usize,
    solver: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<Vec<InterpolationCurve<'b>>> {
    if k == 0 {
        return Err(Error::Config("a trajectory family needs k >= 1".into()));
    }
    (0..k)
        .map(|_| generate_curve(bundle, source, target, None, solver, rng))
        .collect()
}
