//! Fixed-step integration of first- and second-order neural ODEs.
//!
//! Solver steps are built from recorded tensor operations, so gradients
//! reach the initial state and the vector-field parameters by ordinary
//! backpropagation through the solver arithmetic. Integrated trajectories
//! carry exact derivatives at every grid node, which the dense output uses
//! for cubic Hermite interpolation between nodes.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nets::BoundMlp;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMethod {
    Euler,
    Rk4,
}

impl SolverMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Euler => "euler",
            SolverMethod::Rk4 => "rk4",
        }
    }

    /// Vector-field evaluations per step.
    pub fn stages(self) -> usize {
        match self {
            SolverMethod::Euler => 1,
            SolverMethod::Rk4 => 4,
        }
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euler" => Ok(SolverMethod::Euler),
            "rk4" => Ok(SolverMethod::Rk4),
            _ => Err(format!("unknown solver '{s}' (expected euler or rk4)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub steps: usize,
    pub total_time: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Rk4,
            steps: 32,
            total_time: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn new(method: SolverMethod, steps: usize, total_time: f64) -> Result<Self> {
        let config = Self {
            method,
            steps,
            total_time,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(Error::Config(format!(
                "solver needs steps > 0 and T > 0, got steps={} T={}",
                self.steps, self.total_time
            )));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.total_time / self.steps as f64
    }

    /// `t₀ = 0, …, t_steps = T` on the uniform grid.
    pub fn grid_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = (0..=self.steps)
            .map(|i| self.total_time * i as f64 / self.steps as f64)
            .collect();
        times[self.steps] = self.total_time;
        times
    }
}

/// A state the fixed-step solvers can advance.
pub trait OdeState: Clone {
    /// `Σ cᵢ·sᵢ`.
    fn combine(terms: &[(f64, &Self)]) -> Result<Self>;
}

impl OdeState for Var<'_> {
    fn combine(terms: &[(f64, &Self)]) -> Result<Self> {
        Ok(Var::lincomb(terms)?)
    }
}

/// Position and velocity of a second-order system.
#[derive(Clone, Debug)]
pub struct AugmentedState<'t> {
    pub z: Var<'t>,
    pub v: Var<'t>,
}

impl<'t> AugmentedState<'t> {
    pub fn new(z: Var<'t>, v: Var<'t>) -> Result<Self> {
        if z.shape() != v.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "augmented state",
                left: z.shape().to_vec(),
                right: v.shape().to_vec(),
            }
            .into());
        }
        Ok(Self { z, v })
    }
}

impl OdeState for AugmentedState<'_> {
    fn combine(terms: &[(f64, &Self)]) -> Result<Self> {
        let zs: Vec<(f64, &Var)> = terms.iter().map(|(c, s)| (*c, &s.z)).collect();
        let vs: Vec<(f64, &Var)> = terms.iter().map(|(c, s)| (*c, &s.v)).collect();
        Ok(Self {
            z: Var::lincomb(&zs)?,
            v: Var::lincomb(&vs)?,
        })
    }
}

/// `(dz/dt, dv/dt) = (v, f(z ∥ v))`.
pub fn coupled_field<'t>(field: &BoundMlp<'t>, state: &AugmentedState<'t>) -> Result<AugmentedState<'t>> {
    let accel = field.forward(&Var::concat_cols(&[&state.z, &state.v])?)?;
    Ok(AugmentedState {
        z: state.v.clone(),
        v: accel,
    })
}

pub fn euler_step<S, F>(field: &F, state: &S, h: f64) -> Result<S>
where
    S: OdeState,
    F: Fn(&S) -> Result<S>,
{
    check_step(h)?;
    let k = field(state)?;
    S::combine(&[(1.0, state), (h, &k)])
}

/// Classical fourth-order Runge–Kutta with weights (1, 2, 2, 1)/6.
pub fn rk4_step<S, F>(field: &F, state: &S, h: f64) -> Result<S>
where
    S: OdeState,
    F: Fn(&S) -> Result<S>,
{
    check_step(h)?;
    let k1 = field(state)?;
    let k2 = field(&S::combine(&[(1.0, state), (0.5 * h, &k1)])?)?;
    let k3 = field(&S::combine(&[(1.0, state), (0.5 * h, &k2)])?)?;
    let k4 = field(&S::combine(&[(1.0, state), (h, &k3)])?)?;
    S::combine(&[
        (1.0, state),
        (h / 6.0, &k1),
        (h / 3.0, &k2),
        (h / 3.0, &k3),
        (h / 6.0, &k4),
    ])
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("step size must be positive, got {h}")))
    }
}

/// Integrates from `initial` over the uniform grid and returns the state at
/// every grid time, `steps + 1` entries starting with `initial`.
pub fn integrate<S, F>(field: &F, initial: S, config: &SolverConfig) -> Result<Vec<S>>
where
    S: OdeState,
    F: Fn(&S) -> Result<S>,
{
    config.validate()?;
    let h = config.step_size();
    let mut states = Vec::with_capacity(config.steps + 1);
    states.push(initial);
    for step in 0..config.steps {
        let current = &states[step];
        let next = match config.method {
            SolverMethod::Euler => euler_step(field, current, h),
            SolverMethod::Rk4 => rk4_step(field, current, h),
        }
        .map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteState { step },
            other => other,
        })?;
        states.push(next);
    }
    Ok(states)
}

/// A second-order trajectory still attached to its tape.
pub struct LatentTrajectory<'t> {
    pub times: Vec<f64>,
    pub states: Vec<AugmentedState<'t>>,
    pub config: SolverConfig,
}

impl<'t> LatentTrajectory<'t> {
    pub fn integrate(field: &BoundMlp<'t>, initial: AugmentedState<'t>, config: &SolverConfig) -> Result<Self> {
        let states = integrate(&|s: &AugmentedState<'t>| coupled_field(field, s), initial, config)?;
        Ok(Self {
            times: config.grid_times(),
            states,
            config: *config,
        })
    }

    pub fn end(&self) -> &AugmentedState<'t> {
        self.states.last().unwrap()
    }

    /// Detached copy with dense output.
    pub fn to_dense(&self) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            positions: self.states.iter().map(|s| s.z.value().clone()).collect(),
            slopes: self.states.iter().map(|s| s.v.value().clone()).collect(),
            velocity_channel: true,
        }
    }
}

/// Grid samples of a (batched) latent path with exact node derivatives.
///
/// For second-order trajectories the derivatives are the velocity channel;
/// for first-order ones they are the field evaluated at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    positions: Vec<Tensor>,
    slopes: Vec<Tensor>,
    velocity_channel: bool,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, positions: Vec<Tensor>, slopes: Vec<Tensor>, velocity_channel: bool) -> Result<Self> {
        let n = times.len();
        if n < 2 || positions.len() != n || slopes.len() != n {
            return Err(Error::Config(format!(
                "trajectory needs matching grids of at least 2 nodes (times {n}, positions {}, slopes {})",
                positions.len(),
                slopes.len()
            )));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("trajectory times must start at 0 and increase".into()));
        }
        Ok(Self {
            times,
            positions,
            slopes,
            velocity_channel,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[Tensor] {
        &self.positions
    }

    pub fn velocities(&self) -> Option<&[Tensor]> {
        self.velocity_channel.then_some(&self.slopes[..])
    }

    pub fn total_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.positions[0].rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.positions[0].cols()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.total_time()).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                total: self.total_time(),
            })
        }
    }

    /// Grid cell containing `t` and the local coordinate θ ∈ [0, 1].
    fn locate(&self, t: f64) -> (usize, f64) {
        let last_cell = self.times.len() - 2;
        let cell = self.times.partition_point(|&x| x <= t).saturating_sub(1).min(last_cell);
        let (t0, t1) = (self.times[cell], self.times[cell + 1]);
        (cell, (t - t0) / (t1 - t0))
    }

    fn hermite_row(&self, cell: usize, theta: f64, row: usize, out: &mut [f64]) {
        let h = self.times[cell + 1] - self.times[cell];
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let z0 = self.positions[cell].row(row);
        let z1 = self.positions[cell + 1].row(row);
        let s0 = self.slopes[cell].row(row);
        let s1 = self.slopes[cell + 1].row(row);
        for (k, o) in out.iter_mut().enumerate() {
            *o = h00 * z0[k] + h10 * h * s0[k] + h01 * z1[k] + h11 * h * s1[k];
        }
    }

    /// Latent position of every batch row at time `t`.
    pub fn evaluate_at(&self, t: f64) -> Result<Tensor> {
        self.check_time(t)?;
        let (cell, theta) = self.locate(t);
        let (b, d) = (self.batch(), self.latent_dim());
        let mut out = Tensor::zeros(&[b, d]);
        for r in 0..b {
            self.hermite_row(cell, theta, r, out.row_mut(r));
        }
        Ok(out)
    }

    /// Row `i` of the result is batch row `i` evaluated at `times[i]`.
    pub fn evaluate_rows(&self, times: &[f64]) -> Result<Tensor> {
        if times.len() != self.batch() {
            return Err(Error::Config(format!(
                "need one time per batch row ({}), got {}",
                self.batch(),
                times.len()
            )));
        }
        let d = self.latent_dim();
        let mut out = Tensor::zeros(&[times.len(), d]);
        for (r, &t) in times.iter().enumerate() {
            self.check_time(t)?;
            let (cell, theta) = self.locate(t);
            self.hermite_row(cell, theta, r, out.row_mut(r));
        }
        Ok(out)
    }

    /// CSV dump of batch row `row`: `t, z_0..z_{d-1}[, v_0..v_{d-1}]`.
    pub fn write_csv(&self, out: &mut impl Write, row: usize) -> Result<()> {
        let d = self.latent_dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|k| format!("z_{k}")));
        if self.velocity_channel {
            header.extend((0..d).map(|k| format!("v_{k}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, &t) in self.times.iter().enumerate() {
            let mut cells = vec![format!("{t}")];
            cells.extend(self.positions[i].row(row).iter().map(|v| format!("{v}")));
            if self.velocity_channel {
                cells.extend(self.slopes[i].row(row).iter().map(|v| format!("{v}")));
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn oscillator<'t>(s: &AugmentedState<'t>) -> Result<AugmentedState<'t>> {
        Ok(AugmentedState {
            z: s.v.clone(),
            v: s.z.scale(-1.0)?,
        })
    }

    fn free_flight<'t>(s: &AugmentedState<'t>) -> Result<AugmentedState<'t>> {
        Ok(AugmentedState {
            z: s.v.clone(),
            v: s.v.scale(0.0)?,
        })
    }

    fn blowup<'t>(z: &Var<'t>) -> Result<Var<'t>> {
        Ok(z.square()?.exp()?)
    }

    fn scalar_state(tape: &Tape, z: f64, v: f64) -> AugmentedState<'_> {
        AugmentedState::new(tape.constant(Tensor::scalar(z)), tape.constant(Tensor::scalar(v))).unwrap()
    }

    #[test]
    fn euler_decay_one_step() {
        let tape = Tape::inert();
        let z = tape.constant(Tensor::scalar(1.0));
        let next = euler_step(&|z: &Var| Ok(z.scale(-1.0)?), &z, 1.0).unwrap();
        assert_eq!(next.value().item(), 0.0);
    }

    #[test]
    fn euler_free_flight_is_exact() {
        let tape = Tape::inert();
        let cfg = SolverConfig::new(SolverMethod::Euler, 2, 1.0).unwrap();
        let states = integrate(&free_flight, scalar_state(&tape, 0.0, 1.0), &cfg).unwrap();
        assert_eq!(states[2].z.value().item(), 1.0);
    }

    #[test]
    fn rk4_exponential_growth() {
        let tape = Tape::inert();
        let cfg = SolverConfig::new(SolverMethod::Rk4, 32, 1.0).unwrap();
        let states = integrate(&|z: &Var| Ok(z.clone()), tape.constant(Tensor::scalar(1.0)), &cfg).unwrap();
        let z = states[32].value().item();
        // One RK4 step on z' = z multiplies by the quartic Taylor polynomial of e^h.
        let h: f64 = 1.0 / 32.0;
        let factor: f64 = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((z - factor.powi(32)).abs() < 1e-14);
        assert!((z - 1f64.exp()).abs() < 2.2e-8, "error {}", (z - 1f64.exp()).abs());
    }

    #[test]
    fn dense_output_tracks_oscillator() {
        use rand::{Rng, SeedableRng};
        let tape = Tape::inert();
        let cfg = SolverConfig::new(SolverMethod::Rk4, 32, 1.0).unwrap();
        let states = integrate(&oscillator, scalar_state(&tape, 1.0, 0.5), &cfg).unwrap();
        let traj = Trajectory::new(
            cfg.grid_times(),
            states.iter().map(|s| s.z.value().clone()).collect(),
            states.iter().map(|s| s.v.value().clone()).collect(),
            true,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..=1.0);
            let z = traj.evaluate_at(t).unwrap().item();
            assert!((z - (t.cos() + 0.5 * t.sin())).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_field_network_ignores_state() {
        use crate::nets::{Activation, Mlp, MlpSpec};
        let spec = MlpSpec::new(vec![4, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mlp = Mlp::from_params(spec, vec![Tensor::zeros(&[4, 2])], vec![Tensor::matrix(1, 2, vec![0.5, -2.0])]).unwrap();
        let tape = Tape::inert();
        let field = mlp.bind(&tape, false);
        let s = AugmentedState::new(
            tape.constant(Tensor::matrix(1, 2, vec![3.0, 1.0])),
            tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0])),
        )
        .unwrap();
        let d = coupled_field(&field, &s).unwrap();
        assert_eq!(d.z.value().data(), &[1.0, 0.0]);
        assert_eq!(d.v.value().data(), &[0.5, -2.0]);
    }

    fn oscillator_error(method: SolverMethod, steps: usize) -> f64 {
        let tape = Tape::inert();
        let cfg = SolverConfig::new(method, steps, 1.0).unwrap();
        let states = integrate(&oscillator, scalar_state(&tape, 1.0, 0.5), &cfg).unwrap();
        let exact = 1f64.cos() + 0.5 * 1f64.sin();
        (states[steps].z.value().item() - exact).abs()
    }

    #[test]
    fn convergence_ratios() {
        let euler = oscillator_error(SolverMethod::Euler, 32) / oscillator_error(SolverMethod::Euler, 64);
        assert!((1.8..2.2).contains(&euler), "euler ratio {euler}");
        let rk4 = oscillator_error(SolverMethod::Rk4, 16) / oscillator_error(SolverMethod::Rk4, 32);
        assert!((14.0..18.0).contains(&rk4), "rk4 ratio {rk4}");
    }

    #[test]
    fn single_step_integration_matches_step() {
        let tape = Tape::inert();
        for method in [SolverMethod::Euler, SolverMethod::Rk4] {
            let cfg = SolverConfig::new(method, 1, 0.7).unwrap();
            let states = integrate(&oscillator, scalar_state(&tape, 0.3, -1.2), &cfg).unwrap();
            let direct = match method {
                SolverMethod::Euler => euler_step(&oscillator, &scalar_state(&tape, 0.3, -1.2), 0.7),
                SolverMethod::Rk4 => rk4_step(&oscillator, &scalar_state(&tape, 0.3, -1.2), 0.7),
            }
            .unwrap();
            assert_eq!(states[1].z.value(), direct.z.value());
            assert_eq!(states[1].v.value(), direct.v.value());
        }
    }

    #[test]
    fn non_finite_field_reports_step() {
        let tape = Tape::inert();
        let cfg = SolverConfig::new(SolverMethod::Euler, 10, 10.0).unwrap();
        let err = integrate(&blowup, tape.constant(Tensor::scalar(2.0)), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }), "{err}");
    }

    #[test]
    fn invalid_configs() {
        assert!(SolverConfig::new(SolverMethod::Rk4, 0, 1.0).is_err());
        assert!(SolverConfig::new(SolverMethod::Rk4, 4, 0.0).is_err());
        let tape = Tape::inert();
        assert!(euler_step(&|z: &Var| Ok(z.clone()), &tape.constant(Tensor::scalar(1.0)), -0.1).is_err());
    }

    #[test]
    fn grid_is_uniform_and_closed() {
        let cfg = SolverConfig::new(SolverMethod::Rk4, 3, 0.9).unwrap();
        let t = cfg.grid_times();
        assert_eq!(t.len(), 4);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[3], 0.9);
    }

    fn line_trajectory() -> Trajectory {
        let times = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let z0 = [0.5, -1.0];
        let v0 = [2.0, 0.25];
        let pos = times
            .iter()
            .map(|&t| Tensor::matrix(1, 2, vec![z0[0] + t * v0[0], z0[1] + t * v0[1]]))
            .collect();
        let vel = times.iter().map(|_| Tensor::matrix(1, 2, v0.to_vec())).collect();
        Trajectory::new(times, pos, vel, true).unwrap()
    }

    #[test]
    fn dense_output_exact_at_nodes_and_on_lines() {
        let traj = line_trajectory();
        for (i, &t) in traj.times().iter().enumerate() {
            assert_eq!(traj.evaluate_at(t).unwrap(), traj.positions()[i]);
        }
        for &t in &[0.1, 0.33, 0.5001, 0.99] {
            let z = traj.evaluate_at(t).unwrap();
            assert!((z.data()[0] - (0.5 + 2.0 * t)).abs() < 1e-14);
            assert!((z.data()[1] - (-1.0 + 0.25 * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_output_rejects_out_of_range() {
        let traj = line_trajectory();
        assert!(matches!(traj.evaluate_at(1.0001), Err(Error::TimeOutOfRange { .. })));
        assert!(traj.evaluate_at(-1e-9).is_err());
    }

    #[test]
    fn csv_has_header_and_grid_rows() {
        let mut buf = Vec::new();
        line_trajectory().write_csv(&mut buf, 0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,z_0,z_1,v_0,v_1");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,0.5,-1,2,0.25"));
    }
}
