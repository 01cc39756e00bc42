//! Evaluation: surrogate Fréchet distance, smoothness, diversity, endpoint
//! error, principal-component trajectories and solver timing.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::bundle::{InterpolatorKind, ModelBundle};
use crate::data::{manifold_residual, Dataset, Support};
use crate::error::{Error, Result};
use crate::model::{draw_eps, generate_curve, latent_path, sample_trajectory_family, InterpolationCurve, LatentCurve};
use crate::ode::{SolverConfig, SolverMethod};
use crate::tensor::Tensor;

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;
pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITER: usize = 10_000;

/// Mean and covariance of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Config(format!(
                "covariance is {}x{} for a mean of length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if (&cov - cov.transpose()).amax() > 1e-10 {
            return Err(Error::Config("covariance is not symmetric".into()));
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of the rows of `x`.
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() != 2 || x.rows() < 2 {
            return Err(Error::Config(format!(
                "a Gaussian fit needs at least 2 rows, got shape {:?}",
                x.shape()
            )));
        }
        let (n, d) = (x.rows(), x.cols());
        let m = DMatrix::from_row_slice(n, d, x.data());
        let mean = m.row_mean().transpose();
        let mut centred = m;
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centred.transpose() * &centred / (n as f64 - 1.0);
        symmetrize(&mut cov);
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from round-off are clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m
        .clone()
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(Error::EigenNonConvergent)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)`.
pub fn frechet_gaussian_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Config(format!(
            "Gaussian fits have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let sa = psd_sqrt(&a.cov)?;
    let mut inner = &sa * &b.cov * &sa;
    symmetrize(&mut inner);
    let cross = psd_sqrt(&inner)?.trace();
    let value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// A continuous data-space curve, possibly batched over rows.
pub trait DataCurve {
    fn total_time(&self) -> f64;
    fn at(&self, t: f64) -> Result<Tensor>;
}

impl DataCurve for InterpolationCurve<'_> {
    fn total_time(&self) -> f64 {
        InterpolationCurve::total_time(self)
    }

    fn at(&self, t: f64) -> Result<Tensor> {
        InterpolationCurve::at(self, t)
    }
}

/// Adapts a closure to [`DataCurve`].
pub struct FnCurve<F> {
    pub total: f64,
    pub f: F,
}

impl<F: Fn(f64) -> Tensor> DataCurve for FnCurve<F> {
    fn total_time(&self) -> f64 {
        self.total
    }

    fn at(&self, t: f64) -> Result<Tensor> {
        Ok((self.f)(t))
    }
}

/// Mean of `‖x(t+Δt) − 2x(t) + x(t−Δt)‖² / Δt⁴` over a uniform grid of
/// `n_samples` points (and over batch rows).
pub fn smoothness(curve: &impl DataCurve, n_samples: usize) -> Result<f64> {
    if n_samples < 3 {
        return Err(Error::Config(format!("smoothness needs at least 3 samples, got {n_samples}")));
    }
    let total = curve.total_time();
    let dt = total / (n_samples - 1) as f64;
    let xs = (0..n_samples)
        .map(|i| curve.at(if i + 1 == n_samples { total } else { i as f64 * dt }))
        .collect::<Result<Vec<_>>>()?;
    let rows = xs[0].rows() as f64;
    let mut acc = 0.0;
    for i in 1..n_samples - 1 {
        let (a, b, c) = (xs[i - 1].data(), xs[i].data(), xs[i + 1].data());
        acc += a
            .iter()
            .zip(b)
            .zip(c)
            .map(|((a, b), c)| (c - 2.0 * b + a).powi(2))
            .sum::<f64>();
    }
    Ok(acc / ((n_samples - 2) as f64 * rows * dt.powi(4)))
}

fn row_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_pairwise(points: &[Tensor]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for r in 0..points[i].rows() {
                acc += row_distance(points[i].row(r), points[j].row(r));
                count += 1;
            }
        }
    }
    acc / count as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    /// Mean pairwise distance averaged over interior times.
    pub interior: f64,
    pub start: f64,
    pub end: f64,
}

/// Spread of a family of curves at `n_times` interior times and at both ends.
pub fn diversity<C: DataCurve>(family: &[C], n_times: usize) -> Result<Diversity> {
    if family.len() < 2 || n_times == 0 {
        return Err(Error::Config(format!(
            "diversity needs at least 2 curves and 1 time, got {} and {n_times}",
            family.len()
        )));
    }
    let total = family[0].total_time();
    let at = |t: f64| family.iter().map(|c| c.at(t)).collect::<Result<Vec<_>>>();
    let mut interior = 0.0;
    for i in 1..=n_times {
        interior += mean_pairwise(&at(total * i as f64 / (n_times + 1) as f64)?);
    }
    Ok(Diversity {
        interior: interior / n_times as f64,
        start: mean_pairwise(&at(0.0)?),
        end: mean_pairwise(&at(total)?),
    })
}

/// First principal direction of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponent {
    pub mean: Vec<f64>,
    /// Unit vector; the entry of largest magnitude is positive.
    pub direction: Vec<f64>,
    pub variance: f64,
    pub iterations: usize,
}

impl PrincipalComponent {
    pub fn project(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.direction)
            .map(|((x, m), u)| (x - m) * u)
            .sum()
    }
}

/// Power iteration on the covariance of `points` (rows).
pub fn first_principal_component(points: &Tensor) -> Result<PrincipalComponent> {
    let fit = GaussianFit::fit(points)?;
    let cov = &fit.cov;
    if cov.trace() <= f64::MIN_POSITIVE {
        return Err(Error::ZeroVariance);
    }
    let d = fit.dim();
    let start = (0..d)
        .max_by(|&i, &j| cov[(i, i)].total_cmp(&cov[(j, j)]))
        .unwrap();
    let mut v = cov.column(start).into_owned();
    v /= v.norm();
    let mut iterations = 0;
    while iterations < PCA_MAX_ITER {
        iterations += 1;
        let mut next = cov * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVariance);
        }
        next /= norm;
        let change = (&next - &v).norm();
        v = next;
        if change < PCA_TOLERANCE {
            break;
        }
    }
    let lead = (0..d).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap();
    if v[lead] < 0.0 {
        v = -v;
    }
    let variance = (v.transpose() * cov * &v)[(0, 0)];
    Ok(PrincipalComponent {
        mean: fit.mean.iter().copied().collect(),
        direction: v.iter().copied().collect(),
        variance,
        iterations,
    })
}

/// First-principal-component score of each latent curve over time.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaSeries {
    pub times: Vec<f64>,
    pub component: PrincipalComponent,
    /// `scores[curve][time]`.
    pub scores: Vec<Vec<f64>>,
}

impl PcaSeries {
    /// Standard deviation of the scores across curves at each time.
    pub fn spread(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| {
                let vals: Vec<f64> = self.scores.iter().map(|s| s[i]).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
            })
            .collect()
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        let header: Vec<String> = (0..self.scores.len()).map(|k| format!("curve_{k}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            let row: Vec<String> = self.scores.iter().map(|s| s[i].to_string()).collect();
            writeln!(out, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Pools the first row of every curve at `n_times` uniform times on
/// `[0, T]`, fits the first principal component and projects each curve.
pub fn pca_over_time(curves: &[&LatentCurve], n_times: usize) -> Result<PcaSeries> {
    if curves.is_empty() || n_times == 0 || curves.len() * n_times < 2 {
        return Err(Error::Config("pca_over_time needs at least 2 pooled points".into()));
    }
    let total = curves[0].total_time();
    let times: Vec<f64> = (0..n_times)
        .map(|i| {
            if n_times == 1 {
                0.0
            } else if i + 1 == n_times {
                total
            } else {
                total * i as f64 / (n_times - 1) as f64
            }
        })
        .collect();
    let mut pooled = Vec::new();
    let mut per_curve = Vec::with_capacity(curves.len());
    for c in curves {
        let pts = times
            .iter()
            .map(|&t| Ok(c.at(t)?.row(0).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        pooled.extend(pts.iter().flatten().copied());
        per_curve.push(pts);
    }
    let d = per_curve[0][0].len();
    let component = first_principal_component(&Tensor::matrix(pooled.len() / d, d, pooled))?;
    let scores = per_curve
        .iter()
        .map(|pts| pts.iter().map(|p| component.project(p)).collect())
        .collect();
    Ok(PcaSeries {
        times,
        component,
        scores,
    })
}

/// Settings shared by the sampling-based metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub pairs: usize,
    pub samples_per_pair: usize,
    pub support: Support,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pairs: 2000,
            samples_per_pair: 2,
            support: Support::Train,
            seed: 0,
        }
    }
}

/// Samples `pairs` source/target pairs from the support and returns
/// decoded intermediates at independent uniform times, plus the curves.
pub fn generated_intermediates<'b>(
    bundle: &'b ModelBundle,
    dataset: &Dataset,
    config: &EvalConfig,
    solver: &SolverConfig,
) -> Result<(Tensor, InterpolationCurve<'b>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (s, t) = dataset.sample_pairs(config.support, config.pairs, &mut rng)?;
    let curve = generate_curve(bundle, &s, &t, None, solver, &mut rng)?;
    let total = solver.total_time;
    let mut samples = Vec::with_capacity(config.samples_per_pair);
    for _ in 0..config.samples_per_pair {
        let times: Vec<f64> = (0..config.pairs).map(|_| rng.random_range(0.0..total)).collect();
        samples.push(curve.at_rows(&times)?);
    }
    let refs: Vec<&Tensor> = samples.iter().collect();
    Ok((Tensor::concat_rows(&refs)?, curve))
}

/// Surrogate Fréchet distance between the support set and generated intermediates.
pub fn eval_generation(
    bundle: &ModelBundle,
    dataset: &Dataset,
    config: &EvalConfig,
    solver: &SolverConfig,
) -> Result<f64> {
    let (generated, _) = generated_intermediates(bundle, dataset, config, solver)?;
    let real = GaussianFit::fit(&dataset.subset(config.support))?;
    frechet_gaussian_distance(&real, &GaussianFit::fit(&generated)?)
}

/// Mean distance of decoded midpoints `x̃(T/2)` from the data manifold.
pub fn midpoint_residual(
    bundle: &ModelBundle,
    dataset: &Dataset,
    config: &EvalConfig,
    solver: &SolverConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (s, t) = dataset.sample_pairs(config.support, config.pairs, &mut rng)?;
    let curve = generate_curve(bundle, &s, &t, None, solver, &mut rng)?;
    let mid = curve.at(solver.total_time / 2.0)?;
    Ok(mean(&manifold_residual(dataset.name, &mid)?))
}

/// Mean over pairs and both ends of `‖x − x̃‖²` at `t = 0` and `t = T`.
pub fn endpoint_mse(bundle: &ModelBundle, dataset: &Dataset, config: &EvalConfig, solver: &SolverConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (s, t) = dataset.sample_pairs(config.support, config.pairs, &mut rng)?;
    let curve = generate_curve(bundle, &s, &t, None, solver, &mut rng)?;
    let e0 = curve.at(0.0)?.sub(&s)?.squared_norm();
    let e1 = curve.at(solver.total_time)?.sub(&t)?.squared_norm();
    Ok((e0 + e1) / (2.0 * config.pairs as f64))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub method: SolverMethod,
    pub steps: usize,
    pub mean_secs: f64,
    pub std_secs: f64,
}

/// Wall-clock time of latent-interpolant generation (encoders plus
/// integration, no decoding) for `n_items` pairs.
pub fn bench_interpolants(
    bundle: &ModelBundle,
    dataset: &Dataset,
    methods: &[SolverMethod],
    steps_list: &[usize],
    n_items: usize,
    repeats: usize,
) -> Result<Vec<TimingRow>> {
    if steps_list.is_empty() || repeats == 0 {
        return Err(Error::Config("bench needs steps and repeats".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (s, t) = dataset.sample_pairs(Support::Both, n_items, &mut rng)?;
    let eps = draw_eps(&mut rng, n_items, bundle.config.latent_dim);
    let mut rows = Vec::new();
    for &method in methods {
        for &steps in steps_list {
            let solver = SolverConfig::new(method, steps, 1.0)?;
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                let tape = Tape::inert();
                let bound = bundle.bind(&tape, &[]);
                let path = latent_path(
                    &bound,
                    &tape.constant(s.clone()),
                    &tape.constant(t.clone()),
                    &tape.constant(eps.clone()),
                    &solver,
                )?;
                std::hint::black_box(path.end().value());
                times.push(start.elapsed().as_secs_f64());
            }
            rows.push(TimingRow {
                method,
                steps,
                mean_secs: mean(&times),
                std_secs: std_dev(&times),
            });
        }
    }
    Ok(rows)
}

pub fn write_timing_csv(out: &mut impl std::io::Write, rows: &[TimingRow]) -> Result<()> {
    writeln!(out, "method,steps,mean_secs,std_secs")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.method, r.steps, r.mean_secs, r.std_secs)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: SolverMethod,
    pub steps: usize,
    pub fid: f64,
}

/// Scores one trained model under several solver settings. Every setting
/// sees the same pairs, noise and sample times.
pub fn eval_step_sweep(
    bundle: &ModelBundle,
    dataset: &Dataset,
    config: &EvalConfig,
    methods: &[SolverMethod],
    steps_list: &[usize],
    total_time: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        for &steps in steps_list {
            let solver = SolverConfig::new(method, steps, total_time)?;
            rows.push(SweepRow {
                method,
                steps,
                fid: eval_generation(bundle, dataset, config, &solver)?,
            });
        }
    }
    Ok(rows)
}

/// Sweep table with one row per step count and one column per method.
pub fn write_sweep_csv(out: &mut impl std::io::Write, rows: &[SweepRow]) -> Result<()> {
    let mut methods: Vec<SolverMethod> = Vec::new();
    let mut steps: Vec<usize> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if !steps.contains(&r.steps) {
            steps.push(r.steps);
        }
    }
    let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    writeln!(out, "steps,{}", names.join(","))?;
    for s in steps {
        let cells: Vec<String> = methods
            .iter()
            .map(|m| {
                rows.iter()
                    .find(|r| r.method == *m && r.steps == s)
                    .map(|r| r.fid.to_string())
                    .unwrap_or_default()
            })
            .collect();
        writeln!(out, "{s},{}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kind: InterpolatorKind,
    pub surrogate_fid: f64,
    pub smoothness: f64,
    pub diversity: f64,
    pub endpoint_mse: f64,
    pub manifold_residual: f64,
    pub midpoint_residual: f64,
    pub support: Support,
    pub solver: SolverConfig,
    pub generation_secs: f64,
}

impl EvalReport {
    const FIELDS: [&'static str; 11] = [
        "kind",
        "surrogate_fid",
        "smoothness",
        "diversity",
        "endpoint_mse",
        "manifold_residual",
        "midpoint_residual",
        "support",
        "solver",
        "steps",
        "generation_secs",
    ];

    fn values(&self) -> Vec<String> {
        vec![
            self.kind.to_string(),
            self.surrogate_fid.to_string(),
            self.smoothness.to_string(),
            self.diversity.to_string(),
            self.endpoint_mse.to_string(),
            self.manifold_residual.to_string(),
            self.midpoint_residual.to_string(),
            self.support.to_string(),
            self.solver.method.to_string(),
            self.solver.steps.to_string(),
            self.generation_secs.to_string(),
        ]
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::FIELDS.iter().zip(self.values()) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// Every metric for one model under one solver and support.
pub fn evaluate(bundle: &ModelBundle, dataset: &Dataset, config: &EvalConfig, solver: &SolverConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let (generated, curve) = generated_intermediates(bundle, dataset, config, solver)?;
    let generation_secs = start.elapsed().as_secs_f64();
    let real = GaussianFit::fit(&dataset.subset(config.support))?;
    let surrogate_fid = frechet_gaussian_distance(&real, &GaussianFit::fit(&generated)?)?;
    let residual = mean(&manifold_residual(dataset.name, &generated)?);
    let mid = curve.at(solver.total_time / 2.0)?;
    let midpoint_residual = mean(&manifold_residual(dataset.name, &mid)?);
    let e0 = curve.at(0.0)?.sub(&curve.source)?.squared_norm();
    let e1 = curve.at(solver.total_time)?.sub(&curve.target)?.squared_norm();
    let endpoint_mse = (e0 + e1) / (2.0 * curve.batch() as f64);
    let smooth = smoothness(&curve, 65)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let (s, t) = dataset.sample_pairs(config.support, 1, &mut rng)?;
    let family = sample_trajectory_family(bundle, &s, &t, 6, solver, &mut rng)?;
    let div = diversity(&family, 15)?;
    Ok(EvalReport {
        kind: bundle.kind,
        surrogate_fid,
        smoothness: smooth,
        diversity: div.interior,
        endpoint_mse,
        manifold_residual: residual,
        midpoint_residual,
        support: config.support,
        solver: *solver,
        generation_secs,
    })
}
