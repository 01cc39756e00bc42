//! Procedural datasets with known ground-truth factors.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RING_NOISE_SIGMA: f64 = 0.02;
/// Noise draws are rejected beyond this norm, keeping ring radii in [0.8, 1.2].
pub const RING_NOISE_BOUND: f64 = 0.1;
pub const BAR_WIDTH: f64 = 0.8;
pub const BLOB_SIGMA: f64 = 1.0;
const GRID: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Ring2d,
    Moons2d,
    Gmm2d,
    Bars8x8,
    Blobs8x8,
}

impl DatasetName {
    pub const ALL: [DatasetName; 5] = [
        DatasetName::Ring2d,
        DatasetName::Moons2d,
        DatasetName::Gmm2d,
        DatasetName::Bars8x8,
        DatasetName::Blobs8x8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetName::Ring2d => "ring2d",
            DatasetName::Moons2d => "moons2d",
            DatasetName::Gmm2d => "gmm2d",
            DatasetName::Bars8x8 => "bars8x8",
            DatasetName::Blobs8x8 => "blobs8x8",
        }
    }

    pub fn data_dim(self) -> usize {
        if self.is_image() {
            GRID * GRID
        } else {
            2
        }
    }

    pub fn is_image(self) -> bool {
        matches!(self, DatasetName::Bars8x8 | DatasetName::Blobs8x8)
    }

    /// Default per-coordinate noise level.
    pub fn default_noise(self) -> f64 {
        match self {
            DatasetName::Ring2d => RING_NOISE_SIGMA,
            DatasetName::Moons2d => 0.05,
            DatasetName::Gmm2d => 0.05,
            DatasetName::Bars8x8 | DatasetName::Blobs8x8 => 0.0,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown dataset '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Which items source/target pairs are drawn from at sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Support {
    Train,
    Test,
    Both,
}

impl Support {
    pub const ALL: [Support; 3] = [Support::Train, Support::Test, Support::Both];

    pub fn name(self) -> &'static str {
        match self {
            Support::Train => "train",
            Support::Test => "test",
            Support::Both => "train+test",
        }
    }

    fn admits(self, split: Split) -> bool {
        match self {
            Support::Train => split == Split::Train,
            Support::Test => split == Split::Test,
            Support::Both => true,
        }
    }
}

impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Support {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Support::Train),
            "test" => Ok(Support::Test),
            "both" | "train+test" => Ok(Support::Both),
            _ => Err(Error::Data(format!("unknown support '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub seed: u64,
    /// `[n, data_dim]`.
    pub items: Tensor,
    /// Ground-truth generating parameters, one row per item.
    pub factors: Vec<Vec<f64>>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn generate(name: DatasetName, n: usize, seed: u64) -> Result<Self> {
        Self::generate_with_noise(name, n, seed, name.default_noise())
    }

    /// Like [`Dataset::generate`] with an explicit noise level; zero gives
    /// points exactly on the generating manifold.
    pub fn generate_with_noise(name: DatasetName, n: usize, seed: u64, noise: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 items, got {n}")));
        }
        if !(noise >= 0.0) {
            return Err(Error::Data(format!("noise must be nonnegative, got {noise}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = name.data_dim();
        let mut data = Vec::with_capacity(n * dim);
        let mut factors = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, f) = match name {
                DatasetName::Ring2d => ring_item(&mut rng, noise),
                DatasetName::Moons2d => moons_item(&mut rng, noise),
                DatasetName::Gmm2d => gmm_item(&mut rng, noise),
                DatasetName::Bars8x8 => {
                    let theta = rng.random_range(0.0..PI);
                    (render_bar(theta), vec![theta])
                }
                DatasetName::Blobs8x8 => {
                    let cx = rng.random_range(1.5..5.5);
                    let cy = rng.random_range(1.5..5.5);
                    (render_blob(cx, cy), vec![cx, cy])
                }
            };
            data.extend(x);
            factors.push(f);
        }
        let n_test = (n / 10).max(1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut split = vec![Split::Train; n];
        for &i in &order[..n_test] {
            split[i] = Split::Test;
        }
        Ok(Self {
            name,
            seed,
            items: Tensor::matrix(n, dim, data),
            factors,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.items.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data_dim(&self) -> usize {
        self.items.cols()
    }

    pub fn indices(&self, support: Support) -> Vec<usize> {
        (0..self.len()).filter(|&i| support.admits(self.split[i])).collect()
    }

    pub fn subset(&self, support: Support) -> Tensor {
        self.items
            .select_rows(&self.indices(support))
            .expect("support indices are in range")
    }

    /// Uniform draws from `support` with replacement.
    pub fn sample_batch(&self, support: Support, batch: usize, rng: &mut impl Rng) -> Result<Tensor> {
        let pool = self.indices(support);
        if pool.is_empty() {
            return Err(Error::Data(format!("support '{support}' is empty")));
        }
        let idx: Vec<usize> = (0..batch).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        Ok(self.items.select_rows(&idx)?)
    }

    /// Independent uniform `(x_S, x_T)` draws with distinct indices per row.
    pub fn sample_pairs(&self, support: Support, batch: usize, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
        let (s, t) = self.sample_pair_indices(support, batch, rng)?;
        Ok((self.items.select_rows(&s)?, self.items.select_rows(&t)?))
    }

    pub fn sample_pair_indices(
        &self,
        support: Support,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let pool = self.indices(support);
        if pool.len() < 2 {
            return Err(Error::Data(format!(
                "support '{support}' has {} items; pairs need at least 2",
                pool.len()
            )));
        }
        let mut sources = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        for _ in 0..batch {
            let s = rng.random_range(0..pool.len());
            let mut t = rng.random_range(0..pool.len());
            while t == s {
                t = rng.random_range(0..pool.len());
            }
            sources.push(pool[s]);
            targets.push(pool[t]);
        }
        Ok((sources, targets))
    }

    /// CSV for 2-D data, grid text for 8×8 data, both after a header line.
    pub fn write(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "name={},n={},seed={}", self.name, self.len(), self.seed)?;
        if self.name.is_image() {
            for i in 0..self.len() {
                let f: Vec<String> = self.factors[i].iter().map(|v| v.to_string()).collect();
                writeln!(out, "item {} {} {}", i, self.split[i].name(), f.join(" "))?;
                for r in 0..GRID {
                    let row: Vec<String> = self.items.row(i)[r * GRID..(r + 1) * GRID]
                        .iter()
                        .map(|v| v.to_string())
                        .collect();
                    writeln!(out, "{}", row.join(" "))?;
                }
            }
        } else {
            writeln!(out, "x0,x1,split,factors")?;
            for i in 0..self.len() {
                let x = self.items.row(i);
                let f: Vec<String> = self.factors[i].iter().map(|v| v.to_string()).collect();
                writeln!(out, "{},{},{},{}", x[0], x[1], self.split[i].name(), f.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty dataset file".into()))??;
        let mut name = None;
        let mut n = None;
        let mut seed = None;
        for field in header.split(',') {
            match field.split_once('=') {
                Some(("name", v)) => name = Some(v.parse::<DatasetName>()?),
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                _ => return Err(Error::Data(format!("bad header field '{field}'"))),
            }
        }
        let (name, n, seed) = match (name, n, seed) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Data(format!("incomplete header '{header}'"))),
        };
        let dim = name.data_dim();
        let mut data = Vec::with_capacity(n * dim);
        let mut factors = Vec::with_capacity(n);
        let mut split = Vec::with_capacity(n);
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad number '{s}'")));
        let parse_split = |s: &str| match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("bad split '{s}'"))),
        };
        if name.is_image() {
            for _ in 0..n {
                let head = lines.next().ok_or_else(|| Error::Data("truncated grid file".into()))??;
                let parts: Vec<&str> = head.split_whitespace().collect();
                if parts.len() < 3 || parts[0] != "item" {
                    return Err(Error::Data(format!("bad item line '{head}'")));
                }
                split.push(parse_split(parts[2])?);
                factors.push(parts[3..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?);
                for _ in 0..GRID {
                    let row = lines.next().ok_or_else(|| Error::Data("truncated grid file".into()))??;
                    let vals = row.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
                    if vals.len() != GRID {
                        return Err(Error::Data(format!("grid row has {} values", vals.len())));
                    }
                    data.extend(vals);
                }
            }
        } else {
            lines.next().ok_or_else(|| Error::Data("missing column header".into()))??;
            for _ in 0..n {
                let row = lines.next().ok_or_else(|| Error::Data("truncated csv".into()))??;
                let cells: Vec<&str> = row.split(',').collect();
                if cells.len() != 4 {
                    return Err(Error::Data(format!("bad csv row '{row}'")));
                }
                data.push(num(cells[0])?);
                data.push(num(cells[1])?);
                split.push(parse_split(cells[2])?);
                factors.push(cells[3].split_whitespace().map(num).collect::<Result<Vec<_>>>()?);
            }
        }
        Ok(Self {
            name,
            seed,
            items: Tensor::matrix(n, dim, data),
            factors,
            split,
        })
    }
}

fn ring_item(rng: &mut impl Rng, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let theta = rng.random_range(0.0..2.0 * PI);
    let r = rng.random_range(0.9..=1.1);
    let (nx, ny) = bounded_noise(rng, noise, RING_NOISE_BOUND);
    (vec![r * theta.cos() + nx, r * theta.sin() + ny], vec![theta])
}

fn bounded_noise(rng: &mut impl Rng, sigma: f64, bound: f64) -> (f64, f64) {
    if sigma == 0.0 {
        return (0.0, 0.0);
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let (a, b) = (normal.sample(rng), normal.sample(rng));
        if a.hypot(b) <= bound {
            return (a, b);
        }
    }
}

const MOON_SHIFT: (f64, f64) = (0.5, 0.25);

fn moon_point(which: usize, theta: f64) -> (f64, f64) {
    let (x, y) = if which == 0 {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    };
    (x - MOON_SHIFT.0, y - MOON_SHIFT.1)
}

fn moons_item(rng: &mut impl Rng, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let which = rng.random_range(0..2usize);
    let theta = rng.random_range(0.0..=PI);
    let (x, y) = moon_point(which, theta);
    let (nx, ny) = bounded_noise(rng, noise, 5.0 * noise);
    (vec![x + nx, y + ny], vec![which as f64, theta])
}

pub const GMM_COMPONENTS: usize = 8;

fn gmm_center(k: usize) -> (f64, f64) {
    let a = 2.0 * PI * k as f64 / GMM_COMPONENTS as f64;
    (a.cos(), a.sin())
}

fn gmm_item(rng: &mut impl Rng, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let k = rng.random_range(0..GMM_COMPONENTS);
    let (cx, cy) = gmm_center(k);
    let (nx, ny) = bounded_noise(rng, noise, 5.0 * noise);
    (vec![cx + nx, cy + ny], vec![k as f64])
}

/// Direction cosines with exact zeros at the axis angles.
fn snapped_direction(theta: f64) -> (f64, f64) {
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    (snap(theta.cos()), snap(theta.sin()))
}

/// 8×8 raster of a bar through the grid centre at angle `theta`, in [-1, 1].
pub fn render_bar(theta: f64) -> Vec<f64> {
    let (c, s) = snapped_direction(theta);
    let centre = (GRID as f64 - 1.0) / 2.0;
    let mut img = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            let (u, v) = (j as f64 - centre, i as f64 - centre);
            let d = -s * u + c * v;
            img.push(2.0 * (-d * d / (2.0 * BAR_WIDTH * BAR_WIDTH)).exp() - 1.0);
        }
    }
    img
}

/// 8×8 raster of an isotropic Gaussian blob centred at `(cx, cy)`.
pub fn render_blob(cx: f64, cy: f64) -> Vec<f64> {
    let mut img = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            let d2 = (j as f64 - cx).powi(2) + (i as f64 - cy).powi(2);
            img.push(2.0 * (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp() - 1.0);
        }
    }
    img
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn arc_distance(x: f64, y: f64, cx: f64, cy: f64, a0: f64, a1: f64) -> f64 {
    // Distance from (x, y) to the unit-radius arc around (cx, cy) spanning angles [a0, a1].
    let (dx, dy) = (x - cx, y - cy);
    let ang = dy.atan2(dx);
    let inside = |a: f64| {
        let mut a = a;
        while a < a0 {
            a += 2.0 * PI;
        }
        a <= a1
    };
    if inside(ang) {
        return (dx.hypot(dy) - 1.0).abs();
    }
    let end = |a: f64| (dx - a.cos()).hypot(dy - a.sin());
    end(a0).min(end(a1))
}

/// Distance from each row of `x` to the dataset's noiseless manifold.
pub fn manifold_residual(name: DatasetName, x: &Tensor) -> Result<Vec<f64>> {
    if x.rank() != 2 || x.cols() != name.data_dim() {
        return Err(Error::Data(format!(
            "{name} points have {} coordinates, got shape {:?}",
            name.data_dim(),
            x.shape()
        )));
    }
    Ok((0..x.rows()).map(|i| point_residual(name, x.row(i))).collect())
}

fn point_residual(name: DatasetName, p: &[f64]) -> f64 {
    match name {
        DatasetName::Ring2d => (p[0].hypot(p[1]) - 1.0).abs(),
        DatasetName::Moons2d => {
            let (x, y) = (p[0] + MOON_SHIFT.0, p[1] + MOON_SHIFT.1);
            let upper = arc_distance(x, y, 0.0, 0.0, 0.0, PI);
            // The lower moon is the upper one rotated by π about (0.5, 0.25).
            let lower = arc_distance(x, y, 1.0, 0.5, PI, 2.0 * PI);
            upper.min(lower)
        }
        DatasetName::Gmm2d => (0..GMM_COMPONENTS)
            .map(|k| {
                let (cx, cy) = gmm_center(k);
                (p[0] - cx).hypot(p[1] - cy)
            })
            .fold(f64::INFINITY, f64::min),
        DatasetName::Bars8x8 => {
            let theta = argmin(&|t: f64| rms(p, &render_bar(t)), 0.0, PI, 180);
            rms(p, &render_bar(theta))
        }
        DatasetName::Blobs8x8 => {
            // Alternate 1-D searches over the two centre coordinates.
            let mut cy = 3.5;
            let mut best = f64::INFINITY;
            for _ in 0..4 {
                let fx = |c: f64| rms(p, &render_blob(c, cy));
                let cx = argmin(&fx, 1.0, 6.0, 50);
                let fy = |c: f64| rms(p, &render_blob(cx, c));
                cy = argmin(&fy, 1.0, 6.0, 50);
                best = best.min(rms(p, &render_blob(cx, cy)));
            }
            best
        }
    }
}

/// Coarse scan over `[lo, hi]` followed by golden-section refinement.
fn argmin(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, coarse: usize) -> f64 {
    let step = (hi - lo) / coarse as f64;
    let mut best_x = lo;
    let mut best = f(lo);
    for k in 1..=coarse {
        let x = lo + step * k as f64;
        let v = f(x);
        if v < best {
            best = v;
            best_x = x;
        }
    }
    let (mut a, mut b) = (best_x - step, best_x + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..50 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_radii_stay_in_band() {
        let d = Dataset::generate(DatasetName::Ring2d, 1000, 4).unwrap();
        for i in 0..d.len() {
            let r = d.items.row(i)[0].hypot(d.items.row(i)[1]);
            assert!((0.8..=1.2).contains(&r), "radius {r}");
        }
        assert_eq!(d.factors.len(), d.len());
    }

    #[test]
    fn noiseless_items_are_near_manifold() {
        for name in DatasetName::ALL {
            let d = Dataset::generate_with_noise(name, 40, 11, 0.0).unwrap();
            let res = manifold_residual(name, &d.items).unwrap();
            assert!(res.iter().all(|&r| r <= 0.1 + 1e-9), "{name}: {res:?}");
        }
    }

    #[test]
    fn ring_geometry() {
        let origin = Tensor::matrix(1, 2, vec![0.0, 0.0]);
        assert_eq!(manifold_residual(DatasetName::Ring2d, &origin).unwrap(), vec![1.0]);
        let a = Tensor::matrix(1, 2, vec![0.6f64.cos(), 0.6f64.sin()]);
        let b = a.scale(-1.0);
        let mid = a.add(&b).unwrap().scale(0.5);
        assert!((manifold_residual(DatasetName::Ring2d, &mid).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bars_axis_angles_are_transposes() {
        let h = render_bar(0.0);
        let v = render_bar(PI / 2.0);
        for i in 0..GRID {
            for j in 0..GRID {
                assert_eq!(h[i * GRID + j], v[j * GRID + i]);
            }
        }
        assert!(h.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn same_seed_same_data_and_split_is_ninety_ten() {
        let a = Dataset::generate(DatasetName::Moons2d, 200, 3).unwrap();
        let b = Dataset::generate(DatasetName::Moons2d, 200, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indices(Support::Test).len(), 20);
        assert_eq!(a.indices(Support::Train).len(), 180);
    }

    #[test]
    fn test_support_never_yields_train_items() {
        let d = Dataset::generate(DatasetName::Ring2d, 100, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, t) = d.sample_pair_indices(Support::Test, 500, &mut rng).unwrap();
        for (a, b) in s.iter().zip(&t) {
            assert_ne!(a, b);
            assert_eq!(d.split[*a], Split::Test);
            assert_eq!(d.split[*b], Split::Test);
        }
    }

    #[test]
    fn unknown_names_and_tiny_sets_rejected() {
        assert!("circle".parse::<DatasetName>().is_err());
        assert!(Dataset::generate(DatasetName::Ring2d, 1, 0).is_err());
    }

    #[test]
    fn io_round_trip() {
        for name in [DatasetName::Gmm2d, DatasetName::Blobs8x8] {
            let d = Dataset::generate(name, 12, 8).unwrap();
            let mut buf = Vec::new();
            d.write(&mut buf).unwrap();
            let back = Dataset::read(&buf[..]).unwrap();
            assert_eq!(back, d);
        }
    }
}
