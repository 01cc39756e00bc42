//! Binary graymap (P5) image strips and scatter CSV for point data.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value of the 1-pixel separators between frames.
pub const SEPARATOR: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_p5(&self) -> Vec<u8> {
        let mut out = format!("P5 {} {} 255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Maps `[-1, 1]` linearly onto `[0, 255]`, clamping outside values.
pub fn to_gray(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5 + 0.5).floor() as u8
}

/// Lays out square frames on a grid: trajectory `b` is grid row `b`, time
/// `k` is grid column `k`. `frames` is time-major (row `k·n_rows + b`),
/// as produced by `InterpolationCurve::sample_images`.
pub fn render_strip(frames: &Tensor, n_rows: usize) -> Result<GrayImage> {
    let dim = frames.cols();
    let side = (dim as f64).sqrt().round() as usize;
    if frames.rank() != 2 || side * side != dim || n_rows == 0 || !frames.rows().is_multiple_of(n_rows) {
        return Err(Error::Config(format!(
            "cannot lay out frames of shape {:?} as square images in {n_rows} rows",
            frames.shape()
        )));
    }
    let n_cols = frames.rows() / n_rows;
    let width = n_cols * side + n_cols.saturating_sub(1);
    let height = n_rows * side + n_rows - 1;
    let mut pixels = vec![SEPARATOR; width * height];
    for k in 0..n_cols {
        for b in 0..n_rows {
            let frame = frames.row(k * n_rows + b);
            for y in 0..side {
                for x in 0..side {
                    let py = b * (side + 1) + y;
                    let px = k * (side + 1) + x;
                    pixels[py * width + px] = to_gray(frame[y * side + x]);
                }
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}

/// Where a rendering ended up.
#[derive(Debug, Clone, PartialEq)]
pub enum Rendered {
    Strip(PathBuf),
    /// Point data cannot be drawn as images; a scatter CSV was written instead.
    Scatter(PathBuf),
}

/// Writes `frames` (time-major, `n_rows` trajectories sampled at `times`)
/// as `<stem>.pgm` for image datasets or `<stem>.csv` otherwise.
pub fn render_curves(dataset: DatasetName, frames: &Tensor, times: &[f64], n_rows: usize, dir: &Path, stem: &str) -> Result<Rendered> {
    if dataset.is_image() {
        let path = dir.join(format!("{stem}.pgm"));
        std::fs::write(&path, render_strip(frames, n_rows)?.to_p5())?;
        return Ok(Rendered::Strip(path));
    }
    if frames.rows() != times.len() * n_rows {
        return Err(Error::Config(format!(
            "{} frames for {} times and {n_rows} trajectories",
            frames.rows(),
            times.len()
        )));
    }
    let path = dir.join(format!("{stem}.csv"));
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let coords: Vec<String> = (0..frames.cols()).map(|j| format!("x{j}")).collect();
    writeln!(out, "trajectory,t,{}", coords.join(","))?;
    for b in 0..n_rows {
        for (k, t) in times.iter().enumerate() {
            let row: Vec<String> = frames.row(k * n_rows + b).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{b},{t},{}", row.join(","))?;
        }
    }
    out.flush()?;
    Ok(Rendered::Scatter(path))
}
