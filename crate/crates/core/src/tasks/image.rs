//! Image-completion tasks: pixels as (coordinate, intensity) pairs.

use std::fs;
use std::path::Path;

use lbanp_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, NpError, Result};
use crate::linalg::{cholesky_jittered, lower_matvec};

use super::batch::TaskBatch;
use super::gp::{MAX_JITTER, SAMPLE_JITTER};

/// Grayscale or multi-channel image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `[height, width, channels]`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let at = (row * self.width + col) * self.channels;
        &self.data[at..at + self.channels]
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Pixel index `i ∈ [0, size)` to `[−1, 1]`.
pub fn rescale_coord(i: usize, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (size - 1) as f64 - 1.0
    }
}

pub fn unscale_coord(x: f64, size: usize) -> f64 {
    (x + 1.0) * (size.max(2) - 1) as f64 / 2.0
}

/// Intensity in `[0, 1]` to `[−0.5, 0.5]`.
pub fn rescale_value(v: f64) -> f64 {
    v - 0.5
}

pub fn unscale_value(y: f64) -> f64 {
    y + 0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Synthetic,
    Corpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTaskConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `N` drawn from the integers in `[lo, hi)`, `hi` clipped to `HW − 6`.
    pub n_range: (usize, usize),
    /// `M` drawn from `[min_target, min(max_points, HW) − N)`.
    pub min_target: usize,
    pub max_points: usize,
    pub batch: usize,
    pub source: ImageSource,
}

impl Default for ImageTaskConfig {
    fn default() -> Self {
        ImageTaskConfig {
            height: 16,
            width: 16,
            channels: 1,
            n_range: (3, 197),
            min_target: 3,
            max_points: 200,
            batch: 16,
            source: ImageSource::Synthetic,
        }
    }
}

impl ImageTaskConfig {
    fn n_upper(&self) -> usize {
        self.n_range.1.min(self.height * self.width - 6)
    }

    fn m_cap(&self) -> usize {
        self.max_points.min(self.height * self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.channels == 0 || self.batch == 0 {
            return Err(NpError::Config("images must be at least 4x4 with one channel".into()));
        }
        let n_hi = self.n_upper();
        if self.n_range.0 == 0 || n_hi <= self.n_range.0 {
            return Err(NpError::Config(format!("empty context range {:?}", self.n_range)));
        }
        if self.min_target == 0 || (n_hi - 1) + self.min_target >= self.m_cap() {
            return Err(NpError::Config("no room for targets at the largest context size".into()));
        }
        Ok(())
    }
}

/// One task from one image with exactly `n` context and `m` target pixels,
/// disjoint. Returns flat `(x_c, y_c, x_t, y_t)`.
pub fn image_task<R: Rng + ?Sized>(
    image: &Image,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let total = image.n_pixels();
    if n + m > total {
        return contract(format!(
            "{n} context + {m} target pixels exceed the {total} pixels of a {}x{} image",
            image.height, image.width
        ));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let split = |idx: &[usize]| {
        let mut xs = Vec::with_capacity(idx.len() * 2);
        let mut ys = Vec::with_capacity(idx.len() * image.channels);
        for &p in idx {
            let (r, c) = (p / image.width, p % image.width);
            xs.push(rescale_coord(r, image.height));
            xs.push(rescale_coord(c, image.width));
            ys.extend(image.pixel(r, c).iter().map(|&v| rescale_value(v)));
        }
        (xs, ys)
    };
    let (xc, yc) = split(&order[..n]);
    let (xt, yt) = split(&order[n..n + m]);
    Ok((xc, yc, xt, yt))
}

/// Batch of completion tasks, each from an image chosen uniformly from `images`.
pub fn sample_image_tasks<R: Rng + ?Sized>(images: &[Image], config: &ImageTaskConfig, rng: &mut R) -> Result<TaskBatch> {
    config.validate()?;
    if images.is_empty() {
        return contract("no images to sample from");
    }
    if let Some(bad) = images
        .iter()
        .find(|im| im.height != config.height || im.width != config.width || im.channels != config.channels)
    {
        return contract(format!(
            "image is {}x{}x{}, config expects {}x{}x{}",
            bad.height, bad.width, bad.channels, config.height, config.width, config.channels
        ));
    }
    let n = rng.random_range(config.n_range.0..config.n_upper());
    let m = rng.random_range(config.min_target..config.m_cap() - n);
    let b = config.batch;
    let c = config.channels;
    let (mut xc, mut yc, mut xt, mut yt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..b {
        let image = &images[rng.random_range(0..images.len())];
        let (a, bb, cc, d) = image_task(image, n, m, rng)?;
        xc.extend(a);
        yc.extend(bb);
        xt.extend(cc);
        yt.extend(d);
    }
    TaskBatch::new(
        Tensor::new([b, n, 2], xc)?,
        Tensor::new([b, n, c], yc)?,
        Tensor::new([b, m, 2], xt)?,
        Tensor::new([b, m, c], yt)?,
    )
}

pub const SYNTH_LENGTHSCALE: f64 = 0.25;

/// Smooth random grayscale images: a 2-D RBF GP sample over the rescaled
/// pixel grid, squashed through a sigmoid.
pub fn synth_images<R: Rng + ?Sized>(count: usize, height: usize, width: usize, rng: &mut R) -> Result<Vec<Image>> {
    if height < 4 || width < 4 {
        return contract("synthetic images must be at least 4x4");
    }
    let n = height * width;
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|p| (rescale_coord(p / width, height), rescale_coord(p % width, width)))
        .collect();
    let l2 = 2.0 * SYNTH_LENGTHSCALE * SYNTH_LENGTHSCALE;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (dr, dc) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            let v = (-(dr * dr + dc * dc) / l2).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let (chol, _) = cholesky_jittered(&k, n, SAMPLE_JITTER, MAX_JITTER)?;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let f = lower_matvec(&chol, &z, n);
        images.push(Image {
            height,
            width,
            channels: 1,
            data: f.into_iter().map(lbanp_tensor::scalar::sigmoid).collect(),
        });
    }
    Ok(images)
}

fn format_err(path: &Path, detail: impl Into<String>) -> NpError {
    NpError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Parse a binary (P5) PGM with maxval 255.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos).ok_or_else(|| format_err(path, "empty file"))?;
    if magic != "P5" {
        return Err(format_err(path, format!("expected binary PGM magic P5, found {magic:?}")));
    }
    let field = |name: &str, pos: &mut usize| -> Result<usize> {
        let t = token(pos).ok_or_else(|| format_err(path, format!("missing {name}")))?;
        t.parse::<usize>()
            .map_err(|_| format_err(path, format!("bad {name} {t:?}")))
    };
    let width = field("width", &mut pos)?;
    let height = field("height", &mut pos)?;
    let maxval = field("maxval", &mut pos)?;
    if maxval != 255 {
        return Err(format_err(path, format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing raster separator"));
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format_err(
            path,
            format!("truncated raster: {} of {need} bytes", raster.len()),
        ));
    }
    Ok(Image {
        height,
        width,
        channels: 1,
        data: raster[..need].iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

/// Load every `*.pgm` file of a directory in file-name order.
pub fn load_pgm_corpus(dir: impl AsRef<Path>) -> Result<Vec<Image>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| NpError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| NpError::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if path.is_file() && is_pgm {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| NpError::io(p, e))?;
            parse_pgm(&bytes, p)
        })
        .collect()
}
