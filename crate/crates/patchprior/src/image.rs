//! Grayscale images, patch extraction and its adjoint.
//!
//! Patches are p×p blocks flattened **column-major** (column by column), so a
//! trained prior stays portable across any code that follows the same
//! convention. Every position whose row/column offsets are multiples of the
//! stride and whose footprint lies fully inside the image yields one patch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::seeded_rng;

/// 2D grayscale intensity grid, row-major, nominal range [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Image { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Image { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamps every pixel into [lo, hi].
    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Patch extraction settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PatchConfig {
    /// Side length p of the square patches.
    pub patch_size: usize,
    /// Grid stride between patch origins, >= 1.
    pub stride: usize,
    /// If set, a uniform random subset of this many patch positions per extraction.
    pub subset: Option<usize>,
    /// Seed for the subset draw.
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig { patch_size: 6, stride: 1, subset: None, seed: 0 }
    }
}

impl PatchConfig {
    pub fn new(patch_size: usize, stride: usize) -> Self {
        PatchConfig { patch_size, stride, subset: None, seed: 0 }
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate_for(&self, image: &Image) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(Error::invalid("patch size and stride must be >= 1"));
        }
        if self.patch_size > image.width().min(image.height()) {
            return Err(Error::invalid(format!(
                "patch size {} exceeds image extent {}x{}",
                self.patch_size,
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    /// Number of patch positions on the full grid: ⌊(d−p)/s+1⌋ per axis.
    pub fn grid_count(&self, image: &Image) -> (usize, usize) {
        let rows = (image.height() - self.patch_size) / self.stride + 1;
        let cols = (image.width() - self.patch_size) / self.stride + 1;
        (rows, cols)
    }
}

/// Extracted patch vectors plus the (row, col) origin of each.
#[derive(Debug, Clone)]
pub struct PatchSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    origins: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>, origins: Vec<(usize, usize)>) -> Result<Self> {
        if vectors.len() != origins.len() {
            return Err(Error::invalid("patch vectors and origins differ in length"));
        }
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("patch vectors have inconsistent dimension"));
        }
        Ok(PatchSet { dim, vectors, origins })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }
}

/// Reads the patch footprint at (r0, c0) into a column-major vector.
fn read_patch(image: &Image, p: usize, r0: usize, c0: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(p * p);
    for j in 0..p {
        for i in 0..p {
            v.push(image.get(r0 + i, c0 + j));
        }
    }
    v
}

/// Extracts one patch per grid position; with `cfg.subset` set, a seeded
/// uniform subset of those positions.
pub fn extract_patches(image: &Image, cfg: &PatchConfig) -> Result<PatchSet> {
    cfg.validate_for(image)?;
    let p = cfg.patch_size;
    let (rows, cols) = cfg.grid_count(image);
    let mut origins: Vec<(usize, usize)> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            origins.push((r * cfg.stride, c * cfg.stride));
        }
    }
    if let Some(n) = cfg.subset {
        if n < origins.len() {
            let mut rng = seeded_rng(cfg.seed);
            origins.shuffle(&mut rng);
            origins.truncate(n);
            origins.sort_unstable();
        }
    }
    let vectors = origins.iter().map(|&(r, c)| read_patch(image, p, r, c)).collect();
    PatchSet::new(p * p, vectors, origins)
}

/// Adjoint of extraction: each pixel accumulates the contributions of every
/// patch covering it. Satisfies ⟨extract(x), g⟩ = ⟨x, scatter(g)⟩.
pub fn scatter_patch_gradients(
    patch_grads: &PatchSet,
    width: usize,
    height: usize,
    cfg: &PatchConfig,
) -> Result<Image> {
    let p = cfg.patch_size;
    if patch_grads.dim() != p * p {
        return Err(Error::invalid(format!(
            "patch gradient dim {} does not match p^2 = {}",
            patch_grads.dim(),
            p * p
        )));
    }
    let mut out = Image::zeros(width, height);
    for (v, &(r0, c0)) in patch_grads.vectors().iter().zip(patch_grads.origins()) {
        if r0 + p > height || c0 + p > width {
            return Err(Error::invalid("patch origin out of bounds for target shape"));
        }
        let mut idx = 0;
        for j in 0..p {
            for i in 0..p {
                let cur = out.get(r0 + i, c0 + j);
                out.set(r0 + i, c0 + j, cur + v[idx]);
                idx += 1;
            }
        }
    }
    Ok(out)
}

/// Bicubic upsampling by an integer factor (Catmull-Rom kernel, a = -1/2),
/// with edge clamping. Used as the naive inversion for super-resolution.
pub fn bicubic_upsample(image: &Image, factor: usize) -> Image {
    if factor <= 1 {
        return image.clone();
    }
    let w = image.width() * factor;
    let h = image.height() * factor;
    let mut out = Image::zeros(w, h);

    let kernel = |t: f64| -> f64 {
        let a = -0.5;
        let t = t.abs();
        if t < 1.0 {
            (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
        } else if t < 2.0 {
            a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
        } else {
            0.0
        }
    };
    let clamp_i = |v: isize, n: usize| -> usize { v.clamp(0, n as isize - 1) as usize };

    for r in 0..h {
        // map output pixel center to source coordinates
        let sy = (r as f64 + 0.5) / factor as f64 - 0.5;
        let y0 = sy.floor() as isize;
        let fy = sy - y0 as f64;
        for c in 0..w {
            let sx = (c as f64 + 0.5) / factor as f64 - 0.5;
            let x0 = sx.floor() as isize;
            let fx = sx - x0 as f64;
            let mut acc = 0.0;
            for dy in -1..=2isize {
                let wy = kernel(dy as f64 - fy);
                if wy == 0.0 {
                    continue;
                }
                let yy = clamp_i(y0 + dy, image.height());
                for dx in -1..=2isize {
                    let wx = kernel(dx as f64 - fx);
                    if wx == 0.0 {
                        continue;
                    }
                    let xx = clamp_i(x0 + dx, image.width());
                    acc += wy * wx * image.get(yy, xx);
                }
            }
            out.set(r, c, acc);
        }
    }
    out
}
