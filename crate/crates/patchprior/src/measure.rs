//! Discrete measures on patch space: weighted point clouds.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::{extract_patches, Image, PatchConfig};
use crate::math::seeded_rng;

const WEIGHT_TOL: f64 = 1e-12;

/// Weighted point cloud in R^D with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("measure must contain at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::invalid("points and weights differ in length"));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("measure points have inconsistent dimension"));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("measure weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid(format!("measure weights sum to {total}, expected 1")));
        }
        Ok(DiscreteMeasure { dim, points, weights })
    }

    /// Uniform measure over the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("measure must contain at least one point"));
        }
        let w = 1.0 / n as f64;
        // build weights that sum to exactly 1 up to one final correction
        let mut weights = vec![w; n];
        let sum: f64 = weights.iter().sum();
        weights[n - 1] += 1.0 - sum;
        DiscreteMeasure::new(points, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Drops zero-weight atoms and renormalizes. No-op when none are zero.
    pub fn pruned(&self) -> DiscreteMeasure {
        let kept: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        if kept.len() == self.len() {
            return self.clone();
        }
        let points = kept.iter().map(|&i| self.points[i].clone()).collect();
        let mut weights: Vec<f64> = kept.iter().map(|&i| self.weights[i]).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        DiscreteMeasure::new(points, weights).expect("pruned measure is valid")
    }

    /// Uniform measure on a random subset of at most `max_points` support
    /// points (seeded). Used to cap the cost of image-scale OT evaluations.
    pub fn subsampled(&self, max_points: usize, seed: u64) -> DiscreteMeasure {
        if self.len() <= max_points || max_points == 0 {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = seeded_rng(seed);
        idx.shuffle(&mut rng);
        idx.truncate(max_points);
        let points: Vec<Vec<f64>> = idx.iter().map(|&i| self.points[i].clone()).collect();
        DiscreteMeasure::uniform(points).expect("subsampled measure is valid")
    }
}

/// Empirical patch measure of one or more images: uniform weights 1/(nN) over
/// every extracted patch of every image.
pub fn patch_measure(images: &[Image], cfg: &PatchConfig) -> Result<DiscreteMeasure> {
    if images.is_empty() {
        return Err(Error::invalid("patch_measure needs at least one image"));
    }
    let mut points = Vec::new();
    for image in images {
        let patches = extract_patches(image, cfg)?;
        for v in patches.vectors() {
            points.push(v.clone());
        }
    }
    DiscreteMeasure::uniform(points)
}

/// Parses a measure from CSV rows `x1,...,xD,weight`. All rows must share one
/// dimension; weights are normalized when `normalize` is set, otherwise they
/// must already sum to 1.
pub fn parse_measure_csv(bytes: &[u8], normalize: bool) -> Result<DiscreteMeasure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("measure csv: {e}")))?;
        if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::format(format!(
                "measure csv row {line}: need at least one coordinate and a weight"
            )));
        }
        let mut vals = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(format!("measure csv row {line}: bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(format!("measure csv row {line}: non-finite value")));
            }
            vals.push(v);
        }
        let w = vals.pop().unwrap();
        if !points.is_empty() && vals.len() != points[0].len() {
            return Err(Error::format(format!(
                "measure csv row {line}: dimension {} differs from {}",
                vals.len(),
                points[0].len()
            )));
        }
        points.push(vals);
        weights.push(w);
    }
    if points.is_empty() {
        return Err(Error::format("measure csv: no rows"));
    }
    if normalize {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::format("measure csv: weights must have positive finite sum"));
        }
        for w in &mut weights {
            *w /= total;
        }
        let sum: f64 = weights.iter().sum();
        let last = weights.len() - 1;
        weights[last] += 1.0 - sum;
    }
    DiscreteMeasure::new(points, weights).map_err(|e| Error::format(e.to_string()))
}

pub fn write_measure_csv(measure: &DiscreteMeasure) -> Vec<u8> {
    let mut out = String::new();
    for (p, w) in measure.points().iter().zip(measure.weights()) {
        for x in p {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!("{w}\n"));
    }
    out.into_bytes()
}
