//! Dense per-pixel maps with a validity mask.
//!
//! [`ScalarMap`] is an unconstrained real-valued map (inverse depth,
//! log-space depth, normalized maps, gradients). [`DepthGrid`] adds the
//! metric-depth invariant: every valid pixel holds a finite, strictly
//! positive depth in meters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major map of `f64` values plus a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if values.len() != n || mask.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{width}x{height} map needs {n} values and mask entries, got {} and {}",
                values.len(),
                mask.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| mask[i] && !values[i].is_finite()) {
            return Err(Error::InvalidGrid(format!("valid pixel {i} is not finite")));
        }
        Ok(Self {
            width,
            height,
            values,
            mask,
        })
    }

    /// Map where every finite value is valid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let mask = values.iter().map(|v| v.is_finite()).collect();
        Self::new(width, height, values, mask)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            mask: vec![value.is_finite(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.mask[i].then(|| self.values[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[self.index(x, y)]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Applies `f` to every valid value; invalid pixels keep their value.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { f(v) } else { v })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            values,
            mask: self.mask.clone(),
        }
    }

    pub fn into_parts(self) -> (usize, usize, Vec<f64>, Vec<bool>) {
        (self.width, self.height, self.values, self.mask)
    }

    pub(crate) fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Metric depth grid: valid pixels are finite and strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalarMap", into = "ScalarMap")]
pub struct DepthGrid(ScalarMap);

impl DepthGrid {
    /// Builds a grid; invalid pixels are stored as 0.
    pub fn new(width: usize, height: usize, depth: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        Self::from_map(ScalarMap::new(width, height, depth, mask)?)
    }

    /// Grid from raw depths: finite positive values are valid, anything
    /// else (0, negative, NaN, inf) is invalid.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        let mask = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::new(width, height, depth, mask)
    }

    pub fn from_map(map: ScalarMap) -> Result<Self> {
        let (width, height, mut values, mask) = map.into_parts();
        for (i, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m {
                if *v <= 0.0 {
                    return Err(Error::InvalidGrid(format!(
                        "valid pixel {i} has non-positive depth {v}"
                    )));
                }
            } else {
                *v = 0.0;
            }
        }
        Ok(Self(ScalarMap {
            width,
            height,
            values,
            mask,
        }))
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self(ScalarMap {
            width,
            height,
            values: vec![0.0; width * height],
            mask: vec![false; width * height],
        })
    }

    pub fn as_map(&self) -> &ScalarMap {
        &self.0
    }

    pub fn into_map(self) -> ScalarMap {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn depth(&self) -> &[f64] {
        &self.0.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.0.mask
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        self.0.index(x, y)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.0.get(x, y)
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.0.is_valid(x, y)
    }

    pub fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    /// Iterator over `(x, y, depth)` of valid pixels in row-major order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width();
        self.0
            .values
            .iter()
            .zip(&self.0.mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(move |(i, (&d, _))| (i % w, i / w, d))
    }

    pub(crate) fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        self.0.ensure_same_dims(&other.0)
    }
}

impl TryFrom<ScalarMap> for DepthGrid {
    type Error = Error;

    fn try_from(map: ScalarMap) -> Result<Self> {
        Self::from_map(map)
    }
}

impl From<DepthGrid> for ScalarMap {
    fn from(grid: DepthGrid) -> Self {
        grid.0
    }
}
