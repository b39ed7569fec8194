//! Shared domain types: dense scalar grids, validity masks, the sparse and
//! dense depth sources, and the fusion hyperparameters.
//!
//! Pixels are addressed row-major, `i = y * width + x`, with `i` in
//! `0..width * height`. All fields are stored as `f64`.

use crate::error::{FusionError, Result};

/// A dense row-major 2-D field of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid, checking the dimensions and that every value is finite.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FusionError::InvalidGrid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(FusionError::InvalidGrid(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FusionError::Domain {
                index,
                reason: format!("non-finite value {}", values[index]),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// A grid with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero or `value` is not finite.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a grid by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Applies `f` to every value, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(FusionError::Shape {
                expected: shape,
                actual: self.shape(),
            });
        }
        Ok(())
    }
}

/// Per-pixel validity flags for a grid of the same dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || valid.len() != width * height {
            return Err(FusionError::InvalidGrid(format!(
                "mask of {width}x{height} cannot hold {} flags",
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            valid,
        })
    }

    pub fn all(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            valid: vec![true; width * height],
        }
    }

    pub fn none(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            valid: vec![false; width * height],
        }
    }

    /// Marks pixels where `grid` satisfies `pred`.
    pub fn from_predicate(grid: &ImageGrid, pred: impl Fn(f64) -> bool) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            valid: grid.values().iter().map(|&v| pred(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Indices of valid pixels in increasing order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    pub fn and(&self, other: &ValidityMask) -> Result<Self> {
        self.ensure_shape(other.shape())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            valid: self
                .valid
                .iter()
                .zip(&other.valid)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn and_not(&self, other: &ValidityMask) -> Result<Self> {
        self.ensure_shape(other.shape())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            valid: self
                .valid
                .iter()
                .zip(&other.valid)
                .map(|(&a, &b)| a && !b)
                .collect(),
        })
    }

    /// The mask as a 0/1 grid, for serialization.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid {
            width: self.width,
            height: self.height,
            values: self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Reads a mask back from a grid: any value above 0.5 is valid.
    pub fn from_grid(grid: &ImageGrid) -> Self {
        Self::from_predicate(grid, |v| v > 0.5)
    }

    pub(crate) fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(FusionError::Shape {
                expected: shape,
                actual: self.shape(),
            });
        }
        Ok(())
    }
}

/// Row-major neighbor arithmetic on a `width x height` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridIndex {
    pub width: usize,
    pub height: usize,
}

impl GridIndex {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    /// Pixel to the right of `i`, if any.
    pub fn right(&self, i: usize) -> Option<usize> {
        (i % self.width < self.width - 1).then_some(i + 1)
    }

    /// Pixel below `i`, if any.
    pub fn below(&self, i: usize) -> Option<usize> {
        (i < self.width * (self.height - 1)).then_some(i + self.width)
    }

    pub fn left(&self, i: usize) -> Option<usize> {
        (!i.is_multiple_of(self.width)).then(|| i - 1)
    }

    pub fn above(&self, i: usize) -> Option<usize> {
        (i >= self.width).then(|| i - self.width)
    }

    /// The full 4-neighborhood of `i` (right, below, left, above order).
    pub fn neighbors4(&self, i: usize) -> impl Iterator<Item = usize> {
        [self.right(i), self.below(i), self.left(i), self.above(i)]
            .into_iter()
            .flatten()
    }
}

/// Partial log-depth observations with per-pixel confidence.
///
/// Invalid pixels store log-depth 0 and must carry confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    log_depth: ImageGrid,
    mask: ValidityMask,
    confidence: ImageGrid,
}

impl SparseDepthMap {
    pub fn new(log_depth: ImageGrid, mask: ValidityMask, confidence: ImageGrid) -> Result<Self> {
        mask.ensure_shape(log_depth.shape())?;
        confidence.ensure_shape(log_depth.shape())?;
        check_unit_interval(&confidence)?;
        for (i, (&c, &valid)) in confidence.values().iter().zip(mask.flags()).enumerate() {
            if !valid && c != 0.0 {
                return Err(FusionError::Domain {
                    index: i,
                    reason: format!("confidence {c} at an invalid pixel must be 0"),
                });
            }
        }
        let mut values = log_depth.into_values();
        for (v, &valid) in values.iter_mut().zip(mask.flags()) {
            if !valid {
                *v = 0.0;
            }
        }
        let log_depth = ImageGrid::new(mask.width(), mask.height(), values)?;
        Ok(Self {
            log_depth,
            mask,
            confidence,
        })
    }

    /// Builds a map from metric depths, with confidence 1 at every valid pixel.
    pub fn from_depth(depth: &ImageGrid, mask: &ValidityMask) -> Result<Self> {
        let log_depth = to_log_depth(depth, mask)?;
        Self::new(log_depth, mask.clone(), mask.to_grid())
    }

    /// A map with no valid pixels.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            log_depth: ImageGrid::zeros(width, height),
            mask: ValidityMask::none(width, height),
            confidence: ImageGrid::zeros(width, height),
        }
    }

    pub fn log_depth(&self) -> &ImageGrid {
        &self.log_depth
    }

    pub fn mask(&self) -> &ValidityMask {
        &self.mask
    }

    pub fn confidence(&self) -> &ImageGrid {
        &self.confidence
    }

    pub fn shape(&self) -> (usize, usize) {
        self.log_depth.shape()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.count()
    }

    /// Replaces the confidence map; values at invalid pixels are zeroed.
    pub fn with_confidence(&self, confidence: &ImageGrid) -> Result<Self> {
        confidence.ensure_shape(self.shape())?;
        let masked = confidence
            .values()
            .iter()
            .zip(self.mask.flags())
            .map(|(&c, &valid)| if valid { c } else { 0.0 })
            .collect();
        let confidence = ImageGrid::new(self.log_depth.width(), self.log_depth.height(), masked)?;
        Self::new(self.log_depth.clone(), self.mask.clone(), confidence)
    }
}

/// A dense log-depth prediction with per-pixel confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePrediction {
    log_depth: ImageGrid,
    confidence: ImageGrid,
}

impl DensePrediction {
    pub fn new(log_depth: ImageGrid, confidence: ImageGrid) -> Result<Self> {
        confidence.ensure_shape(log_depth.shape())?;
        check_unit_interval(&confidence)?;
        Ok(Self {
            log_depth,
            confidence,
        })
    }

    /// Builds a prediction from metric depths with uniform confidence 1.
    pub fn from_depth(depth: &ImageGrid) -> Result<Self> {
        let mask = ValidityMask::all(depth.width(), depth.height());
        let log_depth = to_log_depth(depth, &mask)?;
        let confidence = ImageGrid::filled(depth.width(), depth.height(), 1.0);
        Self::new(log_depth, confidence)
    }

    pub fn log_depth(&self) -> &ImageGrid {
        &self.log_depth
    }

    pub fn confidence(&self) -> &ImageGrid {
        &self.confidence
    }

    pub fn shape(&self) -> (usize, usize) {
        self.log_depth.shape()
    }

    pub fn with_confidence(&self, confidence: &ImageGrid) -> Result<Self> {
        Self::new(self.log_depth.clone(), confidence.clone())
    }
}

/// How the linear system is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Requires `alpha > 0`; the unary term fixes the absolute scale.
    #[default]
    Standard,
    /// `alpha == 0`: the solution is unique only up to a constant log
    /// offset, which is pinned so that `mean(y) == mean(y_dense)`.
    GaugeFixed,
}

/// CRF weights and solver controls.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Unary weight.
    pub alpha: f64,
    /// Fully-connected pairwise weight.
    pub beta: f64,
    /// 4-connected local pairwise weight.
    pub gamma: f64,
    /// Added to every dense confidence at assembly time.
    pub epsilon: f64,
    /// Relative residual `||Ay - b|| / ||b||` at which CG stops.
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    /// Jacobi preconditioning.
    pub preconditioner: bool,
    pub mode: SolveMode,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
            gamma: 1.0,
            epsilon: 1e-4,
            cg_tolerance: 1e-6,
            cg_max_iters: 500,
            preconditioner: true,
            mode: SolveMode::Standard,
        }
    }
}

impl FusionParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FusionError::InvalidParams(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(FusionError::InvalidParams(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.cg_tolerance.is_finite() && self.cg_tolerance > 0.0) {
            return Err(FusionError::InvalidParams(format!(
                "cg_tolerance must be positive, got {}",
                self.cg_tolerance
            )));
        }
        if self.cg_max_iters == 0 {
            return Err(FusionError::InvalidParams("cg_max_iters must be positive".into()));
        }
        match self.mode {
            SolveMode::Standard if self.alpha == 0.0 => Err(FusionError::SingularSystem(
                "alpha == 0 leaves the global scale undetermined; use gauge-fixed mode".into(),
            )),
            SolveMode::GaugeFixed if self.alpha != 0.0 => Err(FusionError::InvalidParams(
                "gauge-fixed mode requires alpha == 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Natural log of `depth` at every pixel flagged in `valid`; other pixels map to 0.
pub fn to_log_depth(depth: &ImageGrid, valid: &ValidityMask) -> Result<ImageGrid> {
    valid.ensure_shape(depth.shape())?;
    let mut out = Vec::with_capacity(depth.len());
    for (i, (&d, &ok)) in depth.values().iter().zip(valid.flags()).enumerate() {
        if !ok {
            out.push(0.0);
            continue;
        }
        if d <= 0.0 {
            return Err(FusionError::Domain {
                index: i,
                reason: format!("depth {d} is not positive"),
            });
        }
        out.push(d.ln());
    }
    ImageGrid::new(depth.width(), depth.height(), out)
}

/// `exp` of every value.
pub fn from_log_depth(log_depth: &ImageGrid) -> Result<ImageGrid> {
    log_depth.map(f64::exp)
}

pub(crate) fn check_unit_interval(grid: &ImageGrid) -> Result<()> {
    if let Some((i, c)) = grid
        .values()
        .iter()
        .enumerate()
        .find(|(_, &c)| !(0.0..=1.0).contains(&c))
    {
        return Err(FusionError::Range(format!(
            "confidence {c} at pixel {i} is outside [0, 1]"
        )));
    }
    Ok(())
}
