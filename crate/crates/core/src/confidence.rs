//! Confidence maps for the two depth sources.
//!
//! Ground-truth confidence targets score each pixel by a scale-invariant
//! error against ground truth and map it through `exp(-lambda |E|)`. The CRF
//! consumes confidences the same way regardless of where they came from, so
//! targets, constants and externally produced maps are interchangeable
//! through [`ConfidenceSource`].

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densify::{densify, normalize_scale};
use crate::error::{FusionError, Result};
use crate::grid::{check_unit_interval, DensePrediction, GridIndex, ImageGrid, SparseDepthMap, ValidityMask};

/// Contrast and term weights of the per-pixel error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// Contrast of `exp(-lambda |E|)`.
    pub lambda: f64,
    /// Weight on the raw residual. 0 makes the error fully scale-invariant.
    pub alpha: f64,
    /// Weight on the mean-centered residual.
    pub beta: f64,
    /// Weight on 4-neighborhood pairwise residual differences.
    pub gamma: f64,
}

impl ConfidenceParams {
    /// Fully scale-invariant weights for maps at arbitrary scale.
    pub fn sparse_default() -> Self {
        Self {
            lambda: 2.0,
            alpha: 0.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }

    /// Metric weights for dense predictions whose scale is known.
    pub fn dense_default() -> Self {
        Self {
            lambda: 2.0,
            alpha: 1.0,
            beta: 0.0,
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(FusionError::InvalidParams(format!("lambda must be positive, got {}", self.lambda)));
        }
        let weights = [self.alpha, self.beta, self.gamma];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(FusionError::InvalidParams(
                "error weights must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// Signed per-pixel error of `y_input` against `y_gt`:
///
/// ```text
/// E_i = (alpha + beta) r_i - (beta / N) sum_j r_j + gamma sum_{k in N4(i)} (r_k - r_i)
/// ```
///
/// with `r = y_input - y_gt`. The sums, and `N`, range over covered pixels
/// only; uncovered pixels get `E = 0`.
pub fn pointwise_error(
    y_input: &ImageGrid,
    y_gt: &ImageGrid,
    coverage: &ValidityMask,
    params: &ConfidenceParams,
) -> Result<ImageGrid> {
    params.validate()?;
    y_gt.ensure_shape(y_input.shape())?;
    coverage.ensure_shape(y_input.shape())?;
    let count = coverage.count();
    if count == 0 {
        return Err(FusionError::EmptyCoverage);
    }
    let grid = GridIndex::new(y_input.width(), y_input.height());
    let covered = coverage.flags();
    let residual: Vec<f64> = y_input
        .values()
        .iter()
        .zip(y_gt.values())
        .map(|(a, b)| a - b)
        .collect();
    let mean_term = params.beta * coverage.indices().map(|i| residual[i]).sum::<f64>() / count as f64;

    let errors = (0..residual.len())
        .map(|i| {
            if !covered[i] {
                return 0.0;
            }
            let pairwise: f64 = grid
                .neighbors4(i)
                .filter(|&k| covered[k])
                .map(|k| residual[k] - residual[i])
                .sum();
            (params.alpha + params.beta) * residual[i] - mean_term + params.gamma * pairwise
        })
        .collect();
    ImageGrid::new(y_input.width(), y_input.height(), errors)
}

/// `exp(-lambda |E|)` per pixel, in `(0, 1]`.
pub fn confidence_target(errors: &ImageGrid, lambda: f64) -> Result<ImageGrid> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(FusionError::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    errors.map(|e| (-lambda * e.abs()).exp())
}

/// Ground-truth confidence for a sparse map.
///
/// The sparse map is densified, shifted to the ground-truth mean log-depth
/// over the covered region, scored with [`pointwise_error`], mapped through
/// [`confidence_target`] and finally masked to the sparse map's valid
/// pixels. If the map cannot be triangulated the result is all zeros.
///
/// `target_mean` overrides the shift target, e.g. with a corpus-wide mean.
pub fn oracle_sparse_confidence(
    sparse: &SparseDepthMap,
    y_gt: &ImageGrid,
    params: &ConfidenceParams,
    target_mean: Option<f64>,
) -> Result<ImageGrid> {
    params.validate()?;
    y_gt.ensure_shape(sparse.shape())?;
    let (width, height) = sparse.shape();
    let (dense, coverage) = match densify(sparse) {
        Ok(d) => d,
        Err(FusionError::TooFewPoints(reason)) => {
            log::warn!("sparse map cannot be triangulated ({reason}); oracle confidence is zero");
            return Ok(ImageGrid::zeros(width, height));
        }
        Err(e) => return Err(e),
    };
    let target_mean = target_mean.unwrap_or_else(|| {
        coverage.indices().map(|i| y_gt.values()[i]).sum::<f64>() / coverage.count() as f64
    });
    let normalized = normalize_scale(&dense, &coverage, target_mean)?;
    let errors = pointwise_error(&normalized, y_gt, &coverage, params)?;
    let target = confidence_target(&errors, params.lambda)?;
    let masked = target
        .values()
        .iter()
        .zip(sparse.mask().flags())
        .map(|(&c, &valid)| if valid { c } else { 0.0 })
        .collect();
    ImageGrid::new(width, height, masked)
}

/// Ground-truth confidence for a dense prediction, scored over every pixel.
pub fn oracle_dense_confidence(
    dense: &DensePrediction,
    y_gt: &ImageGrid,
    params: &ConfidenceParams,
) -> Result<ImageGrid> {
    let (width, height) = dense.shape();
    let errors = pointwise_error(dense.log_depth(), y_gt, &ValidityMask::all(width, height), params)?;
    confidence_target(&errors, params.lambda)
}

/// A uniform confidence map.
pub fn constant_confidence(width: usize, height: usize, value: f64) -> Result<ImageGrid> {
    if !(0.0..=1.0).contains(&value) {
        return Err(FusionError::Range(format!("confidence {value} is outside [0, 1]")));
    }
    Ok(ImageGrid::filled(width, height, value))
}

/// Where a confidence map comes from: `const:<v>`, `file:<path>` or
/// `oracle:<ground-truth depth path>`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceSource {
    Constant(f64),
    File(PathBuf),
    Oracle(PathBuf),
}

impl FromStr for ConfidenceSource {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| parse_source_error(s))?;
        match kind {
            "const" => {
                let v: f64 = arg.parse().map_err(|_| parse_source_error(s))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(FusionError::Range(format!("confidence {v} is outside [0, 1]")));
                }
                Ok(Self::Constant(v))
            }
            "file" if !arg.is_empty() => Ok(Self::File(arg.into())),
            "oracle" if !arg.is_empty() => Ok(Self::Oracle(arg.into())),
            _ => Err(parse_source_error(s)),
        }
    }
}

fn parse_source_error(s: &str) -> FusionError {
    FusionError::Parse {
        location: "confidence source".into(),
        message: format!("`{s}` is not const:<v>, file:<path> or oracle:<path>"),
    }
}

/// A loaded confidence map must lie in `[0, 1]`; network outputs are
/// commonly a little outside, so callers clamp before this check if needed.
pub fn check_confidence_map(map: &ImageGrid) -> Result<()> {
    check_unit_interval(map)
}
