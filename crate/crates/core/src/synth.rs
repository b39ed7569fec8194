//! Synthetic scenes and degraded observations.
//!
//! Scenes are piecewise-planar: a Voronoi partition of the image into
//! `plane_count` cells, each carrying a plane that is affine in inverse
//! depth. Sparse maps are sampled from them with optional gradient bias,
//! global scale, log-normal noise and multiplicative outliers; dense
//! predictions are blurred and depth-biased copies of the truth.
//!
//! Everything is driven by ChaCha8 seeded from a `u64`, so outputs are
//! identical across platforms for a given seed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::grid::{to_log_depth, DensePrediction, ImageGrid, SparseDepthMap, ValidityMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub plane_count: usize,
    /// `(min, max)` depth in meters.
    pub depth_range: (f64, f64),
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            plane_count: 6,
            depth_range: (1.0, 10.0),
            rng_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if self.width == 0 || self.height == 0 {
            return Err(FusionError::InvalidParams("scene dimensions must be positive".into()));
        }
        if self.plane_count == 0 {
            return Err(FusionError::InvalidParams("plane_count must be at least 1".into()));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(FusionError::InvalidParams(format!("invalid depth range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// A generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Ground-truth depth, meters.
    pub depth: ImageGrid,
    /// Gray image in `[0, 1]`, constant per plane plus a faint texture.
    pub intensity: ImageGrid,
    /// Plane index per pixel.
    pub labels: Vec<usize>,
}

impl Scene {
    pub fn log_depth(&self) -> ImageGrid {
        let (w, h) = self.depth.shape();
        to_log_depth(&self.depth, &ValidityMask::all(w, h)).expect("scene depths are positive")
    }

    /// Pixels within `radius` (Chebyshev distance) of a plane boundary.
    pub fn boundary_band(&self, radius: usize) -> ValidityMask {
        let (w, h) = self.depth.shape();
        let mut edge = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let differs = (x + 1 < w && self.labels[i + 1] != self.labels[i])
                    || (y + 1 < h && self.labels[i + w] != self.labels[i]);
                if differs {
                    edge[i] = true;
                }
            }
        }
        let mut band = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if !edge[y * w + x] {
                    continue;
                }
                for yy in y.saturating_sub(radius)..=(y + radius + 1).min(h - 1) {
                    for xx in x.saturating_sub(radius)..=(x + radius + 1).min(w - 1) {
                        band[yy * w + xx] = true;
                    }
                }
            }
        }
        ValidityMask::new(w, h, band).expect("matching dimensions")
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (w, h) = (spec.width, spec.height);
    let (lo, hi) = (1.0 / spec.depth_range.1, 1.0 / spec.depth_range.0);
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);

    struct Plane {
        seed: (f64, f64),
        center: f64,
        gx: f64,
        gy: f64,
        shade: f64,
    }
    let planes: Vec<Plane> = (0..spec.plane_count)
        .map(|_| {
            let seed = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let center = lo + (hi - lo) * rng.random::<f64>();
            let room = (center - lo).min(hi - center) * rng.random::<f64>();
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            // worst case over the image rectangle stays within `room`
            let reach = dx.abs() * cx + dy.abs() * cy;
            let magnitude = if reach > 0.0 { room / reach } else { 0.0 };
            Plane {
                seed,
                center,
                gx: dx * magnitude,
                gy: dy * magnitude,
                shade: rng.random::<f64>(),
            }
        })
        .collect();

    let mut labels = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut intensity = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let k = planes
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (a.seed.0 - fx).powi(2) + (a.seed.1 - fy).powi(2);
                    let db = (b.seed.0 - fx).powi(2) + (b.seed.1 - fy).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(k, _)| k)
                .expect("at least one plane");
            let p = &planes[k];
            let inverse = (p.center + p.gx * (fx - cx) + p.gy * (fy - cy)).clamp(lo, hi);
            labels.push(k);
            depth.push((1.0 / inverse).clamp(spec.depth_range.0, spec.depth_range.1));
            let texture = 0.02 * ((0.7 * fx).sin() * (0.9 * fy).cos());
            intensity.push((0.05 + 0.9 * p.shade + texture).clamp(0.0, 1.0));
        }
    }
    Ok(Scene {
        depth: ImageGrid::new(w, h, depth)?,
        intensity: ImageGrid::new(w, h, intensity)?,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    /// Fraction of pixels kept, in `(0, 1]`.
    pub keep_fraction: f64,
    /// Fraction of kept points turned into outliers, in `[0, 1)`.
    pub outlier_fraction: f64,
    /// Outlier depths are multiplied by a factor drawn log-uniformly from
    /// this range.
    pub outlier_scale_range: (f64, f64),
    /// Multiplies every depth; models an up-to-scale map.
    pub global_scale: f64,
    /// Standard deviation of the additive log-depth noise.
    pub noise_sigma_log: f64,
    /// Sample preferentially at high intensity gradient.
    pub gradient_biased_sampling: bool,
    pub rng_seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            keep_fraction: 0.05,
            outlier_fraction: 0.1,
            outlier_scale_range: (2.0, 4.0),
            global_scale: 1.0,
            noise_sigma_log: 0.01,
            gradient_biased_sampling: false,
            rng_seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(FusionError::InvalidParams(format!(
                "keep_fraction {} is outside (0, 1]",
                self.keep_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(FusionError::InvalidParams(format!(
                "outlier_fraction {} is outside [0, 1)",
                self.outlier_fraction
            )));
        }
        let (a, b) = self.outlier_scale_range;
        if !(a > 0.0 && b >= a && b.is_finite()) {
            return Err(FusionError::InvalidParams(format!("invalid outlier scale range ({a}, {b})")));
        }
        if !(self.global_scale > 0.0 && self.global_scale.is_finite()) {
            return Err(FusionError::InvalidParams("global_scale must be positive".into()));
        }
        if !(self.noise_sigma_log >= 0.0 && self.noise_sigma_log.is_finite()) {
            return Err(FusionError::InvalidParams("noise_sigma_log must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A degraded sparse map together with the ground-truth outlier flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservation {
    pub map: SparseDepthMap,
    pub outliers: ValidityMask,
}

/// Samples a sparse map from `gt` (meters).
///
/// `intensity` is required when `gradient_biased_sampling` is on: pixels are
/// then accepted with probability proportional to `0.1 g_max + |grad I|`,
/// by rejection sampling.
pub fn degrade_to_sparse(
    gt: &ImageGrid,
    intensity: Option<&ImageGrid>,
    spec: &DegradationSpec,
) -> Result<SparseObservation> {
    spec.validate()?;
    let (w, h) = gt.shape();
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let kept_count = ((spec.keep_fraction * n as f64).round() as usize).clamp(1, n);

    let mut kept: Vec<usize> = if spec.gradient_biased_sampling {
        let intensity = intensity.ok_or_else(|| {
            FusionError::InvalidParams("gradient-biased sampling needs an intensity image".into())
        })?;
        intensity.ensure_shape(gt.shape())?;
        let weights = gradient_weights(intensity);
        let max = weights.iter().cloned().fold(0.0, f64::max);
        let mut chosen = vec![false; n];
        let mut picked = Vec::with_capacity(kept_count);
        while picked.len() < kept_count {
            let i = rng.random_range(0..n);
            if !chosen[i] && rng.random::<f64>() * max <= weights[i] {
                chosen[i] = true;
                picked.push(i);
            }
        }
        picked
    } else {
        sample(&mut rng, n, kept_count).into_vec()
    };
    kept.sort_unstable();

    let outlier_count = (spec.outlier_fraction * kept_count as f64).floor() as usize;
    let mut outlier_flags = vec![false; n];
    for k in sample(&mut rng, kept_count, outlier_count) {
        outlier_flags[kept[k]] = true;
    }

    let (lo, hi) = spec.outlier_scale_range;
    let mut log_depth = vec![0.0; n];
    let mut valid = vec![false; n];
    for &i in &kept {
        let mut y = gt.values()[i].ln() + spec.global_scale.ln();
        let noise: f64 = StandardNormal.sample(&mut rng);
        y += spec.noise_sigma_log * noise;
        if outlier_flags[i] {
            y += if hi > lo { rng.random_range(lo.ln()..=hi.ln()) } else { lo.ln() };
        }
        log_depth[i] = y;
        valid[i] = true;
    }
    let mask = ValidityMask::new(w, h, valid)?;
    let map = SparseDepthMap::new(ImageGrid::new(w, h, log_depth)?, mask.clone(), mask.to_grid())?;
    Ok(SparseObservation {
        map,
        outliers: ValidityMask::new(w, h, outlier_flags)?,
    })
}

fn gradient_weights(intensity: &ImageGrid) -> Vec<f64> {
    let (w, h) = intensity.shape();
    let v = intensity.values();
    let mut g = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = v[y * w + (x + 1).min(w - 1)] - v[y * w + x.saturating_sub(1)];
            let gy = v[(y + 1).min(h - 1) * w + x] - v[y.saturating_sub(1) * w + x];
            g[i] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = g.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![1.0; w * h];
    }
    g.iter().map(|v| v + 0.1 * max).collect()
}

/// Depth-dependent systematic error of a dense predictor: log-depth is
/// raised by `slope * (depth - reference_depth)` wherever the true depth
/// exceeds `reference_depth`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuredBias {
    pub slope: f64,
    pub reference_depth: f64,
}

/// Simulates a dense prediction: box blur of the true log-depth with the
/// given radius (window clipped at the borders) plus a structured bias.
/// Confidence starts at 1.
pub fn degrade_to_dense(gt: &ImageGrid, blur_radius: usize, bias: &StructuredBias) -> Result<DensePrediction> {
    let (w, h) = gt.shape();
    let log_gt = to_log_depth(gt, &ValidityMask::all(w, h))?;
    let blurred = box_blur(&log_gt, blur_radius);
    let values = blurred
        .iter()
        .zip(gt.values())
        .map(|(&y, &d)| y + bias.slope * (d - bias.reference_depth).max(0.0))
        .collect();
    DensePrediction::new(ImageGrid::new(w, h, values)?, ImageGrid::filled(w, h, 1.0))
}

fn box_blur(grid: &ImageGrid, radius: usize) -> Vec<f64> {
    let (w, h) = grid.shape();
    if radius == 0 {
        return grid.values().to_vec();
    }
    let src = grid.values();
    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            let sum: f64 = src[y * w + a..=y * w + b].iter().sum();
            horizontal[y * w + x] = sum / (b - a + 1) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (a, b) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            let sum: f64 = (a..=b).map(|yy| horizontal[yy * w + x]).sum();
            out[y * w + x] = sum / (b - a + 1) as f64;
        }
    }
    out
}

/// An axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Invalidates `rect` in `map`. Returns the reduced map and the mask of
/// removed pixels (pixels inside the rectangle that were valid).
pub fn crop(map: &SparseDepthMap, rect: Rect) -> Result<(SparseDepthMap, ValidityMask)> {
    let (w, h) = map.shape();
    if rect.x + rect.width > w || rect.y + rect.height > h {
        return Err(FusionError::InvalidParams(format!("{rect:?} does not fit in {w}x{h}")));
    }
    if rect.width == 0 || rect.height == 0 {
        log::warn!("zero-area crop rectangle; map unchanged");
    }
    let mut removed = vec![false; w * h];
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            let i = y * w + x;
            removed[i] = map.mask().is_valid(i);
        }
    }
    let removed = ValidityMask::new(w, h, removed)?;
    Ok((without(map, &removed)?, removed))
}

/// Crops a random rectangle whose sides lie in `min_size..=max_size`
/// (`(width, height)` pairs).
pub fn crop_rectangle(
    map: &SparseDepthMap,
    rng_seed: u64,
    min_size: (usize, usize),
    max_size: (usize, usize),
) -> Result<(SparseDepthMap, ValidityMask)> {
    let (w, h) = map.shape();
    if min_size.0 > max_size.0 || min_size.1 > max_size.1 || max_size.0 > w || max_size.1 > h {
        return Err(FusionError::InvalidParams(format!(
            "crop sizes {min_size:?}..{max_size:?} do not fit in {w}x{h}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let rw = rng.random_range(min_size.0..=max_size.0);
    let rh = rng.random_range(min_size.1..=max_size.1);
    let x = rng.random_range(0..=w - rw);
    let y = rng.random_range(0..=h - rh);
    crop(map, Rect { x, y, width: rw, height: rh })
}

/// Removes `floor(fraction * valid)` uniformly chosen valid points.
pub fn remove_fraction(map: &SparseDepthMap, fraction: f64, rng_seed: u64) -> Result<(SparseDepthMap, ValidityMask)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FusionError::InvalidParams(format!("fraction {fraction} is outside (0, 1)")));
    }
    let (w, h) = map.shape();
    let valid: Vec<usize> = map.mask().indices().collect();
    let count = (fraction * valid.len() as f64 + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut removed = vec![false; w * h];
    for k in sample(&mut rng, valid.len(), count) {
        removed[valid[k]] = true;
    }
    let removed = ValidityMask::new(w, h, removed)?;
    Ok((without(map, &removed)?, removed))
}

fn without(map: &SparseDepthMap, removed: &ValidityMask) -> Result<SparseDepthMap> {
    let mask = map.mask().and_not(removed)?;
    let (w, h) = map.shape();
    let confidence = map
        .confidence()
        .values()
        .iter()
        .zip(mask.flags())
        .map(|(&c, &v)| if v { c } else { 0.0 })
        .collect();
    SparseDepthMap::new(map.log_depth().clone(), mask, ImageGrid::new(w, h, confidence)?)
}

/// Settings for a simulated dense predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseSpec {
    pub blur_radius: usize,
    pub bias: StructuredBias,
}

impl Default for DenseSpec {
    fn default() -> Self {
        Self {
            blur_radius: 1,
            bias: StructuredBias {
                slope: 0.1,
                reference_depth: 1.0,
            },
        }
    }
}

/// Everything one synthetic experiment needs.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub scene: Scene,
    pub sparse: SparseObservation,
    pub dense: DensePrediction,
}

/// Generates a scene and both degraded observations of it.
pub fn generate_instance(scene: &SceneSpec, degradation: &DegradationSpec, dense: &DenseSpec) -> Result<SyntheticInstance> {
    let s = generate_scene(scene)?;
    let sparse = degrade_to_sparse(&s.depth, Some(&s.intensity), degradation)?;
    let dense = degrade_to_dense(&s.depth, dense.blur_radius, &dense.bias)?;
    Ok(SyntheticInstance { scene: s, sparse, dense })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densify::densify;
    use crate::metrics::scale_invariant_error;

    fn spec(seed: u64, planes: usize) -> SceneSpec {
        SceneSpec {
            width: 40,
            height: 30,
            plane_count: planes,
            depth_range: (1.0, 8.0),
            rng_seed: seed,
        }
    }

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let a = generate_scene(&spec(3, 5)).unwrap();
        let b = generate_scene(&spec(3, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(&spec(4, 5)).unwrap());
        assert!(a.depth.values().iter().all(|&d| (1.0..=8.0).contains(&d)));
    }

    #[test]
    fn single_plane_is_exact_under_densification() {
        let scene = generate_scene(&spec(9, 1)).unwrap();
        let mask = ValidityMask::new(40, 30, (0..1200).map(|i| [41, 75, 1000].contains(&i)).collect()).unwrap();
        let sparse = SparseDepthMap::from_depth(&scene.depth, &mask).unwrap();
        let (dense, coverage) = densify(&sparse).unwrap();
        let truth = scene.log_depth();
        assert!(coverage.count() > 3);
        for i in coverage.indices() {
            assert!((dense.values()[i] - truth.values()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn clean_full_sampling_reproduces_truth() {
        let scene = generate_scene(&spec(1, 4)).unwrap();
        let deg = DegradationSpec {
            keep_fraction: 1.0,
            outlier_fraction: 0.0,
            noise_sigma_log: 0.0,
            global_scale: 1.0,
            ..Default::default()
        };
        let obs = degrade_to_sparse(&scene.depth, None, &deg).unwrap();
        assert_eq!(obs.map.valid_count(), 1200);
        for (a, b) in obs.map.log_depth().values().iter().zip(scene.log_depth().values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn outlier_count_is_exact() {
        let scene = generate_scene(&spec(2, 4)).unwrap();
        let deg = DegradationSpec { keep_fraction: 0.25, outlier_fraction: 0.1, ..Default::default() };
        let obs = degrade_to_sparse(&scene.depth, None, &deg).unwrap();
        assert_eq!(obs.map.valid_count(), 300);
        assert_eq!(obs.outliers.count(), 30);
        assert_eq!(obs.outliers.and_not(obs.map.mask()).unwrap().count(), 0);
    }

    #[test]
    fn global_scale_does_not_change_si_error() {
        let scene = generate_scene(&spec(5, 4)).unwrap();
        let base = DegradationSpec { keep_fraction: 0.2, outlier_fraction: 0.05, noise_sigma_log: 0.02, ..Default::default() };
        let scaled = DegradationSpec { global_scale: 3.0, ..base.clone() };
        let a = degrade_to_sparse(&scene.depth, None, &base).unwrap();
        let b = degrade_to_sparse(&scene.depth, None, &scaled).unwrap();
        let gt = scene.log_depth();
        let ea = scale_invariant_error(a.map.log_depth(), &gt, a.map.mask()).unwrap();
        let eb = scale_invariant_error(b.map.log_depth(), &gt, b.map.mask()).unwrap();
        assert!((ea - eb).abs() < 1e-12);
        assert!(ea > 0.0);
    }

    #[test]
    fn gradient_bias_prefers_edges() {
        let scene = generate_scene(&spec(6, 6)).unwrap();
        let band = scene.boundary_band(1);
        let deg = DegradationSpec { keep_fraction: 0.1, gradient_biased_sampling: true, ..Default::default() };
        let biased = degrade_to_sparse(&scene.depth, Some(&scene.intensity), &deg).unwrap();
        let uniform = degrade_to_sparse(&scene.depth, None, &DegradationSpec { gradient_biased_sampling: false, ..deg.clone() }).unwrap();
        let on_band = |m: &ValidityMask| m.and(&band).unwrap().count();
        assert!(on_band(biased.map.mask()) > on_band(uniform.map.mask()));
        assert!(degrade_to_sparse(&scene.depth, None, &deg).is_err());
    }

    #[test]
    fn dense_without_degradation_is_truth() {
        let scene = generate_scene(&spec(7, 3)).unwrap();
        let dense = degrade_to_dense(&scene.depth, 0, &StructuredBias::default()).unwrap();
        assert_eq!(dense.log_depth(), &scene.log_depth());
    }

    #[test]
    fn blur_errors_concentrate_at_edges() {
        let radius = 2;
        let mut near = 0.0;
        let mut far = 0.0;
        for seed in 0..5 {
            let scene = generate_scene(&SceneSpec { width: 64, height: 48, ..spec(seed, 6) }).unwrap();
            let dense = degrade_to_dense(&scene.depth, radius, &StructuredBias::default()).unwrap();
            let band = scene.boundary_band(2 * radius);
            let err: Vec<f64> = dense.log_depth().values().iter().zip(scene.log_depth().values()).map(|(a, b)| (a - b).abs()).collect();
            let (mut sn, mut cn, mut sf, mut cf) = (0.0, 0, 0.0, 0);
            for (i, e) in err.iter().enumerate() {
                if band.is_valid(i) {
                    sn += e;
                    cn += 1;
                } else {
                    sf += e;
                    cf += 1;
                }
            }
            near += sn / cn as f64;
            far += sf / cf.max(1) as f64;
        }
        assert!(near > 3.0 * far, "near {near} far {far}");
    }

    #[test]
    fn bias_follows_depth() {
        let scene = generate_scene(&spec(8, 3)).unwrap();
        let bias = StructuredBias { slope: 0.04, reference_depth: 2.0 };
        let dense = degrade_to_dense(&scene.depth, 0, &bias).unwrap();
        for ((p, g), d) in dense.log_depth().values().iter().zip(scene.log_depth().values()).zip(scene.depth.values()) {
            let expected = 0.04 * (d - 2.0).max(0.0);
            assert!((p - g - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_protocol() {
        let scene = generate_scene(&spec(1, 2)).unwrap();
        let full = SparseDepthMap::from_depth(&scene.depth, &ValidityMask::all(40, 30)).unwrap();
        let (empty, removed) = crop(&full, Rect { x: 0, y: 0, width: 40, height: 30 }).unwrap();
        assert_eq!(empty.valid_count(), 0);
        assert_eq!(removed.count(), 1200);

        let (same, removed) = crop(&full, Rect { x: 3, y: 3, width: 0, height: 5 }).unwrap();
        assert_eq!(same, full);
        assert_eq!(removed.count(), 0);

        let (rest, removed) = crop_rectangle(&full, 11, (5, 5), (15, 10)).unwrap();
        assert_eq!(rest.mask().and(&removed).unwrap().count(), 0);
        assert_eq!(rest.valid_count() + removed.count(), 1200);
        assert!(crop_rectangle(&full, 11, (5, 5), (50, 10)).is_err());
    }

    #[test]
    fn removal_protocol() {
        let scene = generate_scene(&spec(1, 2)).unwrap();
        let mask = ValidityMask::new(40, 30, (0..1200).map(|i| i % 4 == 0).collect()).unwrap();
        let map = SparseDepthMap::from_depth(&scene.depth, &mask).unwrap();
        assert_eq!(map.valid_count(), 300);
        let (kept, removed) = remove_fraction(&map, 2.0 / 3.0, 5).unwrap();
        assert_eq!(removed.count(), 200);
        assert_eq!(kept.valid_count(), 100);
        assert_eq!(kept.mask().and(&removed).unwrap().count(), 0);
        let union: Vec<bool> = kept.mask().flags().iter().zip(removed.flags()).map(|(a, b)| *a || *b).collect();
        assert_eq!(union, mask.flags());
        let (_, again) = remove_fraction(&map, 2.0 / 3.0, 5).unwrap();
        assert_eq!(again, removed);
        assert!(remove_fraction(&map, 1.0, 5).is_err());
    }
}
