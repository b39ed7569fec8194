//! Synthetic corpora, per-instance scoring and the hyperparameter sweep.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use depthfuse::confidence::{oracle_dense_confidence, oracle_sparse_confidence, ConfidenceParams};
use depthfuse::densify::{densify, nearest_fill};
use depthfuse::metrics::scale_invariant_error;
use depthfuse::solver::{fuse_log, SolveReport};
use depthfuse::synth::{generate_instance, DegradationSpec, DenseSpec, SceneSpec, SyntheticInstance};
use depthfuse::io::{read_grid, read_points};
use depthfuse::{to_log_depth, DensePrediction, FusionError, FusionParams, ImageGrid, Result, SparseDepthMap, ValidityMask};
use serde::{Deserialize, Serialize};

/// A family of seeded synthetic instances sharing one scene and degradation
/// recipe. Instance `k` uses `base_seed + k` for the scene and a derived
/// seed for the degradation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub scene: SceneSpec,
    pub degradation: DegradationSpec,
    pub dense: DenseSpec,
    pub count: usize,
    pub base_seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            degradation: DegradationSpec {
                keep_fraction: 0.1,
                noise_sigma_log: 0.1,
                gradient_biased_sampling: true,
                global_scale: 0.5,
                ..DegradationSpec::default()
            },
            dense: DenseSpec::default(),
            count: 20,
            base_seed: 1,
        }
    }
}

impl CorpusSpec {
    pub fn instance(&self, k: usize) -> Result<SyntheticInstance> {
        let seed = self.base_seed + k as u64;
        let scene = SceneSpec { rng_seed: seed, ..self.scene.clone() };
        let degradation = DegradationSpec {
            rng_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5,
            ..self.degradation.clone()
        };
        generate_instance(&scene, &degradation, &self.dense)
    }
}

/// The inputs of one fusion experiment with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Ground-truth log-depth.
    pub truth: ImageGrid,
    pub sparse: SparseDepthMap,
    pub dense: DensePrediction,
}

impl From<&SyntheticInstance> for Instance {
    fn from(s: &SyntheticInstance) -> Self {
        Self {
            truth: s.scene.log_depth(),
            sparse: s.sparse.map.clone(),
            dense: s.dense.clone(),
        }
    }
}

/// File names inside an instance directory, as written by `synth`.
pub const GT_FILE: &str = "gt.pfm";
pub const SPARSE_FILE: &str = "sparse.txt";
pub const DENSE_FILE: &str = "dense.pfm";
pub const OUTLIER_FILE: &str = "outliers.csv";
pub const INTENSITY_FILE: &str = "intensity.pfm";

/// Loads `gt.pfm`, `sparse.txt` and `dense.pfm` from `dir`.
pub fn load_instance(dir: &Path) -> Result<Instance> {
    let gt = read_grid(&dir.join(GT_FILE))?;
    let (w, h) = gt.shape();
    let truth = to_log_depth(&gt, &ValidityMask::all(w, h))?;
    let sparse = read_points(&dir.join(SPARSE_FILE))?.to_sparse_map()?;
    let dense_depth = read_grid(&dir.join(DENSE_FILE))?;
    let dense = DensePrediction::from_depth(&dense_depth)?;
    if sparse.shape() != (w, h) {
        return Err(FusionError::Shape { expected: (w, h), actual: sparse.shape() });
    }
    if dense.shape() != (w, h) {
        return Err(FusionError::Shape { expected: (w, h), actual: dense.shape() });
    }
    Ok(Instance { truth, sparse, dense })
}

/// Loads every immediate subdirectory of `dir` as an instance, in name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<Instance>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(FusionError::Io(format!("{} contains no instance directories", dir.display())));
    }
    dirs.iter().map(|d| load_instance(d)).collect()
}

/// How confidences are chosen for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// 1 on every observed pixel.
    Constant,
    /// Targets computed against the instance's ground truth.
    Oracle,
}

impl std::str::FromStr for ConfidenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "const" | "constant" => Ok(Self::Constant),
            "oracle" => Ok(Self::Oracle),
            _ => Err(format!("`{s}` is not const or oracle")),
        }
    }
}

/// Attaches confidences to the instance's sparse map and dense prediction.
pub fn prepare(
    instance: &Instance,
    sparse_mode: ConfidenceMode,
    dense_mode: ConfidenceMode,
) -> Result<(SparseDepthMap, DensePrediction)> {
    let sparse = &instance.sparse;
    let sparse = match sparse_mode {
        ConfidenceMode::Constant => sparse.with_confidence(&sparse.mask().to_grid())?,
        ConfidenceMode::Oracle => {
            let c = oracle_sparse_confidence(sparse, &instance.truth, &ConfidenceParams::sparse_default(), None)?;
            sparse.with_confidence(&c)?
        }
    };
    let dense = &instance.dense;
    let (w, h) = dense.shape();
    let dense = match dense_mode {
        ConfidenceMode::Constant => dense.with_confidence(&ImageGrid::filled(w, h, 1.0))?,
        ConfidenceMode::Oracle => {
            let c = oracle_dense_confidence(dense, &instance.truth, &ConfidenceParams::dense_default())?;
            dense.with_confidence(&c)?
        }
    };
    Ok((sparse, dense))
}

/// Fuses one instance with the given confidence modes.
pub fn fuse_instance(
    instance: &Instance,
    params: &FusionParams,
    sparse_mode: ConfidenceMode,
    dense_mode: ConfidenceMode,
) -> Result<SolveReport> {
    let (sparse, dense) = prepare(instance, sparse_mode, dense_mode)?;
    fuse_log(&sparse, &dense, params)
}

/// Scale-invariant errors of every map involved in one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    /// Fused output over the whole image.
    pub fused: f64,
    /// Dense prediction over the whole image.
    pub dense: f64,
    /// Densified sparse map over the whole image; pixels outside the hull
    /// take their nearest sparse point.
    pub densified: f64,
    /// Raw sparse map over its valid pixels.
    pub sparse: f64,
}

/// The densified sparse map, with nearest-point fill outside the hull.
pub fn densified_full(sparse: &SparseDepthMap) -> Result<ImageGrid> {
    let (nearest, _) = nearest_fill(sparse)?;
    let (inside, coverage) = match densify(sparse) {
        Ok(d) => d,
        Err(FusionError::TooFewPoints(_)) => return Ok(nearest),
        Err(e) => return Err(e),
    };
    let values = (0..inside.len())
        .map(|i| if coverage.is_valid(i) { inside.values()[i] } else { nearest.values()[i] })
        .collect();
    ImageGrid::new(inside.width(), inside.height(), values)
}

/// Whole-image scale-invariant error of a fused log-depth map.
pub fn fused_error(instance: &Instance, fused: &ImageGrid) -> Result<f64> {
    let (w, h) = instance.truth.shape();
    scale_invariant_error(fused, &instance.truth, &ValidityMask::all(w, h))
}

pub fn score_instance(instance: &Instance, fused: &ImageGrid) -> Result<InstanceScores> {
    let (w, h) = instance.truth.shape();
    let all = ValidityMask::all(w, h);
    let sparse = &instance.sparse;
    Ok(InstanceScores {
        fused: fused_error(instance, fused)?,
        dense: scale_invariant_error(instance.dense.log_depth(), &instance.truth, &all)?,
        densified: scale_invariant_error(&densified_full(sparse)?, &instance.truth, &all)?,
        sparse: scale_invariant_error(sparse.log_depth(), &instance.truth, sparse.mask())?,
    })
}

/// One point of a sweep: the mean fused scale-invariant error over the
/// corpus at `(beta, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub gamma: f64,
    pub error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Everything but `beta` and `gamma`.
    pub base: FusionParams,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub sparse_mode: ConfidenceMode,
    pub dense_mode: ConfidenceMode,
}

/// Evaluates every `(beta, gamma)` pair, gamma varying fastest. Work is
/// split over `jobs` threads; results do not depend on `jobs`.
pub fn sweep(spec: &SweepSpec, instances: &[Instance], jobs: NonZeroUsize) -> Result<Vec<SweepRow>> {
    if instances.is_empty() {
        return Err(FusionError::InvalidParams("sweep needs at least one instance".into()));
    }
    let prepared: Vec<_> = instances
        .iter()
        .map(|inst| prepare(inst, spec.sparse_mode, spec.dense_mode).map(|p| (inst, p)))
        .collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = spec
        .betas
        .iter()
        .flat_map(|&b| spec.gammas.iter().map(move |&g| (b, g)))
        .collect();

    let evaluate = |&(beta, gamma): &(f64, f64)| -> Result<SweepRow> {
        let params = FusionParams { beta, gamma, ..spec.base };
        let mut total = 0.0;
        let mut converged = true;
        for (inst, (sparse, dense)) in &prepared {
            let report = fuse_log(sparse, dense, &params)?;
            converged &= report.converged;
            total += fused_error(inst, &report.solution)?;
        }
        Ok(SweepRow { beta, gamma, error: total / prepared.len() as f64, converged })
    };

    let jobs = jobs.get().min(points.len().max(1));
    if jobs == 1 {
        return points.iter().map(evaluate).collect();
    }
    let chunk = points.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(evaluate).collect::<Result<Vec<_>>>()))
            .collect();
        let mut rows = Vec::with_capacity(points.len());
        for h in handles {
            rows.extend(h.join().expect("sweep worker panicked")?);
        }
        Ok(rows)
    })
}

/// Formats sweep rows as CSV with a `beta,gamma,error,converged` header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("beta,gamma,error,converged\n");
    for r in rows {
        out.push_str(&format!("{:?},{:?},{:?},{}\n", r.beta, r.gamma, r.error, r.converged));
    }
    out
}

/// Index of the smallest error; `None` for an empty slice.
pub fn argmin(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .min_by(|a, b| a.1.error.total_cmp(&b.1.error))
        .map(|(i, _)| i)
}
