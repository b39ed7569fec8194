//! Conjugate-gradient inference on the normal equations
//! `A y = A^s y^s + A^d y^d` without ever forming `A`.
//!
//! The product `A v` is evaluated per pixel as
//!
//! ```text
//! (A v)_i = alpha c^s_i v_i
//!         + (beta/N) c_i (S v_i - <c, v>)
//!         + gamma c_i (sum_{k in N4(i)} c_k v_i - sum_{k in N4(i)} c_k v_k)
//! ```
//!
//! with `S = sum_j c_j` cached at assembly. Each product needs one global
//! reduction (`<c, v>`) and one sweep over the pixels. Reductions run
//! sequentially in pixel order, so results are bit-reproducible.
//!
//! Both pairwise parts are written as differences of identically-ordered
//! sums, which makes `A 1` equal to `alpha c^s` exactly in floating point.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::energy::regularized_confidence;
use crate::error::{FusionError, Result};
use crate::grid::{
    from_log_depth, to_log_depth, DensePrediction, FusionParams, GridIndex, ImageGrid, SolveMode,
    SparseDepthMap, ValidityMask,
};

/// The assembled linear system, ready for CG.
#[derive(Debug, Clone)]
pub struct FusionProblem {
    grid: GridIndex,
    params: FusionParams,
    sparse_log_depth: Vec<f64>,
    sparse_confidence: Vec<f64>,
    dense_log_depth: Vec<f64>,
    /// Dense confidence with epsilon added.
    dense_confidence: Vec<f64>,
    /// `sum_{k in N4(i)} c_k`
    neighbor_confidence: Vec<f64>,
    confidence_sum: f64,
    rhs: Vec<f64>,
    diagonal: Vec<f64>,
}

/// Outcome of a CG solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Fused log-depth.
    #[serde(skip)]
    pub solution: ImageGrid,
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
    #[serde(serialize_with = "serialize_millis", rename = "wall_time_ms")]
    pub wall_time: Duration,
}

fn serialize_millis<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

impl FusionProblem {
    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn len(&self) -> usize {
        self.grid.width * self.grid.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn params(&self) -> &FusionParams {
        &self.params
    }

    /// `S = sum_j c_j` over the regularized dense confidence.
    pub fn confidence_sum(&self) -> f64 {
        self.confidence_sum
    }

    /// `b = A^s y^s + A^d y^d`.
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Regularized dense confidence used by the pairwise terms.
    pub fn dense_confidence(&self) -> &[f64] {
        &self.dense_confidence
    }

    pub fn dense_log_depth(&self) -> &[f64] {
        &self.dense_log_depth
    }

    /// Diagonal of `A`.
    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Allocating form of [`FusionProblem::apply`].
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply(v, &mut out);
        out
    }

    /// `out = A v` in O(N).
    ///
    /// Panics if `v` or `out` do not have length `N`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.apply_with(self.params.alpha, v, out);
    }

    fn apply_with(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        assert_eq!(v.len(), n, "vector length must match the problem size");
        assert_eq!(out.len(), n, "output length must match the problem size");
        let (w, h) = (self.grid.width, self.grid.height);
        let c = &self.dense_confidence;
        let cs = &self.sparse_confidence;
        let nsum = &self.neighbor_confidence;
        let fc = self.params.beta / n as f64;
        let gamma = self.params.gamma;
        let s = self.confidence_sum;
        let weighted: f64 = c.iter().zip(v).map(|(ci, vi)| ci * vi).sum();

        for y in 0..h {
            let row = y * w;
            for x in 0..w {
                let i = row + x;
                // Same neighbor order as in `neighbor_sums`.
                let mut nb = 0.0;
                if x + 1 < w {
                    nb += c[i + 1] * v[i + 1];
                }
                if y + 1 < h {
                    nb += c[i + w] * v[i + w];
                }
                if x > 0 {
                    nb += c[i - 1] * v[i - 1];
                }
                if y > 0 {
                    nb += c[i - w] * v[i - w];
                }
                let vi = v[i];
                out[i] = alpha * cs[i] * vi
                    + fc * c[i] * (s * vi - weighted)
                    + gamma * c[i] * (nsum[i] * vi - nb);
            }
        }
    }

    fn pairwise_product(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_with(0.0, v, &mut out);
        out
    }

    /// Relative residual `||A y - b|| / ||b||`; 0 when `b == 0` and `A y == 0`.
    pub fn relative_residual(&self, y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        let num = ay
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = norm(&self.rhs);
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Builds the system. The dense confidence is regularized here, once.
pub fn assemble(
    sparse: &SparseDepthMap,
    dense: &DensePrediction,
    params: &FusionParams,
) -> Result<FusionProblem> {
    params.validate()?;
    sparse.log_depth().ensure_shape(dense.shape())?;
    let (width, height) = dense.shape();
    let grid = GridIndex::new(width, height);
    let n = width * height;

    let dense_confidence = regularized_confidence(dense.confidence().values(), params.epsilon);
    let confidence_sum: f64 = dense_confidence.iter().sum();
    let neighbor_confidence = neighbor_sums(grid, &dense_confidence);

    let sparse_confidence = sparse.confidence().values().to_vec();
    let fc = params.beta / n as f64;
    let diagonal: Vec<f64> = (0..n)
        .map(|i| {
            params.alpha * sparse_confidence[i]
                + dense_confidence[i]
                    * (fc * (confidence_sum - dense_confidence[i])
                        + params.gamma * neighbor_confidence[i])
        })
        .collect();

    if params.mode == SolveMode::Standard {
        if sparse_confidence.iter().all(|&c| c == 0.0) {
            return Err(FusionError::SingularSystem(
                "no sparse pixel carries confidence, so nothing fixes the scale".into(),
            ));
        }
        if let Some(i) = diagonal.iter().position(|&d| d <= 0.0) {
            return Err(FusionError::SingularSystem(format!(
                "pixel {i} has neither sparse evidence nor pairwise coupling"
            )));
        }
    } else if params.beta == 0.0 && params.gamma == 0.0 {
        return Err(FusionError::SingularSystem(
            "gauge-fixed mode needs a pairwise term (beta or gamma > 0)".into(),
        ));
    }

    let mut problem = FusionProblem {
        grid,
        params: *params,
        sparse_log_depth: sparse.log_depth().values().to_vec(),
        sparse_confidence,
        dense_log_depth: dense.log_depth().values().to_vec(),
        dense_confidence,
        neighbor_confidence,
        confidence_sum,
        rhs: Vec::new(),
        diagonal,
    };
    let mut rhs = problem.pairwise_product(&problem.dense_log_depth);
    for ((b, &c), &ys) in rhs
        .iter_mut()
        .zip(&problem.sparse_confidence)
        .zip(&problem.sparse_log_depth)
    {
        *b += params.alpha * c * ys;
    }
    if let Some(i) = rhs.iter().position(|b| !b.is_finite()) {
        return Err(FusionError::Domain {
            index: i,
            reason: "right-hand side is not finite".into(),
        });
    }
    problem.rhs = rhs;
    Ok(problem)
}

fn neighbor_sums(grid: GridIndex, c: &[f64]) -> Vec<f64> {
    (0..c.len())
        .map(|i| {
            let mut s = 0.0;
            for k in grid.neighbors4(i) {
                s += c[k];
            }
            s
        })
        .collect()
}

/// Solves the assembled system starting from `initial_guess` (default: the
/// dense prediction).
pub fn solve_cg(problem: &FusionProblem, initial_guess: Option<&ImageGrid>) -> Result<SolveReport> {
    solve_cg_observed(problem, initial_guess, |_, _| {})
}

/// [`solve_cg`] with a callback receiving `(iteration, iterate)` for the
/// initial guess (iteration 0) and after every update.
pub fn solve_cg_observed(
    problem: &FusionProblem,
    initial_guess: Option<&ImageGrid>,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<SolveReport> {
    let start = Instant::now();
    let n = problem.len();
    let params = &problem.params;
    let gauge = params.mode == SolveMode::GaugeFixed;

    let mut x = match initial_guess {
        Some(g) => {
            g.ensure_shape((problem.width(), problem.height()))?;
            g.values().to_vec()
        }
        None => problem.dense_log_depth.clone(),
    };
    let b = &problem.rhs;
    let b_norm = norm(b);

    let finish = |mut x: Vec<f64>, iterations: usize, residual: f64, converged: bool| {
        if gauge {
            recenter(&mut x, mean(&problem.dense_log_depth));
        }
        Ok(SolveReport {
            solution: ImageGrid::new(problem.width(), problem.height(), x)?,
            iterations,
            final_relative_residual: residual,
            converged,
            wall_time: start.elapsed(),
        })
    };

    observer(0, &x);
    if b_norm == 0.0 {
        // Standard mode is positive definite, so b == 0 forces y == 0; in
        // gauge-fixed mode every constant solves A y = 0.
        let solution = vec![0.0; n];
        observer(0, &solution);
        return finish(solution, 0, 0.0, true);
    }

    let preconditioner: Option<Vec<f64>> = params
        .preconditioner
        .then(|| problem.diagonal.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect());
    let precondition = |r: &[f64], z: &mut [f64]| match &preconditioner {
        Some(inv) => z.iter_mut().zip(r).zip(inv).for_each(|((z, r), m)| *z = r * m),
        None => z.copy_from_slice(r),
    };

    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], scratch: &mut [f64]| {
        problem.apply(x, scratch);
        for ((ri, bi), ai) in r.iter_mut().zip(b).zip(scratch.iter()) {
            *ri = bi - ai;
        }
        if gauge {
            let m = mean(r);
            r.iter_mut().for_each(|v| *v -= m);
        }
    };
    true_residual(&x, &mut r, &mut ap);
    let mut relative = norm(&r) / b_norm;
    if relative <= params.cg_tolerance {
        return finish(x, 0, relative, true);
    }

    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    let mut best = (relative, x.clone());
    let mut iterations = 0;
    while iterations < params.cg_max_iters {
        iterations += 1;
        problem.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.is_nan() || pap <= 0.0 {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if gauge {
            let m = mean(&r);
            r.iter_mut().for_each(|v| *v -= m);
        }
        observer(iterations, &x);
        relative = norm(&r) / b_norm;

        if relative <= params.cg_tolerance {
            // Guard against drift of the recursive residual.
            true_residual(&x, &mut r, &mut ap);
            relative = norm(&r) / b_norm;
            if relative <= params.cg_tolerance {
                return finish(x, iterations, relative, true);
            }
            precondition(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        if relative < best.0 {
            best.0 = relative;
            best.1.copy_from_slice(&x);
        }

        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let momentum = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + momentum * p[i];
        }
    }

    let (_, solution) = best;
    let residual_now = problem.relative_residual(&solution);
    log::warn!(
        "CG stopped after {iterations} iterations at relative residual {residual_now:.3e} (tolerance {:.1e})",
        params.cg_tolerance
    );
    finish(solution, iterations, residual_now, false)
}

/// Fused result in metric depth alongside the solver report.
#[derive(Debug, Clone)]
pub struct FusedDepth {
    pub depth: ImageGrid,
    pub report: SolveReport,
}

/// Log-space fusion of prepared maps, starting from the dense prediction.
pub fn fuse_log(
    sparse: &SparseDepthMap,
    dense: &DensePrediction,
    params: &FusionParams,
) -> Result<SolveReport> {
    let problem = assemble(sparse, dense, params)?;
    solve_cg(&problem, None)
}

/// End-to-end fusion on metric depths: converts to log-depth, assembles,
/// solves and exponentiates. Sparse depths are only read where
/// `sparse_mask` is set; the sparse confidence must be 0 elsewhere.
pub fn fuse(
    sparse_depth: &ImageGrid,
    sparse_mask: &ValidityMask,
    sparse_confidence: &ImageGrid,
    dense_depth: &ImageGrid,
    dense_confidence: &ImageGrid,
    params: &FusionParams,
) -> Result<FusedDepth> {
    let sparse = SparseDepthMap::new(
        to_log_depth(sparse_depth, sparse_mask)?,
        sparse_mask.clone(),
        sparse_confidence.clone(),
    )?;
    let dense = DensePrediction::new(
        to_log_depth(dense_depth, &ValidityMask::all(dense_depth.width(), dense_depth.height()))?,
        dense_confidence.clone(),
    )?;
    let report = fuse_log(&sparse, &dense, params)?;
    let depth = from_log_depth(&report.solution)?;
    Ok(FusedDepth { depth, report })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

fn recenter(x: &mut [f64], target: f64) {
    let shift = target - mean(x);
    x.iter_mut().for_each(|v| *v += shift);
}
