//! The CRF energy
//!
//! ```text
//! E(y) = alpha * E_u + beta * E_fc + gamma * E_lc
//! ```
//!
//! over log-depths `y`, with
//!
//! * `E_u  = sum_i c^s_i (y_i - y^s_i)^2`
//! * `E_fc = 1/(2N) sum_{i,j} c_i c_j ((y_j - y_i) - (y^d_j - y^d_i))^2`
//! * `E_lc = sum_{(i,k)} c_i c_k ((y_k - y_i) - (y^d_k - y^d_i))^2` over
//!   right and below grid edges,
//!
//! where `c` in the pairwise terms is the dense confidence. The
//! fully-connected term factorizes: with `r = y - y^d` and `S = sum_j c_j`,
//!
//! ```text
//! E_fc = (1/N) S sum_i c_i r_i^2 - (1/N) (sum_i c_i r_i)^2
//!      = (1/N) S sum_i c_i (r_i - m)^2,    m = (sum_i c_i r_i) / S
//! ```
//!
//! which is what [`eval_fc_fast`] computes in two O(N) passes. The centered
//! second line is used because it is nonnegative term by term.
//!
//! The energy is the quadratic `y^T A y - 2 y^T b + const` with
//! `b = A^s y^s + A^d y^d`; [`build_dense_system`] assembles `A` explicitly
//! for small problems and serves as the oracle for the implicit solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::grid::{DensePrediction, FusionParams, GridIndex, ImageGrid, SparseDepthMap};

/// Largest `N` the O(N^2) routines are meant for.
pub const DENSE_ORACLE_LIMIT: usize = 4096;

/// The weighted terms of the energy at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub unary: f64,
    pub fully_connected: f64,
    pub local: f64,
    /// `alpha * unary + beta * fully_connected + gamma * local`
    pub total: f64,
}

pub fn eval_unary(y: &ImageGrid, sparse: &SparseDepthMap) -> Result<f64> {
    y.ensure_shape(sparse.shape())?;
    Ok(unary_sum(
        y.values(),
        sparse.log_depth().values(),
        sparse.confidence().values(),
    ))
}

/// Direct double sum over all ordered pairs. O(N^2); an oracle only.
pub fn eval_fc_naive(y: &ImageGrid, dense: &DensePrediction) -> Result<f64> {
    y.ensure_shape(dense.shape())?;
    if y.len() > DENSE_ORACLE_LIMIT {
        log::warn!(
            "eval_fc_naive on N = {} exceeds the oracle bound {DENSE_ORACLE_LIMIT}",
            y.len()
        );
    }
    Ok(fc_naive(
        y.values(),
        dense.log_depth().values(),
        dense.confidence().values(),
    ))
}

/// Linear-time form of the fully-connected term.
pub fn eval_fc_fast(y: &ImageGrid, dense: &DensePrediction) -> Result<f64> {
    y.ensure_shape(dense.shape())?;
    Ok(fc_fast(
        y.values(),
        dense.log_depth().values(),
        dense.confidence().values(),
    ))
}

pub fn eval_lc(y: &ImageGrid, dense: &DensePrediction) -> Result<f64> {
    y.ensure_shape(dense.shape())?;
    Ok(lc_sum(
        GridIndex::new(y.width(), y.height()),
        y.values(),
        dense.log_depth().values(),
        dense.confidence().values(),
    ))
}

/// Evaluates all three terms. The dense confidences are regularized by
/// `params.epsilon` first, exactly as the solver sees them.
pub fn eval_energy(
    y: &ImageGrid,
    sparse: &SparseDepthMap,
    dense: &DensePrediction,
    params: &FusionParams,
) -> Result<EnergyBreakdown> {
    y.ensure_shape(sparse.shape())?;
    y.ensure_shape(dense.shape())?;
    let c = regularized_confidence(dense.confidence().values(), params.epsilon);
    let yd = dense.log_depth().values();
    let unary = unary_sum(
        y.values(),
        sparse.log_depth().values(),
        sparse.confidence().values(),
    );
    let fully_connected = fc_fast(y.values(), yd, &c);
    let local = lc_sum(GridIndex::new(y.width(), y.height()), y.values(), yd, &c);
    Ok(EnergyBreakdown {
        unary,
        fully_connected,
        local,
        total: params.alpha * unary + params.beta * fully_connected + params.gamma * local,
    })
}

/// Explicit normal-equation system for small problems.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    /// `A = A^s + A^d`, symmetric positive semi-definite.
    pub a: DMatrix<f64>,
    /// `b = A^s y^s + A^d y^d`.
    pub b: DVector<f64>,
    /// `y^sT A^s y^s + y^dT A^d y^d`.
    pub constant: f64,
}

impl DenseSystem {
    /// `y^T A y - 2 y^T b + constant`, equal to the total energy at `y`.
    pub fn energy(&self, y: &[f64]) -> f64 {
        let y = DVector::from_column_slice(y);
        (y.transpose() * &self.a * &y)[(0, 0)] - 2.0 * y.dot(&self.b) + self.constant
    }

    /// `2 (A y - b)`.
    pub fn gradient(&self, y: &[f64]) -> DVector<f64> {
        let y = DVector::from_column_slice(y);
        2.0 * (&self.a * y - &self.b)
    }
}

/// Assembles `A` entry by entry from the quadratic form of the energy.
///
/// With `c` the epsilon-regularized dense confidence and `N4(i)` the
/// 4-neighborhood:
///
/// ```text
/// A_ii = alpha c^s_i + c_i ((beta/N) sum_{j != i} c_j + gamma sum_{j in N4(i)} c_j)
/// A_ij = -c_i c_j (beta/N + gamma)   j in N4(i)
/// A_ij = -c_i c_j beta/N             otherwise
/// ```
pub fn build_dense_system(
    sparse: &SparseDepthMap,
    dense: &DensePrediction,
    params: &FusionParams,
) -> Result<DenseSystem> {
    sparse.log_depth().ensure_shape(dense.shape())?;
    let (width, height) = dense.shape();
    let n = width * height;
    if n > DENSE_ORACLE_LIMIT {
        return Err(FusionError::Size {
            n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    let grid = GridIndex::new(width, height);
    let c = regularized_confidence(dense.confidence().values(), params.epsilon);
    let cs = sparse.confidence().values();
    let s: f64 = c.iter().sum();
    let fc = params.beta / n as f64;

    let a_sparse = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        cs.iter().map(|&ci| params.alpha * ci),
    ));
    let mut a_dense = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a_dense[(i, j)] = -fc * c[i] * c[j];
            }
        }
        let local: f64 = grid.neighbors4(i).map(|k| c[k]).sum();
        a_dense[(i, i)] = c[i] * (fc * (s - c[i]) + params.gamma * local);
        for k in grid.neighbors4(i) {
            a_dense[(i, k)] -= params.gamma * c[i] * c[k];
        }
    }

    let ys = DVector::from_column_slice(sparse.log_depth().values());
    let yd = DVector::from_column_slice(dense.log_depth().values());
    let as_ys = &a_sparse * &ys;
    let ad_yd = &a_dense * &yd;
    let constant = ys.dot(&as_ys) + yd.dot(&ad_yd);
    Ok(DenseSystem {
        a: a_sparse + a_dense,
        b: as_ys + ad_yd,
        constant,
    })
}

/// `c + epsilon`, capped at `1 + epsilon`.
pub(crate) fn regularized_confidence(c: &[f64], epsilon: f64) -> Vec<f64> {
    c.iter().map(|&ci| (ci + epsilon).min(1.0 + epsilon)).collect()
}

pub(crate) fn unary_sum(y: &[f64], ys: &[f64], cs: &[f64]) -> f64 {
    y.iter()
        .zip(ys)
        .zip(cs)
        .filter(|(_, &c)| c != 0.0)
        .map(|((&yi, &ysi), &c)| c * (yi - ysi) * (yi - ysi))
        .sum()
}

fn fc_naive(y: &[f64], yd: &[f64], c: &[f64]) -> f64 {
    let n = y.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = (y[j] - y[i]) - (yd[j] - yd[i]);
            sum += c[i] * c[j] * d * d;
        }
    }
    sum / (2.0 * n as f64)
}

pub(crate) fn fc_fast(y: &[f64], yd: &[f64], c: &[f64]) -> f64 {
    let n = y.len() as f64;
    let s: f64 = c.iter().sum();
    if s == 0.0 {
        return 0.0;
    }
    let weighted: f64 = y.iter().zip(yd).zip(c).map(|((a, b), w)| w * (a - b)).sum();
    let mean = weighted / s;
    let spread: f64 = y
        .iter()
        .zip(yd)
        .zip(c)
        .map(|((a, b), w)| {
            let r = a - b - mean;
            w * r * r
        })
        .sum();
    s * spread / n
}

pub(crate) fn lc_sum(grid: GridIndex, y: &[f64], yd: &[f64], c: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..y.len() {
        let ri = y[i] - yd[i];
        for k in [grid.right(i), grid.below(i)].into_iter().flatten() {
            let d = (y[k] - yd[k]) - ri;
            sum += c[i] * c[k] * d * d;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ValidityMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, v: Vec<f64>) -> ImageGrid {
        ImageGrid::new(w, h, v).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> ImageGrid {
        grid(w, h, (0..w * h).map(|_| rng.random_range(lo..hi)).collect())
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        w: usize,
        h: usize,
    ) -> (ImageGrid, SparseDepthMap, DensePrediction) {
        let y = random_grid(rng, w, h, -1.0, 2.0);
        let mask = ValidityMask::new(w, h, (0..w * h).map(|_| rng.random_bool(0.4)).collect()).unwrap();
        let ys = random_grid(rng, w, h, -1.0, 2.0);
        let cs = grid(
            w,
            h,
            mask.flags().iter().map(|&v| if v { rng.random_range(0.0..1.0) } else { 0.0 }).collect(),
        );
        let sparse = SparseDepthMap::new(ys, mask, cs).unwrap();
        let dense = DensePrediction::new(random_grid(rng, w, h, -1.0, 2.0), random_grid(rng, w, h, 0.0, 1.0)).unwrap();
        (y, sparse, dense)
    }

    #[test]
    fn unary_zero_at_sparse_values() {
        let ys = grid(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let mask = ValidityMask::new(2, 2, vec![true, false, true, true]).unwrap();
        let sparse = SparseDepthMap::new(ys, mask.clone(), mask.to_grid()).unwrap();
        let y = grid(2, 2, vec![0.1, 7.0, 0.3, 0.4]);
        assert_eq!(eval_unary(&y, &sparse).unwrap(), 0.0);
    }

    #[test]
    fn unary_single_pixel() {
        let sparse = SparseDepthMap::new(grid(1, 1, vec![1.0]), ValidityMask::all(1, 1), grid(1, 1, vec![1.0])).unwrap();
        assert_eq!(eval_unary(&grid(1, 1, vec![3.0]), &sparse).unwrap(), 4.0);
    }

    #[test]
    fn unary_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (y, sparse, _) = random_instance(&mut rng, 3, 3);
        let mut expected = 0.0;
        for i in 0..9 {
            if sparse.mask().is_valid(i) {
                let r = y.values()[i] - sparse.log_depth().values()[i];
                expected += sparse.confidence().values()[i] * r * r;
            }
        }
        assert!((eval_unary(&y, &sparse).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn unary_shape_mismatch() {
        let sparse = SparseDepthMap::empty(2, 2);
        assert!(matches!(eval_unary(&ImageGrid::zeros(2, 3), &sparse), Err(FusionError::Shape { .. })));
    }

    #[test]
    fn fc_vanishes_on_prediction_and_its_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, _, dense) = random_instance(&mut rng, 4, 3);
        let y = dense.log_depth().clone();
        assert_eq!(eval_fc_naive(&y, &dense).unwrap(), 0.0);
        assert_eq!(eval_fc_fast(&y, &dense).unwrap(), 0.0);
        let shifted = y.map(|v| v + 0.75).unwrap();
        assert!(eval_fc_naive(&shifted, &dense).unwrap() < 1e-20);
        assert!(eval_fc_fast(&shifted, &dense).unwrap() < 1e-20);
    }

    #[test]
    fn fc_two_pixel_hand_expansion() {
        // r = [0, t]: the ordered pairs (0,1) and (1,0) each contribute t^2,
        // so E_fc = (1/4) * 2 t^2 = t^2 / 2.
        let t = 1.7;
        let dense = DensePrediction::new(grid(2, 1, vec![0.0, 0.0]), grid(2, 1, vec![1.0, 1.0])).unwrap();
        let y = grid(2, 1, vec![0.0, t]);
        let expected = t * t / 2.0;
        assert!((eval_fc_naive(&y, &dense).unwrap() - expected).abs() < 1e-14);
        assert!((eval_fc_fast(&y, &dense).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn fc_zero_confidence() {
        let dense = DensePrediction::new(grid(3, 1, vec![0.0; 3]), ImageGrid::zeros(3, 1)).unwrap();
        assert_eq!(eval_fc_fast(&grid(3, 1, vec![1.0, -2.0, 5.0]), &dense).unwrap(), 0.0);
    }

    #[test]
    fn fast_fc_matches_naive_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let w = rng.random_range(1..=12);
            let h = rng.random_range(1..=12);
            let (y, _, dense) = random_instance(&mut rng, w, h);
            let naive = eval_fc_naive(&y, &dense).unwrap();
            let fast = eval_fc_fast(&y, &dense).unwrap();
            assert!((fast - naive).abs() <= 1e-9 * naive.max(1.0), "{fast} vs {naive}");
        }
    }

    #[test]
    fn lc_single_edge() {
        let dense = DensePrediction::new(grid(2, 1, vec![0.0, 0.0]), grid(2, 1, vec![1.0, 1.0])).unwrap();
        assert_eq!(eval_lc(&grid(2, 1, vec![0.0, 1.0]), &dense).unwrap(), 1.0);
    }

    #[test]
    fn lc_matches_edge_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, _, dense) = random_instance(&mut rng, 4, 4);
        let (yv, yd, c) = (y.values(), dense.log_depth().values(), dense.confidence().values());
        let mut expected = 0.0;
        for row in 0..4 {
            for col in 0..4 {
                let i = row * 4 + col;
                let mut edges = vec![];
                if col < 3 {
                    edges.push(i + 1);
                }
                if row < 3 {
                    edges.push(i + 4);
                }
                for k in edges {
                    let d = (yv[k] - yv[i]) - (yd[k] - yd[i]);
                    expected += c[i] * c[k] * d * d;
                }
            }
        }
        assert!((eval_lc(&y, &dense).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pairwise_terms_are_shift_invariant_unary_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (y, sparse, dense) = random_instance(&mut rng, 5, 4);
        let shifted = y.map(|v| v + 1.3).unwrap();
        let fc = eval_fc_fast(&y, &dense).unwrap();
        assert!((eval_fc_fast(&shifted, &dense).unwrap() - fc).abs() < 1e-10 * fc.max(1.0));
        let lc = eval_lc(&y, &dense).unwrap();
        assert!((eval_lc(&shifted, &dense).unwrap() - lc).abs() < 1e-10 * lc.max(1.0));
        assert!((eval_unary(&shifted, &sparse).unwrap() - eval_unary(&y, &sparse).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn energy_term_isolation_and_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (y, sparse, dense) = random_instance(&mut rng, 4, 3);
        let params = FusionParams::new(2.5, 0.0, 0.0);
        let e = eval_energy(&y, &sparse, &dense, &params).unwrap();
        assert_eq!(e.total, 2.5 * eval_unary(&y, &sparse).unwrap());

        let params = FusionParams::new(2.5, 3.0, 0.7);
        let e = eval_energy(&y, &sparse, &dense, &params).unwrap();
        let recomputed = 2.5 * e.unary + 3.0 * e.fully_connected + 0.7 * e.local;
        assert!((e.total - recomputed).abs() <= 1e-10 * e.total);
        assert!(e.unary >= 0.0 && e.fully_connected >= 0.0 && e.local >= 0.0);
    }

    #[test]
    fn dense_system_reproduces_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (y, sparse, dense) = random_instance(&mut rng, 4, 5);
            let params = FusionParams::new(rng.random_range(0.1..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
            let sys = build_dense_system(&sparse, &dense, &params).unwrap();
            let direct = eval_energy(&y, &sparse, &dense, &params).unwrap().total;
            let quadratic = sys.energy(y.values());
            assert!((direct - quadratic).abs() <= 1e-9 * direct.max(1.0), "{direct} vs {quadratic}");
        }
    }

    #[test]
    fn dense_system_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, sparse, dense) = random_instance(&mut rng, 5, 5);
        let sys = build_dense_system(&sparse, &dense, &FusionParams::new(1.0, 2.0, 0.5)).unwrap();
        assert!((&sys.a - sys.a.transpose()).amax() < 1e-15);
        let eig = sys.a.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn empty_evidence_gives_zero_system() {
        let sparse = SparseDepthMap::empty(2, 2);
        let dense = DensePrediction::new(grid(2, 2, vec![0.3, 0.1, 0.2, 0.5]), ImageGrid::zeros(2, 2)).unwrap();
        let sys = build_dense_system(&sparse, &dense, &FusionParams::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(sys.a.amax(), 0.0);
        assert_eq!(sys.b.amax(), 0.0);
    }

    #[test]
    fn one_anchor_makes_system_positive_definite() {
        let dense = DensePrediction::new(ImageGrid::zeros(2, 2), ImageGrid::filled(2, 2, 1.0)).unwrap();
        let mask = ValidityMask::new(2, 2, vec![true, false, false, false]).unwrap();
        let sparse = SparseDepthMap::new(ImageGrid::zeros(2, 2), mask.clone(), mask.to_grid()).unwrap();
        let sys = build_dense_system(&sparse, &dense, &FusionParams::new(1.0, 1.0, 1.0)).unwrap();
        let min = sys.a.clone().symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0, "smallest eigenvalue {min}");
    }

    #[test]
    fn dense_system_size_limit() {
        let sparse = SparseDepthMap::empty(65, 64);
        let dense = DensePrediction::from_depth(&ImageGrid::filled(65, 64, 1.0)).unwrap();
        assert!(matches!(
            build_dense_system(&sparse, &dense, &FusionParams::default()),
            Err(FusionError::Size { .. })
        ));
    }
}
