//! Reference values computed independently of this crate (a direct double
//! sum and a generic minimizer) and frozen here.

use depthfuse::energy::{build_dense_system, eval_energy};
use depthfuse::solver::fuse_log;
use depthfuse::{DensePrediction, FusionParams, ImageGrid, SparseDepthMap, ValidityMask};

fn problem() -> (SparseDepthMap, DensePrediction, FusionParams) {
    let sparse = SparseDepthMap::new(
        ImageGrid::new(3, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.5]).unwrap(),
        ValidityMask::new(3, 2, vec![true, false, true, false, false, true]).unwrap(),
        ImageGrid::new(3, 2, vec![1.0, 0.0, 0.5, 0.0, 0.0, 0.25]).unwrap(),
    )
    .unwrap();
    let dense = DensePrediction::new(
        ImageGrid::new(3, 2, vec![0.2, 0.4, 0.6, 0.1, 0.3, 0.5]).unwrap(),
        ImageGrid::new(3, 2, vec![1.0, 0.5, 1.0, 0.8, 0.9, 0.3]).unwrap(),
    )
    .unwrap();
    (sparse, dense, FusionParams::new(2.0, 0.5, 1.5))
}

const MINIMIZER: [f64; 6] = [
    0.0999321287, 0.4234685842, 0.7734547984, 0.0537081491, 0.2968194208, 0.5533618884,
];

#[test]
fn energy_terms_at_a_fixed_point() {
    let (sparse, dense, params) = problem();
    let y = ImageGrid::new(3, 2, vec![0.3, -0.2, 0.9, 0.4, 0.0, 0.7]).unwrap();
    let e = eval_energy(&y, &sparse, &dense, &params).unwrap();
    assert!((e.unary - 0.105).abs() < 1e-12);
    assert!((e.fully_connected - 0.3310288401333334).abs() < 1e-12);
    assert!((e.local - 1.0525073205000004).abs() < 1e-12);
    assert!((e.total - 1.9542754008166674).abs() < 1e-12);
}

#[test]
fn cg_reaches_the_frozen_minimizer() {
    let (sparse, dense, mut params) = problem();
    params.cg_tolerance = 1e-12;
    let report = fuse_log(&sparse, &dense, &params).unwrap();
    assert!(report.converged);
    for (got, want) in report.solution.values().iter().zip(MINIMIZER) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn dense_system_reaches_the_frozen_minimizer() {
    let (sparse, dense, params) = problem();
    let system = build_dense_system(&sparse, &dense, &params).unwrap();
    let y = system.a.clone().cholesky().unwrap().solve(&system.b);
    for (got, want) in y.iter().zip(MINIMIZER) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!(system.gradient(y.as_slice()).amax() < 1e-10);
}
