//! Evaluation measures.

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::grid::{check_unit_interval, ImageGrid, ValidityMask};

/// One reported number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: String,
    pub value: f64,
    pub pixel_count: usize,
    pub mask: String,
}

fn masked_pairs<'a>(
    a: &'a ImageGrid,
    b: &'a ImageGrid,
    mask: &'a ValidityMask,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    b.ensure_shape(a.shape())?;
    mask.ensure_shape(a.shape())?;
    if mask.count() == 0 {
        return Err(FusionError::EmptyMask);
    }
    Ok(mask.indices().map(|i| (a.values()[i], b.values()[i])))
}

/// Standard deviation of `pred - gt` over the mask:
/// `sqrt(mean(z^2) - mean(z)^2)`, invariant to adding a constant to `pred`.
///
/// Both inputs are log-depths. Computed in centered form.
pub fn scale_invariant_error(pred: &ImageGrid, gt: &ImageGrid, mask: &ValidityMask) -> Result<f64> {
    let z: Vec<f64> = masked_pairs(pred, gt, mask)?.map(|(p, g)| p - g).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    Ok((z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt())
}

/// Root-mean-square depth difference over the mask, in the inputs' unit.
pub fn rmse_depth(pred: &ImageGrid, gt: &ImageGrid, mask: &ValidityMask) -> Result<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (p, g) in masked_pairs(pred, gt, mask)? {
        sum += (p - g) * (p - g);
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean squared difference between two confidence maps over the mask.
pub fn confidence_loss(predicted: &ImageGrid, target: &ImageGrid, mask: &ValidityMask) -> Result<f64> {
    check_unit_interval(predicted)?;
    check_unit_interval(target)?;
    let mut n = 0usize;
    let mut sum = 0.0;
    for (p, t) in masked_pairs(predicted, target, mask)? {
        sum += (p - t) * (p - t);
        n += 1;
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, v: Vec<f64>) -> ImageGrid {
        ImageGrid::new(w, h, v).unwrap()
    }

    #[test]
    fn si_error_examples() {
        let gt = grid(3, 1, vec![0.1, 0.5, -0.3]);
        let all = ValidityMask::all(3, 1);
        assert_eq!(scale_invariant_error(&gt, &gt, &all).unwrap(), 0.0);
        let shifted = gt.map(|v| v + 0.7).unwrap();
        assert!(scale_invariant_error(&shifted, &gt, &all).unwrap() < 1e-15);
        let z = scale_invariant_error(&grid(2, 1, vec![0.0, 1.0]), &ImageGrid::zeros(2, 1), &ValidityMask::all(2, 1)).unwrap();
        assert!((z - 0.5).abs() < 1e-15);
        assert!(matches!(
            scale_invariant_error(&gt, &gt, &ValidityMask::none(3, 1)),
            Err(FusionError::EmptyMask)
        ));
    }

    #[test]
    fn rmse_examples() {
        let a = grid(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let all = ValidityMask::all(2, 2);
        assert_eq!(rmse_depth(&a, &a, &all).unwrap(), 0.0);
        let one = ValidityMask::new(2, 2, vec![false, true, false, false]).unwrap();
        let b = grid(2, 2, vec![1.0, 5.0, 3.0, 4.0]);
        assert_eq!(rmse_depth(&b, &a, &one).unwrap(), 3.0);
        let c = a.map(|v| v + 1.0).unwrap();
        assert_eq!(rmse_depth(&c, &a, &all).unwrap(), 1.0);
        // not shift invariant
        assert!(rmse_depth(&c, &a, &all).unwrap() > 0.0);
    }

    #[test]
    fn confidence_loss_examples() {
        let all = ValidityMask::all(2, 2);
        let zeros = ImageGrid::zeros(2, 2);
        let ones = ImageGrid::filled(2, 2, 1.0);
        assert_eq!(confidence_loss(&ones, &ones, &all).unwrap(), 0.0);
        assert_eq!(confidence_loss(&zeros, &ones, &all).unwrap(), 1.0);
        assert!(matches!(
            confidence_loss(&ImageGrid::filled(2, 2, 1.2), &ones, &all),
            Err(FusionError::Range(_))
        ));
        let p = grid(2, 2, vec![0.1, 0.9, 0.4, 0.3]);
        let t = grid(2, 2, vec![0.2, 0.5, 0.4, 1.0]);
        let mask = ValidityMask::new(2, 2, vec![true, true, false, true]).unwrap();
        let mut expected = 0.0;
        for i in [0, 1, 3] {
            expected += (p.values()[i] - t.values()[i]).powi(2);
        }
        expected /= 3.0;
        assert!((confidence_loss(&p, &t, &mask).unwrap() - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn si_error_is_shift_invariant_std(values in prop::collection::vec(-5.0f64..5.0, 2..30), shift in -10.0f64..10.0) {
            let n = values.len();
            let pred = grid(n, 1, values.clone());
            let gt = ImageGrid::zeros(n, 1);
            let all = ValidityMask::all(n, 1);
            let base = scale_invariant_error(&pred, &gt, &all).unwrap();
            let moved = scale_invariant_error(&pred.map(|v| v + shift).unwrap(), &gt, &all).unwrap();
            prop_assert!((base - moved).abs() < 1e-10);
            // population standard deviation, computed the textbook way
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| v * v).sum::<f64>() / n as f64 - mean * mean;
            prop_assert!((base - var.max(0.0).sqrt()).abs() < 1e-6);
        }
    }
}
