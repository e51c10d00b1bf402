//! Trajectory displacement errors: FDE is the Euclidean error at the last
//! time step, MDE the mean error over all steps.

use crate::geometry::{point_distance_bev, Trajectory};
use crate::scalar::{cast, Scalar};

use super::EvalError;

fn check_aligned<S: Scalar>(pred: &Trajectory<S>, gt: &Trajectory<S>) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    for (i, (p, g)) in pred.points.iter().zip(&gt.points).enumerate() {
        if (p.0 - g.0).abs() > cast(1e-9) {
            return Err(EvalError::MisalignedTimestamps { index: i });
        }
    }
    Ok(())
}

/// Final displacement error, meters.
pub fn fde<S: Scalar>(pred: &Trajectory<S>, gt: &Trajectory<S>) -> Result<S, EvalError> {
    check_aligned(pred, gt)?;
    let p = pred.points.last().expect("non-empty by construction");
    let g = gt.points.last().expect("non-empty by construction");
    Ok(point_distance_bev(p.1, g.1))
}

/// Mean displacement error over all time steps, meters.
pub fn mde<S: Scalar>(pred: &Trajectory<S>, gt: &Trajectory<S>) -> Result<S, EvalError> {
    check_aligned(pred, gt)?;
    let total: S = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| point_distance_bev(p.1, g.1))
        .sum();
    Ok(total / cast(pred.len() as f64))
}
