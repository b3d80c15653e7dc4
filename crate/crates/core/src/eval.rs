//! Trajectory evaluation: temporal association, closed-form rigid
//! alignment, absolute trajectory error and filter-consistency statistics.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::geom::{error_angle, Mat3, Vec3};
use crate::io::TimedPose;
use crate::propagation::{NavState, ATT, POS};
use crate::Result;

/// Maximum time difference for pairing estimate and reference poses.
pub const ASSOC_WINDOW: f64 = 0.010;

/// Nearest-neighbor association of `est` to `gt` timestamps within
/// `window` seconds.  Both inputs are time-sorted; each estimate pairs with
/// at most one reference pose.
pub fn associate(est: &[TimedPose], gt: &[TimedPose], window: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut gi = 0usize;
    for (ei, e) in est.iter().enumerate() {
        while gi + 1 < gt.len() && (gt[gi + 1].t - e.t).abs() <= (gt[gi].t - e.t).abs() {
            gi += 1;
        }
        if (gt[gi].t - e.t).abs() <= window {
            pairs.push((ei, gi));
        }
    }
    pairs
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy)]
pub struct Se3 {
    pub r: Mat3,
    pub t: Vec3,
}

impl Se3 {
    pub fn identity() -> Self {
        Self {
            r: Mat3::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r * p + self.t
    }
}

/// Closed-form least-squares SE(3) alignment of the estimate onto the
/// reference over temporally associated pairs: the returned transform
/// minimizes the summed squared position error.
pub fn align_umeyama(est: &[TimedPose], gt: &[TimedPose]) -> Result<(Se3, Vec<TimedPose>)> {
    let pairs = associate(est, gt, ASSOC_WINDOW);
    if pairs.len() < 3 {
        return Err(Error::AlignmentUnderdetermined { pairs: pairs.len() });
    }
    // bitwise-identical positions align by the identity exactly, with no
    // SVD rounding
    if pairs.iter().all(|&(ei, gi)| est[ei].p_w == gt[gi].p_w) {
        return Ok((Se3::identity(), est.to_vec()));
    }
    let n = pairs.len() as f64;
    let mean_e: Vec3 = pairs.iter().map(|&(ei, _)| est[ei].p_w).sum::<Vec3>() / n;
    let mean_g: Vec3 = pairs.iter().map(|&(_, gi)| gt[gi].p_w).sum::<Vec3>() / n;
    let mut cross = Mat3::zeros();
    for &(ei, gi) in &pairs {
        cross += (gt[gi].p_w - mean_g) * (est[ei].p_w - mean_e).transpose();
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut s = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let t = mean_g - r * mean_e;
    let xform = Se3 { r, t };
    let rot = nalgebra::UnitQuaternion::from_matrix(&r);
    let aligned = est
        .iter()
        .map(|p| TimedPose {
            t: p.t,
            p_w: xform.apply(&p.p_w),
            q_b_w: crate::geom::canonicalize(rot * p.q_b_w),
        })
        .collect();
    Ok((xform, aligned))
}

/// Root-mean-square position error over associated pairs.
pub fn ate_rmse(est: &[TimedPose], gt: &[TimedPose]) -> Result<f64> {
    let pairs = associate(est, gt, ASSOC_WINDOW);
    if pairs.is_empty() {
        return Err(Error::AlignmentUnderdetermined { pairs: 0 });
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(ei, gi)| (est[ei].p_w - gt[gi].p_w).norm_squared())
        .sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Normalized estimation error squared of the 6-DoF body pose: the
/// attitude/position error under the filter's conventions, weighted by the
/// corresponding covariance marginal.
pub fn pose_nees(nav: &NavState, cov: &DMatrix<f64>, truth: &TimedPose) -> Result<f64> {
    let mut e = nalgebra::Vector6::<f64>::zeros();
    e.fixed_rows_mut::<3>(0)
        .copy_from(&error_angle(&truth.q_b_w, &nav.q_b_w));
    e.fixed_rows_mut::<3>(3).copy_from(&(nav.p_w - truth.p_w));
    let mut p = nalgebra::Matrix6::<f64>::zeros();
    let blocks = [ATT, POS];
    for (bi, &ri) in blocks.iter().enumerate() {
        for (bj, &rj) in blocks.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    p[(3 * bi + a, 3 * bj + b)] = cov[(ri + a, rj + b)];
                }
            }
        }
    }
    let chol = p
        .cholesky()
        .ok_or_else(|| Error::CovarianceCorrupt("pose marginal not PD".into()))?;
    Ok(e.dot(&chol.solve(&e)))
}
