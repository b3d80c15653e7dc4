//! Pose-only multi-view geometry.
//!
//! A feature observed in several views is never triangulated.  Instead, a
//! maximal-parallax pair of views (the left and right base views `j`, `k`)
//! anchors a depth-free prediction of the camera-frame point in any target
//! view `i`:
//!
//! `p_po = ‖t_jk × p_k‖ · R_ji p_j + ‖p_k × R_jk p_j‖ · t_ji`
//!
//! which for exact data equals `theta_jk · p_f^{c_i}`, the true camera-frame
//! point scaled by the base-pair parallax.  The reprojection residual built
//! from the normalized `p_po` is therefore independent of the unknown scale
//! and of any 3D feature estimate.

use crate::error::Error;
use crate::geom::{Mat3, Vec3};
use crate::Result;

/// Default parallax floor below which a view pair is rejected.
pub const THETA_MIN: f64 = 1e-4;
/// Guard on the predicted depth before normalizing.
pub const DEPTH_EPS: f64 = 1e-8;

/// Normalized image coordinates; the homogeneous third component is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedObservation {
    pub x: f64,
    pub y: f64,
}

impl NormalizedObservation {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Homogeneous bearing (x, y, 1).
    pub fn bearing(&self) -> Vec3 {
        Vec3::new(self.x, self.y, 1.0)
    }
}

/// A camera pose: `r_w_c` maps world vectors into the camera frame, `t_c_w`
/// is the camera position in the world frame.
#[derive(Debug, Clone, Copy)]
pub struct CameraPose {
    pub r_w_c: Mat3,
    pub t_c_w: Vec3,
}

impl CameraPose {
    pub fn new(r_w_c: Mat3, t_c_w: Vec3) -> Self {
        Self { r_w_c, t_c_w }
    }

    /// World-frame coordinates of a camera-frame point.
    pub fn to_world(&self, p_c: &Vec3) -> Vec3 {
        self.r_w_c.transpose() * p_c + self.t_c_w
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p_w: &Vec3) -> Vec3 {
        self.r_w_c * (p_w - self.t_c_w)
    }
}

/// Base view pair of a track: indices into the track's observation list and
/// the parallax scalar attained there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePair {
    pub j: usize,
    pub k: usize,
    pub theta: f64,
}

/// The scaled camera-frame point prediction (`theta_jk` times the true
/// camera-frame point for exact data).
#[derive(Debug, Clone, Copy)]
pub struct PoPoint(pub Vec3);

impl PoPoint {
    pub fn depth(&self) -> f64 {
        self.0.z
    }
}

/// Relative pose of view `a` seen from view `b`:
/// `R_a_b = R_w^b R_a^w`, `t_a_b = R_w^b (t_a^w − t_b^w)`.
pub fn relative_pose(a: &CameraPose, b: &CameraPose) -> (Mat3, Vec3) {
    let r_a_b = b.r_w_c * a.r_w_c.transpose();
    let t_a_b = b.r_w_c * (a.t_c_w - b.t_c_w);
    (r_a_b, t_a_b)
}

/// Parallax scalar `theta = ‖[p_cj×] R_ci_cj p_ci‖` of the view pair
/// (`p_ci` in the left view, `p_cj` in the right view).
pub fn theta(
    p_ci: &NormalizedObservation,
    p_cj: &NormalizedObservation,
    r_ci_cj: &Mat3,
) -> f64 {
    (p_cj.bearing().cross(&(r_ci_cj * p_ci.bearing()))).norm()
}

/// Pair of pose-only depths: `d_i = ‖[p_cj×] t‖/theta`,
/// `d_j = ‖[(R p_ci)×] t‖/theta`.  For exact data these are the true feature
/// depths in views i and j.
pub fn ppo_depths(
    p_ci: &NormalizedObservation,
    p_cj: &NormalizedObservation,
    r_ci_cj: &Mat3,
    t_ci_cj: &Vec3,
    theta_min: f64,
) -> Result<(f64, f64)> {
    let th = theta(p_ci, p_cj, r_ci_cj);
    if th <= theta_min {
        return Err(Error::DegenerateParallax {
            theta: th,
            theta_min,
        });
    }
    let d_i = p_cj.bearing().cross(t_ci_cj).norm() / th;
    let d_j = (r_ci_cj * p_ci.bearing()).cross(t_ci_cj).norm() / th;
    Ok((d_i, d_j))
}

/// Select the base-view pair maximizing theta over all ordered pairs
/// (jj < kk); ties broken lexicographically.  The whole track is rejected
/// when the maximum parallax is below `theta_min`.
pub fn select_base_views(
    track: &[NormalizedObservation],
    poses: &[CameraPose],
    theta_min: f64,
) -> Result<BasePair> {
    assert_eq!(track.len(), poses.len());
    assert!(track.len() >= 2, "base-view selection needs >= 2 views");
    let mut best: Option<BasePair> = None;
    for jj in 0..track.len() {
        for kk in (jj + 1)..track.len() {
            let (r, _) = relative_pose(&poses[jj], &poses[kk]);
            let th = theta(&track[jj], &track[kk], &r);
            // strict > keeps the lexicographically smallest argmax
            if best.map_or(true, |b| th > b.theta) {
                best = Some(BasePair {
                    j: jj,
                    k: kk,
                    theta: th,
                });
            }
        }
    }
    let best = best.expect("non-empty pair enumeration");
    if best.theta <= theta_min {
        return Err(Error::DegenerateParallax {
            theta: best.theta,
            theta_min,
        });
    }
    Ok(best)
}

/// Depth-free prediction of the camera-frame point in target view `i`:
/// `p_po = ‖t_jk × p_k‖ R_ji p_j + theta_jk t_ji`.
pub fn po_point(
    track: &[NormalizedObservation],
    poses: &[CameraPose],
    i: usize,
    base: &BasePair,
) -> Result<PoPoint> {
    let p_j = track[base.j].bearing();
    let p_k = track[base.k].bearing();
    let (r_jk, t_jk) = relative_pose(&poses[base.j], &poses[base.k]);
    let scale_j = t_jk.cross(&p_k).norm();
    let th = p_k.cross(&(r_jk * p_j)).norm();
    // i = j: the relative pose is the exact identity, so the prediction is
    // the observed bearing up to the common scale and the residual vanishes
    // bit-exactly.
    let p = if i == base.j {
        scale_j * p_j
    } else {
        let (r_ji, t_ji) = relative_pose(&poses[base.j], &poses[i]);
        scale_j * (r_ji * p_j) + th * t_ji
    };
    if p.z <= DEPTH_EPS {
        return Err(Error::NonPositiveDepth { z: p.z });
    }
    Ok(PoPoint(p))
}

/// Pose-only reprojection residual, predicted minus observed:
/// `r = (p_po / e3ᵀ p_po) − p_ci`, first two components.
pub fn po_residual(observed: &NormalizedObservation, p_po: &PoPoint) -> nalgebra::Vector2<f64> {
    // algebraically p/z − obs; this form is exactly zero whenever
    // p = s · (obs.x, obs.y, 1) for any representable scale s
    let p = p_po.0;
    nalgebra::Vector2::new(
        (p.x - observed.x * p.z) / p.z,
        (p.y - observed.y * p.z) / p.z,
    )
}
