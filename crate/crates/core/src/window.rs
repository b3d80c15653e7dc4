//! Stochastic cloning: camera-pose augmentation, covariance augmentation and
//! sliding-window marginalization.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::geom::{apply_small_angle, canonicalize, quat_to_rot, skew, Quat, Vec3};
use crate::po_geometry::CameraPose;
use crate::propagation::{symmetrize, NavState, ATT, BA, BG, IMU_DIM, POS, VEL};
use crate::Result;

/// Default sliding-window length.
pub const N_MAX: usize = 11;

/// One cloned camera pose.
#[derive(Debug, Clone, Copy)]
pub struct CloneEntry {
    pub clone_id: u64,
    pub t: f64,
    pub q_c_w: Quat,
    pub p_c_w: Vec3,
}

impl CloneEntry {
    pub fn camera_pose(&self) -> CameraPose {
        CameraPose::new(quat_to_rot(&self.q_c_w).transpose(), self.p_c_w)
    }
}

/// Fixed camera-to-body extrinsics.
#[derive(Debug, Clone, Copy)]
pub struct Extrinsics {
    pub q_c_b: Quat,
    pub p_c_b: Vec3,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            q_c_b: Quat::identity(),
            p_c_b: Vec3::zeros(),
        }
    }
}

/// The joint filter state: IMU nominal state, ordered clone list and the
/// error-state covariance over `[imu(15), 6 per clone]`.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub nav: NavState,
    pub clones: Vec<CloneEntry>,
    pub cov: DMatrix<f64>,
    pub n_max: usize,
}

impl FilterState {
    pub fn new(nav: NavState, p0: DMatrix<f64>, n_max: usize) -> Self {
        assert_eq!(p0.nrows(), IMU_DIM);
        assert_eq!(p0.ncols(), IMU_DIM);
        Self {
            nav,
            clones: Vec::new(),
            cov: p0,
            n_max,
        }
    }

    pub fn dim(&self) -> usize {
        IMU_DIM + 6 * self.clones.len()
    }

    /// Column offset of a clone's error block by position in the window.
    pub fn clone_offset(idx: usize) -> usize {
        IMU_DIM + 6 * idx
    }

    pub fn clone_index(&self, clone_id: u64) -> Option<usize> {
        self.clones.iter().position(|c| c.clone_id == clone_id)
    }

    /// Smallest eigenvalue of the joint covariance (full eigen audit; used
    /// by tests and periodic health checks, not the per-sample hot path).
    pub fn covariance_min_eigenvalue(&self) -> f64 {
        self.cov.clone().symmetric_eigen().eigenvalues.min()
    }

    pub fn max_covariance_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.cov.nrows() {
            for j in (i + 1)..self.cov.ncols() {
                m = m.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        m
    }

    /// Apply an error-state correction with the crate's sign conventions:
    /// attitudes via left small angles, biases additive, velocity/position
    /// subtractive.
    pub fn apply_correction(&mut self, dx: &nalgebra::DVector<f64>) {
        assert_eq!(dx.len(), self.dim());
        let nav = &mut self.nav;
        nav.q_b_w = apply_small_angle(&nav.q_b_w, &dx.fixed_rows::<3>(ATT).into_owned());
        nav.v_w -= dx.fixed_rows::<3>(VEL).into_owned();
        nav.p_w -= dx.fixed_rows::<3>(POS).into_owned();
        nav.b_g += dx.fixed_rows::<3>(BG).into_owned();
        nav.b_a += dx.fixed_rows::<3>(BA).into_owned();
        for (idx, clone) in self.clones.iter_mut().enumerate() {
            let off = Self::clone_offset(idx);
            clone.q_c_w =
                apply_small_angle(&clone.q_c_w, &dx.fixed_rows::<3>(off).into_owned());
            clone.p_c_w -= dx.fixed_rows::<3>(off + 3).into_owned();
        }
    }
}

/// Jacobian of the new clone's error with respect to the joint error state:
/// attitude row selects the body attitude error, position row is
/// `[(R_b^w p_c^b)×]` against attitude plus the body position error.
pub fn clone_jacobian(nav: &NavState, ext: &Extrinsics, n_clones: usize) -> DMatrix<f64> {
    let dim = IMU_DIM + 6 * n_clones;
    let mut j = DMatrix::<f64>::zeros(6, dim);
    j.fixed_view_mut::<3, 3>(0, ATT)
        .copy_from(&crate::geom::Mat3::identity());
    let lever = quat_to_rot(&nav.q_b_w) * ext.p_c_b;
    j.fixed_view_mut::<3, 3>(3, ATT).copy_from(&skew(&lever));
    j.fixed_view_mut::<3, 3>(3, POS)
        .copy_from(&crate::geom::Mat3::identity());
    j
}

/// Clone the current camera pose into the window and augment the covariance
/// with `[[P, P Jᵀ], [J P, J P Jᵀ]]`.
pub fn augment(state: &mut FilterState, clone_id: u64, t_image: f64, ext: &Extrinsics) -> Result<()> {
    let n = state.clones.len();
    if n >= state.n_max {
        return Err(Error::WindowFull {
            n,
            n_max: state.n_max,
        });
    }
    if let Some(last) = state.clones.last() {
        assert!(
            t_image >= last.t && clone_id > last.clone_id,
            "clone ids/times must be increasing"
        );
    }

    let q_c_w = canonicalize(state.nav.q_b_w * ext.q_c_b);
    let p_c_w = state.nav.p_w + quat_to_rot(&state.nav.q_b_w) * ext.p_c_b;
    state.clones.push(CloneEntry {
        clone_id,
        t: t_image,
        q_c_w,
        p_c_w,
    });

    let j = clone_jacobian(&state.nav, ext, n);
    let dim = IMU_DIM + 6 * n;
    let pjt = &state.cov * j.transpose();
    let corner = &j * &pjt;
    let mut p_new = DMatrix::<f64>::zeros(dim + 6, dim + 6);
    p_new.view_mut((0, 0), (dim, dim)).copy_from(&state.cov);
    p_new.view_mut((0, dim), (dim, 6)).copy_from(&pjt);
    p_new
        .view_mut((dim, 0), (6, dim))
        .copy_from(&pjt.transpose());
    p_new.view_mut((dim, dim), (6, 6)).copy_from(&corner);
    symmetrize(&mut p_new);
    state.cov = p_new;
    Ok(())
}

/// Remove clones by id, deleting their 6-row/column covariance blocks.
pub fn marginalize(state: &mut FilterState, ids: &[u64]) -> Result<()> {
    if ids.is_empty() {
        return Ok(());
    }
    let mut drop_idx = Vec::with_capacity(ids.len());
    for &id in ids {
        match state.clone_index(id) {
            Some(i) => drop_idx.push(i),
            None => return Err(Error::NoSuchClone(id)),
        }
    }
    drop_idx.sort_unstable();
    drop_idx.dedup();

    let keep_rows: Vec<usize> = (0..state.dim())
        .filter(|&r| {
            if r < IMU_DIM {
                return true;
            }
            let idx = (r - IMU_DIM) / 6;
            !drop_idx.contains(&idx)
        })
        .collect();
    let mut p_new = DMatrix::<f64>::zeros(keep_rows.len(), keep_rows.len());
    for (ri, &r) in keep_rows.iter().enumerate() {
        for (ci, &c) in keep_rows.iter().enumerate() {
            p_new[(ri, ci)] = state.cov[(r, c)];
        }
    }
    state.cov = p_new;
    for &i in drop_idx.iter().rev() {
        state.clones.remove(i);
    }
    Ok(())
}
