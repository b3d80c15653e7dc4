//! Pose-only observation model: analytic Jacobians of the depth-free point
//! prediction, residual stacking, chi-square gating and the EKF correction.
//!
//! For a track with base views (j, k) and target view i, the prediction is
//! `p_po = s_jk · R_ji p_j + theta_jk · t_ji` with
//! `s_jk = ‖t_jk × p_k‖` and `theta_jk = ‖p_k × R_jk p_j‖`.  Its derivative
//! against the clone attitude errors decomposes into the terms A (through
//! `s_jk`), B (through `R_ji p_j`) and D (through `t_ji`); the term through
//! `theta_jk` is taken as zero.  Against the clone position errors the terms
//! are E (through `s_jk`) and F (through `t_ji`).  All other clone columns
//! and the entire IMU block are exactly zero.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3x2, RowVector3, Vector2};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::Error;
use crate::geom::{skew, Mat3, Vec3};
use crate::po_geometry::{
    po_point, po_residual, relative_pose, select_base_views, BasePair, CameraPose,
    NormalizedObservation, PoPoint,
};
use crate::propagation::IMU_DIM;
use crate::window::FilterState;
use crate::Result;

/// Minimum observations for a track to enter an update.
pub const MIN_TRACK_LEN: usize = 3;

/// One feature's observations, keyed by the clone that saw them.
#[derive(Debug, Clone)]
pub struct FeatureTrack {
    pub feature_id: u64,
    pub observations: Vec<(u64, NormalizedObservation)>,
}

/// Measurement noise in pixels mapped to normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub sigma_px: f64,
    pub focal: f64,
}

impl NoiseModel {
    pub fn sigma_n(&self) -> f64 {
        self.sigma_px / self.focal
    }
}

/// Stacked residuals/Jacobian ready for the EKF update, with per-track row
/// spans so gating can test tracks independently.
#[derive(Debug, Clone)]
pub struct MeasurementBatch {
    pub r: DVector<f64>,
    pub h: DMatrix<f64>,
    pub sigma_n: f64,
    /// (feature_id, first row, row count) per stacked track.
    pub track_rows: Vec<(u64, usize, usize)>,
}

impl MeasurementBatch {
    pub fn rows(&self) -> usize {
        self.r.len()
    }
}

/// 2x3 Jacobian of the perspective normalization at `p_po`:
/// rows `[1/z, 0, −x/z²]` and `[0, 1/z, −y/z²]`.
pub fn projection_jacobian(p_po: &PoPoint) -> Matrix2x3<f64> {
    let p = p_po.0;
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(iz, 0.0, -p.x * iz2, 0.0, iz, -p.y * iz2)
}

/// Precomputed geometry of one (track, target view) pair, in window-local
/// clone indices.
pub struct PoJacobianCtx {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    /// bearings of the base observations
    p_j: Vec3,
    p_k: Vec3,
    /// base-pair relative pose and scales
    t_jk: Vec3,
    r_jk: Mat3,
    r_ji: Mat3,
    t_ji: Vec3,
    scale_jk: f64,
    theta_jk: f64,
    /// world-to-camera rotations of the touched views
    r_w_ci: Mat3,
    r_w_ck: Mat3,
    /// world-frame rotated left bearing R_{c_j}^w p_j
    p_j_world: Vec3,
}

impl PoJacobianCtx {
    pub fn new(
        track: &[NormalizedObservation],
        poses: &[CameraPose],
        i: usize,
        base: &BasePair,
    ) -> Self {
        let p_j = track[base.j].bearing();
        let p_k = track[base.k].bearing();
        let (r_jk, t_jk) = relative_pose(&poses[base.j], &poses[base.k]);
        let (r_ji, t_ji) = relative_pose(&poses[base.j], &poses[i]);
        Self {
            i,
            j: base.j,
            k: base.k,
            p_j,
            p_k,
            t_jk,
            r_jk,
            r_ji,
            t_ji,
            scale_jk: t_jk.cross(&p_k).norm(),
            theta_jk: p_k.cross(&(r_jk * p_j)).norm(),
            r_w_ci: poses[i].r_w_c,
            r_w_ck: poses[base.k].r_w_c,
            p_j_world: poses[base.j].r_w_c.transpose() * p_j,
        }
    }

    /// Row vector d‖t_jk × p_k‖ / d t_jk.
    fn dscale_dt(&self) -> RowVector3<f64> {
        let num = self.p_k.dot(&self.p_k) * self.t_jk.transpose()
            - self.p_k.dot(&self.t_jk) * self.p_k.transpose();
        num / self.scale_jk
    }

    /// Sensitivity of `s_jk` to the attitude error of clone k; zero for all
    /// other clones.
    pub fn a1_row(&self) -> RowVector3<f64> {
        -self.dscale_dt() * skew(&self.t_jk) * self.r_w_ck
    }

    /// Term through `s_jk` against the clone-k attitude error.
    pub fn a_term(&self) -> Mat3 {
        (self.r_ji * self.p_j) * self.a1_row()
    }

    /// Term through `R_ji p_j` against the attitude errors of clones j
    /// (positive) and i (negative); zero when i = j or elsewhere.
    pub fn b_term(&self, ii: usize) -> Mat3 {
        if self.i == self.j {
            return Mat3::zeros();
        }
        let core = self.scale_jk * self.r_w_ci * skew(&self.p_j_world);
        if ii == self.j {
            core
        } else if ii == self.i {
            -core
        } else {
            Mat3::zeros()
        }
    }

    /// Term through `t_ji` against the clone-i attitude error; zero when
    /// i = j or elsewhere.
    pub fn d_term(&self, ii: usize) -> Mat3 {
        if ii == self.i && self.i != self.j {
            -self.theta_jk * skew(&self.t_ji) * self.r_w_ci
        } else {
            Mat3::zeros()
        }
    }

    /// Sensitivity of `s_jk` to the position errors of clones j (positive)
    /// and k (negative); zero elsewhere.
    pub fn e1_row(&self, ii: usize) -> RowVector3<f64> {
        if ii == self.j {
            self.dscale_dt() * self.r_w_ck
        } else if ii == self.k {
            -self.dscale_dt() * self.r_w_ck
        } else {
            RowVector3::zeros()
        }
    }

    /// Term through `t_ji` against the position errors of clones j
    /// (positive) and i (negative); zero when i = j or elsewhere.
    pub fn f_term(&self, ii: usize) -> Mat3 {
        if self.i == self.j {
            return Mat3::zeros();
        }
        if ii == self.j {
            self.theta_jk * self.r_w_ci
        } else if ii == self.i {
            -self.theta_jk * self.r_w_ci
        } else {
            Mat3::zeros()
        }
    }

    /// Derivative of the predicted point with respect to the left base
    /// observation coordinates (x_j, y_j): the bearing enters through the
    /// rotated-bearing factor and through the parallax scalar.
    pub fn dpo_dobs_j(&self) -> Matrix3x2<f64> {
        let w = self.r_jk * self.p_j;
        let dtheta_dw = (self.p_k.dot(&self.p_k) * w.transpose()
            - self.p_k.dot(&w) * self.p_k.transpose())
            / self.theta_jk;
        let m = self.scale_jk * self.r_ji + self.t_ji * (dtheta_dw * self.r_jk);
        m.fixed_columns::<2>(0).into_owned()
    }

    /// Derivative of the predicted point with respect to the right base
    /// observation coordinates (x_k, y_k): the bearing enters through both
    /// scale factors.
    pub fn dpo_dobs_k(&self) -> Matrix3x2<f64> {
        let w = self.r_jk * self.p_j;
        let ds_dpk = (self.t_jk.dot(&self.t_jk) * self.p_k.transpose()
            - self.t_jk.dot(&self.p_k) * self.t_jk.transpose())
            / self.scale_jk;
        let dtheta_dpk =
            (w.dot(&w) * self.p_k.transpose() - w.dot(&self.p_k) * w.transpose()) / self.theta_jk;
        let m = (self.r_ji * self.p_j) * ds_dpk + self.t_ji * dtheta_dpk;
        m.fixed_columns::<2>(0).into_owned()
    }
}

/// Derivative of `p_po` with respect to the attitude error of clone `ii`
/// (window-local index): A + B + C + D with C = 0 by model convention.
pub fn dpo_dphi(ctx: &PoJacobianCtx, ii: usize) -> Mat3 {
    let mut out = ctx.b_term(ii) + ctx.d_term(ii);
    if ii == ctx.k {
        out += ctx.a_term();
    }
    out
}

/// Derivative of `p_po` with respect to the position error of clone `ii`:
/// E + F.
pub fn dpo_dpos(ctx: &PoJacobianCtx, ii: usize) -> Mat3 {
    (ctx.r_ji * ctx.p_j) * ctx.e1_row(ii) + ctx.f_term(ii)
}

/// Residual and full Jacobian row for one (track, target view) pair.
/// The first 15 (IMU) columns are exactly zero; only the clone blocks of
/// views i, j, k are populated.
pub fn residual_jacobian_row(
    track: &[NormalizedObservation],
    poses: &[CameraPose],
    clone_indices: &[usize],
    state_dim: usize,
    i: usize,
    base: &BasePair,
) -> Result<(Vector2<f64>, DMatrix<f64>)> {
    assert_ne!(i, base.j, "left base view is excluded from stacking");
    let p_po = po_point(track, poses, i, base)?;
    let r = po_residual(&track[i], &p_po);
    let jproj = projection_jacobian(&p_po);
    let ctx = PoJacobianCtx::new(track, poses, i, base);

    let mut h = DMatrix::<f64>::zeros(2, state_dim);
    // `i` may coincide with `base.k`; each distinct clone is visited once
    // (the per-term case analysis already folds overlapping roles together)
    let mut views = vec![i, base.j];
    if base.k != i {
        views.push(base.k);
    }
    for view in views {
        let off = IMU_DIM + 6 * clone_indices[view];
        let dphi = jproj * dpo_dphi(&ctx, view);
        let dpos = jproj * dpo_dpos(&ctx, view);
        let mut block_phi = h.view_mut((0, off), (2, 3));
        block_phi += dphi;
        let mut block_pos = h.view_mut((0, off + 3), (2, 3));
        block_pos += dpos;
    }
    Ok((r, h))
}

/// Configuration of the stacking/gating stage.
#[derive(Debug, Clone, Copy)]
pub struct UpdateParams {
    pub theta_min: f64,
    pub min_track_len: usize,
    /// chi-square gate confidence, e.g. 0.95
    pub gate_confidence: f64,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self {
            theta_min: crate::po_geometry::THETA_MIN,
            min_track_len: MIN_TRACK_LEN,
            gate_confidence: 0.95,
        }
    }
}

/// Reasons a track contributed no rows; surfaced in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackDrop {
    TooShort,
    MissingClone,
    DegenerateParallax,
    NonPositiveDepth,
    Gated,
    SingularInnovation,
}

/// Stack residual rows over all usable (track, view) pairs, ordered by
/// feature id then view index.  The left base view of each track is skipped.
pub fn build_batch<T: std::borrow::Borrow<FeatureTrack>>(
    tracks: &[T],
    state: &FilterState,
    noise: &NoiseModel,
    params: &UpdateParams,
    dropped: &mut Vec<(u64, TrackDrop)>,
) -> Result<MeasurementBatch> {
    let dim = state.dim();
    let mut chunks: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
    let mut total_rows = 0usize;
    let mut track_rows = Vec::new();

    let mut sorted: Vec<&FeatureTrack> = tracks.iter().map(|t| t.borrow()).collect();
    sorted.sort_by_key(|t| t.feature_id);

    for track in sorted {
        if track.observations.len() < params.min_track_len {
            dropped.push((track.feature_id, TrackDrop::TooShort));
            continue;
        }
        let mut obs = Vec::with_capacity(track.observations.len());
        let mut poses = Vec::with_capacity(track.observations.len());
        let mut clone_indices = Vec::with_capacity(track.observations.len());
        let mut missing = false;
        for &(clone_id, ob) in &track.observations {
            match state.clone_index(clone_id) {
                Some(idx) => {
                    obs.push(ob);
                    poses.push(state.clones[idx].camera_pose());
                    clone_indices.push(idx);
                }
                None => {
                    missing = true;
                    break;
                }
            }
        }
        if missing {
            dropped.push((track.feature_id, TrackDrop::MissingClone));
            continue;
        }
        let base = match select_base_views(&obs, &poses, params.theta_min) {
            Ok(b) => b,
            Err(_) => {
                dropped.push((track.feature_id, TrackDrop::DegenerateParallax));
                continue;
            }
        };
        let mut raw: Vec<(Vector2<f64>, DMatrix<f64>)> = Vec::new();
        let mut noise_blocks: Vec<(usize, Matrix2<f64>, Matrix2<f64>)> = Vec::new();
        for i in 0..obs.len() {
            if i == base.j {
                continue;
            }
            match residual_jacobian_row(&obs, &poses, &clone_indices, dim, i, &base) {
                Ok(row) => {
                    // first-order sensitivity of this row to the base
                    // observations, needed to model the noise the base views
                    // re-inject into every row of the track
                    let ctx = PoJacobianCtx::new(&obs, &poses, i, &base);
                    let p_po = po_point(&obs, &poses, i, &base)?;
                    let jproj = projection_jacobian(&p_po);
                    noise_blocks.push((i, jproj * ctx.dpo_dobs_j(), jproj * ctx.dpo_dobs_k()));
                    raw.push(row);
                }
                Err(Error::NonPositiveDepth { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        if raw.is_empty() {
            dropped.push((track.feature_id, TrackDrop::NonPositiveDepth));
            continue;
        }

        // Per-track whitening: the stacked rows see each observation's noise
        // through J_n (the direct −I of the target view plus the base-view
        // propagation), so their covariance is σ_n²·J_n·J_nᵀ rather than
        // σ_n²·I.  Projecting onto the eigenbasis of J_n·J_nᵀ and rescaling
        // restores exactly-white σ_n²·I rows for the EKF and the gate.
        // Modes quieter than a single raw observation (eigenvalue < 1, e.g.
        // the off-epipolar direction of the row at i = k, which is a
        // near-deterministic function of the observations) are discarded:
        // below that level the unmodeled second-order noise terms dominate
        // whatever first-order information the mode carries.
        let m2 = 2 * raw.len();
        let mut jn = DMatrix::<f64>::zeros(m2, 2 * obs.len());
        for (a, &(i, gj, gk)) in noise_blocks.iter().enumerate() {
            let mut bj = jn.view_mut((2 * a, 2 * base.j), (2, 2));
            bj += gj;
            let mut bk = jn.view_mut((2 * a, 2 * base.k), (2, 2));
            bk += gk;
            let mut bi = jn.view_mut((2 * a, 2 * i), (2, 2));
            bi -= Matrix2::identity();
        }
        let gram = &jn * jn.transpose();
        let se = gram.symmetric_eigen();
        let mut rt = DVector::<f64>::zeros(m2);
        let mut ht = DMatrix::<f64>::zeros(m2, dim);
        for (a, (ri, hi)) in raw.iter().enumerate() {
            rt.fixed_rows_mut::<2>(2 * a).copy_from(ri);
            ht.view_mut((2 * a, 0), (2, dim)).copy_from(hi);
        }
        let keep: Vec<usize> = (0..m2).filter(|&a| se.eigenvalues[a] >= 1.0).collect();
        if keep.is_empty() {
            dropped.push((track.feature_id, TrackDrop::DegenerateParallax));
            continue;
        }
        let mut t = DMatrix::<f64>::zeros(keep.len(), m2);
        for (row, &a) in keep.iter().enumerate() {
            let scale = se.eigenvalues[a].sqrt().recip();
            t.row_mut(row)
                .copy_from(&(se.eigenvectors.column(a).transpose() * scale));
        }
        let rt = &t * rt;
        let ht = &t * ht;

        track_rows.push((track.feature_id, total_rows, keep.len()));
        total_rows += keep.len();
        chunks.push((rt, ht));
    }

    if chunks.is_empty() {
        return Err(Error::NoMeasurements);
    }
    let mut r = DVector::<f64>::zeros(total_rows);
    let mut h = DMatrix::<f64>::zeros(total_rows, dim);
    let mut at = 0usize;
    for (rt, ht) in chunks {
        let m2 = rt.len();
        r.rows_mut(at, m2).copy_from(&rt);
        h.view_mut((at, 0), (m2, dim)).copy_from(&ht);
        at += m2;
    }
    Ok(MeasurementBatch {
        r,
        h,
        sigma_n: noise.sigma_n(),
        track_rows,
    })
}

/// 95%-style chi-square quantile for the given degrees of freedom.
pub fn chi2_quantile(confidence: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive dof")
        .inverse_cdf(confidence)
}

/// Mahalanobis gate per track: keep iff `rᵀ (H P Hᵀ + R)⁻¹ r` is below the
/// chi-square quantile at the track's row count.  Rejected (or singular)
/// tracks are removed from the batch.
pub fn gate(
    batch: &MeasurementBatch,
    state: &FilterState,
    params: &UpdateParams,
    dropped: &mut Vec<(u64, TrackDrop)>,
) -> Result<MeasurementBatch> {
    let mut keep_rows: Vec<usize> = Vec::new();
    let mut track_rows = Vec::new();
    let var = batch.sigma_n * batch.sigma_n;

    for &(feature_id, first, count) in &batch.track_rows {
        let h_t = batch.h.rows(first, count);
        let r_t = batch.r.rows(first, count);
        let mut s = &h_t * &state.cov * h_t.transpose();
        for d in 0..count {
            s[(d, d)] += var;
        }
        let stat = match s.clone().cholesky() {
            Some(chol) => {
                let sol = chol.solve(&r_t.into_owned());
                r_t.dot(&sol)
            }
            None => {
                dropped.push((feature_id, TrackDrop::SingularInnovation));
                continue;
            }
        };
        if stat <= chi2_quantile(params.gate_confidence, count) {
            let new_first = keep_rows.len();
            keep_rows.extend(first..first + count);
            track_rows.push((feature_id, new_first, count));
        } else {
            dropped.push((feature_id, TrackDrop::Gated));
        }
    }

    if keep_rows.is_empty() {
        return Err(Error::NoMeasurements);
    }
    let mut r = DVector::<f64>::zeros(keep_rows.len());
    let mut h = DMatrix::<f64>::zeros(keep_rows.len(), batch.h.ncols());
    for (new, &old) in keep_rows.iter().enumerate() {
        r[new] = batch.r[old];
        h.row_mut(new).copy_from(&batch.h.row(old));
    }
    Ok(MeasurementBatch {
        r,
        h,
        sigma_n: batch.sigma_n,
        track_rows,
    })
}

/// Outcome statistics of one EKF correction.
#[derive(Debug, Clone, Copy)]
pub struct UpdateOutcome {
    pub rows: usize,
    pub residual_norm: f64,
    pub correction_norm: f64,
}

/// Standard EKF correction with Joseph-form covariance update.  The
/// innovation matrix is rejected when its condition number exceeds 1e12.
pub fn ekf_update(state: &mut FilterState, batch: &MeasurementBatch) -> Result<UpdateOutcome> {
    let m = batch.rows();
    if m == 0 {
        return Err(Error::NoMeasurements);
    }
    let dim = state.dim();
    assert_eq!(batch.h.ncols(), dim);
    let var = batch.sigma_n * batch.sigma_n;

    let pht = &state.cov * batch.h.transpose();
    let mut s = &batch.h * &pht;
    for d in 0..m {
        s[(d, d)] += var;
    }
    let eig = s.clone().symmetric_eigen();
    let (min_e, max_e) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if min_e <= 0.0 || max_e / min_e > 1e12 {
        return Err(Error::CovarianceCorrupt(format!(
            "innovation condition number {:e}",
            max_e / min_e.max(f64::MIN_POSITIVE)
        )));
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::CovarianceCorrupt("innovation not PD".into()))?;
    // K = P Hᵀ S⁻¹, via S Kᵀ = H P
    let k = chol.solve(&pht.transpose()).transpose();
    let dx = &k * &batch.r;

    // Joseph form: (I − K H) P (I − K H)ᵀ + K R Kᵀ
    let ikh = DMatrix::<f64>::identity(dim, dim) - &k * &batch.h;
    let mut p_new = &ikh * &state.cov * ikh.transpose() + &k * k.transpose() * var;
    crate::propagation::symmetrize(&mut p_new);
    state.cov = p_new;
    state.apply_correction(&dx);

    Ok(UpdateOutcome {
        rows: m,
        residual_norm: batch.r.norm(),
        correction_norm: dx.norm(),
    })
}
