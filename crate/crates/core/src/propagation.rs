//! Strapdown nominal-state integration and error-state covariance
//! propagation.
//!
//! Error-state ordering (15 IMU coordinates, then 6 per clone):
//! `[phi_b, dv, dp_b, db_g, db_a, phi_c1, dp_c1, ...]`.
//!
//! Error conventions follow the printed continuous-time model: attitude and
//! bias errors are true-minus-estimate (`q_true = dq(phi) ⊗ q_est`,
//! `b_true = b_est + db`), velocity and position errors are
//! estimate-minus-true (`v_est = v_true + dv`).  The transition and noise
//! Jacobians below are exact under that mixed convention, and the update
//! module applies corrections with matching signs.

use nalgebra::{DMatrix, SMatrix};

use crate::error::Error;
use crate::geom::{quat_exp, quat_to_rot, skew, Mat3, Quat, Vec3};
use crate::Result;

/// 15x15 continuous-time error transition matrix.
pub type FMat = SMatrix<f64, 15, 15>;
/// 15x12 input-noise Jacobian.
pub type GMat = SMatrix<f64, 15, 12>;

/// Number of IMU error-state coordinates.
pub const IMU_DIM: usize = 15;
pub const ATT: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const BG: usize = 9;
pub const BA: usize = 12;

/// Longest IMU interval the integrator accepts, seconds.
pub const MAX_DT: f64 = 0.1;

/// One IMU sample: timestamp, angular rate and specific force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub omega: Vec3,
    pub f: Vec3,
}

/// IMU nominal state.
#[derive(Debug, Clone, Copy)]
pub struct NavState {
    pub q_b_w: Quat,
    pub v_w: Vec3,
    pub p_w: Vec3,
    pub b_g: Vec3,
    pub b_a: Vec3,
}

impl NavState {
    pub fn identity() -> Self {
        Self {
            q_b_w: Quat::identity(),
            v_w: Vec3::zeros(),
            p_w: Vec3::zeros(),
            b_g: Vec3::zeros(),
            b_a: Vec3::zeros(),
        }
    }
}

/// Continuous-time IMU noise densities.
#[derive(Debug, Clone, Copy)]
pub struct ImuNoiseSpec {
    /// gyro white noise, rad/s/sqrt(Hz)
    pub sigma_g: f64,
    /// accelerometer white noise, m/s^2/sqrt(Hz)
    pub sigma_a: f64,
    /// gyro bias random walk, rad/s^2/sqrt(Hz)
    pub sigma_wg: f64,
    /// accelerometer bias random walk, m/s^3/sqrt(Hz)
    pub sigma_wa: f64,
}

impl ImuNoiseSpec {
    pub fn zero() -> Self {
        Self {
            sigma_g: 0.0,
            sigma_a: 0.0,
            sigma_wg: 0.0,
            sigma_wa: 0.0,
        }
    }
}

/// Gravity and earth-rate model of the local world frame.
#[derive(Debug, Clone, Copy)]
pub struct WorldModel {
    pub gravity_w: Vec3,
    pub earth_rate_w: Vec3,
}

impl Default for WorldModel {
    fn default() -> Self {
        Self {
            gravity_w: Vec3::new(0.0, 0.0, -9.81),
            earth_rate_w: Vec3::zeros(),
        }
    }
}

/// Integrate the nominal state over one IMU interval with midpoint samples.
///
/// Mechanization: `q̇` from `omega − b_g − R_w^b omega_ie`,
/// `v̇ = R_b^w (f − b_a) + g − 2 omega_ie × v`, `ṗ = v`.
pub fn propagate_nominal(
    s: &NavState,
    u0: &ImuSample,
    u1: &ImuSample,
    world: &WorldModel,
) -> Result<NavState> {
    let dt = u1.t - u0.t;
    if dt <= 0.0 {
        return Err(Error::TimestampOrder {
            prev: u0.t,
            next: u1.t,
        });
    }
    assert!(dt <= MAX_DT, "IMU interval {dt} s exceeds {MAX_DT} s");

    let r0 = quat_to_rot(&s.q_b_w);
    let omega_mid =
        0.5 * (u0.omega + u1.omega) - s.b_g - r0.transpose() * world.earth_rate_w;
    let f_mid = 0.5 * (u0.f + u1.f) - s.b_a;

    // midpoint attitude for the specific-force rotation
    let q_half = s.q_b_w * quat_exp(&(omega_mid * (0.5 * dt)));
    let a_w = quat_to_rot(&q_half) * f_mid + world.gravity_w
        - 2.0 * world.earth_rate_w.cross(&s.v_w);

    let q1 = crate::geom::canonicalize(s.q_b_w * quat_exp(&(omega_mid * dt)));
    Ok(NavState {
        q_b_w: q1,
        v_w: s.v_w + a_w * dt,
        p_w: s.p_w + s.v_w * dt + 0.5 * a_w * dt * dt,
        b_g: s.b_g,
        b_a: s.b_a,
    })
}

/// Continuous-time error transition matrix, evaluated at the current
/// nominal state and bias-corrected specific force.
pub fn error_transition(s: &NavState, u: &ImuSample, world: &WorldModel) -> FMat {
    let r = quat_to_rot(&s.q_b_w);
    let f_b = u.f - s.b_a;
    let w_ie = skew(&world.earth_rate_w);

    let mut f = FMat::zeros();
    f.fixed_view_mut::<3, 3>(ATT, ATT).copy_from(&(-w_ie));
    f.fixed_view_mut::<3, 3>(ATT, BG).copy_from(&(-r));
    f.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&skew(&(r * f_b)));
    f.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&(-2.0 * w_ie));
    f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&r);
    f.fixed_view_mut::<3, 3>(POS, VEL)
        .copy_from(&Mat3::identity());
    f
}

/// Input-noise Jacobian for `[w_g, w_a, w_wg, w_wa]`.
pub fn noise_jacobian(s: &NavState) -> GMat {
    let r = quat_to_rot(&s.q_b_w);
    let mut g = GMat::zeros();
    g.fixed_view_mut::<3, 3>(ATT, 0).copy_from(&(-r));
    g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&r);
    g.fixed_view_mut::<3, 3>(BG, 6).copy_from(&Mat3::identity());
    g.fixed_view_mut::<3, 3>(BA, 9).copy_from(&Mat3::identity());
    g
}

fn continuous_noise_cov(noise: &ImuNoiseSpec) -> SMatrix<f64, 12, 12> {
    let mut q = SMatrix::<f64, 12, 12>::zeros();
    for i in 0..3 {
        q[(i, i)] = noise.sigma_g * noise.sigma_g;
        q[(3 + i, 3 + i)] = noise.sigma_a * noise.sigma_a;
        q[(6 + i, 6 + i)] = noise.sigma_wg * noise.sigma_wg;
        q[(9 + i, 9 + i)] = noise.sigma_wa * noise.sigma_wa;
    }
    q
}

/// Discretize the error model over `dt`.
///
/// `Phi` is the truncated series `I + F dt + F² dt²/2 + F³ dt³/6`; `Qd` comes
/// from the Van Loan construction on the 30x30 augmented matrix and is
/// symmetrized.
pub fn discretize(f: &FMat, g: &GMat, noise: &ImuNoiseSpec, dt: f64) -> (FMat, FMat) {
    assert!(dt > 0.0 && dt <= MAX_DT, "dt {dt} out of range");
    let fdt = f * dt;
    let fdt2 = fdt * fdt;
    let phi = FMat::identity() + fdt + fdt2 * 0.5 + fdt2 * fdt * (1.0 / 6.0);

    let qc = g * continuous_noise_cov(noise) * g.transpose();
    // Van Loan: exp(dt [[-F, Qc],[0, Fᵀ]]) = [[·, Phi⁻¹ Qd],[0, Phiᵀ]]
    let mut a = SMatrix::<f64, 30, 30>::zeros();
    a.fixed_view_mut::<15, 15>(0, 0).copy_from(&(-f * dt));
    a.fixed_view_mut::<15, 15>(0, 15).copy_from(&(qc * dt));
    a.fixed_view_mut::<15, 15>(15, 15)
        .copy_from(&(f.transpose() * dt));
    let b = a.exp();
    let phi_vl = b.fixed_view::<15, 15>(15, 15).transpose();
    let qd = phi_vl * b.fixed_view::<15, 15>(0, 15);
    let qd = (qd + qd.transpose()) * 0.5;
    (phi, qd)
}

/// EKF time update of the joint covariance: the 15x15 IMU block gets
/// `Phi P Phiᵀ + Qd`, IMU-clone cross blocks get `Phi P_bc`, clone blocks
/// are untouched.  The result is re-symmetrized.
pub fn propagate_covariance(p: &mut DMatrix<f64>, phi: &FMat, qd: &FMat) -> Result<()> {
    let n = p.nrows();
    assert!(n >= IMU_DIM && p.ncols() == n);
    check_plausible(p)?;

    let pbb = p.fixed_view::<15, 15>(0, 0).into_owned();
    let new_bb = phi * pbb * phi.transpose() + qd;
    p.fixed_view_mut::<15, 15>(0, 0).copy_from(&new_bb);
    if n > IMU_DIM {
        let pbc = p.view((0, IMU_DIM), (IMU_DIM, n - IMU_DIM)).into_owned();
        let new_bc = phi * pbc;
        p.view_mut((0, IMU_DIM), (IMU_DIM, n - IMU_DIM))
            .copy_from(&new_bc);
        p.view_mut((IMU_DIM, 0), (n - IMU_DIM, IMU_DIM))
            .copy_from(&new_bc.transpose());
    }
    symmetrize(p);
    Ok(())
}

/// Cheap per-step health checks: symmetry, finite entries, non-negative
/// diagonal.  A full eigenvalue audit is exposed separately in
/// [`crate::window::FilterState::covariance_min_eigenvalue`].
fn check_plausible(p: &DMatrix<f64>) -> Result<()> {
    let mut max_asym: f64 = 0.0;
    for i in 0..p.nrows() {
        let d = p[(i, i)];
        if !d.is_finite() || d < -1e-9 {
            return Err(Error::CovarianceCorrupt(format!(
                "diagonal entry {i} = {d:e}"
            )));
        }
        for j in (i + 1)..p.ncols() {
            max_asym = max_asym.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    if max_asym > 1e-9 {
        return Err(Error::CovarianceCorrupt(format!(
            "asymmetry {max_asym:e}"
        )));
    }
    Ok(())
}

pub(crate) fn symmetrize(p: &mut DMatrix<f64>) {
    for i in 0..p.nrows() {
        for j in (i + 1)..p.ncols() {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}
