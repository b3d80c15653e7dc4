//! Synthetic trajectory, IMU and feature-track generation for end-to-end
//! filter tests.
//!
//! Trajectories are analytic (position, velocity, acceleration and yaw rate
//! in closed form) so the generated IMU is exact up to the injected noise:
//! integrating the noise-free stream must reproduce the ground truth to
//! integration error only.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::geom::{quat_exp, quat_to_rot, Mat3, Quat, Vec3};
use crate::po_geometry::NormalizedObservation;
use crate::propagation::{ImuNoiseSpec, ImuSample, NavState, WorldModel};
use crate::window::Extrinsics;

/// Built-in trajectory shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Circle,
    FigureEight,
    StraightTurns,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "circle" => Ok(Self::Circle),
            "figure-eight" => Ok(Self::FigureEight),
            "straight-turns" => Ok(Self::StraightTurns),
            other => Err(format!(
                "unknown trajectory '{other}' (expected circle, figure-eight or straight-turns)"
            )),
        }
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Circle => "circle",
            Self::FigureEight => "figure-eight",
            Self::StraightTurns => "straight-turns",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// circle radius / lemniscate half-width / turn offset, metres
    pub radius: f64,
    /// nominal speed along the path, m/s
    pub speed: f64,
    pub duration: f64,
    pub imu_rate: f64,
    pub cam_rate: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            radius: 5.0,
            speed: 1.5,
            duration: 60.0,
            imu_rate: 200.0,
            cam_rate: 10.0,
        }
    }
}

/// Ground-truth body state at one instant.
#[derive(Debug, Clone, Copy)]
pub struct TruePose {
    pub t: f64,
    pub q_b_w: Quat,
    pub v_w: Vec3,
    pub p_w: Vec3,
}

/// Planar kinematics in closed form: position, velocity, acceleration.
fn planar_kinematics(spec: &TrajectorySpec, t: f64) -> (Vec3, Vec3, Vec3) {
    match spec.kind {
        TrajectoryKind::Circle => {
            let w = spec.speed / spec.radius;
            let (s, c) = (w * t).sin_cos();
            (
                Vec3::new(spec.radius * c, spec.radius * s, 0.0),
                Vec3::new(-spec.radius * w * s, spec.radius * w * c, 0.0),
                Vec3::new(-spec.radius * w * w * c, -spec.radius * w * w * s, 0.0),
            )
        }
        TrajectoryKind::FigureEight => {
            // Gerono lemniscate x = a sin u, y = a sin u cos u
            let a = spec.radius;
            let w = spec.speed / a;
            let u = w * t;
            let (s, c) = u.sin_cos();
            let p = Vec3::new(a * s, a * s * c, 0.0);
            let v = Vec3::new(a * w * c, a * w * (2.0 * c * c - 1.0), 0.0);
            let acc = Vec3::new(-a * w * w * s, -4.0 * a * w * w * s * c, 0.0);
            (p, v, acc)
        }
        TrajectoryKind::StraightTurns => {
            // straight run along x with two opposite smooth lateral offsets
            let x = spec.speed * t;
            let seg = spec.duration / 4.0;
            let (y, vy, ay) = lateral_offset(spec.radius, t, seg, 2.0 * seg)
                .add(lateral_offset(-spec.radius, t, 2.5 * seg, 3.5 * seg));
            (
                Vec3::new(x, y, 0.0),
                Vec3::new(spec.speed, vy, 0.0),
                Vec3::new(0.0, ay, 0.0),
            )
        }
    }
}

struct Lateral(f64, f64, f64);

impl Lateral {
    fn add(self, other: Lateral) -> (f64, f64, f64) {
        (self.0 + other.0, self.1 + other.1, self.2 + other.2)
    }
}

/// C² smootherstep ramp of amplitude `a` between `t0` and `t1`, with value,
/// first and second time derivatives.
fn lateral_offset(a: f64, t: f64, t0: f64, t1: f64) -> Lateral {
    if t <= t0 {
        return Lateral(0.0, 0.0, 0.0);
    }
    if t >= t1 {
        return Lateral(a, 0.0, 0.0);
    }
    let w = t1 - t0;
    let u = (t - t0) / w;
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    let dds = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u * u);
    Lateral(a * s, a * ds / w, a * dds / (w * w))
}

/// Exact body state and body-frame angular rate at time `t`.  The body x
/// axis tracks the horizontal velocity heading; z stays up.
pub fn true_state(spec: &TrajectorySpec, t: f64) -> (TruePose, Vec3, Vec3) {
    let (p, v, a) = planar_kinematics(spec, t);
    let yaw = v.y.atan2(v.x);
    let v2 = v.x * v.x + v.y * v.y;
    let yaw_rate = if v2 > 0.0 {
        (v.x * a.y - v.y * a.x) / v2
    } else {
        0.0
    };
    let q_b_w = quat_exp(&Vec3::new(0.0, 0.0, yaw));
    let omega_body = quat_to_rot(&q_b_w).transpose() * Vec3::new(0.0, 0.0, yaw_rate);
    (TruePose { t, q_b_w, v_w: v, p_w: p }, a, omega_body)
}

/// Ground-truth body poses at the IMU rate (inclusive of the endpoint).
pub fn gen_trajectory(spec: &TrajectorySpec) -> Vec<TruePose> {
    let dt = 1.0 / spec.imu_rate;
    let n = (spec.duration * spec.imu_rate).round() as usize;
    (0..=n).map(|k| true_state(spec, k as f64 * dt).0).collect()
}

/// True gyro/accelerometer readings (bias-free, noise-free) at time `t`.
pub fn true_imu(spec: &TrajectorySpec, world: &WorldModel, t: f64) -> ImuSample {
    let (pose, a_w, omega_body) = true_state(spec, t);
    let r_w_b = quat_to_rot(&pose.q_b_w).transpose();
    let omega = omega_body + r_w_b * world.earth_rate_w;
    let coriolis = 2.0 * world.earth_rate_w.cross(&pose.v_w);
    let f = r_w_b * (a_w - world.gravity_w + coriolis);
    ImuSample { t, omega, f }
}

/// Generated IMU stream with the true slowly-walking biases recorded
/// alongside for evaluation.
#[derive(Debug, Clone)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    pub true_b_g: Vec<Vec3>,
    pub true_b_a: Vec<Vec3>,
}

/// Sample the IMU at `spec.imu_rate` with white noise and random-walk biases
/// from `noise`.  A zeroed `noise` yields the exact measurements.
pub fn gen_imu(
    spec: &TrajectorySpec,
    noise: &ImuNoiseSpec,
    world: &WorldModel,
    seed: u64,
) -> ImuStream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dt = 1.0 / spec.imu_rate;
    let sqrt_dt = dt.sqrt();
    let n = (spec.duration * spec.imu_rate).round() as usize;
    let mut b_g = Vec3::zeros();
    let mut b_a = Vec3::zeros();
    let mut out = ImuStream {
        samples: Vec::with_capacity(n + 1),
        true_b_g: Vec::with_capacity(n + 1),
        true_b_a: Vec::with_capacity(n + 1),
    };
    let gauss = |scale: f64, rng: &mut ChaCha12Rng| {
        Vec3::from_fn(|_, _| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
    };
    for k in 0..=n {
        let t = k as f64 * dt;
        let clean = true_imu(spec, world, t);
        let sample = ImuSample {
            t,
            omega: clean.omega + b_g + gauss(noise.sigma_g / sqrt_dt, &mut rng),
            f: clean.f + b_a + gauss(noise.sigma_a / sqrt_dt, &mut rng),
        };
        out.samples.push(sample);
        out.true_b_g.push(b_g);
        out.true_b_a.push(b_a);
        b_g += gauss(noise.sigma_wg * sqrt_dt, &mut rng);
        b_a += gauss(noise.sigma_wa * sqrt_dt, &mut rng);
    }
    out
}

/// Forward-looking camera: optical axis along body x, image x to the right
/// (−body y), image y down (−body z).
pub fn forward_camera() -> Extrinsics {
    let r_c_b = Mat3::from_columns(&[
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 0.0, 0.0),
    ]);
    Extrinsics {
        q_c_b: crate::geom::canonicalize(nalgebra::UnitQuaternion::from_matrix(&r_c_b)),
        p_c_b: Vec3::zeros(),
    }
}

/// Camera pose in the world at time `t` (world-from-camera rotation is the
/// transpose of the stored world-to-camera one).
pub fn camera_at(spec: &TrajectorySpec, ext: &Extrinsics, t: f64) -> crate::po_geometry::CameraPose {
    let (pose, _, _) = true_state(spec, t);
    let q_c_w = pose.q_b_w * ext.q_c_b;
    let p_c_w = pose.p_w + quat_to_rot(&pose.q_b_w) * ext.p_c_b;
    crate::po_geometry::CameraPose::new(quat_to_rot(&q_c_w).transpose(), p_c_w)
}

#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub n_landmarks: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// full cone field of view, degrees
    pub fov_deg: f64,
    /// image noise mapped into normalized coordinates via `sigma_px / focal`
    pub sigma_px: f64,
    pub focal: f64,
    /// longest emitted track; longer visibility spans start a new feature id
    pub max_track_len: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_landmarks: 120,
            depth_min: 3.0,
            depth_max: 15.0,
            fov_deg: 90.0,
            sigma_px: 1.0,
            focal: 460.0,
            max_track_len: crate::window::N_MAX,
        }
    }
}

/// One observation row of the track table.
#[derive(Debug, Clone, Copy)]
pub struct TrackRow {
    pub feature_id: u64,
    pub frame_id: u64,
    pub t: f64,
    pub obs: NormalizedObservation,
}

/// Full synthetic dataset.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub imu: ImuStream,
    /// (frame_id, timestamp) of every camera frame
    pub frames: Vec<(u64, f64)>,
    pub tracks: Vec<TrackRow>,
    pub groundtruth: Vec<TruePose>,
    pub landmarks: Vec<Vec3>,
    pub extrinsics: Extrinsics,
    pub scene: SceneParams,
}

impl SimOutput {
    /// True navigation state at the first IMU sample.
    pub fn initial_state(&self) -> NavState {
        let g = &self.groundtruth[0];
        NavState {
            q_b_w: g.q_b_w,
            v_w: g.v_w,
            p_w: g.p_w,
            b_g: Vec3::zeros(),
            b_a: Vec3::zeros(),
        }
    }
}

/// Landmarks seeded inside the viewing frustum of randomly chosen frames so
/// every landmark is observed at least once.
fn gen_landmarks(
    spec: &TrajectorySpec,
    ext: &Extrinsics,
    scene: &SceneParams,
    rng: &mut ChaCha12Rng,
) -> Vec<Vec3> {
    let half = (scene.fov_deg.to_radians() / 2.0).tan() * 0.9;
    (0..scene.n_landmarks)
        .map(|_| {
            let t = rng.gen_range(0.0..spec.duration);
            let cam = camera_at(spec, ext, t);
            let depth = rng.gen_range(scene.depth_min..scene.depth_max);
            let dir = Vec3::new(
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
                1.0,
            );
            cam.to_world(&(dir * depth))
        })
        .collect()
}

/// Generate the visibility-segmented, length-capped feature tracks.
pub fn gen_tracks(
    spec: &TrajectorySpec,
    ext: &Extrinsics,
    scene: &SceneParams,
    landmarks: &[Vec3],
    seed: u64,
) -> (Vec<(u64, f64)>, Vec<TrackRow>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_frames = (spec.duration * spec.cam_rate).floor() as u64;
    let frames: Vec<(u64, f64)> = (0..=n_frames)
        .map(|k| (k, k as f64 / spec.cam_rate))
        .collect();
    let cos_half = (scene.fov_deg.to_radians() / 2.0).cos();
    let sigma_n = scene.sigma_px / scene.focal;

    let mut rows = Vec::new();
    let mut next_feature_id = 0u64;
    // per landmark: current segment feature id and its length
    let mut segment: Vec<Option<(u64, usize)>> = vec![None; landmarks.len()];

    for &(frame_id, t) in &frames {
        let cam = camera_at(spec, ext, t);
        for (li, lm) in landmarks.iter().enumerate() {
            let c = cam.to_camera(lm);
            let visible = c.z > scene.depth_min * 0.2
                && c.z / c.norm() > cos_half
                && c.norm() < scene.depth_max * 2.0;
            if !visible {
                segment[li] = None;
                continue;
            }
            let (fid, len) = match segment[li] {
                Some((fid, len)) if len < scene.max_track_len => (fid, len),
                _ => {
                    let fid = next_feature_id;
                    next_feature_id += 1;
                    (fid, 0)
                }
            };
            segment[li] = Some((fid, len + 1));
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            rows.push(TrackRow {
                feature_id: fid,
                frame_id,
                t,
                obs: NormalizedObservation::new(
                    c.x / c.z + sigma_n * nx,
                    c.y / c.z + sigma_n * ny,
                ),
            });
        }
    }
    (frames, rows)
}

/// Generate a complete dataset: IMU, frames, tracks and ground truth.
pub fn simulate(
    spec: &TrajectorySpec,
    noise: &ImuNoiseSpec,
    scene: &SceneParams,
    world: &WorldModel,
    seed: u64,
) -> SimOutput {
    let ext = forward_camera();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5EED);
    let landmarks = gen_landmarks(spec, &ext, scene, &mut rng);
    let imu = gen_imu(spec, noise, world, seed.wrapping_add(1));
    let (frames, tracks) = gen_tracks(spec, &ext, scene, &landmarks, seed.wrapping_add(2));
    SimOutput {
        imu,
        frames,
        tracks,
        groundtruth: gen_trajectory(spec),
        landmarks,
        extrinsics: ext,
        scene: *scene,
    }
}
