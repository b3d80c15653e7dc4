//! Filter orchestration: IMU-driven propagation, per-frame cloning,
//! track-termination updates and window maintenance, plus the flat
//! key=value run configuration.

use nalgebra::{DMatrix, Matrix6};

use crate::error::Error;
use crate::geom::Vec3;
use crate::io::{DiagKind, DiagRecord, TimedPose, TrackTable};
use crate::propagation::{
    discretize, error_transition, noise_jacobian, propagate_covariance, propagate_nominal,
    ImuNoiseSpec, ImuSample, NavState, WorldModel, ATT, BA, BG, IMU_DIM, POS, VEL,
};
use crate::update::{build_batch, ekf_update, gate, FeatureTrack, NoiseModel, UpdateParams};
use crate::window::{augment, marginalize, Extrinsics, FilterState, N_MAX};
use crate::Result;

/// Initial standard deviations of the error state.
#[derive(Debug, Clone, Copy)]
pub struct InitialSigmas {
    pub att: f64,
    pub vel: f64,
    pub pos: f64,
    pub bg: f64,
    pub ba: f64,
}

impl Default for InitialSigmas {
    fn default() -> Self {
        Self {
            att: 1e-3,
            vel: 1e-2,
            pos: 1e-3,
            bg: 1e-3,
            ba: 1e-2,
        }
    }
}

impl InitialSigmas {
    pub fn p0(&self) -> DMatrix<f64> {
        let mut p = DMatrix::<f64>::zeros(IMU_DIM, IMU_DIM);
        for (off, sig) in [
            (ATT, self.att),
            (VEL, self.vel),
            (POS, self.pos),
            (BG, self.bg),
            (BA, self.ba),
        ] {
            for a in 0..3 {
                p[(off + a, off + a)] = sig * sig;
            }
        }
        p
    }
}

/// Everything the run loop needs besides the data streams.
#[derive(Debug, Clone, Copy)]
pub struct FilterParams {
    pub n_max: usize,
    pub update: UpdateParams,
    pub noise: NoiseModel,
    pub imu_noise: ImuNoiseSpec,
    pub world: WorldModel,
    pub extrinsics: Extrinsics,
    pub init: InitialSigmas,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            n_max: N_MAX,
            update: UpdateParams::default(),
            noise: NoiseModel {
                sigma_px: 1.0,
                focal: 460.0,
            },
            imu_noise: ImuNoiseSpec::zero(),
            world: WorldModel::default(),
            extrinsics: Extrinsics::identity(),
            init: InitialSigmas::default(),
        }
    }
}

/// Ground-truth initialization: pose from the reference at the first frame
/// time, velocity from the reference if present there, biases zero.
pub fn init_from_groundtruth(gt: &[TimedPose], gt_vel: Option<&[Vec3]>, t0: f64) -> Result<NavState> {
    if gt.is_empty() {
        return Err(Error::EmptyStream("ground truth".into()));
    }
    let idx = gt
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.t - t0).abs().total_cmp(&(b.1.t - t0).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let v_w = match gt_vel {
        Some(v) => v[idx],
        None => {
            // central/one-sided finite difference of the reference positions
            let (a, b) = if idx + 1 < gt.len() {
                (idx, idx + 1)
            } else if idx > 0 {
                (idx - 1, idx)
            } else {
                return Err(Error::Config("ground truth has a single pose".into()));
            };
            (gt[b].p_w - gt[a].p_w) / (gt[b].t - gt[a].t)
        }
    };
    Ok(NavState {
        q_b_w: gt[idx].q_b_w,
        v_w,
        p_w: gt[idx].p_w,
        b_g: Vec3::zeros(),
        b_a: Vec3::zeros(),
    })
}

/// Per-frame snapshot for consistency evaluation.
#[derive(Debug, Clone)]
pub struct Epoch {
    pub t: f64,
    pub nav: NavState,
    /// attitude/position marginal of the body error state
    pub pose_cov: Matrix6<f64>,
}

/// Output of one filter run.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub trajectory: Vec<TimedPose>,
    pub diagnostics: Vec<DiagRecord>,
    pub epochs: Vec<Epoch>,
    /// set when a numerical failure aborted the run early
    pub aborted: Option<String>,
}

fn pose_marginal(cov: &DMatrix<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::<f64>::zeros();
    let blocks = [ATT, POS];
    for (bi, &ri) in blocks.iter().enumerate() {
        for (bj, &rj) in blocks.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * bi + a, 3 * bj + b)] = cov[(ri + a, rj + b)];
                }
            }
        }
    }
    m
}

fn lerp_sample(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
    let w = (t - a.t) / (b.t - a.t);
    ImuSample {
        t,
        omega: a.omega.lerp(&b.omega, w),
        f: a.f.lerp(&b.f, w),
    }
}

struct Propagator<'a> {
    imu: &'a [ImuSample],
    /// index of the sample at or before the current time
    idx: usize,
    /// measurement state at the current time (interpolated at boundaries)
    current: ImuSample,
}

impl<'a> Propagator<'a> {
    fn new(imu: &'a [ImuSample], t0: f64) -> Result<Self> {
        if imu.len() < 2 {
            return Err(Error::EmptyStream("imu".into()));
        }
        let mut idx = 0;
        while idx + 1 < imu.len() && imu[idx + 1].t <= t0 {
            idx += 1;
        }
        let current = if imu[idx].t < t0 && idx + 1 < imu.len() {
            lerp_sample(&imu[idx], &imu[idx + 1], t0)
        } else {
            imu[idx]
        };
        Ok(Self { imu, idx, current })
    }

    /// Advance nominal state and covariance to time `t`.
    fn advance(
        &mut self,
        state: &mut FilterState,
        params: &FilterParams,
        t: f64,
    ) -> Result<()> {
        while self.current.t < t {
            let next_idx = (self.idx + 1).min(self.imu.len() - 1);
            let next_raw = &self.imu[next_idx];
            if next_raw.t <= self.current.t {
                return Err(Error::TimestampOrder {
                    prev: self.current.t,
                    next: t,
                });
            }
            let next = if next_raw.t > t {
                lerp_sample(&self.current, next_raw, t)
            } else {
                *next_raw
            };
            let dt = next.t - self.current.t;
            let fmat = error_transition(&state.nav, &self.current, &params.world);
            let gmat = noise_jacobian(&state.nav);
            let (phi, qd) = discretize(&fmat, &gmat, &params.imu_noise, dt);
            state.nav = propagate_nominal(&state.nav, &self.current, &next, &params.world)?;
            propagate_covariance(&mut state.cov, &phi, &qd)?;
            if next.t == next_raw.t {
                self.idx = next_idx;
            }
            self.current = next;
        }
        Ok(())
    }
}

/// Run the filter over the dataset.  Frames come from the track table; a
/// table with frames but no tracks degenerates to dead reckoning.
pub fn run_filter(
    params: &FilterParams,
    imu: &[ImuSample],
    table: &TrackTable,
    init: &NavState,
) -> Result<FilterRun> {
    let mut state = FilterState::new(init.clone(), params.init.p0(), params.n_max);
    let mut run = FilterRun {
        trajectory: Vec::with_capacity(table.frames.len()),
        diagnostics: Vec::new(),
        epochs: Vec::with_capacity(table.frames.len()),
        aborted: None,
    };
    if table.frames.is_empty() {
        return Err(Error::EmptyStream("frames".into()));
    }

    // last frame per track, for the termination trigger
    let mut last_frame: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    // per frame id: indices of tracks observing it (for forced updates and
    // reference counting)
    let mut frame_tracks: std::collections::HashMap<u64, Vec<usize>> =
        std::collections::HashMap::new();
    for (ti, track) in table.tracks.iter().enumerate() {
        for &(frame, _) in &track.observations {
            frame_tracks.entry(frame).or_default().push(ti);
        }
        let last = track.observations.iter().map(|&(f, _)| f).max().unwrap();
        last_frame.insert(track.feature_id, last);
    }
    let mut consumed = vec![false; table.tracks.len()];

    let mut prop = Propagator::new(imu, table.frames[0].1)?;

    // keep only observations whose clone is still in the window
    let restrict = |track: &FeatureTrack, state: &FilterState| -> FeatureTrack {
        FeatureTrack {
            feature_id: track.feature_id,
            observations: track
                .observations
                .iter()
                .filter(|&&(frame, _)| state.clone_index(frame).is_some())
                .copied()
                .collect(),
        }
    };

    let do_update = |state: &mut FilterState,
                     run: &mut FilterRun,
                     tracks: &[FeatureTrack],
                     t: f64|
     -> Result<()> {
        let mut dropped = Vec::new();
        let outcome = (|| {
            let batch = build_batch(tracks, state, &params.noise, &params.update, &mut dropped)?;
            let batch = gate(&batch, state, &params.update, &mut dropped)?;
            ekf_update(state, &batch)
        })();
        for (feature_id, reason) in &dropped {
            run.diagnostics.push(DiagRecord {
                t,
                kind: DiagKind::Drop,
                feature_id: Some(*feature_id),
                rows: 0,
                residual_norm: 0.0,
                correction_norm: 0.0,
                trace_p: 0.0,
                note: format!("{reason:?}"),
            });
        }
        match outcome {
            Ok(out) => {
                run.diagnostics.push(DiagRecord {
                    t,
                    kind: DiagKind::Update,
                    feature_id: None,
                    rows: out.rows,
                    residual_norm: out.residual_norm,
                    correction_norm: out.correction_norm,
                    trace_p: state.cov.trace(),
                    note: String::new(),
                });
                Ok(())
            }
            Err(Error::NoMeasurements) => {
                run.diagnostics.push(DiagRecord {
                    t,
                    kind: DiagKind::Skip,
                    feature_id: None,
                    rows: 0,
                    residual_norm: 0.0,
                    correction_norm: 0.0,
                    trace_p: state.cov.trace(),
                    note: "no_measurements".into(),
                });
                Ok(())
            }
            Err(e) => Err(e),
        }
    };

    for &(frame_id, t) in &table.frames {
        if let Err(e) = prop.advance(&mut state, params, t) {
            match e {
                Error::CovarianceCorrupt(msg) => {
                    run.aborted = Some(msg);
                    break;
                }
                other => return Err(other),
            }
        }

        // make room: consume tracks touching the oldest clone, then drop it
        if state.clones.len() >= state.n_max {
            let oldest = state.clones[0].clone_id;
            let mut forced = Vec::new();
            let mut forced_idx = Vec::new();
            if let Some(list) = frame_tracks.get(&oldest) {
                for &ti in list {
                    if consumed[ti] {
                        continue;
                    }
                    let cut = restrict(&table.tracks[ti], &state);
                    // too-short leftovers keep living without this clone
                    if cut.observations.len() >= params.update.min_track_len {
                        forced.push(cut);
                        forced_idx.push(ti);
                    }
                }
            }
            if !forced.is_empty() {
                match do_update(&mut state, &mut run, &forced, t) {
                    Ok(()) => {}
                    Err(Error::CovarianceCorrupt(msg)) => {
                        run.aborted = Some(msg);
                        break;
                    }
                    Err(e) => return Err(e),
                }
                for ti in forced_idx {
                    consumed[ti] = true;
                }
            }
            marginalize(&mut state, &[oldest])?;
        }

        augment(&mut state, frame_id, t, &params.extrinsics)?;

        // tracks ending at this frame are ready for their update
        let ready: Vec<usize> = frame_tracks
            .get(&frame_id)
            .map(|list| {
                list.iter()
                    .filter(|&&ti| {
                        !consumed[ti] && last_frame[&table.tracks[ti].feature_id] == frame_id
                    })
                    .copied()
                    .collect()
            })
            .unwrap_or_default();
        if !ready.is_empty() {
            let cut: Vec<FeatureTrack> = ready
                .iter()
                .map(|&ti| restrict(&table.tracks[ti], &state))
                .collect();
            match do_update(&mut state, &mut run, &cut, t) {
                Ok(()) => {}
                Err(Error::CovarianceCorrupt(msg)) => {
                    run.aborted = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            }
            for ti in ready {
                consumed[ti] = true;
            }
        }

        // drop clones no unconsumed track references (keep the newest)
        let mut stale = Vec::new();
        for clone in &state.clones[..state.clones.len().saturating_sub(1)] {
            let referenced = frame_tracks
                .get(&clone.clone_id)
                .map(|list| list.iter().any(|&ti| !consumed[ti]))
                .unwrap_or(false);
            if !referenced {
                stale.push(clone.clone_id);
            }
        }
        if !stale.is_empty() {
            marginalize(&mut state, &stale)?;
        }

        run.trajectory.push(TimedPose {
            t,
            p_w: state.nav.p_w,
            q_b_w: state.nav.q_b_w,
        });
        run.epochs.push(Epoch {
            t,
            nav: state.nav.clone(),
            pose_cov: pose_marginal(&state.cov),
        });
    }

    Ok(run)
}

/// Flat key=value run configuration with fail-fast unknown-key handling.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub imu_path: Option<String>,
    pub tracks_path: Option<String>,
    pub groundtruth_path: Option<String>,
    pub output_dir: Option<String>,
    pub params: FilterParams,
}

impl RunConfig {
    /// Parse `key = value` lines; '#' comments and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", line_no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Config(format!("line {}: invalid {what}: '{value}'", line_no + 1))
            };
            let num = || value.parse::<f64>().map_err(|_| bad(key));
            match key {
                "imu" => cfg.imu_path = Some(value.to_string()),
                "tracks" => cfg.tracks_path = Some(value.to_string()),
                "groundtruth" => cfg.groundtruth_path = Some(value.to_string()),
                "output_dir" => cfg.output_dir = Some(value.to_string()),
                "n_max" => {
                    cfg.params.n_max = value.parse().map_err(|_| bad(key))?;
                    if cfg.params.n_max < 3 {
                        return Err(Error::Config("n_max must be at least 3".into()));
                    }
                }
                "theta_min" => cfg.params.update.theta_min = num()?,
                "min_track_len" => {
                    cfg.params.update.min_track_len = value.parse().map_err(|_| bad(key))?
                }
                "gate_confidence" => {
                    let c = num()?;
                    if !(0.0..1.0).contains(&c) {
                        return Err(Error::Config("gate_confidence must be in (0,1)".into()));
                    }
                    cfg.params.update.gate_confidence = c;
                }
                "sigma_px" => cfg.params.noise.sigma_px = num()?,
                "focal" => cfg.params.noise.focal = num()?,
                "sigma_g" => cfg.params.imu_noise.sigma_g = num()?,
                "sigma_a" => cfg.params.imu_noise.sigma_a = num()?,
                "sigma_wg" => cfg.params.imu_noise.sigma_wg = num()?,
                "sigma_wa" => cfg.params.imu_noise.sigma_wa = num()?,
                "gravity_z" => cfg.params.world.gravity_w = Vec3::new(0.0, 0.0, num()?),
                "init_sigma_att" => cfg.params.init.att = num()?,
                "init_sigma_vel" => cfg.params.init.vel = num()?,
                "init_sigma_pos" => cfg.params.init.pos = num()?,
                "init_sigma_bg" => cfg.params.init.bg = num()?,
                "init_sigma_ba" => cfg.params.init.ba = num()?,
                "camera" => match value {
                    "forward" => cfg.params.extrinsics = crate::sim::forward_camera(),
                    "identity" => cfg.params.extrinsics = Extrinsics::identity(),
                    other => {
                        return Err(Error::Config(format!(
                            "unknown camera '{other}' (expected forward or identity)"
                        )))
                    }
                },
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        line_no + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
