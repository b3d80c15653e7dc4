//! File formats: IMU CSV, feature-track CSV, TUM-style trajectory text and
//! the diagnostics log.
//!
//! All files are UTF-8 with LF line endings; lines starting with `#` and
//! blank lines are ignored.  Timestamps are integer nanoseconds on disk and
//! seconds in memory.  Floats are written with 17 significant digits so a
//! write/read round trip reproduces every value bit-for-bit.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use crate::error::Error;
use crate::geom::{quat_from_parts, Quat, Vec3};
use crate::po_geometry::NormalizedObservation;
use crate::propagation::ImuSample;
use crate::sim::TrackRow;
use crate::update::FeatureTrack;
use crate::Result;

/// 17 significant digits: exact f64 round trip.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn ns_to_s(ns: i64) -> f64 {
    ns as f64 * 1e-9
}

fn s_to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

struct LineReader {
    path: String,
    lines: std::io::Lines<BufReader<std::fs::File>>,
    line_no: usize,
}

impl LineReader {
    fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            lines: BufReader::new(std::fs::File::open(path)?).lines(),
            line_no: 0,
        })
    }

    /// Next non-comment, non-blank line with its 1-based line number.
    fn next_data(&mut self) -> Result<Option<(usize, String)>> {
        loop {
            self.line_no += 1;
            match self.lines.next() {
                None => return Ok(None),
                Some(line) => {
                    let line = line?;
                    let trimmed = line.trim();
                    if trimmed.is_empty() || trimmed.starts_with('#') {
                        continue;
                    }
                    return Ok(Some((self.line_no, trimmed.to_string())));
                }
            }
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }
}

fn split_fields<'a>(
    reader: &LineReader,
    line_no: usize,
    line: &'a str,
    sep: char,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = if sep == ' ' {
        line.split_whitespace().collect()
    } else {
        line.split(sep).map(str::trim).collect()
    };
    if fields.len() != expected {
        return Err(reader.err(
            line_no,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_field<T: std::str::FromStr>(
    reader: &LineReader,
    line_no: usize,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.parse()
        .map_err(|_| reader.err(line_no, format!("invalid {name}: '{raw}'")))
}

/// Load `timestamp_ns,wx,wy,wz,ax,ay,az` rows; timestamps become seconds
/// and must be strictly increasing.
pub fn load_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let mut reader = LineReader::open(path)?;
    let mut out: Vec<ImuSample> = Vec::new();
    while let Some((line_no, line)) = reader.next_data()? {
        let f = split_fields(&reader, line_no, &line, ',', 7)?;
        let ns: i64 = parse_field(&reader, line_no, "timestamp_ns", f[0])?;
        let mut vals = [0.0f64; 6];
        for (slot, raw) in vals.iter_mut().zip(&f[1..]) {
            *slot = parse_field(&reader, line_no, "measurement", raw)?;
        }
        let t = ns_to_s(ns);
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(Error::TimestampOrder { prev: prev.t, next: t });
            }
        }
        out.push(ImuSample {
            t,
            omega: Vec3::new(vals[0], vals[1], vals[2]),
            f: Vec3::new(vals[3], vals[4], vals[5]),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyStream(reader.path));
    }
    Ok(out)
}

pub fn save_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut buf = String::from("# timestamp_ns,wx,wy,wz,ax,ay,az\n");
    for s in samples {
        writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            s_to_ns(s.t),
            fmt_f64(s.omega.x),
            fmt_f64(s.omega.y),
            fmt_f64(s.omega.z),
            fmt_f64(s.f.x),
            fmt_f64(s.f.y),
            fmt_f64(s.f.z),
        )
        .expect("string write");
    }
    write_atomic(path, &buf)
}

/// Tracks plus the distinct frame schedule they reference.
#[derive(Debug, Clone)]
pub struct TrackTable {
    /// grouped by feature id, observations ordered by frame
    pub tracks: Vec<FeatureTrack>,
    /// (frame_id, timestamp_s), sorted by time
    pub frames: Vec<(u64, f64)>,
}

/// Load `feature_id,frame_id,timestamp_ns,x_norm,y_norm` rows, grouping by
/// feature regardless of row order.
pub fn load_tracks_csv(path: &Path) -> Result<TrackTable> {
    let mut reader = LineReader::open(path)?;
    let mut by_feature: std::collections::BTreeMap<u64, Vec<(u64, NormalizedObservation)>> =
        std::collections::BTreeMap::new();
    let mut frames: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    let mut any = false;
    while let Some((line_no, line)) = reader.next_data()? {
        let f = split_fields(&reader, line_no, &line, ',', 5)?;
        let feature_id: u64 = parse_field(&reader, line_no, "feature_id", f[0])?;
        let frame_id: u64 = parse_field(&reader, line_no, "frame_id", f[1])?;
        let ns: i64 = parse_field(&reader, line_no, "timestamp_ns", f[2])?;
        let x: f64 = parse_field(&reader, line_no, "x_norm", f[3])?;
        let y: f64 = parse_field(&reader, line_no, "y_norm", f[4])?;
        let obs_list = by_feature.entry(feature_id).or_default();
        if obs_list.iter().any(|&(fr, _)| fr == frame_id) {
            return Err(Error::DuplicateObservation {
                feature_id,
                frame_id,
            });
        }
        obs_list.push((frame_id, NormalizedObservation::new(x, y)));
        frames.insert(frame_id, ns_to_s(ns));
        any = true;
    }
    if !any {
        return Err(Error::EmptyStream(reader.path));
    }
    let tracks = by_feature
        .into_iter()
        .map(|(feature_id, mut observations)| {
            observations.sort_by_key(|&(frame, _)| frame);
            FeatureTrack {
                feature_id,
                observations,
            }
        })
        .collect();
    let mut frames: Vec<(u64, f64)> = frames.into_iter().collect();
    frames.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(TrackTable { tracks, frames })
}

pub fn save_tracks_csv(path: &Path, rows: &[TrackRow]) -> Result<()> {
    let mut buf = String::from("# feature_id,frame_id,timestamp_ns,x_norm,y_norm\n");
    for r in rows {
        writeln!(
            buf,
            "{},{},{},{},{}",
            r.feature_id,
            r.frame_id,
            s_to_ns(r.t),
            fmt_f64(r.obs.x),
            fmt_f64(r.obs.y),
        )
        .expect("string write");
    }
    write_atomic(path, &buf)
}

/// One timestamped pose of a trajectory file.
#[derive(Debug, Clone, Copy)]
pub struct TimedPose {
    pub t: f64,
    pub p_w: Vec3,
    pub q_b_w: Quat,
}

/// Load `timestamp_s tx ty tz qx qy qz qw` lines (TUM convention);
/// timestamps must be strictly increasing and quaternions near unit norm.
pub fn load_trajectory_tum(path: &Path) -> Result<Vec<TimedPose>> {
    let mut reader = LineReader::open(path)?;
    let mut out: Vec<TimedPose> = Vec::new();
    while let Some((line_no, line)) = reader.next_data()? {
        let f = split_fields(&reader, line_no, &line, ' ', 8)?;
        let mut vals = [0.0f64; 8];
        for (slot, raw) in vals.iter_mut().zip(&f) {
            *slot = parse_field(&reader, line_no, "pose field", raw)?;
        }
        let t = vals[0];
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(Error::TimestampOrder { prev: prev.t, next: t });
            }
        }
        let (q, _) = quat_from_parts(vals[7], vals[4], vals[5], vals[6]);
        out.push(TimedPose {
            t,
            p_w: Vec3::new(vals[1], vals[2], vals[3]),
            q_b_w: q,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyStream(reader.path));
    }
    Ok(out)
}

pub fn save_trajectory_tum(path: &Path, poses: &[TimedPose]) -> Result<()> {
    let mut buf = String::from("# timestamp_s tx ty tz qx qy qz qw\n");
    for p in poses {
        let q = p.q_b_w.quaternion();
        writeln!(
            buf,
            "{} {} {} {} {} {} {} {}",
            fmt_f64(p.t),
            fmt_f64(p.p_w.x),
            fmt_f64(p.p_w.y),
            fmt_f64(p.p_w.z),
            fmt_f64(q.i),
            fmt_f64(q.j),
            fmt_f64(q.k),
            fmt_f64(q.w),
        )
        .expect("string write");
    }
    write_atomic(path, &buf)
}

/// One diagnostics event.  `update` rows carry the numeric columns; `drop`
/// and `skip` rows carry a reason code, so every rejected track and skipped
/// update is accounted for.
#[derive(Debug, Clone)]
pub struct DiagRecord {
    pub t: f64,
    pub kind: DiagKind,
    pub feature_id: Option<u64>,
    pub rows: usize,
    pub residual_norm: f64,
    pub correction_norm: f64,
    pub trace_p: f64,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagKind {
    Update,
    Drop,
    Skip,
    Flag,
}

impl std::fmt::Display for DiagKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Update => "update",
            Self::Drop => "drop",
            Self::Skip => "skip",
            Self::Flag => "flag",
        })
    }
}

pub fn save_diagnostics_csv(path: &Path, records: &[DiagRecord]) -> Result<()> {
    let mut buf = String::from(
        "# timestamp_ns,kind,feature_id,rows,residual_norm,correction_norm,trace_p,note\n",
    );
    for r in records {
        let feature = r.feature_id.map(|id| id.to_string()).unwrap_or_default();
        writeln!(
            buf,
            "{},{},{},{},{},{},{},{}",
            s_to_ns(r.t),
            r.kind,
            feature,
            r.rows,
            fmt_f64(r.residual_norm),
            fmt_f64(r.correction_norm),
            fmt_f64(r.trace_p),
            r.note,
        )
        .expect("string write");
    }
    write_atomic(path, &buf)
}

/// Write via a temp file + rename so readers never observe partial output.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("po_msckf_io_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn imu_row_maps_fields_directly() {
        let path = tmp_path("imu_basic.csv");
        std::fs::write(&path, "# header\n1403636579758555392,0.0,0.0,0.0,0.0,0.0,9.81\n").unwrap();
        let samples = load_imu_csv(&path).unwrap();
        assert_eq!(samples.len(), 1);
        assert!((samples[0].t - 1.403636579758555392e9).abs() < 1e-6);
        assert_eq!(samples[0].f, Vec3::new(0.0, 0.0, 9.81));
        assert_eq!(samples[0].omega, Vec3::zeros());
    }

    #[test]
    fn empty_imu_file_is_empty_stream() {
        let path = tmp_path("imu_empty.csv");
        std::fs::write(&path, "# only comments\n\n").unwrap();
        assert!(matches!(load_imu_csv(&path), Err(Error::EmptyStream(_))));
    }

    #[test]
    fn malformed_imu_row_reports_line_number() {
        let path = tmp_path("imu_bad.csv");
        std::fs::write(&path, "# header\n1000,0,0,0,0,0,9.81\n2000,0,0,oops,0,0,9.81\n").unwrap();
        match load_imu_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotonic_imu_rejected() {
        let path = tmp_path("imu_mono.csv");
        std::fs::write(&path, "2000,0,0,0,0,0,9.81\n1000,0,0,0,0,0,9.81\n").unwrap();
        assert!(matches!(
            load_imu_csv(&path),
            Err(Error::TimestampOrder { .. })
        ));
    }

    #[test]
    fn imu_round_trip_is_exact() {
        let samples: Vec<ImuSample> = (0..200)
            .map(|k| ImuSample {
                t: k as f64 * 0.005,
                omega: Vec3::new(0.1 * k as f64, -0.2, std::f64::consts::PI),
                f: Vec3::new(1.0 / 3.0, 9.81, -2.5e-7),
            })
            .collect();
        let path = tmp_path("imu_rt.csv");
        save_imu_csv(&path, &samples).unwrap();
        let back = load_imu_csv(&path).unwrap();
        assert_eq!(samples.len(), back.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.omega, b.omega);
            assert_eq!(a.f, b.f);
            assert!((a.t - b.t).abs() < 1e-9);
        }
    }

    #[test]
    fn tracks_group_by_feature_regardless_of_row_order() {
        let path = tmp_path("tracks_interleave.csv");
        std::fs::write(
            &path,
            "2,1,100000000,0.1,0.2\n1,0,0,0.3,0.4\n2,0,0,0.5,0.6\n1,1,100000000,0.7,0.8\n",
        )
        .unwrap();
        let table = load_tracks_csv(&path).unwrap();
        assert_eq!(table.tracks.len(), 2);
        assert_eq!(table.tracks[0].feature_id, 1);
        assert_eq!(table.tracks[0].observations.len(), 2);
        assert_eq!(table.tracks[0].observations[0].0, 0);
        assert_eq!(table.tracks[1].observations[1].0, 1);
        assert_eq!(table.frames, vec![(0, 0.0), (1, 0.1)]);
    }

    #[test]
    fn duplicate_observation_rejected() {
        let path = tmp_path("tracks_dup.csv");
        std::fs::write(&path, "1,0,0,0.1,0.2\n1,0,0,0.3,0.4\n").unwrap();
        assert!(matches!(
            load_tracks_csv(&path),
            Err(Error::DuplicateObservation {
                feature_id: 1,
                frame_id: 0
            })
        ));
    }

    #[test]
    fn tracks_round_trip_is_exact() {
        let rows: Vec<TrackRow> = (0..50)
            .map(|k| TrackRow {
                feature_id: k / 5,
                frame_id: k % 5,
                t: (k % 5) as f64 * 0.1,
                obs: NormalizedObservation::new(0.01 * k as f64 - 0.3, (k as f64).sin() * 0.2),
            })
            .collect();
        let path = tmp_path("tracks_rt.csv");
        save_tracks_csv(&path, &rows).unwrap();
        let table = load_tracks_csv(&path).unwrap();
        let mut n = 0;
        for track in &table.tracks {
            for &(frame, obs) in &track.observations {
                let orig = rows
                    .iter()
                    .find(|r| r.feature_id == track.feature_id && r.frame_id == frame)
                    .unwrap();
                assert_eq!(obs.x, orig.obs.x);
                assert_eq!(obs.y, orig.obs.y);
                n += 1;
            }
        }
        assert_eq!(n, rows.len());
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let poses: Vec<TimedPose> = (0..20)
            .map(|k| TimedPose {
                t: k as f64 * 0.05,
                p_w: Vec3::new(k as f64, -0.5 * k as f64, 0.25),
                q_b_w: crate::geom::quat_exp(&Vec3::new(0.0, 0.0, 0.1 * k as f64)),
            })
            .collect();
        let path = tmp_path("traj_rt.txt");
        save_trajectory_tum(&path, &poses).unwrap();
        let back = load_trajectory_tum(&path).unwrap();
        assert_eq!(poses.len(), back.len());
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.p_w, b.p_w);
            assert!(crate::geom::error_angle(&a.q_b_w, &b.q_b_w).norm() < 1e-15);
        }
    }

    #[test]
    fn diagnostics_file_contains_reason_codes() {
        let records = vec![
            DiagRecord {
                t: 0.1,
                kind: DiagKind::Update,
                feature_id: None,
                rows: 12,
                residual_norm: 0.01,
                correction_norm: 0.002,
                trace_p: 1.5,
                note: String::new(),
            },
            DiagRecord {
                t: 0.1,
                kind: DiagKind::Drop,
                feature_id: Some(42),
                rows: 0,
                residual_norm: 0.0,
                correction_norm: 0.0,
                trace_p: 0.0,
                note: "gated".into(),
            },
        ];
        let path = tmp_path("diag.csv");
        save_diagnostics_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("update"));
        assert!(text.contains("drop,42"));
        assert!(text.contains("gated"));
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
    }
}
