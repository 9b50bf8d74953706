//! Demonstration trajectories: loading, pre-manipulation detection, reward
//! target providers, resampling, retiming, and object-aware warping.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{interp_pose, Pose};

/// Default demonstration frame rate.
pub const DEFAULT_RATE_HZ: f64 = 30.0;
/// Object speed above which the demonstration is considered to have started, m/s.
pub const DEFAULT_V_MIN: f64 = 0.05;
/// Frames between the pre-manipulation pose and the onset of object motion.
pub const DEFAULT_T_OFFSET: usize = 30;
/// Downsampling factor of the sparse-target ablation, demo frames.
pub const DEFAULT_DOWNSAMPLE: usize = 90;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: timestep {t} does not increase (previous {prev})")]
    NotMonotonic { line: usize, t: i64, prev: i64 },
    #[error("trajectory needs at least {need} frames, has {have}")]
    TooShort { need: usize, have: usize },
    #[error("no frame exceeds the speed threshold {v_min} m/s")]
    NoMotion { v_min: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, TrajectoryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoFrame {
    pub t: i64,
    pub pose: Pose,
}

/// Timestamped object poses extracted from a demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrajectory {
    pub frames: Vec<DemoFrame>,
    pub rate_hz: f64,
}

impl DemoTrajectory {
    pub fn new(frames: Vec<DemoFrame>, rate_hz: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(TrajectoryError::TooShort {
                need: 2,
                have: frames.len(),
            });
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(TrajectoryError::Invalid(format!("rate_hz {rate_hz}")));
        }
        for (i, w) in frames.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(TrajectoryError::NotMonotonic {
                    line: i + 2,
                    t: w[1].t,
                    prev: w[0].t,
                });
            }
        }
        if let Some(i) = frames.iter().position(|f| !f.pose.is_finite()) {
            return Err(TrajectoryError::Parse {
                line: i + 1,
                msg: "non-finite pose".into(),
            });
        }
        Ok(Self { frames, rate_hz })
    }

    /// Frames numbered 0.. at `rate_hz`.
    pub fn from_poses(poses: Vec<Pose>, rate_hz: f64) -> Result<Self> {
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| DemoFrame { t: i as i64, pose })
            .collect();
        Self::new(frames, rate_hz)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn pose(&self, index: usize) -> &Pose {
        &self.frames[index.min(self.last_index())].pose
    }

    fn time_of(&self, index: usize) -> f64 {
        self.frames[index].t as f64 / self.rate_hz
    }

    /// Writes the JSONL form, header first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{}", serde_json::json!({ "rate_hz": self.rate_hz })).unwrap();
        for f in &self.frames {
            writeln!(out, "{}", serde_json::to_string(f).unwrap()).unwrap();
        }
        fs::write(path, out).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Parses a demonstration file: optional `{"rate_hz": ..}` header followed by
/// one `{"t": int, "pose": [x,y,z,qw,qx,qy,qz]}` object per line.
pub fn load_demo(path: &Path) -> Result<DemoTrajectory> {
    let text = fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_demo(&text)
}

pub fn parse_demo(text: &str) -> Result<DemoTrajectory> {
    let mut rate_hz = DEFAULT_RATE_HZ;
    let mut frames: Vec<DemoFrame> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| TrajectoryError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if frames.is_empty() {
            if let Some(r) = value.get("rate_hz") {
                rate_hz =
                    r.as_f64()
                        .filter(|r| *r > 0.0)
                        .ok_or_else(|| TrajectoryError::Parse {
                            line,
                            msg: "rate_hz must be a positive number".into(),
                        })?;
                continue;
            }
        }
        let frame: DemoFrame =
            serde_json::from_value(value).map_err(|e| TrajectoryError::Parse {
                line,
                msg: e.to_string(),
            })?;
        if let Some(prev) = frames.last() {
            if frame.t <= prev.t {
                return Err(TrajectoryError::NotMonotonic {
                    line,
                    t: frame.t,
                    prev: prev.t,
                });
            }
        }
        frames.push(frame);
    }
    DemoTrajectory::new(frames, rate_hz)
}

/// Central-difference positional speed per frame; one-sided at the ends.
pub fn frame_speeds(traj: &DemoTrajectory) -> Vec<f64> {
    let n = traj.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            let dt = traj.time_of(b) - traj.time_of(a);
            (traj.frames[b].pose.position - traj.frames[a].pose.position).norm() / dt
        })
        .collect()
}

/// Index of the pre-manipulation frame: `t0 - t_offset`, clamped to the first
/// frame, where `t0` is the first frame moving faster than `v_min`.
pub fn detect_premanip_timestep(
    traj: &DemoTrajectory,
    v_min: f64,
    t_offset: usize,
) -> Result<usize> {
    if !(v_min > 0.0) {
        return Err(TrajectoryError::Invalid(format!(
            "v_min must be positive, got {v_min}"
        )));
    }
    if traj.len() <= t_offset {
        return Err(TrajectoryError::TooShort {
            need: t_offset + 1,
            have: traj.len(),
        });
    }
    let t0 = frame_speeds(traj)
        .iter()
        .position(|&v| v > v_min)
        .ok_or(TrajectoryError::NoMotion { v_min })?;
    Ok(t0.saturating_sub(t_offset))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Dense,
    Fixed,
    Interpolated,
    Downsampled,
}

impl std::str::FromStr for TargetMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dense" => Ok(Self::Dense),
            "fixed" => Ok(Self::Fixed),
            "interpolated" => Ok(Self::Interpolated),
            "downsampled" => Ok(Self::Downsampled),
            other => Err(format!("unknown target mode `{other}`")),
        }
    }
}

impl TargetMode {
    pub const ALL: [TargetMode; 4] = [
        Self::Dense,
        Self::Fixed,
        Self::Interpolated,
        Self::Downsampled,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Fixed => "fixed",
            Self::Interpolated => "interpolated",
            Self::Downsampled => "downsampled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetProviderConfig {
    pub mode: TargetMode,
    /// Frames between consecutive key poses in downsampled mode.
    pub downsample_factor: usize,
    /// Index of the pre-manipulation frame.
    pub tau: usize,
}

impl TargetProviderConfig {
    pub fn new(mode: TargetMode, downsample_factor: usize, tau: usize) -> Self {
        Self {
            mode,
            downsample_factor,
            tau,
        }
    }

    pub fn validate(&self, traj: &DemoTrajectory) -> Result<()> {
        if self.downsample_factor == 0 {
            return Err(TrajectoryError::Invalid(
                "downsample factor must be >= 1".into(),
            ));
        }
        if self.tau > traj.last_index() {
            return Err(TrajectoryError::Invalid(format!(
                "tau {} beyond last frame {}",
                self.tau,
                traj.last_index()
            )));
        }
        Ok(())
    }
}

/// Reward target `t` steps after the episode start. Indices past the end
/// of the trajectory clamp to its final frame.
pub fn target_pose(traj: &DemoTrajectory, cfg: &TargetProviderConfig, t: usize) -> Pose {
    let last = traj.last_index();
    let tau = cfg.tau.min(last);
    match cfg.mode {
        TargetMode::Dense => *traj.pose(tau + t),
        TargetMode::Fixed => *traj.pose(last),
        TargetMode::Interpolated => {
            if last == tau {
                return *traj.pose(last);
            }
            let u = (t as f64 / (last - tau) as f64).clamp(0.0, 1.0);
            interp_pose(traj.pose(tau), traj.pose(last), u).expect("ratio clamped to [0,1]")
        }
        TargetMode::Downsampled => {
            let d = cfg.downsample_factor.max(1);
            *traj.pose(tau + (t / d) * d)
        }
    }
}

/// Poses on a uniform grid at `target_hz`, interpolated between bracketing
/// frames. The final frame is always kept.
pub fn resample(traj: &DemoTrajectory, target_hz: f64) -> Result<DemoTrajectory> {
    if !(target_hz > 0.0) {
        return Err(TrajectoryError::Invalid(format!(
            "target_hz must be positive, got {target_hz}"
        )));
    }
    if target_hz == traj.rate_hz {
        return Ok(traj.clone());
    }
    let start = traj.time_of(0);
    let end = traj.time_of(traj.last_index());
    let first_t = (start * target_hz).round() as i64;
    let mut frames = Vec::new();
    let mut seg = 0usize;
    let mut k = 0i64;
    loop {
        let time = start + k as f64 / target_hz;
        if time > end + 1e-9 {
            break;
        }
        while seg + 1 < traj.last_index() && traj.time_of(seg + 1) <= time {
            seg += 1;
        }
        let (ta, tb) = (traj.time_of(seg), traj.time_of(seg + 1));
        let u = ((time - ta) / (tb - ta)).clamp(0.0, 1.0);
        let pose = interp_pose(&traj.frames[seg].pose, &traj.frames[seg + 1].pose, u)
            .expect("ratio clamped to [0,1]");
        frames.push(DemoFrame {
            t: first_t + k,
            pose,
        });
        k += 1;
    }
    let last_time = start + (k - 1) as f64 / target_hz;
    if (end - last_time).abs() > 1e-9 {
        frames.push(DemoFrame {
            t: first_t + k,
            pose: traj.frames[traj.last_index()].pose,
        });
    } else {
        // snap exactly onto the final frame
        frames.last_mut().unwrap().pose = traj.frames[traj.last_index()].pose;
    }
    DemoTrajectory::new(frames, target_hz)
}

/// Left-multiplies an end-effector trajectory by the correction that carries
/// the demonstrated initial object pose onto the new one.
pub fn oa_warp(ee_traj: &[Pose], demo_obj_init: &Pose, new_obj_init: &Pose) -> Vec<Pose> {
    let relative = new_obj_init.compose(&demo_obj_init.inverse());
    ee_traj.iter().map(|p| relative.compose(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPoint {
    pub time: f64,
    pub q: Vec<f64>,
}

/// Robot configurations over time.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub joint_names: Vec<String>,
    pub points: Vec<JointPoint>,
}

impl JointTrajectory {
    pub fn new(joint_names: Vec<String>, points: Vec<JointPoint>) -> Result<Self> {
        let dim = joint_names.len();
        for (i, p) in points.iter().enumerate() {
            if p.q.len() != dim {
                return Err(TrajectoryError::Parse {
                    line: i + 2,
                    msg: format!("q has {} entries, expected {dim}", p.q.len()),
                });
            }
            if !p.time.is_finite() || p.q.iter().any(|v| !v.is_finite()) {
                return Err(TrajectoryError::Parse {
                    line: i + 2,
                    msg: "non-finite value".into(),
                });
            }
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].time <= w[0].time {
                return Err(TrajectoryError::Invalid(format!(
                    "point {}: time {} does not increase (previous {})",
                    i + 1,
                    w[1].time,
                    w[0].time
                )));
            }
        }
        Ok(Self {
            joint_names,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Linear interpolation in time relative to the first point; holds the
    /// end values outside the covered interval.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let pts = &self.points;
        assert!(!pts.is_empty(), "sampling an empty joint trajectory");
        let time = pts[0].time + t;
        if time <= pts[0].time {
            return pts[0].q.clone();
        }
        let last = pts.last().unwrap();
        if time >= last.time {
            return last.q.clone();
        }
        let i = pts.partition_point(|p| p.time <= time) - 1;
        let (a, b) = (&pts[i], &pts[i + 1]);
        let u = (time - a.time) / (b.time - a.time);
        a.q.iter().zip(&b.q).map(|(x, y)| x + u * (y - x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{}", serde_json::json!({ "joints": self.joint_names })).unwrap();
        for p in &self.points {
            writeln!(out, "{}", serde_json::to_string(p).unwrap()).unwrap();
        }
        fs::write(path, out).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_joint_trajectory(path: &Path) -> Result<JointTrajectory> {
    let text = fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_joint_trajectory(&text)
}

/// `{"joints": [..]}` header followed by `{"time": s, "q": [..]}` lines.
pub fn parse_joint_trajectory(text: &str) -> Result<JointTrajectory> {
    #[derive(Deserialize)]
    struct Header {
        joints: Vec<String>,
    }
    let mut names: Option<Vec<String>> = None;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| TrajectoryError::Parse {
            line,
            msg: e.to_string(),
        };
        if names.is_none() {
            let h: Header = serde_json::from_str(raw).map_err(parse_err)?;
            names = Some(h.joints);
            continue;
        }
        let p: JointPoint = serde_json::from_str(raw).map_err(parse_err)?;
        let dim = names.as_ref().unwrap().len();
        if p.q.len() != dim {
            return Err(TrajectoryError::Parse {
                line,
                msg: format!("q has {} entries, expected {dim}", p.q.len()),
            });
        }
        points.push(p);
    }
    let names = names.ok_or(TrajectoryError::Parse {
        line: 1,
        msg: "missing {\"joints\": [..]} header".into(),
    })?;
    JointTrajectory::new(names, points)
}

/// Stretches segment durations until every finite-difference joint speed is
/// within its limit. Waypoints are unchanged; compliant segments keep their
/// original duration.
pub fn retime_velocity_limited(jt: &JointTrajectory, limits: &[f64]) -> Result<JointTrajectory> {
    if limits.len() != jt.dim() {
        return Err(TrajectoryError::Invalid(format!(
            "{} limits for {} joints",
            limits.len(),
            jt.dim()
        )));
    }
    if limits.iter().any(|l| !(*l > 0.0)) {
        return Err(TrajectoryError::Invalid(
            "velocity limits must be positive".into(),
        ));
    }
    let mut out = jt.clone();
    if jt.points.len() < 2 {
        return Ok(out);
    }
    let mut shift = 0.0;
    for i in 1..jt.points.len() {
        let (a, b) = (&jt.points[i - 1], &jt.points[i]);
        let needed =
            a.q.iter()
                .zip(&b.q)
                .zip(limits)
                .map(|((x, y), l)| (y - x).abs() / l)
                .fold(0.0f64, f64::max);
        let stretch = (needed - (b.time - a.time)).max(0.0);
        shift += stretch;
        let prev = out.points[i - 1].time;
        let mut time = b.time + shift;
        // absorb round-off so that |dq| / dt never exceeds the limit
        while a
            .q
            .iter()
            .zip(&b.q)
            .zip(limits)
            .any(|((x, y), l)| (y - x).abs() / (time - prev) > *l)
        {
            time = time.next_up();
        }
        shift = time - b.time;
        out.points[i].time = time;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn line_traj(static_frames: usize, moving: usize, step: f64) -> DemoTrajectory {
        let mut poses = Vec::new();
        for _ in 0..static_frames {
            poses.push(Pose::identity());
        }
        for k in 1..=moving {
            poses.push(Pose::from_translation(step * k as f64, 0.0, 0.0));
        }
        DemoTrajectory::from_poses(poses, 30.0).unwrap()
    }

    #[test]
    fn load_demo_examples() {
        let ok = "{\"rate_hz\": 30}\n{\"t\": 0, \"pose\": [0,0,0,1,0,0,0]}\n{\"t\": 1, \"pose\": [0.1,0,0,1,0,0,0]}\n";
        assert_eq!(parse_demo(ok).unwrap().len(), 2);
        let bad_q =
            "{\"t\": 0, \"pose\": [0,0,0,1,0,0,0]}\n{\"t\": 1, \"pose\": [0,0,0,0.5,0,0,0]}\n";
        match parse_demo(bad_q) {
            Err(TrajectoryError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let dup = "{\"t\": 0, \"pose\": [0,0,0,1,0,0,0]}\n{\"t\": 0, \"pose\": [0,0,0,1,0,0,0]}\n";
        assert!(matches!(
            parse_demo(dup),
            Err(TrajectoryError::NotMonotonic { line: 2, .. })
        ));
        let nan =
            "{\"t\": 0, \"pose\": [0,0,0,1,0,0,0]}\n{\"t\": 1, \"pose\": [NaN,0,0,1,0,0,0]}\n";
        assert!(parse_demo(nan).is_err());
        let single = "{\"t\": 0, \"pose\": [0,0,0,1,0,0,0]}\n";
        assert!(matches!(
            parse_demo(single),
            Err(TrajectoryError::TooShort { .. })
        ));
    }

    #[test]
    fn premanip_detection() {
        // still through frame 100, then 1 cm/frame at 30 Hz = 0.3 m/s
        let traj = line_traj(101, 60, 0.01);
        let speeds = frame_speeds(&traj);
        // direct scan oracle
        let mut t0 = None;
        for (i, v) in speeds.iter().enumerate() {
            if *v > 0.05 {
                t0 = Some(i);
                break;
            }
        }
        assert_eq!(t0, Some(100));
        assert_eq!(detect_premanip_timestep(&traj, 0.05, 30).unwrap(), 70);

        let early = line_traj(10, 60, 0.01);
        assert_eq!(detect_premanip_timestep(&early, 0.05, 30).unwrap(), 0);

        let still = line_traj(50, 0, 0.0);
        assert!(matches!(
            detect_premanip_timestep(&still, 0.05, 30),
            Err(TrajectoryError::NoMotion { .. })
        ));
        assert!(detect_premanip_timestep(&still, 0.0, 3).is_err());
        assert!(matches!(
            detect_premanip_timestep(&early, 0.05, 500),
            Err(TrajectoryError::TooShort { .. })
        ));
    }

    #[test]
    fn target_modes() {
        let traj = line_traj(10, 200, 0.001);
        let tau = 5;
        let last = traj.last_index();
        let dense = TargetProviderConfig::new(TargetMode::Dense, 90, tau);
        assert_eq!(target_pose(&traj, &dense, 0), *traj.pose(tau));
        assert_eq!(target_pose(&traj, &dense, 10_000), *traj.pose(last));
        let fixed = TargetProviderConfig::new(TargetMode::Fixed, 90, tau);
        assert_eq!(target_pose(&traj, &fixed, 3), *traj.pose(last));
        let down = TargetProviderConfig::new(TargetMode::Downsampled, 90, tau);
        assert_eq!(target_pose(&traj, &down, 95), *traj.pose(tau + 90));
        assert_eq!(target_pose(&traj, &down, 89), *traj.pose(tau));
        let interp = TargetProviderConfig::new(TargetMode::Interpolated, 90, tau);
        let mid = target_pose(&traj, &interp, (last - tau) / 2);
        let expected = interp_pose(
            traj.pose(tau),
            traj.pose(last),
            ((last - tau) / 2) as f64 / (last - tau) as f64,
        )
        .unwrap();
        assert!((mid.position - expected.position).norm() < 1e-15);
        assert_eq!(
            target_pose(&traj, &interp, 10 * last).position,
            traj.pose(last).position
        );
        assert!(TargetProviderConfig::new(TargetMode::Dense, 0, 0)
            .validate(&traj)
            .is_err());
        assert!(TargetProviderConfig::new(TargetMode::Dense, 1, last + 1)
            .validate(&traj)
            .is_err());
    }

    #[test]
    fn oa_warp_cases() {
        let ee: Vec<Pose> = (0..5)
            .map(|i| Pose::rot_z(0.1 * i as f64).with_position(Vec3::new(0.1 * i as f64, 0.2, 0.0)))
            .collect();
        let init = Pose::rot_z(0.3).with_position(Vec3::new(0.4, 0.1, 0.0));
        for (a, b) in oa_warp(&ee, &init, &init).iter().zip(&ee) {
            assert!((a.position - b.position).norm() < 1e-12);
            assert!(a.angle_to(b) < 1e-7);
        }
        let shifted = oa_warp(
            &ee,
            &Pose::identity(),
            &Pose::from_translation(0.1, 0.0, 0.0),
        );
        for (a, b) in shifted.iter().zip(&ee) {
            assert!((a.position - b.position - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        }
        let rot = 20f64.to_radians();
        let rotated = oa_warp(&ee, &Pose::identity(), &Pose::rot_z(rot));
        let m = Pose::rot_z(rot).orientation.to_rotation_matrix();
        for (a, b) in rotated.iter().zip(&ee) {
            assert!((a.position - m * b.position).norm() < 1e-12);
            assert!(
                (a.angle_to(b) - rot).abs() < 1e-7
                    || (a.angle_to(&Pose::rot_z(rot).compose(b))) < 1e-7
            );
        }
    }

    #[test]
    fn retime_examples() {
        let names = vec!["a".to_string()];
        let jt = JointTrajectory::new(
            names.clone(),
            vec![
                JointPoint {
                    time: 0.0,
                    q: vec![0.0],
                },
                JointPoint {
                    time: 0.1,
                    q: vec![0.1],
                },
                JointPoint {
                    time: 0.2,
                    q: vec![1.1],
                },
                JointPoint {
                    time: 0.3,
                    q: vec![1.2],
                },
            ],
        )
        .unwrap();
        let out = retime_velocity_limited(&jt, &[2.0]).unwrap();
        let times: Vec<f64> = out.points.iter().map(|p| p.time).collect();
        assert!((times[1] - 0.1).abs() < 1e-15);
        assert!((times[2] - times[1] - 0.5).abs() < 1e-12);
        assert!((times[3] - times[2] - 0.1).abs() < 1e-12);

        let within = retime_velocity_limited(&jt, &[100.0]).unwrap();
        assert_eq!(within, jt);

        let two = JointTrajectory::new(
            vec!["a".into(), "b".into()],
            vec![
                JointPoint {
                    time: 0.0,
                    q: vec![0.0, 0.0],
                },
                JointPoint {
                    time: 0.1,
                    q: vec![1.0, 0.2],
                },
            ],
        )
        .unwrap();
        let out = retime_velocity_limited(&two, &[2.0, 0.5]).unwrap();
        assert!((out.points[1].time - 0.5).abs() < 1e-12);
        assert!(retime_velocity_limited(&two, &[1.0]).is_err());
    }

    #[test]
    fn resample_examples() {
        let traj = line_traj(3, 4, 0.01);
        assert_eq!(resample(&traj, 30.0).unwrap(), traj);
        let two = DemoTrajectory::from_poses(
            vec![
                Pose::identity(),
                Pose::rot_z(0.5).with_position(Vec3::new(0.1, 0.0, 0.0)),
            ],
            30.0,
        )
        .unwrap();
        let up = resample(&two, 60.0).unwrap();
        assert_eq!(up.len(), 3);
        let mid = interp_pose(&two.frames[0].pose, &two.frames[1].pose, 0.5).unwrap();
        assert!((up.frames[1].pose.position - mid.position).norm() < 1e-15);
        assert!(up.frames[1].pose.angle_to(&mid) < 1e-7);
        let odd = line_traj(4, 4, 0.01); // 8 frames, last index 7
        let down = resample(&odd, 15.0).unwrap();
        let kept: Vec<_> = down.frames.iter().map(|f| f.pose.position.x).collect();
        let expect: Vec<_> = [0usize, 2, 4, 6, 7]
            .iter()
            .map(|&i| odd.frames[i].pose.position.x)
            .collect();
        for (a, b) in kept.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let even = line_traj(4, 4, 0.01);
        let even =
            DemoTrajectory::from_poses(even.frames[..7].iter().map(|f| f.pose).collect(), 30.0)
                .unwrap();
        assert_eq!(resample(&even, 15.0).unwrap().len(), 4);
    }

    #[test]
    fn joint_trajectory_io_and_sampling() {
        let text = "{\"joints\": [\"a\", \"b\"]}\n{\"time\": 0.0, \"q\": [0, 0]}\n{\"time\": 1.0, \"q\": [1, 2]}\n";
        let jt = parse_joint_trajectory(text).unwrap();
        assert_eq!(jt.sample(0.5), vec![0.5, 1.0]);
        assert_eq!(jt.sample(5.0), vec![1.0, 2.0]);
        assert_eq!(jt.sample(-1.0), vec![0.0, 0.0]);
        let bad = "{\"joints\": [\"a\"]}\n{\"time\": 0.0, \"q\": [0, 0]}\n";
        assert!(matches!(
            parse_joint_trajectory(bad),
            Err(TrajectoryError::Parse { line: 2, .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("jt.jsonl");
        jt.save(&p).unwrap();
        assert_eq!(load_joint_trajectory(&p).unwrap(), jt);
    }
}
