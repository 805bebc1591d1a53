//! Drilling trajectories: discretization, world-to-mechanism transform, file
//! formats and a deterministic synthetic generator.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{axis_angles, drill_axis, DesignVector, TaskPose};
use crate::units::{format_float, rad_to_deg_exact};

pub const DEFAULT_POINTS: usize = 30;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory {0}: entry and target coincide")]
    Degenerate(String),
    #[error("trajectory {id}: needs at least 2 points, got {n_pts}")]
    TooFewPoints { id: String, n_pts: usize },
    #[error("synthetic region is empty")]
    EmptyRegion,
    #[error("synthetic bundle needs at least one trajectory")]
    NoTrajectories,
    #[error("trajectory CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("trajectory CSV is missing column {0}")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Straight drilling path with a constant drill-axis orientation, in the
/// world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DrillTrajectory {
    pub id: String,
    pub entry: Vector3<f64>,
    pub target: Vector3<f64>,
    pub psi: f64,
    pub theta: f64,
    pub n_pts: usize,
}

impl DrillTrajectory {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.n_pts < 2 {
            return Err(TrajectoryError::TooFewPoints {
                id: self.id.clone(),
                n_pts: self.n_pts,
            });
        }
        if self.entry == self.target {
            return Err(TrajectoryError::Degenerate(self.id.clone()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.target - self.entry).norm()
    }

    /// `n_pts` equally spaced poses from entry to target inclusive.
    pub fn discretize(&self) -> Result<Vec<TaskPose>, TrajectoryError> {
        self.validate()?;
        let span = self.target - self.entry;
        let last = (self.n_pts - 1) as f64;
        Ok((0..self.n_pts)
            .map(|k| {
                let position = if k + 1 == self.n_pts {
                    self.target
                } else {
                    self.entry + span * (k as f64) / last
                };
                TaskPose {
                    position,
                    psi: self.psi,
                    theta: self.theta,
                }
            })
            .collect())
    }
}

pub fn discretize(traj: &DrillTrajectory) -> Result<Vec<TaskPose>, TrajectoryError> {
    traj.discretize()
}

/// One discretized point, tagged with its trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub traj_id: String,
    pub point_index: usize,
    pub pose: TaskPose,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBundle {
    pub trajectories: Vec<DrillTrajectory>,
}

impl TrajectoryBundle {
    pub fn new(trajectories: Vec<DrillTrajectory>) -> Self {
        Self { trajectories }
    }

    /// Total number of points over all trajectories.
    pub fn point_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.n_pts).sum()
    }

    /// All points in the world frame, trajectory by trajectory.
    pub fn world_points(&self) -> Result<Vec<TrajectoryPoint>, TrajectoryError> {
        let mut out = Vec::with_capacity(self.point_count());
        for traj in &self.trajectories {
            for (k, pose) in traj.discretize()?.into_iter().enumerate() {
                out.push(TrajectoryPoint {
                    traj_id: traj.id.clone(),
                    point_index: k,
                    pose,
                });
            }
        }
        Ok(out)
    }
}

/// Pure translation by the base position `m`; orientation is unchanged.
pub fn pose_to_mechanism(pose: &TaskPose, design: &DesignVector) -> TaskPose {
    TaskPose {
        position: pose.position - Vector3::from(design.m),
        ..*pose
    }
}

pub fn pose_to_world(pose: &TaskPose, design: &DesignVector) -> TaskPose {
    TaskPose {
        position: pose.position + Vector3::from(design.m),
        ..*pose
    }
}

pub fn points_to_mechanism(
    points: &[TrajectoryPoint],
    design: &DesignVector,
) -> Vec<TrajectoryPoint> {
    points
        .iter()
        .map(|p| TrajectoryPoint {
            traj_id: p.traj_id.clone(),
            point_index: p.point_index,
            pose: pose_to_mechanism(&p.pose, design),
        })
        .collect()
}

pub fn to_mechanism_frame(
    bundle: &TrajectoryBundle,
    design: &DesignVector,
) -> Result<Vec<TrajectoryPoint>, TrajectoryError> {
    Ok(points_to_mechanism(&bundle.world_points()?, design))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryRecord {
    traj_id: String,
    entry_x: f64,
    entry_y: f64,
    entry_z: f64,
    target_x: f64,
    target_y: f64,
    target_z: f64,
    psi_deg: f64,
    theta_deg: f64,
    n_pts: usize,
}

impl From<&DrillTrajectory> for TrajectoryRecord {
    fn from(t: &DrillTrajectory) -> Self {
        Self {
            traj_id: t.id.clone(),
            entry_x: t.entry.x,
            entry_y: t.entry.y,
            entry_z: t.entry.z,
            target_x: t.target.x,
            target_y: t.target.y,
            target_z: t.target.z,
            psi_deg: rad_to_deg_exact(t.psi),
            theta_deg: rad_to_deg_exact(t.theta),
            n_pts: t.n_pts,
        }
    }
}

impl TrajectoryRecord {
    fn into_trajectory(self) -> Result<DrillTrajectory, TrajectoryError> {
        let t = DrillTrajectory {
            id: self.traj_id,
            entry: Vector3::new(self.entry_x, self.entry_y, self.entry_z),
            target: Vector3::new(self.target_x, self.target_y, self.target_z),
            psi: self.psi_deg.to_radians(),
            theta: self.theta_deg.to_radians(),
            n_pts: self.n_pts,
        };
        t.validate()?;
        Ok(t)
    }
}

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "traj_id",
    "entry_x",
    "entry_y",
    "entry_z",
    "target_x",
    "target_y",
    "target_z",
    "psi_deg",
    "theta_deg",
    "n_pts",
];

/// Reads the trajectory CSV (header required, `#` lines ignored).
pub fn read_csv<R: Read>(input: R) -> Result<TrajectoryBundle, TrajectoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    for column in TRAJECTORY_HEADER {
        if !headers.iter().any(|h| h == column) {
            return Err(TrajectoryError::MissingColumn(column));
        }
    }
    let mut trajectories = Vec::new();
    for record in reader.deserialize::<TrajectoryRecord>() {
        trajectories.push(record?.into_trajectory()?);
    }
    Ok(TrajectoryBundle { trajectories })
}

/// Writes the canonical CSV form: shortest round-trip decimals, angles in
/// degrees.
pub fn write_csv<W: Write>(bundle: &TrajectoryBundle, out: W) -> Result<(), TrajectoryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for t in &bundle.trajectories {
        let r = TrajectoryRecord::from(t);
        w.write_record([
            r.traj_id,
            format_float(r.entry_x),
            format_float(r.entry_y),
            format_float(r.entry_z),
            format_float(r.target_x),
            format_float(r.target_y),
            format_float(r.target_z),
            format_float(r.psi_deg),
            format_float(r.theta_deg),
            r.n_pts.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Optional metadata carried by the JSON form of a bundle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_units")]
    pub units: String,
}

fn default_units() -> String {
    "mm".to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    world_frame: Option<WorldFrame>,
    trajectories: Vec<TrajectoryRecord>,
}

pub fn read_json(s: &str) -> Result<(TrajectoryBundle, Option<WorldFrame>), TrajectoryError> {
    let file: BundleFile = serde_json::from_str(s).map_err(|e| TrajectoryError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let trajectories = file
        .trajectories
        .into_iter()
        .map(TrajectoryRecord::into_trajectory)
        .collect::<Result<_, _>>()?;
    Ok((TrajectoryBundle { trajectories }, file.world_frame))
}

pub fn write_json(bundle: &TrajectoryBundle, world_frame: Option<&WorldFrame>) -> String {
    let file = BundleFile {
        world_frame: world_frame.cloned(),
        trajectories: bundle
            .trajectories
            .iter()
            .map(TrajectoryRecord::from)
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("bundle serializes");
    s.push('\n');
    s
}

/// Reads a bundle, choosing the JSON form when the text starts with `{`.
pub fn read_bundle_str(s: &str) -> Result<TrajectoryBundle, TrajectoryError> {
    if s.trim_start().starts_with('{') {
        Ok(read_json(s)?.0)
    } else {
        read_csv(s.as_bytes())
    }
}

/// Sampling region for synthetic pedicle-style trajectories (world frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRegion {
    /// Entry points are drawn inside this box (mm).
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    /// Drill axes stay within this cone.
    pub cone_axis: [f64; 3],
    pub cone_half_angle_deg: f64,
    /// Lateral distance of the left/right entries from the pair midline (mm).
    pub lateral_offset: f64,
    pub min_length: f64,
    pub max_length: f64,
    pub n_pts: usize,
}

impl Default for SyntheticRegion {
    fn default() -> Self {
        Self {
            center: [-160.0, -175.0, 60.0],
            half_extent: [20.0, 20.0, 15.0],
            cone_axis: [0.0, 0.0, 1.0],
            cone_half_angle_deg: 20.0,
            lateral_offset: 12.0,
            min_length: 25.0,
            max_length: 35.0,
            n_pts: DEFAULT_POINTS,
        }
    }
}

impl SyntheticRegion {
    fn is_empty(&self) -> bool {
        let axis = Vector3::from(self.cone_axis);
        !(self.half_extent.iter().all(|h| *h > 0.0)
            && self.cone_half_angle_deg > 0.0
            && self.cone_half_angle_deg < 180.0
            && axis.norm() > 0.0
            && self.min_length > 0.0
            && self.max_length >= self.min_length
            && self.n_pts >= 2
            && self.center.iter().all(|c| c.is_finite()))
    }
}

/// Deterministic synthetic bundle: trajectories come in left/right pairs
/// whose entries straddle a common midline and whose axes tilt medially.
pub fn synthetic_bundle(
    seed: u64,
    count: usize,
    region: &SyntheticRegion,
) -> Result<TrajectoryBundle, TrajectoryError> {
    if count == 0 {
        return Err(TrajectoryError::NoTrajectories);
    }
    if region.is_empty() {
        return Err(TrajectoryError::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vector3::from(region.cone_axis).normalize();
    // basis perpendicular to the cone axis, first vector as close to x as possible
    let reference = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let lateral_dir = (reference - axis * axis.dot(&reference)).normalize();
    let other_dir = axis.cross(&lateral_dir);
    let half_angle = region.cone_half_angle_deg.to_radians();
    let lateral = region.lateral_offset.min(0.5 * region.half_extent[0]);

    let mut trajectories = Vec::with_capacity(count);
    let mut midline = Vector3::zeros();
    for i in 0..count {
        let pair = i / 2;
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        if i % 2 == 0 {
            midline = Vector3::from_fn(|k, _| {
                let margin = if k == 0 { lateral } else { 0.0 };
                let h = region.half_extent[k] - margin;
                region.center[k] + rng.random_range(-h..=h)
            });
        }
        let entry = midline + Vector3::x() * (side * lateral);
        let tilt = half_angle * rng.random_range(0.3..0.9);
        let medial = if side > 0.0 {
            std::f64::consts::PI
        } else {
            0.0
        };
        let azimuth = medial + rng.random_range(-0.35..0.35);
        let dir = (axis * tilt.cos()
            + (lateral_dir * azimuth.cos() + other_dir * azimuth.sin()) * tilt.sin())
        .normalize();
        let (psi, theta) = axis_angles(&dir);
        // keep angles on values that survive the degree file format exactly
        let psi = rad_to_deg_exact(psi).to_radians();
        let theta = rad_to_deg_exact(theta).to_radians();
        let length = rng.random_range(region.min_length..=region.max_length);
        // the stored angles define the direction actually used
        let target = entry + drill_axis(psi, theta) * length;
        trajectories.push(DrillTrajectory {
            id: format!("P{}{}", pair + 1, if side > 0.0 { "R" } else { "L" }),
            entry,
            target,
            psi,
            theta,
            n_pts: region.n_pts,
        });
    }
    Ok(TrajectoryBundle { trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(entry: [f64; 3], target: [f64; 3], n_pts: usize) -> DrillTrajectory {
        DrillTrajectory {
            id: "t".into(),
            entry: entry.into(),
            target: target.into(),
            psi: 0.1,
            theta: 0.2,
            n_pts,
        }
    }

    #[test]
    fn thirty_points_over_29_mm_are_1_mm_apart() {
        let poses = traj([0.0; 3], [0.0, 0.0, 29.0], 30).discretize().unwrap();
        assert_eq!(poses.len(), 30);
        for (k, w) in poses.windows(2).enumerate() {
            assert_eq!((w[1].position - w[0].position).norm(), 1.0, "segment {k}");
        }
        assert!(poses.iter().all(|p| p.psi == 0.1 && p.theta == 0.2));
    }

    #[test]
    fn two_points_are_the_endpoints() {
        let t = traj([1.0, 2.0, 3.0], [4.0, -5.0, 6.5], 2);
        let poses = t.discretize().unwrap();
        assert_eq!(poses[0].position, t.entry);
        assert_eq!(poses[1].position, t.target);
    }

    #[test]
    fn degenerate_and_short_trajectories_rejected() {
        assert!(matches!(
            traj([1.0; 3], [1.0; 3], 30).discretize(),
            Err(TrajectoryError::Degenerate(_))
        ));
        assert!(matches!(
            traj([0.0; 3], [1.0; 3], 1).discretize(),
            Err(TrajectoryError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn segment_lengths_telescope() {
        let t = traj([-3.2, 7.1, 0.4], [12.9, -8.8, 31.3], 30);
        let poses = t.discretize().unwrap();
        let total: f64 = poses
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum();
        assert!((total - t.length()).abs() < 1e-12);
    }

    #[test]
    fn frame_transform() {
        let mut d = DesignVector::reference();
        let pose = TaskPose::new(31.8694, 11.9589, 192.0769, 0.3, 0.1);
        assert_eq!(pose_to_mechanism(&pose, &d).position, Vector3::zeros());
        assert_eq!(pose_to_mechanism(&pose, &d).psi, 0.3);
        let back = pose_to_world(&pose_to_mechanism(&pose, &d), &d);
        assert!((back.position - pose.position).amax() < 1e-12);
        d.m = [0.0; 3];
        assert_eq!(pose_to_mechanism(&pose, &d), pose);
    }

    #[test]
    fn csv_ignores_comments_and_checks_header() {
        let text = "# cervical set\ntraj_id,entry_x,entry_y,entry_z,target_x,target_y,target_z,psi_deg,theta_deg,n_pts\n\
                    # left C3\nC3L,1,2,3,4,5,36,10,15,30\n";
        let b = read_csv(text.as_bytes()).unwrap();
        assert_eq!(b.trajectories.len(), 1);
        assert_eq!(b.trajectories[0].theta, 15f64.to_radians());
        assert_eq!(b.point_count(), 30);
        assert!(read_csv("1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn json_wrapper_round_trip() {
        let b = synthetic_bundle(3, 4, &SyntheticRegion::default()).unwrap();
        let frame = WorldFrame {
            name: Some("CT".into()),
            units: "mm".into(),
        };
        let s = write_json(&b, Some(&frame));
        let (back, wf) = read_json(&s).unwrap();
        assert_eq!(wf, Some(frame));
        assert_eq!(write_json(&back, wf.as_ref()), s);
        assert_eq!(read_bundle_str(&s).unwrap().trajectories.len(), 4);
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let region = SyntheticRegion::default();
        let a = synthetic_bundle(42, 6, &region).unwrap();
        let b = synthetic_bundle(42, 6, &region).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthetic_bundle(43, 6, &region).unwrap());
        let axis = Vector3::from(region.cone_axis).normalize();
        let cos_half = region.cone_half_angle_deg.to_radians().cos();
        for t in &a.trajectories {
            let len = t.length();
            assert!((25.0 - 1e-12..=35.0 + 1e-12).contains(&len), "{len}");
            assert!(drill_axis(t.psi, t.theta).dot(&axis) >= cos_half);
            for k in 0..3 {
                assert!((t.entry[k] - region.center[k]).abs() <= region.half_extent[k] + 1e-12);
            }
        }
        assert_eq!(a.trajectories[0].id, "P1R");
        assert_eq!(a.trajectories[1].id, "P1L");
    }

    #[test]
    fn synthetic_rejects_empty_region() {
        let mut region = SyntheticRegion::default();
        region.half_extent[1] = 0.0;
        assert!(matches!(
            synthetic_bundle(1, 2, &region),
            Err(TrajectoryError::EmptyRegion)
        ));
        assert!(matches!(
            synthetic_bundle(1, 0, &SyntheticRegion::default()),
            Err(TrajectoryError::NoTrajectories)
        ));
    }

    proptest! {
        #[test]
        fn discretization_is_translation_equivariant(
            e in prop::array::uniform3(-200.0f64..200.0),
            g in prop::array::uniform3(-200.0f64..200.0),
            shift in prop::array::uniform3(-100.0f64..100.0),
            n in 2usize..60,
        ) {
            prop_assume!(e != g);
            let t = traj(e, g, n);
            let s = Vector3::from(shift);
            let moved = DrillTrajectory { entry: t.entry + s, target: t.target + s, ..t.clone() };
            let a = t.discretize().unwrap();
            let b = moved.discretize().unwrap();
            for (p, q) in a.iter().zip(&b) {
                // one rounding of the shifted coordinates
                let tol = 4.0 * f64::EPSILON * (p.position.amax() + s.amax() + 400.0);
                prop_assert!((q.position - (p.position + s)).amax() <= tol);
            }
        }

        #[test]
        fn csv_serialization_is_canonical(seed in 0u64..500, count in 1usize..9) {
            let b = synthetic_bundle(seed, count, &SyntheticRegion::default()).unwrap();
            let mut first = Vec::new();
            write_csv(&b, &mut first).unwrap();
            let parsed = read_csv(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_csv(&parsed, &mut second).unwrap();
            prop_assert_eq!(&first, &second);
            prop_assert_eq!(parsed.point_count(), count * DEFAULT_POINTS);
        }
    }
}
