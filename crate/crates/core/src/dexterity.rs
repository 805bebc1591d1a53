//! Condition-number dexterity: local index (worst of the seven blocks), its
//! trajectory mean, and the product reachability index.

use std::io::Write;

use std::f64::consts::PI;

use nalgebra::{DMatrix, Dim, Matrix, RawStorage, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::design::{drill_axis, DesignVector, TaskPose};
use crate::kinematics::{solve_any, tls_fk, IkError};
use crate::trajectory::{pose_to_mechanism, DrillTrajectory, TrajectoryBundle, TrajectoryPoint};
use crate::units::{format_float, rad_to_deg_exact};
use crate::velocity::{Block, JacobianSet};

/// Singular values below this fraction of the largest count as zero.
pub const COND_RANK_TOL: f64 = 1e-14;

/// Spectral condition number `sigma_max / sigma_min` over the `min(m, n)`
/// singular values, `+inf` when numerically rank deficient.
pub fn cond<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> f64 {
    let (rows, cols) = m.shape();
    let dense = DMatrix::from_iterator(rows, cols, m.iter().copied());
    if dense.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = dense.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 || min < COND_RANK_TOL * max {
        return f64::INFINITY;
    }
    max / min
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalDexterity {
    /// Worst condition number among the seven blocks.
    pub eta: f64,
    pub dominating: Block,
    /// Condition numbers in [`Block::ALL`] order.
    pub kappas: [f64; 7],
}

/// Max of the seven condition numbers; ties go to the earlier block.
pub fn local_dexterity(blocks: &JacobianSet) -> LocalDexterity {
    let kappas = [
        cond(&blocks.j_lv),
        cond(&blocks.j_av),
        cond(&blocks.j_sigma),
        cond(&blocks.j_as),
        cond(&blocks.j_ap),
        cond(&blocks.j_rho),
        cond(&blocks.j_delta),
    ];
    let mut best = 0;
    for (i, k) in kappas.iter().enumerate() {
        if *k > kappas[best] {
            best = i;
        }
    }
    LocalDexterity {
        eta: kappas[best],
        dominating: Block::ALL[best],
        kappas,
    }
}

pub fn eta_local(pose: &TaskPose, design: &DesignVector) -> Result<LocalDexterity, IkError> {
    let solution = solve_any(pose, design)?;
    Ok(local_dexterity(&JacobianSet::new(pose, &solution, design)))
}

/// Dexterity as a percentage, `100 / eta` (0 for a singular point).
pub fn invert_percent(eta: f64) -> f64 {
    100.0 / eta
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointDexterity {
    pub traj_id: String,
    pub point_index: usize,
    /// Pose in the mechanism frame.
    #[serde(skip)]
    pub pose: TaskPose,
    /// Local reachability index.
    pub w_local: u8,
    /// `None` when unreachable.
    pub local: Option<LocalDexterity>,
    pub failure: Option<IkError>,
}

impl PointDexterity {
    pub fn percent(&self) -> f64 {
        self.local.map_or(0.0, |l| invert_percent(l.eta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DexterityReport {
    pub points: Vec<PointDexterity>,
    /// Mean of the local index over the reachable points. Equals the global
    /// dexterity when `w_global == 1`; otherwise a partial mean and `valid`
    /// is false.
    pub eta_global: f64,
    pub w_global: u8,
    pub valid: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DexterityError {
    #[error("trajectory bundle has no points")]
    EmptyBundle,
    #[error("found only {found} of {wanted} fully reachable trajectories")]
    Sampling { found: usize, wanted: usize },
}

pub fn evaluate_point(point: &TrajectoryPoint, design: &DesignVector) -> PointDexterity {
    let (local, failure) = match eta_local(&point.pose, design) {
        Ok(l) => (Some(l), None),
        Err(e) => (None, Some(e)),
    };
    PointDexterity {
        traj_id: point.traj_id.clone(),
        point_index: point.point_index,
        pose: point.pose,
        w_local: u8::from(local.is_some()),
        local,
        failure,
    }
}

/// Evaluates every point (in parallel) and reduces in input order.
pub fn eta_global(
    points: &[TrajectoryPoint],
    design: &DesignVector,
) -> Result<DexterityReport, DexterityError> {
    if points.is_empty() {
        return Err(DexterityError::EmptyBundle);
    }
    let evaluated: Vec<PointDexterity> = points
        .par_iter()
        .map(|p| evaluate_point(p, design))
        .collect();
    Ok(summarize(evaluated))
}

pub fn summarize(points: Vec<PointDexterity>) -> DexterityReport {
    let w_global = points.iter().map(|p| p.w_local).product::<u8>();
    let etas: Vec<f64> = points
        .iter()
        .filter_map(|p| p.local.map(|l| l.eta))
        .collect();
    let eta_global = if etas.is_empty() {
        f64::NAN
    } else if etas.iter().any(|e| e.is_infinite()) {
        f64::INFINITY
    } else {
        compensated_sum(etas.iter().copied()) / etas.len() as f64
    };
    DexterityReport {
        valid: w_global == 1,
        points,
        eta_global,
        w_global,
    }
}

const REACHABLE_ATTEMPTS: usize = 5000;

/// Bundle of `count` straight trajectories (world frame) whose every point is
/// reachable and nonsingular for `design`. Entries are drawn around the
/// translational neutral point, axes within 10-35 degrees of `z`.
pub fn reachable_bundle(
    design: &DesignVector,
    seed: u64,
    count: usize,
    n_pts: usize,
) -> Result<TrajectoryBundle, DexterityError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = tls_fk(&[0.0; 3], design) + Vector3::from(design.m);
    let half = 0.3 * design.p.iter().copied().fold(f64::INFINITY, f64::min);
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count * REACHABLE_ATTEMPTS {
        if trajectories.len() == count {
            break;
        }
        let entry = center + Vector3::from_fn(|_, _| rng.random_range(-half..=half));
        let psi = rad_to_deg_exact(rng.random_range(-PI..PI)).to_radians();
        let theta = rad_to_deg_exact(rng.random_range(10f64.to_radians()..=35f64.to_radians()))
            .to_radians();
        let length = rng.random_range(25.0..=35.0);
        let traj = DrillTrajectory {
            id: format!("R{}", trajectories.len() + 1),
            entry,
            target: entry + drill_axis(psi, theta) * length,
            psi,
            theta,
            n_pts,
        };
        let Ok(poses) = traj.discretize() else {
            return Err(DexterityError::EmptyBundle);
        };
        let usable = poses.iter().all(|p| {
            eta_local(&pose_to_mechanism(p, design), design).is_ok_and(|l| l.eta.is_finite())
        });
        if usable {
            trajectories.push(traj);
        }
    }
    if trajectories.len() < count {
        return Err(DexterityError::Sampling {
            found: trajectories.len(),
            wanted: count,
        });
    }
    Ok(TrajectoryBundle::new(trajectories))
}

pub const PROFILE_HEADER: [&str; 11] = [
    "traj_id",
    "point_index",
    "x",
    "y",
    "z",
    "psi_deg",
    "theta_deg",
    "w_L",
    "eta_L",
    "dexterity_percent",
    "dominating_block",
];

/// Writes the per-point profile CSV. Unreachable rows leave `eta_L` and
/// `dominating_block` empty; singular points print `inf`.
pub fn write_profile_csv<W: Write>(report: &DexterityReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER)?;
    for p in &report.points {
        let (eta, block) = match p.local {
            Some(l) => (format_float(l.eta), l.dominating.name().to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            p.traj_id.clone(),
            p.point_index.to_string(),
            format_float(p.pose.position.x),
            format_float(p.pose.position.y),
            format_float(p.pose.position.z),
            format_float(rad_to_deg_exact(p.pose.psi)),
            format_float(rad_to_deg_exact(p.pose.theta)),
            p.w_local.to_string(),
            eta,
            format_float(p.percent()),
            block,
        ])?;
    }
    w.flush()?;
    Ok(())
}
