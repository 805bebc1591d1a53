//! Self-checks run against a design: central finite differences of every
//! Jacobian block, closure residuals, the TLS round trip, and consistency of
//! the assembled velocity relation along a smooth path.

use nalgebra::{DMatrix, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::design::{drill_axis_partials, normalize_angle, DesignVector, Leg, TaskPose};
use crate::kinematics::{
    full_ik, rts_residual, tls_fk, tls_ik, tms_residual, Branch, Branches, IkSolution,
    RTS_RESIDUAL_TOL, TMS_RESIDUAL_TOL,
};
use crate::velocity::{inverse_velocity, Block, JacobianSet, TaskRate};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_FLOOR: f64 = 1e-9;
pub const TLS_ROUND_TRIP_TOL: f64 = 1e-12;
pub const PATH_REL_TOL: f64 = 1e-4;
pub const PATH_SAMPLES: usize = 50;
/// Samples are drawn with `sin(theta)` at least this large so the angle
/// rates stay well defined.
const MIN_SIN_THETA: f64 = 0.05;
const MAX_THETA: f64 = 1.0;
const ATTEMPTS_PER_SAMPLE: usize = 2000;

/// Deliberate corruption used to prove the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fault {
    FlipJlvSign,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("found only {found} of {wanted} reachable nonsingular configurations")]
    Sampling { found: usize, wanted: usize },
}

/// A reachable configuration with its branch assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub pose: TaskPose,
    pub solution: IkSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst error metric over the samples; the check passes when it is
    /// below `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub worst_sample: usize,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            worst: 0.0,
            tolerance,
            worst_sample: 0,
            passed: true,
        }
    }

    fn record(&mut self, sample: usize, error: f64) {
        if error.is_nan() || error > self.worst {
            self.worst = error;
            self.worst_sample = sample;
        }
        self.passed = self.worst < self.tolerance;
    }

    /// `worst / tolerance`, used to rank failures.
    pub fn severity(&self) -> f64 {
        self.worst / self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn worst_offender(&self) -> Option<&CheckResult> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .max_by(|a, b| a.severity().total_cmp(&b.severity()))
    }
}

/// Finite-difference error of `analytic` against `numeric`, relative to the
/// largest numeric entry with an absolute floor. Passing means below
/// [`FD_REL_TOL`].
pub fn fd_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let diff = (analytic - numeric).amax();
    diff / numeric.amax().max(FD_ABS_FLOOR / FD_REL_TOL)
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

/// Finite-difference estimates of the seven blocks, in [`Block::ALL`] order.
pub fn numeric_blocks(sample: &Sample, design: &DesignVector) -> [DMatrix<f64>; 7] {
    let joints = &sample.solution.joints;
    let pos = sample.pose.position;
    let e = sample.pose.axis();

    let mut lv = DMatrix::zeros(3, 3);
    for j in 0..3 {
        for r in 0..3 {
            lv[(r, j)] = central(|h| {
                let mut rho = joints.rho;
                rho[j] += h;
                tls_fk(&rho, design)[r]
            });
        }
    }

    let tms = |leg: Leg, dpos: Vector3<f64>, drho: f64, ddelta: f64, dsigma: f64| {
        let i = leg.index();
        tms_residual(
            joints.delta[i] + ddelta,
            joints.sigma[i] + dsigma,
            &(pos + dpos),
            joints.rho[i] + drho,
            design,
            leg,
        )
    };
    let mut av = DMatrix::zeros(2, 3);
    let mut sigma = DMatrix::zeros(2, 2);
    let mut rho = DMatrix::zeros(2, 2);
    let mut delta = DMatrix::zeros(2, 2);
    let mut r#as = DMatrix::zeros(2, 2);
    let mut ap = DMatrix::zeros(2, 3);
    for leg in Leg::ANGULAR {
        let i = leg.index();
        for k in 0..3 {
            av[(i, k)] = -central(|h| tms(leg, Vector3::ith(k, h), 0.0, 0.0, 0.0));
            ap[(i, k)] = -central(|h| {
                let rot = Rotation3::from_scaled_axis(Vector3::ith(k, h));
                rts_residual(joints.sigma[i], &(rot * e), design, leg)
            });
        }
        sigma[(i, i)] = -central(|h| tms(leg, Vector3::zeros(), 0.0, 0.0, h));
        rho[(i, i)] = central(|h| tms(leg, Vector3::zeros(), h, 0.0, 0.0));
        delta[(i, i)] = central(|h| tms(leg, Vector3::zeros(), 0.0, h, 0.0));
        r#as[(i, i)] = central(|h| rts_residual(joints.sigma[i] + h, &e, design, leg));
    }
    [lv, av, sigma, r#as, ap, rho, delta]
}

fn analytic_blocks(
    sample: &Sample,
    design: &DesignVector,
    fault: Option<Fault>,
) -> [DMatrix<f64>; 7] {
    let mut set = JacobianSet::new(&sample.pose, &sample.solution, design);
    if fault == Some(Fault::FlipJlvSign) {
        set.j_lv = -set.j_lv;
    }
    Block::ALL.map(|b| set.block(b))
}

/// Poses drawn around the TLS neutral point (all `rho = 0`) with a random
/// branch assignment, kept when reachable and nonsingular.
pub fn sample_configurations(
    design: &DesignVector,
    seed: u64,
    n: usize,
) -> Result<Vec<Sample>, ValidationError> {
    if n == 0 {
        return Err(ValidationError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = tls_fk(&[0.0; 3], design);
    let half = 0.5 * design.p.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n * ATTEMPTS_PER_SAMPLE {
        let offset = Vector3::from_fn(|_, _| rng.random_range(-half..=half));
        let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let theta = rng.random_range(MIN_SIN_THETA.asin()..=MAX_THETA);
        let pick = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.5) {
                Branch::Plus
            } else {
                Branch::Minus
            }
        };
        let branches = Branches {
            rts: [pick(&mut rng), pick(&mut rng)],
            tms: [pick(&mut rng), pick(&mut rng)],
        };
        let pose = TaskPose {
            position: center + offset,
            psi,
            theta,
        };
        let Ok(solution) = full_ik(&pose, design, branches) else {
            continue;
        };
        if solution.rts_degenerate.iter().any(|&d| d)
            || JacobianSet::new(&pose, &solution, design)
                .singular_block()
                .is_some()
        {
            continue;
        }
        out.push(Sample { pose, solution });
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(ValidationError::Sampling {
        found: out.len(),
        wanted: n,
    })
}

/// Smooth 5-DoF path through `start` parameterized on `[0, 1]`: returns the
/// pose and its derivative with respect to the parameter.
pub fn path_pose(start: &TaskPose, s: f64) -> (TaskPose, TaskRate) {
    use std::f64::consts::TAU;
    let amp = Vector3::new(4.0, 3.0, 2.0);
    let w = TAU;
    let position = start.position
        + Vector3::new(
            amp.x * (w * s).sin(),
            amp.y * ((2.0 * w * s).cos() - 1.0),
            amp.z * (w * s).sin() * (w * s).cos(),
        );
    let v = Vector3::new(
        amp.x * w * (w * s).cos(),
        -amp.y * 2.0 * w * (2.0 * w * s).sin(),
        amp.z * w * (2.0 * w * s).cos(),
    );
    let pose = TaskPose {
        position,
        psi: start.psi + 0.1 * (w * s).sin(),
        theta: start.theta + 0.02 * (1.0 - (w * s).cos()),
    };
    let rate = TaskRate {
        v,
        psi_dot: 0.1 * w * (w * s).cos(),
        theta_dot: 0.02 * w * (w * s).sin(),
    };
    (pose, rate)
}

/// Worst relative mismatch between the joint rates predicted by the
/// assembled relation and central differences of the IK solution along
/// [`path_pose`]. `None` if the path leaves the reachable, nonsingular set
/// under the sample's branch assignment.
pub fn path_consistency(sample: &Sample, design: &DesignVector) -> Option<f64> {
    let branches = sample.solution.branches;
    let ik = |s: f64| full_ik(&path_pose(&sample.pose, s).0, design, branches).ok();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..PATH_SAMPLES {
        let s = k as f64 / PATH_SAMPLES as f64;
        let (pose, rate) = path_pose(&sample.pose, s);
        let sol = ik(s)?;
        let predicted = inverse_velocity(&rate, &pose, &sol, design).ok()?;
        let (plus, minus) = (ik(s + h)?, ik(s - h)?);
        let diff = |a: f64, b: f64| normalize_angle(a - b) / (2.0 * h);
        let numeric = [
            diff(plus.joints.rho[0], minus.joints.rho[0]),
            diff(plus.joints.rho[1], minus.joints.rho[1]),
            diff(plus.joints.rho[2], minus.joints.rho[2]),
            diff(plus.joints.delta[0], minus.joints.delta[0]),
            diff(plus.joints.delta[1], minus.joints.delta[1]),
        ];
        let analytic = [
            predicted.rho_dot[0],
            predicted.rho_dot[1],
            predicted.rho_dot[2],
            predicted.delta_dot[0],
            predicted.delta_dot[1],
        ];
        let scale = numeric
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
            .max(1e-6);
        for (a, b) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Some(worst)
}

/// Runs every check over `n` sampled configurations.
pub fn validate_design(
    design: &DesignVector,
    seed: u64,
    n: usize,
    fault: Option<Fault>,
) -> Result<ValidationReport, ValidationError> {
    let samples = sample_configurations(design, seed, n)?;
    let mut fd: Vec<CheckResult> = Block::ALL
        .iter()
        .map(|b| CheckResult::new(format!("{} finite difference", b.name()), FD_REL_TOL))
        .collect();
    let mut tls = CheckResult::new("TLS round trip", TLS_ROUND_TRIP_TOL);
    let mut tms = CheckResult::new("TMS closure residual", TMS_RESIDUAL_TOL);
    let mut rts = CheckResult::new("RTS closure residual", RTS_RESIDUAL_TOL);
    let mut path = CheckResult::new("assembled relation along path", PATH_REL_TOL);
    let mut path_runs = 0;

    for (k, sample) in samples.iter().enumerate() {
        let analytic = analytic_blocks(sample, design, fault);
        let numeric = numeric_blocks(sample, design);
        for (check, (a, n)) in fd.iter_mut().zip(analytic.iter().zip(&numeric)) {
            check.record(k, fd_error(a, n));
        }

        let pos = sample.pose.position;
        let round_trip = tls_ik(&pos, design)
            .map(|rho| (tls_fk(&rho, design) - pos).amax())
            .unwrap_or(f64::INFINITY);
        tls.record(k, round_trip);

        let joints = &sample.solution.joints;
        let e = sample.pose.axis();
        for leg in Leg::ANGULAR {
            let i = leg.index();
            tms.record(
                k,
                tms_residual(
                    joints.delta[i],
                    joints.sigma[i],
                    &pos,
                    joints.rho[i],
                    design,
                    leg,
                )
                .abs(),
            );
            rts.record(k, rts_residual(joints.sigma[i], &e, design, leg).abs());
        }

        if path_runs < PATH_SAMPLES.min(n) {
            if let Some(err) = path_consistency(sample, design) {
                path.record(k, err);
                path_runs += 1;
            }
        }
    }
    if path_runs == 0 {
        path.worst = f64::INFINITY;
        path.passed = false;
    }

    let mut checks = fd;
    checks.extend([tls, tms, rts, path]);
    Ok(ValidationReport {
        seed,
        samples: n,
        checks,
    })
}

/// Derivative of the drill axis along a task rate, used by tests.
pub fn axis_rate(pose: &TaskPose, rate: &TaskRate) -> Vector3<f64> {
    let (e_psi, e_theta) = drill_axis_partials(pose.psi, pose.theta);
    e_psi * rate.psi_dot + e_theta * rate.theta_dot
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_samples_is_rejected() {
        assert_eq!(
            validate_design(&DesignVector::reference(), 1, 0, None).unwrap_err(),
            ValidationError::NoSamples
        );
    }

    #[test]
    fn reference_passes_and_fault_is_caught() {
        let d = DesignVector::reference();
        let report = validate_design(&d, 11, 10, None).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        let bad = validate_design(&d, 11, 10, Some(Fault::FlipJlvSign)).unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.worst_offender().unwrap().name, "J_LV finite difference");
    }

    #[test]
    fn path_derivative_matches_difference() {
        let start = TaskPose::new(-190.0, -185.0, -125.0, 0.3, 0.4);
        for k in 0..10 {
            let s = k as f64 / 10.0;
            let h = 1e-6;
            let (_, rate) = path_pose(&start, s);
            let (a, _) = path_pose(&start, s + h);
            let (b, _) = path_pose(&start, s - h);
            let v = (a.position - b.position) / (2.0 * h);
            assert!((v - rate.v).amax() < 1e-6);
            assert!(((a.psi - b.psi) / (2.0 * h) - rate.psi_dot).abs() < 1e-8);
            assert!(((a.theta - b.theta) / (2.0 * h) - rate.theta_dot).abs() < 1e-8);
            let e_rate = (a.axis() - b.axis()) / (2.0 * h);
            let (p, _) = path_pose(&start, s);
            assert!((e_rate - axis_rate(&p, &rate)).amax() < 1e-8);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = DesignVector::reference();
        let a = sample_configurations(&d, 5, 8).unwrap();
        let b = sample_configurations(&d, 5, 8).unwrap();
        assert_eq!(a, b);
    }
}
