//! Velocity model: the seven Jacobian blocks at a solved configuration and
//! the assembled 3T2R relation
//!
//! ```text
//! [ J_LV^-1            0                 ] [v]   [ I3       0   ] [rho_dot  ]
//! [ J_AV    J_sigma (J_AS^-1 J_AP)       ] [w] = [ J_rho 0  J_delta ] [delta_dot]
//! ```
//!
//! The top-left task block is `J_LV^-1` so that the top rows state
//! `v = J_LV rho_dot` with the identity kept on the joint side.

use std::fmt;

use nalgebra::{
    Matrix2, Matrix2x3, Matrix3, Matrix5, Matrix5x6, Vector2, Vector3, Vector5, Vector6,
};
use serde::Serialize;
use thiserror::Error;

use crate::design::{drill_axis_partials, leg_frame, DesignVector, Leg, TaskPose};
use crate::kinematics::{intermediate_axis, leg_local, IkSolution};

/// `|cos rho_u|` below this makes the translational stage singular.
pub const LV_SINGULAR_TOL: f64 = 1e-9;
/// Scaled determinant threshold for the diagonal four-bar blocks.
pub const TMS_SINGULAR_TOL: f64 = 1e-12;
/// `|(u_alpha x u_beta) . e|` below this makes the spherical stage singular.
pub const AS_SINGULAR_TOL: f64 = 1e-12;
/// `sin(theta)` below this leaves the azimuth rate undefined.
pub const POLE_TOL: f64 = 1e-9;

/// The seven Jacobian blocks, in the order used by the local dexterity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Block {
    #[serde(rename = "J_LV")]
    Lv,
    #[serde(rename = "J_AV")]
    Av,
    #[serde(rename = "J_sigma")]
    Sigma,
    #[serde(rename = "J_AS")]
    As,
    #[serde(rename = "J_AP")]
    Ap,
    #[serde(rename = "J_rho")]
    Rho,
    #[serde(rename = "J_delta")]
    Delta,
}

impl Block {
    pub const ALL: [Block; 7] = [
        Block::Lv,
        Block::Av,
        Block::Sigma,
        Block::As,
        Block::Ap,
        Block::Rho,
        Block::Delta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Lv => "J_LV",
            Block::Av => "J_AV",
            Block::Sigma => "J_sigma",
            Block::As => "J_AS",
            Block::Ap => "J_AP",
            Block::Rho => "J_rho",
            Block::Delta => "J_delta",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VelocityError {
    #[error("singular configuration: {0} is not invertible")]
    Singular(Block),
    #[error("drill axis on the pole (theta = 0): azimuth rate undefined")]
    ParameterizationSingular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianSet {
    /// `v = J_LV rho_dot`, diagonal, mm/rad.
    pub j_lv: Matrix3<f64>,
    pub j_av: Matrix2x3<f64>,
    pub j_sigma: Matrix2<f64>,
    pub j_as: Matrix2<f64>,
    pub j_ap: Matrix2x3<f64>,
    pub j_rho: Matrix2<f64>,
    pub j_delta: Matrix2<f64>,
}

pub fn j_lv(rho: &[f64; 3], design: &DesignVector) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::from_fn(|i, _| -design.p[i] * rho[i].cos()))
}

/// Four-bar blocks `(J_rho, J_delta, J_AV, J_sigma)` of
/// `J_rho rho_dot + J_delta delta_dot = J_AV v + J_sigma sigma_dot`,
/// from the time derivative of each leg's loop closure.
pub fn tms_velocity_blocks(
    solution: &IkSolution,
    position: &Vector3<f64>,
    design: &DesignVector,
) -> (Matrix2<f64>, Matrix2<f64>, Matrix2x3<f64>, Matrix2<f64>) {
    let mut j_rho = Matrix2::zeros();
    let mut j_delta = Matrix2::zeros();
    let mut j_av = Matrix2x3::zeros();
    let mut j_sigma = Matrix2::zeros();
    let joints = &solution.joints;
    for leg in Leg::ANGULAR {
        let i = leg.index();
        let (d, t, p) = (design.d[i], design.t[i], design.p[i]);
        let (rho, delta, sigma) = (joints.rho[i], joints.delta[i], joints.sigma[i]);
        let (vl, wl) = leg_local(position, design, leg);
        let (sd, cd) = delta.sin_cos();
        let (ss, cs) = sigma.sin_cos();
        // coupler components along v and w
        let a = vl - d * sd + t * ss;
        let b = wl + d * cd - t * cs - p * rho.cos();

        j_delta[(i, i)] = -2.0 * d * (a * cd + b * sd);
        j_rho[(i, i)] = 2.0 * b * p * rho.sin();
        j_sigma[(i, i)] = -2.0 * t * (a * cs + b * ss);
        let frame = leg_frame(leg);
        let row = -(frame.v * (2.0 * a) + frame.w * (2.0 * b));
        j_av.set_row(i, &row.transpose());
    }
    (j_rho, j_delta, j_av, j_sigma)
}

/// Spherical-stage blocks `(J_AS, J_AP)` of `J_AS sigma_dot = J_AP omega`.
pub fn rts_velocity_blocks(
    solution: &IkSolution,
    e: &Vector3<f64>,
    design: &DesignVector,
) -> (Matrix2<f64>, Matrix2x3<f64>) {
    let mut j_as = Matrix2::zeros();
    let mut j_ap = Matrix2x3::zeros();
    for leg in Leg::ANGULAR {
        let i = leg.index();
        let ua = design.input_axis(leg);
        let ub = intermediate_axis(solution.joints.sigma[i], design, leg);
        j_as[(i, i)] = ua.cross(&ub).dot(e);
        j_ap.set_row(i, &ub.cross(e).transpose());
    }
    (j_as, j_ap)
}

impl JacobianSet {
    pub fn new(pose: &TaskPose, solution: &IkSolution, design: &DesignVector) -> Self {
        let (j_rho, j_delta, j_av, j_sigma) = tms_velocity_blocks(solution, &pose.position, design);
        let (j_as, j_ap) = rts_velocity_blocks(solution, &pose.axis(), design);
        Self {
            j_lv: j_lv(&solution.joints.rho, design),
            j_av,
            j_sigma,
            j_as,
            j_ap,
            j_rho,
            j_delta,
        }
    }

    pub fn block(&self, block: Block) -> nalgebra::DMatrix<f64> {
        use nalgebra::DMatrix;
        match block {
            Block::Lv => DMatrix::from_column_slice(3, 3, self.j_lv.as_slice()),
            Block::Av => DMatrix::from_column_slice(2, 3, self.j_av.as_slice()),
            Block::Sigma => DMatrix::from_column_slice(2, 2, self.j_sigma.as_slice()),
            Block::As => DMatrix::from_column_slice(2, 2, self.j_as.as_slice()),
            Block::Ap => DMatrix::from_column_slice(2, 3, self.j_ap.as_slice()),
            Block::Rho => DMatrix::from_column_slice(2, 2, self.j_rho.as_slice()),
            Block::Delta => DMatrix::from_column_slice(2, 2, self.j_delta.as_slice()),
        }
    }

    /// First block (in the order LV, AS, sigma, delta) whose singularity test
    /// fires.
    pub fn singular_block(&self) -> Option<Block> {
        let lv = self.j_lv.diagonal();
        let lv_scale = lv.amax();
        if lv_scale == 0.0 || lv.iter().any(|x| x.abs() < LV_SINGULAR_TOL * lv_scale) {
            return Some(Block::Lv);
        }
        if self
            .j_as
            .diagonal()
            .iter()
            .any(|x| x.abs() < AS_SINGULAR_TOL)
        {
            return Some(Block::As);
        }
        let scaled_det_small = |m: &Matrix2<f64>| {
            let scale = m.amax();
            scale == 0.0 || (m.determinant() / (scale * scale)).abs() < TMS_SINGULAR_TOL
        };
        if scaled_det_small(&self.j_sigma) {
            return Some(Block::Sigma);
        }
        if scaled_det_small(&self.j_delta) {
            return Some(Block::Delta);
        }
        None
    }

    /// `J_AS^-1` by the closed form for a diagonal 2x2.
    pub fn j_as_inverse(&self) -> Result<Matrix2<f64>, VelocityError> {
        let (a, b) = (self.j_as[(0, 0)], self.j_as[(1, 1)]);
        if a.abs() < AS_SINGULAR_TOL || b.abs() < AS_SINGULAR_TOL {
            return Err(VelocityError::Singular(Block::As));
        }
        Ok(Matrix2::new(1.0 / a, 0.0, 0.0, 1.0 / b))
    }

    /// `J_sigma (J_AS^-1 J_AP)`, the angular block of the task side.
    pub fn angular_block(&self) -> Result<Matrix2x3<f64>, VelocityError> {
        Ok(self.j_sigma * (self.j_as_inverse()? * self.j_ap))
    }
}

/// Task-side (5x6) and joint-side (5x5) matrices of the assembled relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assembled {
    pub task: Matrix5x6<f64>,
    pub joint: Matrix5<f64>,
}

pub fn assemble(blocks: &JacobianSet) -> Result<Assembled, VelocityError> {
    let lv = blocks.j_lv.diagonal();
    if lv
        .iter()
        .any(|x| x.abs() < LV_SINGULAR_TOL * lv.amax().max(f64::MIN_POSITIVE))
    {
        return Err(VelocityError::Singular(Block::Lv));
    }
    let angular = blocks.angular_block()?;
    let mut task = Matrix5x6::zeros();
    let lv_inv = Matrix3::from_diagonal(&lv.map(|x| 1.0 / x));
    task.fixed_view_mut::<3, 3>(0, 0).copy_from(&lv_inv);
    task.fixed_view_mut::<2, 3>(3, 0).copy_from(&blocks.j_av);
    task.fixed_view_mut::<2, 3>(3, 3).copy_from(&angular);

    let mut joint = Matrix5::zeros();
    joint
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    joint.fixed_view_mut::<2, 2>(3, 0).copy_from(&blocks.j_rho);
    joint
        .fixed_view_mut::<2, 2>(3, 3)
        .copy_from(&blocks.j_delta);
    Ok(Assembled { task, joint })
}

/// End-effector rate: linear velocity (mm/s) and drill-axis angle rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskRate {
    pub v: Vector3<f64>,
    pub psi_dot: f64,
    pub theta_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointRates {
    pub rho_dot: Vector3<f64>,
    pub delta_dot: Vector2<f64>,
}

/// Angular velocity perpendicular to the drill axis producing the given
/// angle rates: `omega = e x e_dot`.
pub fn angular_velocity(
    psi: f64,
    theta: f64,
    psi_dot: f64,
    theta_dot: f64,
) -> Result<Vector3<f64>, VelocityError> {
    if theta.sin().abs() < POLE_TOL {
        return Err(VelocityError::ParameterizationSingular);
    }
    let e = crate::design::drill_axis(psi, theta);
    let (e_psi, e_theta) = drill_axis_partials(psi, theta);
    Ok(e.cross(&(e_psi * psi_dot + e_theta * theta_dot)))
}

pub fn inverse_velocity(
    rate: &TaskRate,
    pose: &TaskPose,
    solution: &IkSolution,
    design: &DesignVector,
) -> Result<JointRates, VelocityError> {
    let omega = angular_velocity(pose.psi, pose.theta, rate.psi_dot, rate.theta_dot)?;
    let blocks = JacobianSet::new(pose, solution, design);
    if let Some(block) = blocks.singular_block() {
        return Err(VelocityError::Singular(block));
    }
    let Assembled { task, joint } = assemble(&blocks)?;
    let twist = Vector6::new(rate.v.x, rate.v.y, rate.v.z, omega.x, omega.y, omega.z);
    let rhs: Vector5<f64> = task * twist;
    let q = joint
        .lu()
        .solve(&rhs)
        .ok_or(VelocityError::Singular(Block::Delta))?;
    Ok(JointRates {
        rho_dot: Vector3::new(q[0], q[1], q[2]),
        delta_dot: Vector2::new(q[3], q[4]),
    })
}
