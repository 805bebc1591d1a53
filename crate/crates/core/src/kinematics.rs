//! Inverse position kinematics of the translational (TLS), transmitting
//! (TMS) and rotational (RTS) stages, and per-point reachability.
//!
//! Leg-local conventions used throughout:
//!
//! * The TLS is decoupled per leg: `u = -p_u sin(rho_u) - f_u - r`.
//! * The four-bar of leg `u` lives in the `(v, w)` plane of its leg frame.
//!   The end-effector coordinates entering the closure are measured from the
//!   neutral point where every proximal joint is at zero, i.e.
//!   `v' = P.v + f_v + r` and `w' = P.w + f_w + r - o_u`, the transmitting
//!   offset `o_u` shifting the transmitting-link pivot along `w`.
//! * The spherical leg input axis `u_alpha` is the leg's `u` axis. At
//!   `sigma_u = 0` the intermediate axis `u_beta` lies in the `(u, w)` plane at
//!   angle `alpha_u` from `u_alpha`; `sigma_u` rotates it about `u_alpha`.

use std::fmt;

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::design::{leg_frame, normalize_angle, DesignVector, JointState, Leg, TaskPose};

/// Margin on `|C| <= sqrt(A^2 + B^2)` before a closure is declared unsolvable.
pub const SOLVABILITY_MARGIN: f64 = 1e-12;
/// Below this `sqrt(A^2 + B^2)` a closure is independent of its unknown.
pub const DEGENERATE_TOL: f64 = 1e-12;
/// Acceptance threshold for the four-bar closure residual (mm^2).
pub const TMS_RESIDUAL_TOL: f64 = 1e-9;
/// Acceptance threshold for the spherical closure residual.
pub const RTS_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Stage {
    #[serde(rename = "TLS")]
    Tls,
    #[serde(rename = "RTS")]
    Rts,
    #[serde(rename = "TMS")]
    Tms,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Tls => "TLS",
            Stage::Rts => "RTS",
            Stage::Tms => "TMS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum IkError {
    #[error("pose unreachable: {stage} stage, leg {leg}")]
    Unreachable { stage: Stage, leg: Leg },
}

impl IkError {
    pub fn stage(&self) -> Stage {
        match self {
            IkError::Unreachable { stage, .. } => *stage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TrigError {
    #[error("closure has no real solution")]
    Unreachable,
    #[error("closure is independent of its unknown")]
    Degenerate,
}

/// Sign of the `acos` term selecting one of the two assembly modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Branch {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Plus, Branch::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// Scalar closure `A sin q + B cos q = C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigClosure {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TrigClosure {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn amplitude(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn is_solvable(&self) -> bool {
        let r = self.amplitude();
        if r <= DEGENERATE_TOL {
            return self.c.abs() <= DEGENERATE_TOL;
        }
        self.c.abs() / r <= 1.0 + SOLVABILITY_MARGIN
    }

    /// `A sin q + B cos q - C`.
    pub fn residual(&self, q: f64) -> f64 {
        let (s, c) = q.sin_cos();
        self.a * s + self.b * c - self.c
    }

    /// `q = atan2(A, B) +/- acos(C / sqrt(A^2 + B^2))`, wrapped to `(-pi, pi]`.
    pub fn solve(&self, branch: Branch) -> Result<f64, TrigError> {
        let r = self.amplitude();
        if r <= DEGENERATE_TOL {
            return Err(if self.c.abs() <= DEGENERATE_TOL {
                TrigError::Degenerate
            } else {
                TrigError::Unreachable
            });
        }
        let ratio = self.c / r;
        if ratio.abs() > 1.0 + SOLVABILITY_MARGIN {
            return Err(TrigError::Unreachable);
        }
        let phase = self.a.atan2(self.b);
        Ok(normalize_angle(
            phase + branch.sign() * ratio.clamp(-1.0, 1.0).acos(),
        ))
    }
}

pub fn solve_trig(closure: TrigClosure, branch: Branch) -> Result<f64, TrigError> {
    closure.solve(branch)
}

/// Proximal joint angles for a drill-tip position (mechanism frame, mm).
pub fn tls_ik(position: &Vector3<f64>, design: &DesignVector) -> Result<[f64; 3], IkError> {
    let mut rho = [0.0; 3];
    for leg in Leg::ALL {
        rho[leg.index()] = tls_ik_leg(position, design, leg)?;
    }
    Ok(rho)
}

fn tls_ik_leg(position: &Vector3<f64>, design: &DesignVector, leg: Leg) -> Result<f64, IkError> {
    let i = leg.index();
    let arg = (position[i] + design.f[i] + design.r) / design.p[i];
    if arg.is_nan() || arg.abs() > 1.0 {
        return Err(IkError::Unreachable {
            stage: Stage::Tls,
            leg,
        });
    }
    Ok(-arg.asin())
}

pub fn tls_fk(rho: &[f64; 3], design: &DesignVector) -> Vector3<f64> {
    Vector3::from_fn(|i, _| -design.p[i] * rho[i].sin() - design.f[i] - design.r)
}

/// End-effector coordinates `(v', w')` entering the four-bar closure of leg
/// `leg` (x or y).
pub fn leg_local(position: &Vector3<f64>, design: &DesignVector, leg: Leg) -> (f64, f64) {
    let frame = leg_frame(leg);
    let (_, v, w) = frame.local(position);
    let vi = (leg.index() + 1) % 3;
    let wi = (leg.index() + 2) % 3;
    (
        v + design.f[vi] + design.r,
        w + design.f[wi] + design.r - design.o[leg.index()],
    )
}

/// Four-bar closure of leg `leg` written as `A sin(delta) + B cos(delta) = C`.
pub fn tms_closure(
    sigma: f64,
    position: &Vector3<f64>,
    rho_u: f64,
    design: &DesignVector,
    leg: Leg,
) -> TrigClosure {
    let i = leg.index();
    let (vl, wl) = leg_local(position, design, leg);
    let (d, t) = (design.d[i], design.t[i]);
    let big_v = vl + t * sigma.sin();
    let big_w = wl - t * sigma.cos() - design.p[i] * rho_u.cos();
    TrigClosure::new(
        2.0 * d * big_v,
        -2.0 * d * big_w,
        big_v * big_v + big_w * big_w + d * d - design.c[i] * design.c[i],
    )
}

/// Coupler length squared minus `c_u^2`, evaluated directly from the loop.
pub fn tms_residual(
    delta: f64,
    sigma: f64,
    position: &Vector3<f64>,
    rho_u: f64,
    design: &DesignVector,
    leg: Leg,
) -> f64 {
    let i = leg.index();
    let (vl, wl) = leg_local(position, design, leg);
    let (d, t, p, c) = (design.d[i], design.t[i], design.p[i], design.c[i]);
    let a = vl - d * delta.sin() + t * sigma.sin();
    let b = wl + d * delta.cos() - t * sigma.cos() - p * rho_u.cos();
    a * a + b * b - c * c
}

/// Intermediate joint axis `u_beta` of spherical leg `leg` at input `sigma`.
pub fn intermediate_axis(sigma: f64, design: &DesignVector, leg: Leg) -> Vector3<f64> {
    let frame = leg_frame(leg);
    let alpha = design.alpha[leg.index()];
    let (sa, ca) = alpha.sin_cos();
    let (ss, cs) = sigma.sin_cos();
    frame.u * ca + (frame.w * cs - frame.v * ss) * sa
}

/// Spherical closure `u_beta(sigma) . e = cos(beta_u)` as
/// `A sin(sigma) + B cos(sigma) = C`.
pub fn rts_closure_axis(e: &Vector3<f64>, design: &DesignVector, leg: Leg) -> TrigClosure {
    let frame = leg_frame(leg);
    let (eu, ev, ew) = frame.local(e);
    let i = leg.index();
    let (sa, ca) = design.alpha[i].sin_cos();
    TrigClosure::new(-sa * ev, sa * ew, design.beta[i].cos() - ca * eu)
}

pub fn rts_closure(psi: f64, theta: f64, design: &DesignVector, leg: Leg) -> TrigClosure {
    rts_closure_axis(&crate::design::drill_axis(psi, theta), design, leg)
}

/// `u_beta(sigma) . e - cos(beta_u)`.
pub fn rts_residual(sigma: f64, e: &Vector3<f64>, design: &DesignVector, leg: Leg) -> f64 {
    intermediate_axis(sigma, design, leg).dot(e) - design.beta[leg.index()].cos()
}

/// Branch choices: one per spherical leg and one per four-bar, legs x then y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Branches {
    pub rts: [Branch; 2],
    pub tms: [Branch; 2],
}

impl Default for Branches {
    fn default() -> Self {
        Self {
            rts: [Branch::Plus; 2],
            tms: [Branch::Plus; 2],
        }
    }
}

impl Branches {
    /// All 16 assignments, default first.
    pub fn all() -> Vec<Branches> {
        let mut out = Vec::with_capacity(16);
        for rx in Branch::BOTH {
            for ry in Branch::BOTH {
                for tx in Branch::BOTH {
                    for ty in Branch::BOTH {
                        out.push(Branches {
                            rts: [rx, ry],
                            tms: [tx, ty],
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IkSolution {
    pub joints: JointState,
    /// Four-bar closure residuals (mm^2), legs x, y.
    pub tms_residual: [f64; 2],
    /// Spherical closure residuals, legs x, y.
    pub rts_residual: [f64; 2],
    pub branches: Branches,
    /// Spherical legs whose closure did not depend on `sigma`; `sigma = 0`
    /// was taken.
    pub rts_degenerate: [bool; 2],
}

/// Number of closure evaluations performed per stage during one solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageEvaluations {
    pub tls: usize,
    pub rts: usize,
    pub tms: usize,
}

struct RtsLeg {
    sigma: f64,
    residual: f64,
    degenerate: bool,
}

fn solve_rts_leg(
    e: &Vector3<f64>,
    design: &DesignVector,
    leg: Leg,
    branch: Branch,
) -> Result<RtsLeg, IkError> {
    let closure = rts_closure_axis(e, design, leg);
    let (sigma, degenerate) = match closure.solve(branch) {
        Ok(s) => (s, false),
        Err(TrigError::Degenerate) => (0.0, true),
        Err(TrigError::Unreachable) => {
            return Err(IkError::Unreachable {
                stage: Stage::Rts,
                leg,
            })
        }
    };
    Ok(RtsLeg {
        sigma,
        residual: rts_residual(sigma, e, design, leg),
        degenerate,
    })
}

fn solve_tms_leg(
    sigma: f64,
    position: &Vector3<f64>,
    rho_u: f64,
    design: &DesignVector,
    leg: Leg,
    branch: Branch,
) -> Result<(f64, f64), IkError> {
    let unreachable = IkError::Unreachable {
        stage: Stage::Tms,
        leg,
    };
    let closure = tms_closure(sigma, position, rho_u, design, leg);
    let delta = closure.solve(branch).map_err(|_| unreachable)?;
    let residual = tms_residual(delta, sigma, position, rho_u, design, leg);
    Ok((delta, residual))
}

/// Three-stage cascade TLS -> RTS -> TMS for one branch assignment, with the
/// per-stage evaluation counts.
pub fn full_ik_traced(
    pose: &TaskPose,
    design: &DesignVector,
    branches: Branches,
) -> (Result<IkSolution, IkError>, StageEvaluations) {
    let mut evals = StageEvaluations::default();
    let result = (|| {
        let mut rho = [0.0; 3];
        for leg in Leg::ALL {
            evals.tls += 1;
            rho[leg.index()] = tls_ik_leg(&pose.position, design, leg)?;
        }
        let e = pose.axis();
        let mut rts = Vec::with_capacity(2);
        for leg in Leg::ANGULAR {
            evals.rts += 1;
            rts.push(solve_rts_leg(&e, design, leg, branches.rts[leg.index()])?);
        }
        let mut delta = [0.0; 2];
        let mut tms_residual = [0.0; 2];
        for leg in Leg::ANGULAR {
            let i = leg.index();
            evals.tms += 1;
            let (d, res) = solve_tms_leg(
                rts[i].sigma,
                &pose.position,
                rho[i],
                design,
                leg,
                branches.tms[i],
            )?;
            delta[i] = d;
            tms_residual[i] = res;
        }
        Ok(IkSolution {
            joints: JointState {
                rho,
                delta,
                sigma: [rts[0].sigma, rts[1].sigma],
            },
            tms_residual,
            rts_residual: [rts[0].residual, rts[1].residual],
            branches,
            rts_degenerate: [rts[0].degenerate, rts[1].degenerate],
        })
    })();
    (result, evals)
}

pub fn full_ik(
    pose: &TaskPose,
    design: &DesignVector,
    branches: Branches,
) -> Result<IkSolution, IkError> {
    full_ik_traced(pose, design, branches).0
}

/// First feasible branch assignment, searched independently per leg in the
/// order (RTS +, TMS +), (RTS +, TMS -), (RTS -, TMS +), (RTS -, TMS -).
/// Legs x and y do not interact, so this finds a solution whenever any of
/// the 16 assignments does.
pub fn solve_any(pose: &TaskPose, design: &DesignVector) -> Result<IkSolution, IkError> {
    let rho = tls_ik(&pose.position, design)?;
    let e = pose.axis();
    for leg in Leg::ANGULAR {
        if !rts_closure_axis(&e, design, leg).is_solvable() {
            return Err(IkError::Unreachable {
                stage: Stage::Rts,
                leg,
            });
        }
    }
    let mut joints = JointState {
        rho,
        delta: [0.0; 2],
        sigma: [0.0; 2],
    };
    let mut tms_residual = [0.0; 2];
    let mut rts_residual = [0.0; 2];
    let mut rts_degenerate = [false; 2];
    let mut branches = Branches::default();
    'legs: for leg in Leg::ANGULAR {
        let i = leg.index();
        for rb in Branch::BOTH {
            let rts = solve_rts_leg(&e, design, leg, rb)?;
            for tb in Branch::BOTH {
                if let Ok((delta, res)) =
                    solve_tms_leg(rts.sigma, &pose.position, rho[i], design, leg, tb)
                {
                    joints.delta[i] = delta;
                    joints.sigma[i] = rts.sigma;
                    tms_residual[i] = res;
                    rts_residual[i] = rts.residual;
                    rts_degenerate[i] = rts.degenerate;
                    branches.rts[i] = rb;
                    branches.tms[i] = tb;
                    continue 'legs;
                }
            }
        }
        return Err(IkError::Unreachable {
            stage: Stage::Tms,
            leg,
        });
    }
    Ok(IkSolution {
        joints,
        tms_residual,
        rts_residual,
        branches,
        rts_degenerate,
    })
}

/// All solutions over the 16 branch assignments.
pub fn all_solutions(pose: &TaskPose, design: &DesignVector) -> Vec<IkSolution> {
    Branches::all()
        .into_iter()
        .filter_map(|b| full_ik(pose, design, b).ok())
        .collect()
}

/// Local reachability index: 1 if some branch assignment solves the pose.
pub fn reach_local(pose: &TaskPose, design: &DesignVector) -> u8 {
    u8::from(solve_any(pose, design).is_ok())
}
