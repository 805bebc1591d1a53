//! Shared geometric vocabulary: legs and their frames, the drill axis, the
//! design vector and the pose/joint value types.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units;

/// Number of scalar dimensions in a [`DesignVector`].
pub const DESIGN_DIM: usize = 23;

/// One of the three legs. Legs `X` and `Y` carry the transmitting and
/// rotational stages, `Z` is a plain translational leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    X,
    Y,
    Z,
}

impl Leg {
    pub const ALL: [Leg; 3] = [Leg::X, Leg::Y, Leg::Z];
    /// Legs with a four-bar transmission and a spherical leg.
    pub const ANGULAR: [Leg; 2] = [Leg::X, Leg::Y];

    pub fn index(self) -> usize {
        match self {
            Leg::X => 0,
            Leg::Y => 1,
            Leg::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::X => "x",
            Leg::Y => "y",
            Leg::Z => "z",
        }
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-leg right-handed triad `(u, v, w)`, a cyclic permutation of the
/// mechanism axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegFrame {
    pub leg: Leg,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl LegFrame {
    /// Components of a mechanism-frame vector along `(u, v, w)`.
    pub fn local(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (self.u.dot(p), self.v.dot(p), self.w.dot(p))
    }
}

pub fn leg_frame(leg: Leg) -> LegFrame {
    let (u, v, w) = match leg {
        Leg::X => (Vector3::x(), Vector3::y(), Vector3::z()),
        Leg::Y => (Vector3::y(), Vector3::z(), Vector3::x()),
        Leg::Z => (Vector3::z(), Vector3::x(), Vector3::y()),
    };
    LegFrame { leg, u, v, w }
}

/// Drill axis from azimuth `psi` about `z` and polar angle `theta` from `z`.
pub fn drill_axis(psi: f64, theta: f64) -> Vector3<f64> {
    let (sp, cp) = psi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Vector3::new(cp * st, sp * st, ct)
}

/// Partial derivatives of [`drill_axis`] with respect to `psi` and `theta`.
pub fn drill_axis_partials(psi: f64, theta: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (sp, cp) = psi.sin_cos();
    let (st, ct) = theta.sin_cos();
    (
        Vector3::new(-sp * st, cp * st, 0.0),
        Vector3::new(cp * ct, sp * ct, -st),
    )
}

/// Inverse of [`drill_axis`] for a unit vector. At the poles `psi` is 0.
pub fn axis_angles(e: &Vector3<f64>) -> (f64, f64) {
    let theta = e.z.clamp(-1.0, 1.0).acos();
    let psi = if e.x == 0.0 && e.y == 0.0 {
        0.0
    } else {
        e.y.atan2(e.x)
    };
    (psi, theta)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// 3T2R end-effector pose: drill-tip position (mm) and drill-axis angles (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskPose {
    pub position: Vector3<f64>,
    pub psi: f64,
    pub theta: f64,
}

impl TaskPose {
    pub fn new(x: f64, y: f64, z: f64, psi: f64, theta: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            psi,
            theta,
        }
    }

    pub fn axis(&self) -> Vector3<f64> {
        drill_axis(self.psi, self.theta)
    }
}

/// Active joint values plus the cached four-bar output angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointState {
    /// Proximal joints of legs x, y, z (rad).
    pub rho: [f64; 3],
    /// Distal joints of legs x, y (rad).
    pub delta: [f64; 2],
    /// Four-bar output angles of legs x, y (rad), equal to the spherical
    /// stage inputs.
    pub sigma: [f64; 2],
}

/// Joint axes of the spherical leg `u` at a solved configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalLegAxes {
    pub input: Vector3<f64>,
    pub intermediate: Vector3<f64>,
    pub end_effector: Vector3<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("design parameter {name} = {value} is out of its valid range")]
    OutOfRange { name: String, value: f64 },
    #[error("design parameter {name} is not finite")]
    NotFinite { name: String },
    #[error("expected {DESIGN_DIM} design genes, got {0}")]
    GeneCount(usize),
}

/// The 23 mechanism dimensions. Lengths are in mm, spherical link angles in
/// radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignVector {
    /// Base position offsets, legs x, y, z.
    pub m: [f64; 3],
    /// Frame links.
    pub f: [f64; 3],
    /// Proximal links.
    pub p: [f64; 3],
    /// Distal links.
    pub d: [f64; 3],
    /// Coupling links, legs x, y.
    pub c: [f64; 2],
    /// Transmitting links, legs x, y.
    pub t: [f64; 2],
    /// Radius shared by the translational and rotational stages.
    pub r: f64,
    /// Transmitting offsets along `w`, legs x, y. May be negative.
    pub o: [f64; 2],
    /// Proximal spherical link angles, legs x, y.
    pub alpha: [f64; 2],
    /// Distal spherical link angles, legs x, y.
    pub beta: [f64; 2],
}

/// Gene names in the order used by [`DesignVector::to_genes`].
pub const GENE_NAMES: [&str; DESIGN_DIM] = [
    "m_x", "m_y", "m_z", "f_x", "f_y", "f_z", "p_x", "p_y", "p_z", "d_x", "d_y", "d_z", "c_x",
    "c_y", "t_x", "t_y", "r", "o_x", "o_y", "alpha_x", "alpha_y", "beta_x", "beta_y",
];

impl DesignVector {
    /// The optimum dimensions reported for the cervical trajectories. The
    /// spherical link angles are tabulated in degrees.
    pub fn reference() -> Self {
        Self {
            m: [31.8694, 11.9589, 192.0769],
            f: [123.1147, 116.9719, 56.7787],
            p: [134.099, 149.9886, 99.8766],
            d: [79.2596, 99.9402, 53.5671],
            c: [139.8911, 106.8319],
            t: [70.9301, 65.3946],
            r: 70.4466,
            o: [-19.2229, 43.2917],
            alpha: [52.6402_f64.to_radians(), 66.446_f64.to_radians()],
            beta: [50.0038_f64.to_radians(), 62.1208_f64.to_radians()],
        }
    }

    pub fn to_genes(&self) -> [f64; DESIGN_DIM] {
        let mut g = [0.0; DESIGN_DIM];
        g[0..3].copy_from_slice(&self.m);
        g[3..6].copy_from_slice(&self.f);
        g[6..9].copy_from_slice(&self.p);
        g[9..12].copy_from_slice(&self.d);
        g[12..14].copy_from_slice(&self.c);
        g[14..16].copy_from_slice(&self.t);
        g[16] = self.r;
        g[17..19].copy_from_slice(&self.o);
        g[19..21].copy_from_slice(&self.alpha);
        g[21..23].copy_from_slice(&self.beta);
        g
    }

    pub fn from_genes(g: &[f64]) -> Result<Self, DesignError> {
        if g.len() != DESIGN_DIM {
            return Err(DesignError::GeneCount(g.len()));
        }
        let pair = |i: usize| [g[i], g[i + 1]];
        let triple = |i: usize| [g[i], g[i + 1], g[i + 2]];
        Ok(Self {
            m: triple(0),
            f: triple(3),
            p: triple(6),
            d: triple(9),
            c: pair(12),
            t: pair(14),
            r: g[16],
            o: pair(17),
            alpha: pair(19),
            beta: pair(21),
        })
    }

    /// Checks finiteness, strictly positive lengths and spherical angles in
    /// `(0, pi)`.
    pub fn validate(&self) -> Result<(), DesignError> {
        let genes = self.to_genes();
        for (name, &value) in GENE_NAMES.iter().zip(genes.iter()) {
            if !value.is_finite() {
                return Err(DesignError::NotFinite {
                    name: name.to_string(),
                });
            }
        }
        for (i, (&name, &value)) in GENE_NAMES.iter().zip(genes.iter()).enumerate() {
            let ok = match i {
                0..=2 | 17 | 18 => true,
                3..=16 => value > 0.0,
                _ => value > 0.0 && value < PI,
            };
            if !ok {
                return Err(DesignError::OutOfRange {
                    name: name.to_string(),
                    value,
                });
            }
        }
        Ok(())
    }

    /// Fixed input axis `u_alpha` of spherical leg `leg` (x or y only).
    pub fn input_axis(&self, leg: Leg) -> Vector3<f64> {
        leg_frame(leg).u
    }
}

/// On-disk form of a design: spherical angles in degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    m: [f64; 3],
    f: [f64; 3],
    p: [f64; 3],
    d: [f64; 3],
    c: [f64; 2],
    t: [f64; 2],
    r: f64,
    o: [f64; 2],
    alpha_deg: [f64; 2],
    beta_deg: [f64; 2],
}

#[derive(Debug, Error)]
pub enum DesignIoError {
    #[error("design JSON parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] DesignError),
}

impl DesignVector {
    pub fn from_json_str(s: &str) -> Result<Self, DesignIoError> {
        let file: DesignFile = serde_json::from_str(s).map_err(|e| DesignIoError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let design = Self {
            m: file.m,
            f: file.f,
            p: file.p,
            d: file.d,
            c: file.c,
            t: file.t,
            r: file.r,
            o: file.o,
            alpha: file.alpha_deg.map(f64::to_radians),
            beta: file.beta_deg.map(f64::to_radians),
        };
        design.validate()?;
        Ok(design)
    }

    /// Pretty JSON with angles rendered as the shortest decimal degrees that
    /// convert back to the stored radians exactly.
    pub fn to_json_string(&self) -> String {
        let file = DesignFile {
            m: self.m,
            f: self.f,
            p: self.p,
            d: self.d,
            c: self.c,
            t: self.t,
            r: self.r,
            o: self.o,
            alpha_deg: self.alpha.map(units::rad_to_deg_exact),
            beta_deg: self.beta.map(units::rad_to_deg_exact),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("design serializes");
        s.push('\n');
        s
    }
}
