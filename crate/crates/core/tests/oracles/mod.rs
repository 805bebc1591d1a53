//! Reference implementations used only by tests: a one-sided Jacobi SVD,
//! loop-closure residuals written out per leg from the joint geometry, and
//! brute-force root sweeps that stand in for the closed-form solvers.
#![allow(dead_code)]

use std::f64::consts::PI;

use arcube::kinematics::{full_ik, Branches, Stage};
use arcube::velocity::{inverse_velocity, TaskRate};
use arcube::{DesignVector, JointState, Leg, TaskPose};
use nalgebra::{DMatrix, Vector3};

/// Singular values by one-sided Jacobi rotations (Hestenes), descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut m = if a.nrows() >= a.ncols() {
        a.clone()
    } else {
        a.transpose()
    };
    let n = m.ncols();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = m.column(p).norm_squared();
                let beta: f64 = m.column(q).norm_squared();
                let gamma: f64 = m.column(p).dot(&m.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-17 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m.nrows() {
                    let (x, y) = (m[(i, p)], m[(i, q)]);
                    m[(i, p)] = c * x - s * y;
                    m[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| m.column(j).norm()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Condition number from [`singular_values`]; infinite when the smallest
/// value is zero or negligible.
pub fn cond(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let (max, min) = (sv[0], *sv.last().unwrap());
    if max == 0.0 || min <= 1e-14 * max {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Components `(u, v, w)` of a vector in the frame of leg x, y or z.
pub fn components(leg: Leg, p: &Vector3<f64>) -> (f64, f64, f64) {
    match leg {
        Leg::X => (p.x, p.y, p.z),
        Leg::Y => (p.y, p.z, p.x),
        Leg::Z => (p.z, p.x, p.y),
    }
}

/// Unit vector along the `u`, `v`, `w` axis of a leg.
pub fn axes(leg: Leg) -> [Vector3<f64>; 3] {
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    match leg {
        Leg::X => [x, y, z],
        Leg::Y => [y, z, x],
        Leg::Z => [z, x, y],
    }
}

fn idx(leg: Leg) -> usize {
    match leg {
        Leg::X => 0,
        Leg::Y => 1,
        Leg::Z => 2,
    }
}

/// Slider position along the leg axis produced by actuator angle `rho`.
pub fn slider(design: &DesignVector, leg: Leg, rho: f64) -> f64 {
    let i = idx(leg);
    -design.p[i] * rho.sin() - design.f[i] - design.r
}

pub fn forward_position(design: &DesignVector, rho: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(
        slider(design, Leg::X, rho[0]),
        slider(design, Leg::Y, rho[1]),
        slider(design, Leg::Z, rho[2]),
    )
}

/// Four-bar loop of leg x or y: squared coupler length minus `c^2`.
pub fn four_bar_residual(
    design: &DesignVector,
    leg: Leg,
    position: &Vector3<f64>,
    rho: f64,
    delta: f64,
    sigma: f64,
) -> f64 {
    let i = idx(leg);
    let (vi, wi) = ((i + 1) % 3, (i + 2) % 3);
    let (_, pv, pw) = components(leg, position);
    // coupler end on the output side, relative to the crank pivot
    let end_v = pv + design.f[vi] + design.r + design.t[i] * sigma.sin();
    let end_w = pw + design.f[wi] + design.r - design.o[i] - design.t[i] * sigma.cos();
    let crank_v = design.d[i] * delta.sin();
    let crank_w = -design.d[i] * delta.cos() + design.p[i] * rho.cos();
    let (dv, dw) = (end_v - crank_v, end_w - crank_w);
    dv * dv + dw * dw - design.c[i] * design.c[i]
}

/// Intermediate axis of the spherical five-bar of leg x or y.
pub fn intermediate(design: &DesignVector, leg: Leg, sigma: f64) -> Vector3<f64> {
    let [u, v, w] = axes(leg);
    let a = design.alpha[idx(leg)];
    u * a.cos() + w * (a.sin() * sigma.cos()) - v * (a.sin() * sigma.sin())
}

pub fn spherical_residual(design: &DesignVector, leg: Leg, sigma: f64, e: &Vector3<f64>) -> f64 {
    intermediate(design, leg, sigma).dot(e) - design.beta[idx(leg)].cos()
}

pub fn axis(psi: f64, theta: f64) -> Vector3<f64> {
    Vector3::new(
        psi.cos() * theta.sin(),
        psi.sin() * theta.sin(),
        theta.cos(),
    )
}

/// `v` rotated by `angle` about unit `k`.
pub fn rotate(v: &Vector3<f64>, k: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    v * angle.cos() + k.cross(v) * angle.sin() + k * (k.dot(v) * (1.0 - angle.cos()))
}

fn bisect(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Point in `[a, b]` where `s * f` is smallest, by golden-section search.
fn golden_extremum(f: &dyn Fn(f64) -> f64, s: f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (s * f(c), s * f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = s * f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = s * f(d);
        }
    }
    0.5 * (a + b)
}

/// All roots of `f` on `[lo, hi]` found by sampling `n` cells, bisecting
/// sign changes, and refining interior extrema that might dip across zero
/// between samples. `periodic` joins the last cell to the first.
pub fn sweep_roots(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize, periodic: bool) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| lo + h * k as f64).collect();
    let mut ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    if periodic {
        ys[n] = ys[0];
    }
    let mut roots = Vec::new();
    for k in 0..n {
        if ys[k] == 0.0 {
            roots.push(xs[k]);
        } else if ys[k] * ys[k + 1] < 0.0 {
            roots.push(bisect(f, xs[k], xs[k + 1]));
        }
    }
    if !periodic && ys[n] == 0.0 {
        roots.push(xs[n]);
    }
    // extrema between samples of equal sign
    let at = |k: isize| -> (f64, f64) {
        if periodic {
            let kk = k.rem_euclid(n as isize) as usize;
            let shift = ((k - kk as isize) / n as isize) as f64 * (hi - lo);
            (xs[kk] + shift, ys[kk])
        } else {
            (xs[k as usize], ys[k as usize])
        }
    };
    let (first, last) = if periodic {
        (0, n as isize)
    } else {
        (1, n as isize)
    };
    for k in first..last {
        let (x0, y0) = at(k - 1);
        let (_, y1) = at(k);
        let (x2, y2) = at(k + 1);
        let same_sign = y0 * y1 > 0.0 && y1 * y2 > 0.0;
        let toward_zero = y1.abs() <= y0.abs() && y1.abs() <= y2.abs();
        if !same_sign || !toward_zero {
            continue;
        }
        let s = y1.signum();
        let xm = golden_extremum(f, s, x0, x2);
        let ym = f(xm);
        if ym == 0.0 {
            roots.push(xm);
        } else if ym * s < 0.0 {
            roots.push(bisect(f, x0, xm));
            roots.push(bisect(f, xm, x2));
        }
    }
    roots
}

/// Cell count of the angular sweeps.
pub const SWEEP_CELLS: usize = 48;

/// Actuator angle solving leg `leg` of the translational stage by sweeping
/// the monotone slider law.
pub fn tls_sweep(design: &DesignVector, leg: Leg, target: f64) -> Option<f64> {
    let f = |rho: f64| slider(design, leg, rho) - target;
    sweep_roots(&f, -PI / 2.0, PI / 2.0, SWEEP_CELLS, false)
        .into_iter()
        .next()
}

pub fn rts_sweep(design: &DesignVector, leg: Leg, e: &Vector3<f64>) -> Vec<f64> {
    let f = |s: f64| spherical_residual(design, leg, s, e);
    sweep_roots(&f, -PI, PI, SWEEP_CELLS, true)
}

pub fn tms_sweep(
    design: &DesignVector,
    leg: Leg,
    position: &Vector3<f64>,
    rho: f64,
    sigma: f64,
) -> Vec<f64> {
    let f = |d: f64| four_bar_residual(design, leg, position, rho, d, sigma);
    sweep_roots(&f, -PI, PI, SWEEP_CELLS, true)
}

/// Reachability by stage-wise brute force: `Err(stage)` names the first
/// stage (TLS, then RTS over both legs, then TMS) without a solution.
pub fn oracle_reach(
    pose: &TaskPose,
    design: &DesignVector,
    rts_roots: Option<&[Vec<f64>; 2]>,
) -> Result<(), Stage> {
    let mut rho = [0.0; 3];
    for leg in [Leg::X, Leg::Y, Leg::Z] {
        let (u, _, _) = components(leg, &pose.position);
        rho[idx(leg)] = tls_sweep(design, leg, u).ok_or(Stage::Tls)?;
    }
    let e = axis(pose.psi, pose.theta);
    let computed;
    let roots = match rts_roots {
        Some(r) => r,
        None => {
            computed = [rts_sweep(design, Leg::X, &e), rts_sweep(design, Leg::Y, &e)];
            &computed
        }
    };
    if roots.iter().any(|r| r.is_empty()) {
        return Err(Stage::Rts);
    }
    for leg in [Leg::X, Leg::Y] {
        let i = idx(leg);
        let solvable = roots[i]
            .iter()
            .any(|&s| !tms_sweep(design, leg, &pose.position, rho[i], s).is_empty());
        if !solvable {
            return Err(Stage::Tms);
        }
    }
    Ok(())
}

/// Translational neutral point (all actuator angles zero).
pub fn neutral(design: &DesignVector) -> Vector3<f64> {
    forward_position(design, &[0.0; 3])
}

/// Uniform random pose within `half` mm of the neutral point, any azimuth,
/// polar angle up to one radian.
pub fn random_pose(design: &DesignVector, rng: &mut impl rand::Rng, half: f64) -> TaskPose {
    let c = neutral(design);
    TaskPose::new(
        c.x + rng.random_range(-half..=half),
        c.y + rng.random_range(-half..=half),
        c.z + rng.random_range(-half..=half),
        rng.random_range(-PI..PI),
        rng.random_range(0.0..=1.0),
    )
}

const FD_H: f64 = 1e-6;

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(FD_H) - f(-FD_H)) / (2.0 * FD_H)
}

/// Blockwise finite-difference error: max deviation over the block scale,
/// with the scale floored so that deviations below 1e-9 pass a 1e-5 test.
pub fn fd_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(1e-4)
}

/// Central differences (step 1e-6) of the loop residuals at a solved
/// configuration, ordered LV, AV, sigma, AS, AP, rho, delta.
pub fn fd_blocks(pose: &TaskPose, j: &JointState, d: &DesignVector) -> Vec<DMatrix<f64>> {
    let pos = pose.position;
    let e = axis(pose.psi, pose.theta);
    let lv = DMatrix::from_fn(3, 3, |r, c| {
        central(|h| {
            let mut rho = j.rho;
            rho[c] += h;
            forward_position(d, &rho)[r]
        })
    });
    let mut av = DMatrix::zeros(2, 3);
    let mut ap = DMatrix::zeros(2, 3);
    let mut sigma = DMatrix::zeros(2, 2);
    let mut sph = DMatrix::zeros(2, 2);
    let mut rho = DMatrix::zeros(2, 2);
    let mut delta = DMatrix::zeros(2, 2);
    for (leg, i) in [(Leg::X, 0), (Leg::Y, 1)] {
        let f =
            |p: Vector3<f64>, r: f64, dl: f64, sg: f64| four_bar_residual(d, leg, &p, r, dl, sg);
        for k in 0..3 {
            let dir = Vector3::ith(k, 1.0);
            av[(i, k)] = -central(|h| f(pos + dir * h, j.rho[i], j.delta[i], j.sigma[i]));
            ap[(i, k)] = -central(|h| spherical_residual(d, leg, j.sigma[i], &rotate(&e, &dir, h)));
        }
        rho[(i, i)] = central(|h| f(pos, j.rho[i] + h, j.delta[i], j.sigma[i]));
        delta[(i, i)] = central(|h| f(pos, j.rho[i], j.delta[i] + h, j.sigma[i]));
        sigma[(i, i)] = -central(|h| f(pos, j.rho[i], j.delta[i], j.sigma[i] + h));
        sph[(i, i)] = central(|h| spherical_residual(d, leg, j.sigma[i] + h, &e));
    }
    vec![lv, av, sigma, sph, ap, rho, delta]
}

/// A helical 5-DoF path with a slowly precessing drill axis, and its rate.
pub fn helix(start: &TaskPose, s: f64) -> (TaskPose, TaskRate) {
    let (r, w) = (3.0, 2.0);
    let pose = TaskPose {
        position: start.position + Vector3::new(r * (w * s).cos() - r, r * (w * s).sin(), 5.0 * s),
        psi: start.psi + 0.3 * s,
        theta: start.theta + 0.05 * (w * s).sin(),
    };
    let rate = TaskRate {
        v: Vector3::new(-r * w * (w * s).sin(), r * w * (w * s).cos(), 5.0),
        psi_dot: 0.3,
        theta_dot: 0.05 * w * (w * s).cos(),
    };
    (pose, rate)
}

fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Worst relative mismatch, over `samples` points of [`helix`] from
/// `start`, between the joint rates of the assembled velocity relation and
/// central differences of the IK solution under fixed `branches`. `None`
/// when the path leaves the reachable, nonsingular set.
pub fn path_error(
    d: &DesignVector,
    start: &TaskPose,
    branches: Branches,
    samples: usize,
) -> Option<f64> {
    let ik = |s: f64| full_ik(&helix(start, s).0, d, branches).ok();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let s = k as f64 / samples as f64;
        let (pose, rate) = helix(start, s);
        let q = inverse_velocity(&rate, &pose, &ik(s)?, d).ok()?;
        let (a, b) = (ik(s + h)?, ik(s - h)?);
        let num = |x: f64, y: f64| wrap(x - y) / (2.0 * h);
        let numeric = [
            num(a.joints.rho[0], b.joints.rho[0]),
            num(a.joints.rho[1], b.joints.rho[1]),
            num(a.joints.rho[2], b.joints.rho[2]),
            num(a.joints.delta[0], b.joints.delta[0]),
            num(a.joints.delta[1], b.joints.delta[1]),
        ];
        let analytic = [
            q.rho_dot[0],
            q.rho_dot[1],
            q.rho_dot[2],
            q.delta_dot[0],
            q.delta_dot[1],
        ];
        let scale = numeric.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for (x, y) in analytic.iter().zip(&numeric) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    Some(worst)
}
