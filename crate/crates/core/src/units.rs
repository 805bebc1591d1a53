//! Degree/radian conversion at the file boundary.

/// Shortest decimal degree value whose `to_radians()` reproduces `rad`
/// bit-exactly, so that files written from radians parse back losslessly.
pub fn rad_to_deg_exact(rad: f64) -> f64 {
    let deg = rad.to_degrees();
    if !deg.is_finite() {
        return deg;
    }
    for digits in 0..17 {
        let candidate: f64 = format!("{:.*e}", digits, deg)
            .parse()
            .expect("formatted float parses");
        if candidate.to_radians() == rad {
            return candidate;
        }
    }
    // to_degrees/to_radians are not exact inverses; look a few ulps around
    let (mut lo, mut hi) = (deg, deg);
    for _ in 0..8 {
        lo = lo.next_down();
        hi = hi.next_up();
        for candidate in [lo, hi] {
            if candidate.to_radians() == rad {
                return candidate;
            }
        }
    }
    deg
}

/// Shortest round-trip decimal, `inf`/`-inf` for infinities.
pub fn format_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}
