//! Planar vector helpers and the two intersection primitives the fast search
//! is built on.

use crate::error::{Error, Result};

/// A point or vector in the plane, metres.
pub type Point = [f64; 2];

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// z-component of `a × b`.
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub fn distance(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// `a / ‖a‖`; the zero vector comes back unchanged.
pub fn unit(a: Point) -> Point {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

/// Spatial direction of `towards` as seen by an array whose normal is
/// `normal`: `d₁q₂ − d₂q₁` with `d` the unit direction. This is the sine of
/// the angle from the normal to `d`, positive clockwise, and matches the BS
/// convention where a point `r·(θ, √(1−θ²))` is seen at direction `θ`.
pub fn spatial_direction(towards: Point, normal: Point) -> f64 {
    let d = unit(towards);
    cross(d, normal)
}

/// `r·(θ, √(1−θ²))`, the point at range `r` and BS-side direction `θ`.
pub fn point_at(range: f64, theta: f64) -> Point {
    let t = theta.clamp(-1.0, 1.0);
    [range * t, range * (1.0 - t * t).sqrt()]
}

/// Counter-clockwise rotation of `v` by the angle whose sine is `s`, taking
/// the cosine non-negative: `[[c, −s], [s, c]]·v`.
pub fn rotate_by_sine(v: Point, s: f64) -> Point {
    let s = s.clamp(-1.0, 1.0);
    let c = (1.0 - s * s).sqrt();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Intersections of two circles. Tangency within a relative tolerance of
/// `1e-12` reports a single point.
pub fn circle_circle_intersect(c1: Point, r1: f64, c2: Point, r2: f64) -> Result<Vec<Point>> {
    if r1 <= 0.0 || r2 <= 0.0 || !r1.is_finite() || !r2.is_finite() {
        return Err(Error::InvalidDimension(format!("radii must be positive, got {r1} and {r2}")));
    }
    let d = distance(c1, c2);
    let tol = 1e-12 * r1.max(r2).max(d);
    if d <= tol {
        return if (r1 - r2).abs() <= tol { Err(Error::DegenerateCircles) } else { Ok(Vec::new()) };
    }
    if d > r1 + r2 + tol || d < (r1 - r2).abs() - tol {
        return Ok(Vec::new());
    }
    let e = scale(sub(c2, c1), 1.0 / d);
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h2 = r1 * r1 - a * a;
    let base = add(c1, scale(e, a));
    if h2 <= (tol * r1.max(d)).max(0.0) {
        return Ok(vec![base]);
    }
    let h = h2.sqrt();
    let perp = [-e[1], e[0]];
    Ok(vec![add(base, scale(perp, -h)), add(base, scale(perp, h))])
}

/// Points on the line through the origin along `line_dir` whose distances to
/// `f1` and `f2` sum to `sum_dist`. Ordered by decreasing position along
/// `line_dir`.
pub fn ellipse_line_intersect(f1: Point, f2: Point, sum_dist: f64, line_dir: Point) -> Result<Vec<Point>> {
    let focal = distance(f1, f2);
    if !(sum_dist > focal) {
        return Err(Error::InvalidEllipse { sum: sum_dist, focal });
    }
    let u = unit(line_dir);
    let centre = scale(add(f1, f2), 0.5);
    let a = 0.5 * sum_dist;
    let c = 0.5 * focal;
    let b2 = a * a - c * c;
    let e = if focal > 0.0 { scale(sub(f2, f1), 1.0 / focal) } else { [1.0, 0.0] };
    let ep = [-e[1], e[0]];
    // x(t) = t·u; local coordinates X = (x − centre)·e, Y = (x − centre)·e⊥.
    let (ue, up) = (dot(u, e), dot(u, ep));
    let (ce, cp) = (dot(centre, e), dot(centre, ep));
    let qa = ue * ue / (a * a) + up * up / b2;
    let qb = -2.0 * (ue * ce / (a * a) + up * cp / b2);
    let qc = ce * ce / (a * a) + cp * cp / b2 - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    let tol = 1e-12 * qb.abs().max(4.0 * qa * qc.abs()).max(f64::MIN_POSITIVE);
    if disc < -tol {
        return Ok(Vec::new());
    }
    if disc <= tol {
        return Ok(vec![scale(u, -qb / (2.0 * qa))]);
    }
    let sq = disc.sqrt();
    // Stable quadratic roots.
    let q = -0.5 * (qb + qb.signum() * sq);
    let (t1, t2) = if q == 0.0 {
        let t = (-qc / qa).sqrt();
        (t, -t)
    } else {
        let r1 = q / qa;
        let r2 = qc / q;
        (r1.max(r2), r1.min(r2))
    };
    Ok(vec![scale(u, t1), scale(u, t2)])
}
