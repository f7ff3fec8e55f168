//! Exact 2D primitives for the evidence terms: distances, segment/circle
//! intersection counting, the tangent-cone half-angle and the gaze-motion angle.
//!
//! All tolerances are relative to the circle radius or absolute in pixels with
//! [`EPS`]; values within `EPS` of a branch boundary take the non-error branch.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Numerical guard used on every division and branch boundary.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
    #[error("tangent cone undefined: point lies inside the circle")]
    ConeUndefined,
    #[error("zero gaze displacement")]
    ZeroDisplacement,
    #[error("gaze lies on the circle center")]
    GazeOnCenter,
    #[error("circle radius must be strictly positive and finite")]
    InvalidRadius,
}

/// A point in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point2, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidRadius);
        }
        Ok(Self { center, radius })
    }

    /// Closed-disc membership.
    pub fn contains(&self, p: Point2) -> bool {
        p.distance(self.center) <= self.radius
    }
}

/// Number of points of the closed segment `[a, b]` that lie on the boundary of `c`.
///
/// Tangency counts as one intersection, and an endpoint lying on the boundary
/// counts as the intersection it is.
pub fn segment_circle_intersections(a: Point2, b: Point2, c: &Circle) -> Result<u8, GeometryError> {
    let d = b - a;
    let len_sq = d.dot(d);
    if len_sq.sqrt() <= EPS {
        return Err(GeometryError::DegenerateSegment);
    }
    let f = a - c.center;
    // foot of the perpendicular from the center onto the supporting line
    let t0 = -f.dot(d) / len_sq;
    let foot = f + d * t0;
    let r_sq = c.radius * c.radius;
    let half_chord_sq = r_sq - foot.dot(foot);

    let on_segment = |t: f64| (-EPS..=1.0 + EPS).contains(&t);

    if half_chord_sq < -EPS * r_sq {
        return Ok(0);
    }
    if half_chord_sq <= EPS * r_sq {
        return Ok(u8::from(on_segment(t0)));
    }
    let dt = (half_chord_sq / len_sq).sqrt();
    Ok(u8::from(on_segment(t0 - dt)) + u8::from(on_segment(t0 + dt)))
}

/// Cosine of the tangent-cone half-angle seen from a point at distance
/// `d_prev` from the center of a circle of radius `r`.
pub fn tangent_cone_cos(d_prev: f64, r: f64) -> Result<f64, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::InvalidRadius);
    }
    if d_prev < r * (1.0 - EPS) {
        return Err(GeometryError::ConeUndefined);
    }
    let ratio = (r / d_prev.max(EPS)).min(1.0);
    Ok((1.0 - ratio * ratio).max(0.0).sqrt())
}

/// Cosine of the angle between the gaze displacement `g_now - g_prev` and the
/// direction from `g_now` to `center`.
pub fn motion_cos(g_prev: Point2, g_now: Point2, center: Point2) -> Result<f64, GeometryError> {
    let disp = g_now - g_prev;
    let to_center = center - g_now;
    let disp_len = disp.norm();
    if disp_len <= EPS {
        return Err(GeometryError::ZeroDisplacement);
    }
    let center_dist = to_center.norm();
    if center_dist <= EPS {
        return Err(GeometryError::GazeOnCenter);
    }
    Ok((disp.dot(to_center) / (disp_len * center_dist)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_circle_10() -> Circle {
        Circle::new(Point2::new(0.0, 0.0), 10.0).unwrap()
    }

    #[test]
    fn chord_through_center_hits_twice() {
        let n = segment_circle_intersections(Point2::new(0.0, 20.0), Point2::new(0.0, -20.0), &unit_circle_10());
        assert_eq!(n, Ok(2));
    }

    #[test]
    fn segment_ending_inside_hits_once() {
        let n = segment_circle_intersections(Point2::new(0.0, 20.0), Point2::new(0.0, 5.0), &unit_circle_10());
        assert_eq!(n, Ok(1));
    }

    #[test]
    fn distant_line_misses() {
        let n = segment_circle_intersections(Point2::new(20.0, 20.0), Point2::new(20.0, -20.0), &unit_circle_10());
        assert_eq!(n, Ok(0));
    }

    #[test]
    fn tangent_line_counts_once() {
        let n = segment_circle_intersections(Point2::new(10.0, 20.0), Point2::new(10.0, -20.0), &unit_circle_10());
        assert_eq!(n, Ok(1));
        // tangent line whose touching point lies outside the segment
        let n = segment_circle_intersections(Point2::new(10.0, 20.0), Point2::new(10.0, 5.0), &unit_circle_10());
        assert_eq!(n, Ok(0));
    }

    #[test]
    fn boundary_endpoint_counts() {
        // starts on the boundary and leaves through the far side
        let n = segment_circle_intersections(Point2::new(0.0, 10.0), Point2::new(0.0, -20.0), &unit_circle_10());
        assert_eq!(n, Ok(2));
        // ends exactly on the boundary from outside
        let n = segment_circle_intersections(Point2::new(0.0, 30.0), Point2::new(0.0, 10.0), &unit_circle_10());
        assert_eq!(n, Ok(1));
    }

    #[test]
    fn segment_fully_inside_has_no_boundary_points() {
        let n = segment_circle_intersections(Point2::new(0.0, 2.0), Point2::new(0.0, -2.0), &unit_circle_10());
        assert_eq!(n, Ok(0));
    }

    #[test]
    fn degenerate_segment_rejected() {
        let p = Point2::new(3.0, 3.0);
        assert_eq!(
            segment_circle_intersections(p, p, &unit_circle_10()),
            Err(GeometryError::DegenerateSegment)
        );
    }

    #[test]
    fn cone_closed_form() {
        assert_abs_diff_eq!(tangent_cone_cos(20.0, 10.0).unwrap(), 0.866_025_403_784_438_6, epsilon = 1e-12);
        assert_abs_diff_eq!(tangent_cone_cos(10.0, 10.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            tangent_cone_cos(10.0 * 2f64.sqrt(), 10.0).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cone_inside_is_error_but_near_boundary_is_not() {
        assert_eq!(tangent_cone_cos(5.0, 10.0), Err(GeometryError::ConeUndefined));
        assert_eq!(tangent_cone_cos(10.0 * (1.0 - 1e-12), 10.0), Ok(0.0));
    }

    #[test]
    fn motion_cos_examples() {
        let o = Point2::new(0.0, 0.0);
        assert_abs_diff_eq!(motion_cos(Point2::new(0.0, 20.0), Point2::new(0.0, 15.0), o).unwrap(), 1.0);
        assert_abs_diff_eq!(motion_cos(Point2::new(0.0, 20.0), Point2::new(0.0, 25.0), o).unwrap(), -1.0);
        // (5,0) against (-5,-20): -25 / (5 * sqrt(425))
        let expected = -25.0 / (5.0 * 425f64.sqrt());
        assert_abs_diff_eq!(
            motion_cos(Point2::new(0.0, 20.0), Point2::new(5.0, 20.0), o).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, -0.2425, epsilon = 1e-4);
    }

    #[test]
    fn motion_cos_rejects_degenerate_inputs() {
        let o = Point2::new(0.0, 0.0);
        let p = Point2::new(1.0, 1.0);
        assert_eq!(motion_cos(p, p, o), Err(GeometryError::ZeroDisplacement));
        assert_eq!(motion_cos(p, o, o), Err(GeometryError::GazeOnCenter));
    }

    #[test]
    fn invalid_radius_rejected() {
        assert_eq!(Circle::new(Point2::default(), 0.0), Err(GeometryError::InvalidRadius));
        assert_eq!(Circle::new(Point2::default(), f64::NAN), Err(GeometryError::InvalidRadius));
    }

    fn coord() -> impl Strategy<Value = f64> {
        -500.0..500.0f64
    }

    proptest! {
        #[test]
        fn outputs_stay_in_range(ax in coord(), ay in coord(), bx in coord(), by in coord(),
                                 cx in coord(), cy in coord(), r in 0.5..200.0f64) {
            let a = Point2::new(ax, ay);
            let b = Point2::new(bx, by);
            let c = Point2::new(cx, cy);
            if let Ok(v) = motion_cos(a, b, c) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
            if let Ok(v) = tangent_cone_cos(a.distance(c), r) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Ok(n) = segment_circle_intersections(a, b, &Circle::new(c, r).unwrap()) {
                prop_assert!(n <= 2);
            }
        }

        #[test]
        fn intersections_symmetric(ax in coord(), ay in coord(), bx in coord(), by in coord(),
                                   cx in coord(), cy in coord(), r in 0.5..200.0f64) {
            let a = Point2::new(ax, ay);
            let b = Point2::new(bx, by);
            let circle = Circle::new(Point2::new(cx, cy), r).unwrap();
            prop_assert_eq!(
                segment_circle_intersections(a, b, &circle),
                segment_circle_intersections(b, a, &circle)
            );
        }

        #[test]
        fn similarity_invariant(ax in coord(), ay in coord(), bx in coord(), by in coord(),
                                cx in coord(), cy in coord(), r in 0.5..200.0f64, s in 0.1..10.0f64) {
            let (a, b, c) = (Point2::new(ax, ay), Point2::new(bx, by), Point2::new(cx, cy));
            let circle = Circle::new(c, r).unwrap();
            let scaled = Circle::new(c * s, r * s).unwrap();
            prop_assert_eq!(
                segment_circle_intersections(a, b, &circle),
                segment_circle_intersections(a * s, b * s, &scaled)
            );
            if let (Ok(u), Ok(v)) = (motion_cos(a, b, c), motion_cos(a * s, b * s, c * s)) {
                prop_assert!((u - v).abs() < 1e-9);
            }
            if let (Ok(u), Ok(v)) = (tangent_cone_cos(a.distance(c), r), tangent_cone_cos((a * s).distance(c * s), r * s)) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
