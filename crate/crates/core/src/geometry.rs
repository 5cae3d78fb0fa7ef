//! Oriented boxes and the box-centred ("canonical") coordinate frame.

use diffcore::Real;
use std::f64::consts::PI;

pub type Point = [Real; 3];

/// 7-DoF box: centre, size and yaw. `l` runs along the heading, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub x: Real,
    pub y: Real,
    pub z: Real,
    pub w: Real,
    pub l: Real,
    pub h: Real,
    pub theta: Real,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: Real) -> Real {
    let two_pi = 2.0 * PI as Real;
    let mut r = (a + PI as Real).rem_euclid(two_pi) - PI as Real;
    if r <= -(PI as Real) {
        r += two_pi;
    }
    r
}

impl ObjectState {
    pub fn new(x: Real, y: Real, z: Real, w: Real, l: Real, h: Real, theta: Real) -> Self {
        ObjectState {
            x,
            y,
            z,
            w,
            l,
            h,
            theta: normalize_angle(theta),
        }
    }

    pub fn center(&self) -> Point {
        [self.x, self.y, self.z]
    }

    pub fn has_positive_size(&self) -> bool {
        self.w > 0.0 && self.l > 0.0 && self.h > 0.0
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.theta]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn volume(&self) -> Real {
        self.w * self.l * self.h
    }

    /// World point expressed in this box's frame: translate to the centre,
    /// then rotate by `-theta`.
    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.z]
    }

    pub fn from_local(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        [
            c * p[0] - s * p[1] + self.x,
            s * p[0] + c * p[1] + self.y,
            p[2] + self.z,
        ]
    }

    /// `other` re-expressed relative to this box; sizes are kept.
    pub fn state_to_local(&self, other: &ObjectState) -> ObjectState {
        let [x, y, z] = self.to_local(other.center());
        ObjectState {
            x,
            y,
            z,
            theta: normalize_angle(other.theta - self.theta),
            ..*other
        }
    }

    pub fn state_from_local(&self, local: &ObjectState) -> ObjectState {
        let [x, y, z] = self.from_local(local.center());
        ObjectState {
            x,
            y,
            z,
            theta: normalize_angle(local.theta + self.theta),
            ..*local
        }
    }

    /// Footprint corners in world x-y, counter-clockwise.
    pub fn bev_corners(&self) -> [[Real; 2]; 4] {
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|[a, b]| {
            let p = self.from_local([a, b, 0.0]);
            [p[0], p[1]]
        })
    }

    /// Whether `p` lies inside the box grown by `enlarge` on every face.
    pub fn contains(&self, p: Point, enlarge: Real) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= self.l / 2.0 + enlarge
            && q[1].abs() <= self.w / 2.0 + enlarge
            && q[2].abs() <= self.h / 2.0 + enlarge
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wrapping() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn local_round_trip() {
        let b = ObjectState::new(3.0, -2.0, 0.5, 1.9, 4.5, 1.6, 2.3);
        let p = [1.25, 7.5, -0.3];
        let q = b.from_local(b.to_local(p));
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-12);
        }
        assert_eq!(b.to_local(b.center()), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn heading_axis_maps_to_local_x() {
        let b = ObjectState::new(0.0, 0.0, 0.0, 1.0, 2.0, 1.0, PI / 2.0);
        let q = b.to_local([0.0, 1.0, 0.0]);
        assert!((q[0] - 1.0).abs() < 1e-12 && q[1].abs() < 1e-12);
    }
}
