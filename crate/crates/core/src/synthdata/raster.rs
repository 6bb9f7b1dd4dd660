//! Integer geometry for mask rasterization.
//!
//! Coordinates are fixed point with [`SUB`] units per pixel; pixel `(x, y)` is
//! sampled at its center `(SUB*x + SUB/2, SUB*y + SUB/2)`. Every membership
//! test is exact integer arithmetic, so masks do not depend on the platform.

pub const SUB: i64 = 4;

/// `sin(5°·i)·1024` for `i = 0..=18`, rounded.
const SIN_1024: [i64; 19] = [
    0, 89, 178, 265, 350, 433, 512, 587, 658, 724, 784, 839, 887, 928, 962, 989, 1008, 1020, 1024,
];

/// Unit vector (×1024) for an angle in multiples of 5°, measured from
/// straight down and positive toward +x. `steps` ranges over `-36..=36`.
pub fn direction(steps: i32) -> (i64, i64) {
    let s = steps.rem_euclid(72);
    let (quadrant, i) = (s / 18, (s % 18) as usize);
    let (sin, cos) = (SIN_1024[i], SIN_1024[18 - i]);
    // Rotate (sin, cos) by quadrant·90°.
    match quadrant {
        0 => (sin, cos),
        1 => (cos, -sin),
        2 => (-sin, -cos),
        _ => (-cos, sin),
    }
}

/// Point at `len` along `steps` from `(x, y)`.
pub fn along(x: i64, y: i64, len: i64, steps: i32) -> (i64, i64) {
    let (dx, dy) = direction(steps);
    (x + (len * dx).div_euclid(1024), y + (len * dy).div_euclid(1024))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Disk { cx: i64, cy: i64, r: i64 },
    Ellipse { cx: i64, cy: i64, rx: i64, ry: i64 },
    /// Thick segment: points within `r` of the segment `a–b`.
    Capsule { a: (i64, i64), b: (i64, i64), r: i64 },
    /// Half-open box `[x0, x1) × [y0, y1)`.
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
    /// Convex polygon, vertices in either winding.
    Polygon(Vec<(i64, i64)>),
    Intersect(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn intersect(self, other: Shape) -> Shape {
        Shape::Intersect(Box::new(self), Box::new(other))
    }

    pub fn contains(&self, px: i64, py: i64) -> bool {
        match self {
            Shape::Disk { cx, cy, r } => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx * ry * ry + dy * dy * rx * rx <= rx * rx * ry * ry
            }
            Shape::Capsule { a, b, r } => {
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let (wx, wy) = (px - a.0, py - a.1);
                let len2 = vx * vx + vy * vy;
                let t = wx * vx + wy * vy;
                if len2 == 0 || t <= 0 {
                    wx * wx + wy * wy <= r * r
                } else if t >= len2 {
                    let (ux, uy) = (px - b.0, py - b.1);
                    ux * ux + uy * uy <= r * r
                } else {
                    let cross = wx * vy - wy * vx;
                    cross * cross <= r * r * len2
                }
            }
            Shape::Rect { x0, y0, x1, y1 } => px >= *x0 && px < *x1 && py >= *y0 && py < *y1,
            Shape::Polygon(pts) => {
                let n = pts.len();
                let (mut pos, mut neg) = (false, false);
                for i in 0..n {
                    let (a, b) = (pts[i], pts[(i + 1) % n]);
                    let cross = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                    pos |= cross > 0;
                    neg |= cross < 0;
                }
                !(pos && neg)
            }
            Shape::Intersect(a, b) => a.contains(px, py) && b.contains(px, py),
        }
    }

    /// Inclusive bounding box in fixed-point units.
    pub fn bounds(&self) -> (i64, i64, i64, i64) {
        match self {
            Shape::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
            Shape::Capsule { a, b, r } => (
                a.0.min(b.0) - r,
                a.1.min(b.1) - r,
                a.0.max(b.0) + r,
                a.1.max(b.1) + r,
            ),
            Shape::Rect { x0, y0, x1, y1 } => (*x0, *y0, x1 - 1, y1 - 1),
            Shape::Polygon(pts) => pts.iter().fold(
                (i64::MAX, i64::MAX, i64::MIN, i64::MIN),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            ),
            Shape::Intersect(a, b) => {
                let (a, b) = (a.bounds(), b.bounds());
                (a.0.max(b.0), a.1.max(b.1), a.2.min(b.2), a.3.min(b.3))
            }
        }
    }

    /// Pixels `(x, y)` of a `width×height` grid whose centers lie inside.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let (x0, y0, x1, y1) = self.bounds();
        let lo = |v: i64| ((v - SUB / 2).div_euclid(SUB)).max(0);
        let hi = |v: i64, n: usize| ((v - SUB / 2).div_euclid(SUB) + 1).min(n as i64 - 1);
        let mut out = Vec::new();
        for y in lo(y0)..=hi(y1, height) {
            for x in lo(x0)..=hi(x1, width) {
                if self.contains(SUB * x + SUB / 2, SUB * y + SUB / 2) {
                    out.push((x as usize, y as usize));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(shape: &Shape, w: usize, h: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if shape.contains(SUB * x as i64 + SUB / 2, SUB * y as i64 + SUB / 2) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn directions_are_unit_and_rotate() {
        assert_eq!(direction(0), (0, 1024));
        assert_eq!(direction(18), (1024, 0));
        assert_eq!(direction(-18), (-1024, 0));
        assert_eq!(direction(36), (0, -1024));
        for s in -36..=36 {
            let (x, y) = direction(s);
            let n2 = x * x + y * y;
            assert!((n2 - 1024 * 1024).abs() < 2 * 1024, "{s}: {n2}");
            assert_eq!(direction(-s), (-x, y));
        }
    }

    #[test]
    fn bounding_boxes_cover_every_member() {
        let shapes = [
            Shape::Disk { cx: 30, cy: 41, r: 13 },
            Shape::Ellipse { cx: 50, cy: 20, rx: 22, ry: 9 },
            Shape::Capsule { a: (10, 10), b: (70, 55), r: 7 },
            Shape::Rect { x0: 5, y0: 6, x1: 40, y1: 19 },
            Shape::Polygon(vec![(8, 8), (60, 12), (50, 70), (12, 60)]),
            Shape::Disk { cx: -5, cy: 90, r: 30 },
        ];
        for s in &shapes {
            assert_eq!(s.pixels(24, 24), brute(s, 24, 24), "{s:?}");
        }
    }

    #[test]
    fn capsule_matches_distance_definition() {
        let c = Shape::Capsule { a: (0, 0), b: (40, 0), r: 8 };
        assert!(c.contains(20, 8));
        assert!(!c.contains(20, 9));
        assert!(c.contains(-8, 0));
        assert!(!c.contains(46, 6));
        assert!(c.contains(46, 5)); // 6² + 5² = 61 ≤ 64
    }

    #[test]
    fn polygon_winding_does_not_matter() {
        let cw = Shape::Polygon(vec![(0, 0), (40, 0), (40, 40), (0, 40)]);
        let ccw = Shape::Polygon(vec![(0, 0), (0, 40), (40, 40), (40, 0)]);
        assert_eq!(cw.pixels(12, 12), ccw.pixels(12, 12));
        assert_eq!(cw.pixels(12, 12).len(), 100);
    }
}
