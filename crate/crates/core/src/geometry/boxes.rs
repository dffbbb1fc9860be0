use serde::{Deserialize, Serialize};

/// Intersections below this area count as empty.
const AREA_EPS: f64 = 1e-12;

/// 3-D box with yaw. `l` runs along the heading, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBEV {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
}

impl BoxBEV {
    pub fn new(cx: f64, cy: f64, cz: f64, w: f64, l: f64, h: f64, theta: f64) -> Self {
        assert!(w > 0.0 && l > 0.0 && h > 0.0, "box dimensions must be positive");
        BoxBEV {
            cx,
            cy,
            cz,
            w,
            l,
            h,
            theta,
        }
    }

    /// Flat box on the ground plane, handy for 2-D tests.
    pub fn bev(cx: f64, cy: f64, w: f64, l: f64, theta: f64) -> Self {
        Self::new(cx, cy, 0.0, w, l, 1.0, theta)
    }

    /// Footprint corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)]
            .map(|(u, v)| (self.cx + c * u - s * v, self.cy + s * u + c * v))
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    /// True if the BEV point lies inside the footprint.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0
    }

    /// Point expressed in the box frame (u along heading).
    pub fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Whether the open segment `p → q` passes through the footprint.
    pub fn blocks_segment(&self, p: (f64, f64), q: (f64, f64)) -> bool {
        let a = self.local(p.0, p.1);
        let b = self.local(q.0, q.1);
        let (d0, d1) = (b.0 - a.0, b.1 - a.1);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (start, delta, half) in [(a.0, d0, self.l / 2.0), (a.1, d1, self.w / 2.0)] {
            if delta.abs() < 1e-15 {
                if start.abs() > half {
                    return false;
                }
                continue;
            }
            let mut ta = (-half - start) / delta;
            let mut tb = (half - start) / delta;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
        t1 - t0 > 1e-9
    }

    /// Same box moved rigidly by the pose `(x, y, yaw)`.
    pub fn transformed(&self, pose: &super::Pose2) -> BoxBEV {
        let (x, y) = pose.to_world(self.cx, self.cy);
        BoxBEV {
            cx: x,
            cy: y,
            theta: self.theta + pose.yaw,
            ..*self
        }
    }

    /// Same box expressed in the local frame of `pose`.
    pub fn in_frame(&self, pose: &super::Pose2) -> BoxBEV {
        let (x, y) = pose.to_local(self.cx, self.cy);
        BoxBEV {
            cx: x,
            cy: y,
            theta: super::normalize_angle(self.theta - pose.yaw),
            ..*self
        }
    }
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

/// Sutherland–Hodgman clip of `subject` against convex CCW `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Bird's-eye-view IoU of two rotated boxes; height is ignored.
pub fn rotated_iou(a: &BoxBEV, b: &BoxBEV) -> f64 {
    let poly = clip_convex(&a.corners(), &b.corners());
    if poly.len() < 3 {
        return 0.0;
    }
    let inter = shoelace(&poly).abs();
    if inter < AREA_EPS {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
