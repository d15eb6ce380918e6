//! Planar polygon helpers for floor plans.

pub type Point2 = [f64; 2];

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area, positive for counterclockwise polygons.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// Even-odd point-in-polygon test (boundary points are unspecified).
pub fn contains_point(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Distance from `p` to the polygon boundary.
pub fn boundary_distance(poly: &[Point2], p: Point2) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed segments `ab` and `cd` share at least one point.
pub fn segments_touch(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// No two non-adjacent edges touch and no vertex repeats.
pub fn is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if poly[i] == poly[j] {
                return false;
            }
        }
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Sutherland–Hodgman clip of `subject` against convex counterclockwise `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = std::mem::take(&mut out);
        let k = input.len();
        for j in 0..k {
            let cur = input[j];
            let prev = input[(j + k - 1) % k];
            let cin = cross(a, b, cur) >= 0.0;
            let pin = cross(a, b, prev) >= 0.0;
            if cin {
                if !pin {
                    out.push(line_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if pin {
                out.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    out
}

fn line_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of `P ∩ Q` for simple polygons of any orientation.
///
/// Each polygon is written as a signed sum of fan triangles from its first
/// vertex; the intersection area is the signed double sum of convex
/// triangle-triangle overlaps.
pub fn intersection_area(p: &[Point2], q: &[Point2]) -> f64 {
    let fan = |poly: &[Point2]| -> Vec<(f64, [Point2; 3])> {
        let o = poly[0];
        let orient = signed_area(poly).signum();
        (1..poly.len() - 1)
            .filter_map(|i| {
                let (a, b) = (poly[i], poly[i + 1]);
                let c = cross(o, a, b);
                if c == 0.0 {
                    return None;
                }
                let tri = if c > 0.0 { [o, a, b] } else { [o, b, a] };
                Some((c.signum() * orient, tri))
            })
            .collect()
    };
    let fp = fan(p);
    let fq = fan(q);
    let mut total = 0.0;
    for (sp, tp) in &fp {
        for (sq, tq) in &fq {
            let clipped = clip_convex(tp, tq);
            if clipped.len() >= 3 {
                total += sp * sq * signed_area(&clipped);
            }
        }
    }
    total.max(0.0)
}

/// Distance along the ray `origin + t·dir` (t ≥ 0) to segment `ab`, if hit.
pub fn ray_segment_hit(origin: Point2, dir: Point2, a: Point2, b: Point2) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * e[1] - dir[1] * e[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = [a[0] - origin[0], a[1] - origin[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let s = (w[0] * dir[1] - w[1] * dir[0]) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    #[test]
    fn area_and_orientation() {
        let sq = square(0.0, 0.0, 2.0, 3.0);
        assert_eq!(signed_area(&sq), 6.0);
        let mut rev = sq.clone();
        rev.reverse();
        assert_eq!(signed_area(&rev), -6.0);
    }

    #[test]
    fn overlapping_rectangles() {
        let a = square(0.0, 0.0, 2.0, 2.0);
        let b = square(1.0, 0.0, 3.0, 2.0);
        assert!((intersection_area(&a, &b) - 2.0).abs() < 1e-12);
        assert!((intersection_area(&b, &a) - 2.0).abs() < 1e-12);
        let far = square(5.0, 5.0, 6.0, 6.0);
        assert_eq!(intersection_area(&a, &far), 0.0);
    }

    #[test]
    fn nonconvex_self_intersection_is_own_area() {
        let l = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 2.0], [2.0, 4.0], [0.0, 4.0]];
        assert!((intersection_area(&l, &l) - 12.0).abs() < 1e-9);
        let sq = square(1.0, 1.0, 3.0, 3.0);
        // Overlap of the L with [1,3]²: the notch [2,3]² is missing.
        assert!((intersection_area(&l, &sq) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn simplicity() {
        assert!(is_simple(&square(0.0, 0.0, 1.0, 1.0)));
        let bow = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(!is_simple(&bow));
    }

    #[test]
    fn containment() {
        let l = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 2.0], [2.0, 4.0], [0.0, 4.0]];
        assert!(contains_point(&l, [1.0, 1.0]));
        assert!(!contains_point(&l, [3.0, 3.0]));
        assert!((boundary_distance(&l, [1.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_hits() {
        let t = ray_segment_hit([0.0, 0.0], [1.0, 0.0], [2.0, -1.0], [2.0, 1.0]);
        assert_eq!(t, Some(2.0));
        assert!(ray_segment_hit([0.0, 0.0], [-1.0, 0.0], [2.0, -1.0], [2.0, 1.0]).is_none());
    }
}
