//! Closed Manhattan room models and their `PRLAYOUT1` text form.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom2d::{self, Point2};
use crate::sphere::{bearing_to_pixel, EquirectGrid, ManhattanFrame, UnitBearing};

pub const LAYOUT_TAG: &str = "PRLAYOUT1";

/// Principal axis of a Manhattan frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Straight structural edge of a room, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge3 {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub axis: Axis,
}

/// What a viewing ray from the camera hits first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ceiling,
    Floor,
    /// Wall between polygon vertices `i` and `i + 1`.
    Wall(usize),
}

/// Room as a right prism over a rectilinear floor polygon. The camera sits
/// at the origin; coordinates are expressed in `frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutModel {
    floor_polygon: Vec<Point2>,
    floor_z: f64,
    ceiling_z: f64,
    frame: ManhattanFrame,
}

impl LayoutModel {
    pub fn new(
        floor_polygon: Vec<Point2>,
        floor_z: f64,
        ceiling_z: f64,
        frame: ManhattanFrame,
    ) -> Result<Self> {
        let model = Self {
            floor_polygon,
            floor_z,
            ceiling_z,
            frame,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let poly = &self.floor_polygon;
        let n = poly.len();
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "floor polygon needs an even number >= 4 of vertices, got {n}"
            )));
        }
        if poly.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite polygon coordinate".into()));
        }
        if !(self.floor_z < 0.0 && self.ceiling_z > 0.0) {
            return Err(Error::Validation(format!(
                "need floor_z < 0 < ceiling_z, got {} and {}",
                self.floor_z, self.ceiling_z
            )));
        }
        let scale = poly
            .iter()
            .flatten()
            .fold(1.0f64, |m, c| m.max(c.abs()));
        let tol = 1e-9 * scale;
        let mut prev_axis = None;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let dx = (b[0] - a[0]).abs();
            let dy = (b[1] - a[1]).abs();
            let axis = if dy <= tol && dx > tol {
                Axis::X
            } else if dx <= tol && dy > tol {
                Axis::Y
            } else {
                return Err(Error::Validation(format!(
                    "edge {i} is not axis aligned or has zero length"
                )));
            };
            if prev_axis == Some(axis) {
                return Err(Error::Validation(format!("edges {} and {i} are collinear", i - 1)));
            }
            prev_axis = Some(axis);
        }
        if edge_axis(poly, n - 1) == edge_axis(poly, 0) {
            return Err(Error::Validation("first and last edges are collinear".into()));
        }
        if !geom2d::is_simple(poly) {
            return Err(Error::Validation("floor polygon self-intersects".into()));
        }
        if geom2d::signed_area(poly) <= 0.0 {
            return Err(Error::Validation("floor polygon must be counterclockwise".into()));
        }
        if !geom2d::contains_point(poly, [0.0, 0.0]) || geom2d::boundary_distance(poly, [0.0, 0.0]) <= tol {
            return Err(Error::Geometry("camera is not strictly inside the room".into()));
        }
        Ok(())
    }

    pub fn floor_polygon(&self) -> &[Point2] {
        &self.floor_polygon
    }

    pub fn floor_z(&self) -> f64 {
        self.floor_z
    }

    pub fn ceiling_z(&self) -> f64 {
        self.ceiling_z
    }

    pub fn frame(&self) -> &ManhattanFrame {
        &self.frame
    }

    pub fn corner_count(&self) -> usize {
        self.floor_polygon.len()
    }

    pub fn floor_area(&self) -> f64 {
        geom2d::signed_area(&self.floor_polygon)
    }

    pub fn height(&self) -> f64 {
        self.ceiling_z - self.floor_z
    }

    pub fn volume(&self) -> f64 {
        self.floor_area() * self.height()
    }

    /// Same room with every coordinate multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.floor_polygon.iter().map(|p| [p[0] * s, p[1] * s]).collect(),
            self.floor_z * s,
            self.ceiling_z * s,
            self.frame,
        )
    }

    /// Same room with its frame pre-multiplied by a world rotation.
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Result<Self> {
        let frame = ManhattanFrame::from_matrix(rotation * self.frame.matrix())?;
        Self::new(self.floor_polygon.clone(), self.floor_z, self.ceiling_z, frame)
    }

    /// Ceiling corners followed by floor corners, in frame coordinates.
    pub fn corners_local(&self) -> Vec<Vector3<f64>> {
        let ceil = self
            .floor_polygon
            .iter()
            .map(|p| Vector3::new(p[0], p[1], self.ceiling_z));
        let floor = self
            .floor_polygon
            .iter()
            .map(|p| Vector3::new(p[0], p[1], self.floor_z));
        ceil.chain(floor).collect()
    }

    /// Ceiling corners followed by floor corners, as bearings from the camera.
    pub fn corner_bearings(&self) -> Vec<UnitBearing> {
        self.corners_local()
            .iter()
            .map(|c| UnitBearing::new(self.frame.to_world(c)).expect("corner off the camera"))
            .collect()
    }

    pub fn corner_pixels(&self, grid: EquirectGrid) -> Vec<(f64, f64)> {
        self.corner_bearings()
            .iter()
            .map(|b| bearing_to_pixel(b, grid))
            .collect()
    }

    /// All 3n structural edges: wall-wall verticals, floor and ceiling edges.
    pub fn edges(&self) -> Vec<Edge3> {
        let n = self.floor_polygon.len();
        let w = |p: Point2, z: f64| self.frame.to_world(&Vector3::new(p[0], p[1], z));
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            let p = self.floor_polygon[i];
            out.push(Edge3 {
                a: w(p, self.floor_z),
                b: w(p, self.ceiling_z),
                axis: Axis::Z,
            });
        }
        for z in [self.floor_z, self.ceiling_z] {
            for i in 0..n {
                let p = self.floor_polygon[i];
                let q = self.floor_polygon[(i + 1) % n];
                out.push(Edge3 {
                    a: w(p, z),
                    b: w(q, z),
                    axis: edge_axis(&self.floor_polygon, i),
                });
            }
        }
        out
    }

    /// First surface hit by a ray from the camera along world bearing `b`.
    pub fn surface_at(&self, b: &UnitBearing) -> Surface {
        let q = self.frame.to_frame(&b.vector());
        let rho = q.x.hypot(q.y);
        let plane = if q.z > 0.0 {
            Surface::Ceiling
        } else {
            Surface::Floor
        };
        if rho < 1e-12 {
            return plane;
        }
        let dir = [q.x / rho, q.y / rho];
        let n = self.floor_polygon.len();
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..n {
            let a = self.floor_polygon[i];
            let c = self.floor_polygon[(i + 1) % n];
            if let Some(t) = geom2d::ray_segment_hit([0.0, 0.0], dir, a, c) {
                if t < best.0 {
                    best = (t, i);
                }
            }
        }
        let plane_dist = if q.z > 0.0 {
            self.ceiling_z * rho / q.z
        } else if q.z < 0.0 {
            self.floor_z * rho / q.z
        } else {
            f64::INFINITY
        };
        if plane_dist <= best.0 {
            plane
        } else {
            Surface::Wall(best.1)
        }
    }

    /// `PRLAYOUT1` text. Projected corner pixels are appended when `grid`
    /// is given. Reals are printed with 17 significant digits.
    pub fn to_text(&self, grid: Option<EquirectGrid>) -> String {
        let mut s = String::new();
        let m = self.frame.matrix();
        writeln!(s, "{LAYOUT_TAG}").unwrap();
        let frame: Vec<String> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| fmt_real(m[(r, c)]))
            .collect();
        writeln!(s, "frame {}", frame.join(" ")).unwrap();
        writeln!(s, "floor_z {}", fmt_real(self.floor_z)).unwrap();
        writeln!(s, "ceiling_z {}", fmt_real(self.ceiling_z)).unwrap();
        writeln!(s, "floor_polygon {}", self.floor_polygon.len()).unwrap();
        for p in &self.floor_polygon {
            writeln!(s, "{} {}", fmt_real(p[0]), fmt_real(p[1])).unwrap();
        }
        if let Some(g) = grid {
            writeln!(s, "grid {} {}", g.width(), g.height()).unwrap();
            let px = self.corner_pixels(g);
            writeln!(s, "corners {}", px.len()).unwrap();
            for (u, v) in px {
                writeln!(s, "{} {}", fmt_real(u), fmt_real(v)).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("unexpected end of layout, expected {what}")))
        };
        if next("tag")? != LAYOUT_TAG {
            return Err(Error::Parse(format!("missing {LAYOUT_TAG} tag")));
        }
        let frame_vals = keyed_reals(next("frame")?, "frame", 9)?;
        let m = Matrix3::from_row_slice(&frame_vals);
        let frame = ManhattanFrame::from_matrix(m)?;
        let floor_z = keyed_reals(next("floor_z")?, "floor_z", 1)?[0];
        let ceiling_z = keyed_reals(next("ceiling_z")?, "ceiling_z", 1)?[0];
        let n = keyed_count(next("floor_polygon")?, "floor_polygon")?;
        let mut poly = Vec::with_capacity(n);
        for _ in 0..n {
            let v = reals(next("vertex")?, 2)?;
            poly.push([v[0], v[1]]);
        }
        // The optional grid/corners block is derived data; check its shape only.
        if let Ok(line) = next("grid") {
            let g: Vec<&str> = line.split_whitespace().collect();
            if g.len() != 3 || g[0] != "grid" {
                return Err(Error::Parse(format!("expected grid line, got {line:?}")));
            }
            let k = keyed_count(next("corners")?, "corners")?;
            if k != 2 * n {
                return Err(Error::Parse(format!("expected {} corners, got {k}", 2 * n)));
            }
            for _ in 0..k {
                reals(next("corner")?, 2)?;
            }
        }
        Self::new(poly, floor_z, ceiling_z, frame)
    }
}

pub(crate) fn edge_axis(poly: &[Point2], i: usize) -> Axis {
    let a = poly[i];
    let b = poly[(i + 1) % poly.len()];
    if (b[0] - a[0]).abs() >= (b[1] - a[1]).abs() {
        Axis::X
    } else {
        Axis::Y
    }
}

pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn reals(line: &str, count: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if vals.len() != count {
        return Err(Error::Parse(format!("expected {count} values in {line:?}")));
    }
    Ok(vals)
}

fn keyed_reals(line: &str, key: &str, count: usize) -> Result<Vec<f64>> {
    match line.split_once(char::is_whitespace) {
        Some((k, rest)) if k == key => reals(rest, count),
        _ => Err(Error::Parse(format!("expected `{key}` line, got {line:?}"))),
    }
}

fn keyed_count(line: &str, key: &str) -> Result<usize> {
    match line.split_once(char::is_whitespace) {
        Some((k, rest)) if k == key => rest
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("{key} count: {e}"))),
        _ => Err(Error::Parse(format!("expected `{key}` line, got {line:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn box_room() -> LayoutModel {
        LayoutModel::new(
            vec![[-2.0, -1.5], [3.0, -1.5], [3.0, 2.0], [-2.0, 2.0]],
            -1.0,
            1.6,
            ManhattanFrame::identity(),
        )
        .unwrap()
    }

    fn l_room() -> LayoutModel {
        LayoutModel::new(
            vec![[-1.0, -1.0], [3.0, -1.0], [3.0, 1.0], [1.0, 1.0], [1.0, 3.0], [-1.0, 3.0]],
            -1.0,
            1.5,
            ManhattanFrame::from_yaw(0.3),
        )
        .unwrap()
    }

    #[test]
    fn validates_good_rooms() {
        box_room();
        l_room();
    }

    #[test]
    fn rejects_bad_rooms() {
        let id = ManhattanFrame::identity();
        let sq = vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        let mut cw = sq.clone();
        cw.reverse();
        assert!(LayoutModel::new(cw, -1.0, 1.0, id).is_err());
        let outside = vec![[1.0, 1.0], [2.0, 1.0], [2.0, 2.0], [1.0, 2.0]];
        assert!(matches!(
            LayoutModel::new(outside, -1.0, 1.0, id),
            Err(Error::Geometry(_))
        ));
        assert!(LayoutModel::new(sq.clone(), 1.0, 2.0, id).is_err());
        let slanted = vec![[-1.0, -1.0], [1.0, -0.9], [1.0, 1.0], [-1.0, 1.0]];
        assert!(LayoutModel::new(slanted, -1.0, 1.0, id).is_err());
        let on_boundary = vec![[0.0, -1.0], [1.0, -1.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(LayoutModel::new(on_boundary, -1.0, 1.0, id).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let room = l_room();
        let grid = EquirectGrid::new(128, 64).unwrap();
        let text = room.to_text(Some(grid));
        assert!(text.starts_with("PRLAYOUT1\n"));
        let back = LayoutModel::from_text(&text).unwrap();
        assert_eq!(back, room);
        assert_eq!(back.to_text(Some(grid)), text);
        assert_eq!(LayoutModel::from_text(&room.to_text(None)).unwrap(), room);
    }

    #[test]
    fn rejects_malformed_text() {
        assert!(LayoutModel::from_text("PRLAYOUT2\n").is_err());
        let text = box_room().to_text(None).replace("floor_z", "floorz");
        assert!(LayoutModel::from_text(&text).is_err());
    }

    #[test]
    fn ray_casting_labels() {
        let room = box_room();
        let up = UnitBearing::from_xyz(0.0, 0.0, 1.0).unwrap();
        assert_eq!(room.surface_at(&up), Surface::Ceiling);
        assert_eq!(room.surface_at(&up.neg()), Surface::Floor);
        let east = UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap();
        assert_eq!(room.surface_at(&east), Surface::Wall(1));
        // Wall at x=3, floor 1 below: boundary at 45°/3 slope.
        let below = UnitBearing::from_xyz(3.0, 0.0, -0.9).unwrap();
        assert_eq!(room.surface_at(&below), Surface::Wall(1));
        let steeper = UnitBearing::from_xyz(3.0, 0.0, -1.1).unwrap();
        assert_eq!(room.surface_at(&steeper), Surface::Floor);
    }

    #[test]
    fn edges_count_and_axes() {
        let room = l_room();
        let edges = room.edges();
        assert_eq!(edges.len(), 18);
        assert_eq!(edges.iter().filter(|e| e.axis == Axis::Z).count(), 6);
        assert_eq!(room.corner_bearings().len(), 12);
    }
}
