//! Equirectangular pixel <-> unit sphere conversions, great circles and
//! Manhattan frames.
//!
//! Projection convention: `z` is up, longitude `θ = 0` sits at the image
//! center column and pixel centers live at integer continuous coordinates:
//!
//! ```text
//! θ = (u + 0.5) / W · 2π − π
//! φ = π/2 − (v + 0.5) / H · π
//! b = (cos φ cos θ, cos φ sin θ, sin φ)
//! ```

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// Full 360°×180° panorama raster, `width == 2 * height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EquirectGrid {
    width: usize,
    height: usize,
}

impl EquirectGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width != 2 * height {
            return Err(Error::Validation(format!(
                "panorama width must be twice its height, got {width}x{height}"
            )));
        }
        if height < 4 {
            return Err(Error::Validation(format!(
                "panorama must be at least 8x4, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    /// Grid of the given height (`width = 2 * height`).
    pub fn with_height(height: usize) -> Result<Self> {
        Self::new(2 * height, height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Angular size of one pixel row.
    pub fn row_angle(&self) -> f64 {
        PI / self.height as f64
    }

    /// Row-major index of the pixel containing a continuous coordinate.
    /// Columns wrap, rows clamp.
    pub fn pixel_index(&self, u: f64, v: f64) -> usize {
        let col = ((u + 0.5).floor() as i64).rem_euclid(self.width as i64) as usize;
        let row = ((v + 0.5).floor().max(0.0) as usize).min(self.height - 1);
        row * self.width + col
    }

    /// Bearing through the center of pixel `(col, row)`.
    pub fn pixel_center_bearing(&self, col: usize, row: usize) -> UnitBearing {
        pixel_to_bearing(col as f64, row as f64, *self).expect("pixel center inside grid")
    }

    /// Shortest horizontal offset between two columns on a wrapping panorama.
    pub fn wrapped_du(&self, du: f64) -> f64 {
        let w = self.width as f64;
        let d = du.rem_euclid(w);
        if d > w / 2.0 {
            d - w
        } else {
            d
        }
    }

    /// Pixel distance between two continuous coordinates, wrapping in `u`.
    pub fn pixel_distance(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let du = self.wrapped_du(a.0 - b.0);
        let dv = a.1 - b.1;
        (du * du + dv * dv).sqrt()
    }
}

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBearing(Vector3<f64>);

impl UnitBearing {
    /// Normalizes `v`; fails on (near) zero vectors.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Domain(format!("cannot normalize vector {v:?}")));
        }
        Ok(Self(v / n))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(Vector3::new(x, y, z))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitBearing) -> f64 {
        self.0.dot(&other.0)
    }

    /// Angle between two bearings, stable for nearly parallel inputs.
    pub fn angle_to(&self, other: &UnitBearing) -> f64 {
        let cross = self.0.cross(&other.0).norm();
        cross.atan2(self.0.dot(&other.0))
    }

    pub fn neg(&self) -> UnitBearing {
        UnitBearing(-self.0)
    }

    pub fn longitude(&self) -> f64 {
        self.0.y.atan2(self.0.x)
    }

    pub fn latitude(&self) -> f64 {
        self.0.z.clamp(-1.0, 1.0).asin()
    }
}

pub fn pixel_to_bearing(u: f64, v: f64, grid: EquirectGrid) -> Result<UnitBearing> {
    let (w, h) = (grid.width as f64, grid.height as f64);
    if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside {}x{} panorama",
            grid.width, grid.height
        )));
    }
    let theta = (u + 0.5) / w * TAU - PI;
    // The last half row lies beyond the south pole; pin it to the pole.
    let phi = (FRAC_PI_2 - (v + 0.5) / h * PI).max(-FRAC_PI_2);
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Ok(UnitBearing(Vector3::new(cp * ct, cp * st, sp)))
}

/// Inverse of [`pixel_to_bearing`]. `u` wraps into `[0, W)`; rows above the
/// first pixel center (the north pole cap) clamp to `v = 0`.
pub fn bearing_to_pixel(b: &UnitBearing, grid: EquirectGrid) -> (f64, f64) {
    let (w, h) = (grid.width as f64, grid.height as f64);
    let horiz = b.0.x.hypot(b.0.y);
    let theta = if horiz < 1e-9 { 0.0 } else { b.0.y.atan2(b.0.x) };
    let phi = b.0.z.atan2(horiz);
    let mut u = ((theta + PI) / TAU * w - 0.5).rem_euclid(w);
    if u >= w {
        u = 0.0;
    }
    let v = ((FRAC_PI_2 - phi) / PI * h - 0.5).clamp(0.0, h - 0.5);
    (u, v)
}

/// Great circle represented by the unit normal of its plane.
///
/// `circle(n)` and `circle(-n)` are the same circle; the stored normal has
/// its first nonzero component positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreatCircle {
    normal: UnitBearing,
}

impl GreatCircle {
    pub fn from_normal(normal: UnitBearing) -> Self {
        let v = normal.0;
        let flip = [v.x, v.y, v.z]
            .into_iter()
            .find(|c| c.abs() > 1e-12)
            .is_some_and(|c| c < 0.0);
        let normal = if flip { normal.neg() } else { normal };
        Self { normal }
    }

    /// Circle through two distinct, non-antipodal bearings.
    pub fn through(a: &UnitBearing, b: &UnitBearing) -> Result<Self> {
        let n = a.0.cross(&b.0);
        if n.norm() < 1e-12 {
            return Err(Error::DegenerateFit(
                "bearings are identical or antipodal".into(),
            ));
        }
        Ok(Self::from_normal(UnitBearing(n.normalize())))
    }

    pub fn normal(&self) -> &UnitBearing {
        &self.normal
    }

    /// Closest point of the circle to `p` (undefined when `p` is a pole of
    /// the circle; an arbitrary circle point is returned then).
    pub fn project(&self, p: &UnitBearing) -> UnitBearing {
        let n = self.normal.0;
        let q = p.0 - n * n.dot(&p.0);
        if q.norm() < 1e-12 {
            let any = if n.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::y()
            };
            return UnitBearing(n.cross(&any).normalize());
        }
        UnitBearing(q.normalize())
    }

    /// Orthonormal basis `(e1, e2)` of the circle plane; `e1 × e2 = normal`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal.0;
        let seed = if n.z.abs() < 0.9 {
            Vector3::z()
        } else {
            Vector3::x()
        };
        let e1 = seed.cross(&n).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }

    /// Lexicographic order on canonical normals, used for tie-breaks.
    pub fn canonical_cmp(&self, other: &GreatCircle) -> std::cmp::Ordering {
        let a = self.normal.0;
        let b = other.normal.0;
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    }
}

/// Weighted least-squares great circle: the normal minimizing
/// `Σ wᵢ (nᵀpᵢ)²`, i.e. the least eigenvector of `Σ wᵢ pᵢ pᵢᵀ`.
pub fn fit_great_circle(points: &[UnitBearing], weights: &[f64]) -> Result<GreatCircle> {
    if points.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::DegenerateFit("weights must be finite and >= 0".into()));
    }
    let support: Vec<&UnitBearing> = points
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, _)| p)
        .collect();
    let Some(first) = support.first() else {
        return Err(Error::DegenerateFit("no weighted points".into()));
    };
    // Needs two points spanning a plane with the origin.
    if support
        .iter()
        .all(|p| p.0.cross(&first.0).norm() < 1e-9)
    {
        return Err(Error::DegenerateFit(
            "points are identical or antipodal".into(),
        ));
    }
    let mut scatter = Matrix3::zeros();
    for (p, w) in points.iter().zip(weights) {
        scatter += p.0 * p.0.transpose() * *w;
    }
    let eig = SymmetricEigen::new(scatter);
    let idx = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(idx).into_owned();
    Ok(GreatCircle::from_normal(UnitBearing::new(normal)?))
}

/// `|asin(nᵀp)|`: angular distance of `p` to the circle, in `[0, π/2]`.
pub fn angular_distance_to_circle(p: &UnitBearing, c: &GreatCircle) -> f64 {
    c.normal.0.dot(&p.0).clamp(-1.0, 1.0).asin().abs()
}

/// Arc of a great circle swept from `from` around `normal` (right-handed)
/// by `sweep` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: UnitBearing,
    pub normal: UnitBearing,
    pub sweep: f64,
}

impl Arc {
    /// The shorter arc from `a` to `b`. For (near) coincident endpoints the
    /// arc collapses to a point; for antipodal ones the plane is ambiguous
    /// and `hint` (any normal containing both) is used.
    pub fn between(a: &UnitBearing, b: &UnitBearing, hint: Option<&UnitBearing>) -> Arc {
        let cross = a.0.cross(&b.0);
        let sweep = a.angle_to(b);
        let normal = if cross.norm() > 1e-12 {
            UnitBearing(cross.normalize())
        } else if let Some(h) = hint {
            UnitBearing(h.0)
        } else {
            GreatCircle::from_normal(UnitBearing(orthogonal_to(&a.0))).normal
        };
        Arc {
            from: *a,
            normal,
            sweep,
        }
    }

    pub fn point_at(&self, t: f64) -> UnitBearing {
        let a = self.from.0;
        let tangent = self.normal.0.cross(&a);
        let (s, c) = t.sin_cos();
        UnitBearing((a * c + tangent * s).normalize())
    }

    pub fn to(&self) -> UnitBearing {
        self.point_at(self.sweep)
    }

    /// Sample points with angular spacing no larger than `step`
    /// (both endpoints included).
    pub fn samples(&self, step: f64) -> Vec<UnitBearing> {
        let n = (self.sweep / step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| self.point_at(self.sweep * i as f64 / n as f64))
            .collect()
    }
}

fn orthogonal_to(v: &Vector3<f64>) -> Vector3<f64> {
    let seed = if v.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    v.cross(&seed).normalize()
}

/// Angular sampling step used when rasterizing arcs on `grid`.
pub fn arc_step(grid: EquirectGrid) -> f64 {
    0.25 * grid.row_angle()
}

/// Pixels touched by an arc, each reported once, in sweep order.
pub fn rasterize_arc(arc: &Arc, grid: EquirectGrid) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for p in arc.samples(arc_step(grid)) {
        let (u, v) = bearing_to_pixel(&p, grid);
        let idx = grid.pixel_index(u, v);
        if seen.insert(idx) {
            out.push(idx);
        }
    }
    out
}

/// Rotation whose columns are the scene's three orthogonal principal
/// directions; `r3` is the vertical one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManhattanFrame {
    rotation: Matrix3<f64>,
}

impl ManhattanFrame {
    pub fn new(r1: Vector3<f64>, r2: Vector3<f64>, r3: Vector3<f64>) -> Result<Self> {
        Self::from_matrix(Matrix3::from_columns(&[r1, r2, r3]))
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        const TOL: f64 = 1e-6;
        let c = [m.column(0), m.column(1), m.column(2)];
        for (i, col) in c.iter().enumerate() {
            if (col.norm() - 1.0).abs() > TOL {
                return Err(Error::Validation(format!("frame column {i} not unit length")));
            }
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            if c[i].dot(&c[j]).abs() > TOL {
                return Err(Error::Validation(format!(
                    "frame columns {i} and {j} are not orthogonal"
                )));
            }
        }
        if (m.determinant() - 1.0).abs() > TOL {
            return Err(Error::Validation("frame determinant is not +1".into()));
        }
        Ok(Self { rotation: m })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
        }
    }

    /// Rotation about the world `z` axis by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn axis(&self, k: usize) -> Vector3<f64> {
        self.rotation.column(k).into_owned()
    }

    pub fn to_frame(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * world
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * local
    }

    /// Frame yaw: longitude of `r1`.
    pub fn yaw(&self) -> f64 {
        let r1 = self.axis(0);
        r1.y.atan2(r1.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> EquirectGrid {
        EquirectGrid::new(256, 128).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(EquirectGrid::new(256, 100).is_err());
        assert!(EquirectGrid::new(6, 3).is_err());
        assert!(EquirectGrid::new(8, 4).is_ok());
    }

    #[test]
    fn center_pixel_is_forward() {
        let b = pixel_to_bearing(127.5, 63.5, grid()).unwrap();
        assert!((b.vector() - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn quarter_pixel_is_minus_y() {
        let b = pixel_to_bearing(63.5, 63.5, grid()).unwrap();
        assert!((b.vector() - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        // A quarter of the height down from the top is latitude π/4.
        let b = pixel_to_bearing(63.5, 31.5, grid()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.vector() - Vector3::new(0.0, -h, h)).norm() < 1e-12);
    }

    #[test]
    fn last_half_row_pins_to_south_pole() {
        let b = pixel_to_bearing(10.0, 127.9, grid()).unwrap();
        assert!((b.z() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(matches!(
            pixel_to_bearing(10.0, -0.0001, grid()),
            Err(Error::Domain(_))
        ));
        assert!(pixel_to_bearing(256.0, 3.0, grid()).is_err());
        assert!(pixel_to_bearing(3.0, 128.0, grid()).is_err());
    }

    #[test]
    fn forward_bearing_maps_to_center() {
        let (u, v) = bearing_to_pixel(&UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap(), grid());
        assert!((u - 127.5).abs() < 1e-9 && (v - 63.5).abs() < 1e-9);
    }

    #[test]
    fn north_pole_clamps_to_top_row() {
        let (u, v) = bearing_to_pixel(&UnitBearing::from_xyz(0.0, 0.0, 1.0).unwrap(), grid());
        assert_eq!(v, 0.0);
        assert!((0.0..256.0).contains(&u));
        assert_eq!(grid().pixel_index(u, v) / 256, 0);
    }

    #[test]
    fn round_trip_random_pixels() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let u = rng.random_range(0.0..256.0);
            let v = rng.random_range(0.0..127.5);
            let b = pixel_to_bearing(u, v, g).unwrap();
            assert!((b.vector().norm() - 1.0).abs() < 1e-9);
            let (u2, v2) = bearing_to_pixel(&b, g);
            assert!(g.wrapped_du(u2 - u).abs() < 1e-6 && (v2 - v).abs() < 1e-6);
        }
    }

    #[test]
    fn fit_coplanar_points() {
        let pts = [
            UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap(),
            UnitBearing::from_xyz(0.0, 1.0, 0.0).unwrap(),
            UnitBearing::from_xyz(-1.0, 0.0, 0.0).unwrap(),
        ];
        let c = fit_great_circle(&pts, &[1.0; 3]).unwrap();
        assert!((c.normal().vector() - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn fit_rejects_duplicate_points() {
        let p = UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            fit_great_circle(&[p, p], &[1.0, 1.0]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(fit_great_circle(&[p, p.neg()], &[1.0, 1.0]).is_err());
        assert!(fit_great_circle(&[p], &[1.0]).is_err());
    }

    #[test]
    fn fit_noisy_tilted_circle() {
        let truth = GreatCircle::from_normal(UnitBearing::from_xyz(1.0, 1.0, 1.0).unwrap());
        let (e1, e2) = truth.basis();
        let n = truth.normal().vector();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<UnitBearing> = (0..50)
            .map(|i| {
                let t = i as f64 / 50.0 * TAU;
                let noise = rng.random_range(-1e-3..1e-3);
                UnitBearing::new(e1 * t.cos() + e2 * t.sin() + n * noise).unwrap()
            })
            .collect();
        let fit = fit_great_circle(&pts, &vec![1.0; 50]).unwrap();
        assert!(fit.normal().angle_to(truth.normal()) < 1e-2);
    }

    #[test]
    fn fit_invariant_to_weight_scale_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<UnitBearing> = (0..30)
            .map(|_| {
                UnitBearing::from_xyz(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                )
                .unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..1.0)).collect();
        let a = fit_great_circle(&pts, &w).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * 7.5).collect();
        let b = fit_great_circle(&pts, &scaled).unwrap();
        assert!((a.normal().vector() - b.normal().vector()).norm() < 1e-9);
        let mut rp = pts.clone();
        let mut rw = w.clone();
        rp.reverse();
        rw.reverse();
        let c = fit_great_circle(&rp, &rw).unwrap();
        assert!((a.normal().vector() - c.normal().vector()).norm() < 1e-9);
    }

    #[test]
    fn distance_to_circle() {
        let c = GreatCircle::from_normal(UnitBearing::from_xyz(0.0, 0.0, 1.0).unwrap());
        let on = UnitBearing::from_xyz(0.3, 0.7, 0.0).unwrap();
        assert!(angular_distance_to_circle(&on, &c).abs() < 1e-12);
        let pole = UnitBearing::from_xyz(0.0, 0.0, -1.0).unwrap();
        assert!((angular_distance_to_circle(&pole, &c) - FRAC_PI_2).abs() < 1e-12);
        let p = UnitBearing::from_xyz(0.6, 0.0, 0.8).unwrap();
        assert!((angular_distance_to_circle(&p, &c) - 0.927_295_218_001_612_2).abs() < 1e-12);
    }

    #[test]
    fn canonical_normal_sign() {
        let c = GreatCircle::from_normal(UnitBearing::from_xyz(-1.0, 2.0, 0.0).unwrap());
        assert!(c.normal().x() > 0.0);
        let d = GreatCircle::from_normal(UnitBearing::from_xyz(0.0, 0.0, -1.0).unwrap());
        assert!(d.normal().z() > 0.0);
    }

    #[test]
    fn frame_rejects_sheared_triple() {
        let shear = 5f64.to_radians();
        let r1 = Vector3::x();
        let r2 = Vector3::new(shear.sin(), shear.cos(), 0.0);
        let r3 = Vector3::z();
        assert!(ManhattanFrame::new(r1, r2, r3).is_err());
        assert!(ManhattanFrame::new(Vector3::x(), Vector3::y(), -Vector3::z()).is_err());
        assert!(ManhattanFrame::new(Vector3::x(), Vector3::y(), Vector3::z()).is_ok());
    }

    #[test]
    fn arc_endpoints_and_raster() {
        let a = UnitBearing::from_xyz(1.0, 0.0, 0.0).unwrap();
        let b = UnitBearing::from_xyz(0.0, 1.0, 0.0).unwrap();
        let arc = Arc::between(&a, &b, None);
        assert!((arc.to().vector() - b.vector()).norm() < 1e-12);
        let g = EquirectGrid::new(16, 8).unwrap();
        let px = rasterize_arc(&arc, g);
        // The equator sits on a row boundary and rounds into row 4.
        assert!(px.iter().all(|&i| i / 16 == 4));
        assert_eq!(px.len(), 5);
    }
}
