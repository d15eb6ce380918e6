//! Synthetic Manhattan rooms and map corruption, standing in for network
//! predictions with known ground truth.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom2d::{self, Point2};
use crate::maps::{ProbabilityMap, PixelField};
use crate::room::LayoutModel;
use crate::sphere::ManhattanFrame;

pub const CORNER_COUNTS: [usize; 5] = [4, 6, 8, 10, 12];

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    pub corner_count: usize,
    /// Side lengths of the bounding rectangle, meters.
    pub extent_range: (f64, f64),
    /// Floor-to-ceiling height, meters.
    pub height_range: (f64, f64),
    pub camera_height: f64,
    /// Rotate the room by a random yaw in `[-π/4, π/4)`.
    pub random_yaw: bool,
    pub seed: u64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            corner_count: 4,
            extent_range: (3.0, 8.0),
            height_range: (2.2, 3.0),
            camera_height: 1.0,
            random_yaw: true,
            seed: 0,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if !CORNER_COUNTS.contains(&self.corner_count) {
            return Err(Error::Validation(format!(
                "corner count must be one of {CORNER_COUNTS:?}, got {}",
                self.corner_count
            )));
        }
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ordered(self.extent_range) || !ordered(self.height_range) {
            return Err(Error::Validation("ranges must be positive and ordered".into()));
        }
        if !(self.camera_height > 0.0 && self.camera_height < self.height_range.0) {
            return Err(Error::Validation(
                "camera height must be positive and below the lowest ceiling".into(),
            ));
        }
        Ok(())
    }
}

/// Random rectilinear room: a rectangle with `(n − 4) / 2` of its corners
/// notched by a smaller rectangle, each notch adding two vertices. The
/// camera is placed at a rejection-sampled interior point at least
/// `0.12 · min(side)` from every wall.
pub fn sample_room(spec: &RoomSpec) -> Result<LayoutModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.extent_range;
    let a = rng.random_range(lo..=hi);
    let b = rng.random_range(lo..=hi);
    let notches = (spec.corner_count - 4) / 2;
    let mut notched = [false; 4];
    for i in sample(&mut rng, 4, notches) {
        notched[i] = true;
    }
    let mut size = || (rng.random_range(0.2..0.45) * a, rng.random_range(0.2..0.45) * b);
    let mut poly: Vec<Point2> = Vec::with_capacity(spec.corner_count);
    // Rectangle corners counterclockwise from bottom-left.
    if notched[0] {
        let (w, d) = size();
        poly.extend([[0.0, d], [w, d], [w, 0.0]]);
    } else {
        poly.push([0.0, 0.0]);
    }
    if notched[1] {
        let (w, d) = size();
        poly.extend([[a - w, 0.0], [a - w, d], [a, d]]);
    } else {
        poly.push([a, 0.0]);
    }
    if notched[2] {
        let (w, d) = size();
        poly.extend([[a, b - d], [a - w, b - d], [a - w, b]]);
    } else {
        poly.push([a, b]);
    }
    if notched[3] {
        let (w, d) = size();
        poly.extend([[w, b], [w, b - d], [0.0, b - d]]);
    } else {
        poly.push([0.0, b]);
    }
    // Start at a vertex followed by an x-directed edge.
    if (poly[1][1] - poly[0][1]).abs() > 0.0 {
        poly.rotate_left(1);
    }

    let margin = 0.12 * a.min(b);
    let mut camera = None;
    for _ in 0..10_000 {
        let p = [rng.random_range(0.0..a), rng.random_range(0.0..b)];
        if geom2d::contains_point(&poly, p) && geom2d::boundary_distance(&poly, p) >= margin {
            camera = Some(p);
            break;
        }
    }
    let camera = camera.ok_or_else(|| Error::Generation("no interior camera position found".into()))?;
    let shifted: Vec<Point2> = poly.iter().map(|p| [p[0] - camera[0], p[1] - camera[1]]).collect();
    let total = rng.random_range(spec.height_range.0..=spec.height_range.1);
    let yaw = if spec.random_yaw {
        rng.random_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4)
    } else {
        0.0
    };
    LayoutModel::new(
        shifted,
        -spec.camera_height,
        total - spec.camera_height,
        ManhattanFrame::from_yaw(yaw),
    )
}

/// Map corruption parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    /// Fraction of background pixels set to a random value in `[0.3, 1]`.
    pub spurious_edge_fraction: f64,
    /// Fraction of structure pixels (value ≥ 0.5) set to zero.
    pub dropout_fraction: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gaussian_sigma", self.gaussian_sigma),
            ("spurious_edge_fraction", self.spurious_edge_fraction),
            ("dropout_fraction", self.dropout_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.spurious_edge_fraction == 0.0 && self.dropout_fraction == 0.0
    }
}

const STRUCTURE_LEVEL: f32 = 0.5;

fn corrupt_one(map: &ProbabilityMap, noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<ProbabilityMap> {
    let values = map.values();
    let structure: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= STRUCTURE_LEVEL).collect();
    let background: Vec<usize> = (0..values.len()).filter(|&i| values[i] < STRUCTURE_LEVEL).collect();
    let mut out: Vec<f64> = values.iter().map(|v| *v as f64).collect();
    let dropped = (noise.dropout_fraction * structure.len() as f64).round() as usize;
    for k in sample(rng, structure.len(), dropped) {
        out[structure[k]] = 0.0;
    }
    let spurious = (noise.spurious_edge_fraction * background.len() as f64).round() as usize;
    for k in sample(rng, background.len(), spurious) {
        out[background[k]] = rng.random_range(0.3..=1.0);
    }
    if noise.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.gaussian_sigma).expect("valid sigma");
        for v in out.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    ProbabilityMap::from_f64_clamped(map.grid(), map.channel(), &out)
}

/// Applies dropout, spurious responses and clipped Gaussian noise to both
/// maps. Deterministic per seed; a zero spec returns the inputs unchanged.
pub fn corrupt_maps(
    edge: &ProbabilityMap,
    corner: &ProbabilityMap,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(ProbabilityMap, ProbabilityMap)> {
    noise.validate()?;
    if noise.is_zero() {
        return Ok((edge.clone(), corner.clone()));
    }
    let mut rng_e = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_c = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok((corrupt_one(edge, noise, &mut rng_e)?, corrupt_one(corner, noise, &mut rng_c)?))
}

/// Corner count of room `index` in a corpus: 4 walls with probability 0.6,
/// otherwise uniform over the larger allowed counts. `complex_only` never
/// yields a box.
pub fn corpus_corner_count(seed: u64, index: u64, allowed: &[usize], complex_only: bool) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(room_seed(seed, index).wrapping_add(0x5bd1_e995));
    let complex: Vec<usize> = allowed.iter().copied().filter(|&n| n > 4).collect();
    let has_box = allowed.contains(&4);
    if complex.is_empty() || (has_box && !complex_only && rng.random_bool(0.6)) {
        return if has_box { 4 } else { allowed[0] };
    }
    complex[rng.random_range(0..complex.len())]
}

/// Per-room seed derived from the corpus seed.
pub fn room_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}
