//! Structural line extraction from an edge probability map: sequential
//! weighted RANSAC over great circles, Manhattan frame estimation, line
//! labelling and probability scoring.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::{PixelField, ProbabilityMap};
use crate::room::Axis;
use crate::sphere::{
    angular_distance_to_circle, bearing_to_pixel, fit_great_circle, rasterize_arc, Arc, EquirectGrid,
    GreatCircle, ManhattanFrame, UnitBearing,
};

/// Edge pixel sample fed to RANSAC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedBearing {
    pub bearing: UnitBearing,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DirectionLabel {
    X,
    Y,
    Z,
    Unassigned,
}

impl DirectionLabel {
    pub fn axis(self) -> Option<Axis> {
        match self {
            DirectionLabel::X => Some(Axis::X),
            DirectionLabel::Y => Some(Axis::Y),
            DirectionLabel::Z => Some(Axis::Z),
            DirectionLabel::Unassigned => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            DirectionLabel::X => "X",
            DirectionLabel::Y => "Y",
            DirectionLabel::Z => "Z",
            DirectionLabel::Unassigned => "U",
        }
    }
}

impl From<Axis> for DirectionLabel {
    fn from(a: Axis) -> Self {
        match a {
            Axis::X => DirectionLabel::X,
            Axis::Y => DirectionLabel::Y,
            Axis::Z => DirectionLabel::Z,
        }
    }
}

/// A structural line: the shorter arc between `span.0` and `span.1` on
/// `circle`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreatCircleSegment {
    pub circle: GreatCircle,
    pub span: (UnitBearing, UnitBearing),
    pub label: DirectionLabel,
    pub probability: f64,
    /// Sample indices claimed as inliers by this segment.
    pub inliers: Vec<usize>,
}

impl GreatCircleSegment {
    pub fn new(circle: GreatCircle, a: UnitBearing, b: UnitBearing) -> Self {
        let span = (circle.project(&a), circle.project(&b));
        Self {
            circle,
            span,
            label: DirectionLabel::Unassigned,
            probability: 0.0,
            inliers: Vec::new(),
        }
    }

    pub fn arc(&self) -> Arc {
        Arc::between(&self.span.0, &self.span.1, Some(self.circle.normal()))
    }

    pub fn length(&self) -> f64 {
        self.span.0.angle_to(&self.span.1)
    }

    /// Angle by which `p` (assumed on the circle) lies outside the span;
    /// zero inside it.
    pub fn outside_span(&self, p: &UnitBearing) -> f64 {
        let len = self.length();
        let da = p.angle_to(&self.span.0);
        let db = p.angle_to(&self.span.1);
        if da <= len && db <= len {
            0.0
        } else {
            da.min(db)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub seed: u64,
    /// Hypotheses drawn per extracted line.
    pub max_iterations: usize,
    pub inlier_tol_rad: f64,
    /// Minimum inlier count for a line to be accepted.
    pub min_inliers: usize,
    pub max_lines: usize,
    pub edge_threshold: f64,
    /// Samples within this distance of an accepted circle leave the pool.
    pub claim_tol_rad: f64,
    /// Inlier runs separated by a larger angular gap become separate segments.
    pub max_gap_rad: f64,
    /// Claimed samples are unavailable to hypotheses within this angle of
    /// the claiming line.
    pub parallel_rad: f64,
    /// Angular separation range of the two points of a minimal sample.
    pub min_pair_rad: f64,
    pub max_pair_rad: f64,
    /// Minimal samples are drawn from samples at least this fraction of
    /// the strongest weight.
    pub seed_weight_fraction: f64,
    /// Weighted (probability mass) rather than counted inlier scoring.
    pub weighted: bool,
}

impl RansacConfig {
    /// Defaults tuned at 64×128, rescaled by row size for other grids.
    pub fn for_grid(grid: EquirectGrid) -> Self {
        let px = grid.row_angle();
        let area = (grid.height() as f64 / 64.0).powi(2);
        Self {
            seed: 0,
            max_iterations: 600,
            inlier_tol_rad: 0.4 * px,
            min_inliers: ((8.0 * area.sqrt()).round() as usize).max(4),
            max_lines: 40,
            edge_threshold: 0.3,
            claim_tol_rad: 2.5 * px,
            max_gap_rad: 3.0 * px,
            parallel_rad: 5.0 * px,
            min_pair_rad: 2.0 * px,
            max_pair_rad: 16.0 * px,
            seed_weight_fraction: 0.5,
            weighted: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.min_inliers == 0 || self.max_lines == 0 {
            return Err(Error::Validation("RANSAC counts must be >= 1".into()));
        }
        if !(self.inlier_tol_rad > 0.0 && self.claim_tol_rad > 0.0 && self.max_gap_rad > 0.0) {
            return Err(Error::Validation("RANSAC tolerances must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self::for_grid(EquirectGrid::new(128, 64).expect("valid grid"))
    }
}

/// One sample per pixel with value ≥ `threshold`, row-major.
pub fn extract_edge_pixels(edge: &ProbabilityMap, threshold: f64) -> Vec<WeightedBearing> {
    let g = edge.grid();
    let w = g.width();
    edge.values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v as f64 >= threshold)
        .map(|(i, v)| WeightedBearing {
            bearing: g.pixel_center_bearing(i % w, i / w),
            weight: *v as f64,
        })
        .collect()
}

/// Sub-pixel ridge samples of an edge map: every pixel ≥ `threshold` that
/// is a local maximum along its column or its row, moved to the vertex of
/// the parabola through it and its two neighbours. A pixel maximal in both
/// directions yields two samples. Weights are the pixel values.
pub fn extract_ridge_samples(edge: &ProbabilityMap, threshold: f64) -> Vec<WeightedBearing> {
    let g = edge.grid();
    let (w, h) = (g.width(), g.height());
    let at = |u: usize, v: usize| edge.get(u, v) as f64;
    let vertex = |a: f64, b: f64, c: f64| {
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            (0.5 * (a - c) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let mut out = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let b = at(u, v);
            if b < threshold {
                continue;
            }
            let mut push = |uu: f64, vv: f64| {
                let uu = uu.rem_euclid(w as f64);
                let vv = vv.clamp(0.0, h as f64 - 0.5);
                if let Ok(bearing) = crate::sphere::pixel_to_bearing(uu, vv, g) {
                    out.push(WeightedBearing { bearing, weight: b });
                }
            };
            let up = if v > 0 { at(u, v - 1) } else { 0.0 };
            let down = if v + 1 < h { at(u, v + 1) } else { 0.0 };
            if b >= up && b > down {
                push(u as f64, v as f64 + vertex(up, b, down));
            }
            let left = at((u + w - 1) % w, v);
            let right = at((u + 1) % w, v);
            if b >= left && b > right {
                push(u as f64 + vertex(left, b, right), v as f64);
            }
        }
    }
    out
}

/// Sequential multi-model RANSAC over great circles.
///
/// Each round draws `max_iterations` two-point hypotheses from confident
/// unclaimed samples. A hypothesis is scored by the (weighted) support of
/// its best contiguous run of inliers, so a circle that grazes several
/// unrelated lines does not beat a single clean one. New best hypotheses are
/// refit by least squares on their run. The accepted run becomes a segment
/// and claims the samples in a band around it; claimed samples stay
/// available to crossing lines but not to near-parallel ones. Stops after
/// `max_lines` rounds or when the best run has fewer than `min_inliers`
/// samples.
pub fn ransac_great_circles(samples: &[WeightedBearing], cfg: &RansacConfig) -> Result<Vec<GreatCircleSegment>> {
    cfg.validate()?;
    if samples.len() < cfg.min_inliers {
        return Err(Error::Extraction(format!(
            "{} samples, at least {} required",
            samples.len(),
            cfg.min_inliers
        )));
    }
    let points: Vec<Vector3<f64>> = samples.iter().map(|s| s.bearing.vector()).collect();
    let weight = |i: usize| if cfg.weighted { samples[i].weight } else { 1.0 };
    let sin_tol = cfg.inlier_tol_rad.sin();
    let sin_claim = cfg.claim_tol_rad.sin();
    let cos_pair = cfg.max_pair_rad.cos();
    let cos_min_pair = cfg.min_pair_rad.cos();
    let cos_parallel = cfg.parallel_rad.cos();
    let max_weight = samples.iter().map(|s| s.weight).fold(0.0, f64::max);
    let core_level = cfg.seed_weight_fraction * max_weight;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Accepted line claiming each sample, if any.
    let mut owner: Vec<Option<usize>> = vec![None; samples.len()];
    let mut is_inlier = vec![false; samples.len()];
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    let mut segments = Vec::new();

    // Best run of `n`: (score, available count, members in circle order).
    let best_run = |n: &Vector3<f64>, owner: &[Option<usize>], is_inlier: &[bool], normals: &[Vector3<f64>]| {
        let parallel: Vec<bool> = normals.iter().map(|m| n.dot(m).abs() >= cos_parallel).collect();
        let available = |i: usize| !is_inlier[i] && owner[i].is_none_or(|k| !parallel[k]);
        let support: Vec<usize> = (0..points.len()).filter(|&i| n.dot(&points[i]).abs() <= sin_tol).collect();
        let mut best: Option<(f64, usize, Vec<usize>, Vec<usize>)> = None;
        for run in split_runs(n, &support, &points, cfg.max_gap_rad) {
            let free: Vec<usize> = run.iter().copied().filter(|&i| available(i)).collect();
            let score: f64 = free.iter().map(|&i| weight(i)).sum();
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, free.len(), run, free));
            }
        }
        best
    };
    let refit = |free: &[usize]| -> Option<Vector3<f64>> {
        let pts: Vec<UnitBearing> = free.iter().map(|&i| samples[i].bearing).collect();
        let w: Vec<f64> = free.iter().map(|&i| samples[i].weight).collect();
        fit_great_circle(&pts, &w).ok().map(|c| c.normal().vector())
    };

    for _ in 0..cfg.max_lines {
        let seeds: Vec<usize> = (0..samples.len())
            .filter(|&i| !is_inlier[i] && samples[i].weight >= core_level)
            .collect();
        if seeds.len() < 2 {
            break;
        }
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for _ in 0..cfg.max_iterations {
            let i = seeds[rng.random_range(0..seeds.len())];
            // Prefer a nearby partner: both points then likely share a line.
            let mut j = i;
            for _ in 0..8 {
                let cand = seeds[rng.random_range(0..seeds.len())];
                let c = points[i].dot(&points[cand]);
                if cand != i && c >= cos_pair && c <= cos_min_pair {
                    j = cand;
                    break;
                }
            }
            if j == i {
                continue;
            }
            let n = points[i].cross(&points[j]);
            let norm = n.norm();
            if norm < 1e-9 {
                continue;
            }
            let n = n / norm;
            let Some((s, _, _, free)) = best_run(&n, &owner, &is_inlier, &normals) else { continue };
            if best.is_none_or(|(bs, _)| s > bs) {
                let mut cur = (s, n);
                if let Some(r) = refit(&free) {
                    if let Some((rs, ..)) = best_run(&r, &owner, &is_inlier, &normals) {
                        if rs > s {
                            cur = (rs, r);
                        }
                    }
                }
                best = Some(cur);
            }
        }
        let Some((_, mut normal)) = best else { break };
        let Some(mut run) = best_run(&normal, &owner, &is_inlier, &normals) else { break };
        for _ in 0..3 {
            let Some(r) = refit(&run.3) else { break };
            let Some(next) = best_run(&r, &owner, &is_inlier, &normals) else { break };
            if next.0 < run.0 {
                break;
            }
            normal = r;
            run = next;
        }
        let (_, _, members, free) = run;
        let own: Vec<usize> = free.into_iter().filter(|&i| !is_inlier[i]).collect();
        if own.len() < cfg.min_inliers {
            break;
        }
        let circle = GreatCircle::from_normal(UnitBearing::new(normal)?);
        let first = UnitBearing::new(points[members[0]])?;
        let last = UnitBearing::new(points[*members.last().expect("nonempty run")])?;
        let mut seg = GreatCircleSegment::new(circle, first, last);
        let line = normals.len();
        // Claim band: near the circle and within `claim_tol` of the run
        // along it (runs may exceed half a circle, so spans are not used).
        let cos_along = cfg.claim_tol_rad.cos();
        let along: Vec<Vector3<f64>> = members
            .iter()
            .map(|&i| (points[i] - normal * normal.dot(&points[i])).normalize())
            .collect();
        for i in 0..samples.len() {
            if owner[i].is_none() && normal.dot(&points[i]).abs() <= sin_claim {
                let on = (points[i] - normal * normal.dot(&points[i])).normalize();
                if along.iter().any(|m| m.dot(&on) >= cos_along) {
                    owner[i] = Some(line);
                }
            }
        }
        for &i in &own {
            is_inlier[i] = true;
        }
        seg.probability = own.iter().map(|&i| samples[i].weight).sum();
        seg.inliers = own;
        normals.push(normal);
        segments.push(seg);
    }
    Ok(segments)
}

/// Orders support points by angle along the circle and cuts at gaps wider
/// than `max_gap`. The cyclic order starts after the widest gap.
fn split_runs(normal: &Vector3<f64>, support: &[usize], points: &[Vector3<f64>], max_gap: f64) -> Vec<Vec<usize>> {
    if support.is_empty() {
        return Vec::new();
    }
    let e1 = normal.cross(&points[support[0]]).cross(normal).normalize();
    let e2 = normal.cross(&e1);
    let mut by_angle: Vec<(f64, usize)> = support
        .iter()
        .map(|&i| (points[i].dot(&e2).atan2(points[i].dot(&e1)), i))
        .collect();
    by_angle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = by_angle.len();
    let gap = |i: usize| -> f64 {
        let next = by_angle[(i + 1) % k].0;
        let cur = by_angle[i].0;
        if i + 1 == k {
            next + std::f64::consts::TAU - cur
        } else {
            next - cur
        }
    };
    let widest = (0..k).max_by(|&a, &b| gap(a).total_cmp(&gap(b))).expect("nonempty");
    let mut runs = Vec::new();
    let mut current = Vec::new();
    for step in 0..k {
        let idx = (widest + 1 + step) % k;
        current.push(by_angle[idx].1);
        if step + 1 < k && gap(idx) > max_gap {
            runs.push(std::mem::take(&mut current));
        }
    }
    runs.push(current);
    runs
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    /// A line is compatible with direction `d` when `|nᵀd| ≤ sin(tol)`.
    pub tol_rad: f64,
    /// Only the strongest lines seed direction hypotheses.
    pub max_seed_lines: usize,
    /// Distinct top-scoring triples refined before the final choice.
    pub refine_starts: usize,
    /// Pattern-search sweep limit per start.
    pub refine_iterations: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            tol_rad: 0.04,
            max_seed_lines: 30,
            refine_starts: 4,
            refine_iterations: 200,
        }
    }
}

/// Second-moment summary of the points supporting one segment.
#[derive(Debug, Clone, Copy)]
struct Scatter {
    moment: Matrix3<f64>,
    weight_sum: f64,
}

impl Scatter {
    fn from_points(points: impl Iterator<Item = (Vector3<f64>, f64)>) -> Self {
        let mut moment = Matrix3::zeros();
        let mut weight_sum = 0.0;
        for (p, w) in points {
            moment += p * p.transpose() * w;
            weight_sum += w;
        }
        Self { moment, weight_sum }
    }

    /// Samples of the segment's arc, for segments without stored inliers.
    fn from_arc(seg: &GreatCircleSegment) -> Self {
        let arc = seg.arc();
        let n = 16;
        Self::from_points((0..=n).map(|k| (arc.point_at(arc.sweep * k as f64 / n as f64).vector(), 1.0)))
    }

    /// RMS angular residual of the best great circle through `dir`.
    fn residual_through(&self, dir: &Vector3<f64>) -> f64 {
        if self.weight_sum <= 0.0 {
            return f64::INFINITY;
        }
        let seed = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = dir.cross(&seed).normalize();
        let e2 = dir.cross(&e1);
        let a = e1.dot(&(self.moment * e1));
        let b = e1.dot(&(self.moment * e2));
        let c = e2.dot(&(self.moment * e2));
        let lambda = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (lambda.max(0.0) / self.weight_sum).sqrt().min(1.0).asin()
    }
}

/// Manhattan frame from line normals.
///
/// Direction triples are hypothesized from line pairs (their common
/// vanishing direction) plus a third line fixing the rotation about it.
/// Each triple is scored by the probability mass of lines whose support
/// fits a great circle through one of its directions (soft, within
/// `tol_rad`). The strongest distinct triples are refined by a pattern
/// search over rotations and the best refined one wins. The result has
/// `r3` closest to `+z` and `r1` the horizontal axis nearest longitude 0.
///
/// Segment support is sampled from each segment's arc; see
/// [`estimate_manhattan_frame_with_samples`] to use the inlier samples.
pub fn estimate_manhattan_frame(segments: &[GreatCircleSegment], cfg: &FrameConfig) -> Result<ManhattanFrame> {
    let scatters: Vec<Scatter> = segments.iter().map(Scatter::from_arc).collect();
    frame_from_scatters(segments, &scatters, cfg)
}

/// [`estimate_manhattan_frame`] with each segment's support taken from its
/// inlier samples (arc samples for segments without inliers).
pub fn estimate_manhattan_frame_with_samples(
    segments: &[GreatCircleSegment],
    samples: &[WeightedBearing],
    cfg: &FrameConfig,
) -> Result<ManhattanFrame> {
    let scatters: Vec<Scatter> = segments
        .iter()
        .map(|s| {
            if s.inliers.len() >= 2 && s.inliers.iter().all(|&i| i < samples.len()) {
                Scatter::from_points(s.inliers.iter().map(|&i| (samples[i].bearing.vector(), samples[i].weight)))
            } else {
                Scatter::from_arc(s)
            }
        })
        .collect();
    frame_from_scatters(segments, &scatters, cfg)
}

fn frame_from_scatters(segments: &[GreatCircleSegment], scatters: &[Scatter], cfg: &FrameConfig) -> Result<ManhattanFrame> {
    let sin_tol = cfg.tol_rad.sin();
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| {
        segments[b]
            .probability
            .total_cmp(&segments[a].probability)
            .then(segments[a].circle.canonical_cmp(&segments[b].circle))
    });
    let seeds: Vec<usize> = order.iter().copied().take(cfg.max_seed_lines).collect();
    let normals: Vec<Vector3<f64>> = segments.iter().map(|s| s.circle.normal().vector()).collect();
    let weights: Vec<f64> = segments.iter().map(|s| s.probability.max(1e-12)).collect();

    let best_fit = |sc: &Scatter, dirs: &[Vector3<f64>; 3]| -> (usize, f64) {
        (0..3)
            .map(|k| (k, sc.residual_through(&dirs[k])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("three directions")
    };
    // (soft score, hard score, directions used)
    let score = |dirs: &[Vector3<f64>; 3]| -> (f64, f64, usize) {
        let mut hard = 0.0;
        let mut soft = 0.0;
        let mut used = [false; 3];
        for (sc, w) in scatters.iter().zip(&weights) {
            let (k, r) = best_fit(sc, dirs);
            if r <= cfg.tol_rad {
                hard += w;
                soft += w * (1.0 - (r / cfg.tol_rad).powi(2));
                used[k] = true;
            }
        }
        (soft, hard, used.iter().filter(|u| **u).count())
    };
    let better = |a: &(f64, f64, usize), b: &(f64, f64, usize)| a.0 > b.0 + 1e-12 || ((a.0 - b.0).abs() <= 1e-12 && a.1 > b.1);

    let mut triples: Vec<((f64, f64, usize), Matrix3<f64>)> = Vec::new();
    for (ai, &a) in seeds.iter().enumerate() {
        for &b in &seeds[ai + 1..] {
            let d1 = normals[a].cross(&normals[b]);
            if d1.norm() < (5f64).to_radians().sin() {
                continue;
            }
            let d1 = d1.normalize();
            for &c in &seeds {
                if c == a || c == b || normals[c].dot(&d1).abs() <= sin_tol {
                    continue;
                }
                let d2 = d1.cross(&normals[c]);
                if d2.norm() < 1e-9 {
                    continue;
                }
                let d2 = d2.normalize();
                let dirs = [d1, d2, d1.cross(&d2)];
                triples.push((score(&dirs), Matrix3::from_columns(&dirs)));
            }
        }
    }
    if triples.is_empty() {
        return Err(Error::Frame("lines do not support two distinct directions".into()));
    }
    triples.sort_by(|x, y| {
        if better(&x.0, &y.0) {
            std::cmp::Ordering::Less
        } else if better(&y.0, &x.0) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    // Distinct starting points: no shared axis within 3°.
    let same_axes = |p: &Matrix3<f64>, q: &Matrix3<f64>| {
        (0..3).all(|i| (0..3).any(|j| p.column(i).dot(&q.column(j)).abs() > (3f64).to_radians().cos()))
    };
    let mut starts: Vec<Matrix3<f64>> = Vec::new();
    for (_, m) in &triples {
        if starts.len() >= cfg.refine_starts.max(1) {
            break;
        }
        if !starts.iter().any(|s| same_axes(s, m)) {
            starts.push(*m);
        }
    }

    let columns = |m: &Matrix3<f64>| [m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned()];
    // Pattern search over small rotations of `start`.
    let search = |start: &Matrix3<f64>| {
        let base = orthonormalize(start);
        let eval = |w: &Vector3<f64>| score(&columns(&(base * nalgebra::Rotation3::new(*w).matrix())));
        let mut omega = Vector3::zeros();
        let mut cur = eval(&omega);
        let mut step = 0.02;
        for _ in 0..cfg.refine_iterations {
            let mut moved = false;
            for k in 0..3 {
                for sign in [1.0, -1.0] {
                    let mut trial = omega;
                    trial[k] += sign * step;
                    let s = eval(&trial);
                    if better(&s, &cur) {
                        cur = s;
                        omega = trial;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                step *= 0.5;
                if step < 1e-5 {
                    break;
                }
            }
        }
        (cur, base * nalgebra::Rotation3::new(omega).matrix())
    };
    let mut best: Option<((f64, f64, usize), Matrix3<f64>)> = None;
    for start in starts {
        let (cur, rot) = search(&start);
        if best.as_ref().is_none_or(|(b, _)| better(&cur, b)) {
            best = Some((cur, rot));
        }
    }
    let ((_, _, used), rot) = best.expect("at least one start");
    if used < 2 {
        return Err(Error::Frame("only one vanishing direction is supported".into()));
    }
    canonicalize_frame(&orthonormalize(&rot))
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u");
    let vt = svd.v_t.expect("v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

fn canonicalize_frame(rot: &Matrix3<f64>) -> Result<ManhattanFrame> {
    let cols = [rot.column(0).into_owned(), rot.column(1).into_owned(), rot.column(2).into_owned()];
    let up = (0..3)
        .max_by(|&a, &b| cols[a].z.abs().total_cmp(&cols[b].z.abs()))
        .expect("three columns");
    let r3 = if cols[up].z < 0.0 { -cols[up] } else { cols[up] };
    let horizontals: Vec<Vector3<f64>> = (0..3)
        .filter(|&k| k != up)
        .flat_map(|k| [cols[k], -cols[k]])
        .collect();
    let r1 = horizontals
        .iter()
        .min_by(|a, b| {
            a.y.atan2(a.x)
                .abs()
                .total_cmp(&b.y.atan2(b.x).abs())
                .then(b.x.total_cmp(&a.x))
        })
        .copied()
        .expect("two horizontal axes");
    let r2 = r3.cross(&r1);
    ManhattanFrame::new(r1, r2, r3)
}

/// Labels each segment with the frame direction its circle contains: `Z`
/// when the plane contains `r3` within `tol_rad`, else the closer of
/// `X`/`Y` (ties to `X`) within `tol_rad`, else `Unassigned`.
pub fn classify_lines(segments: &[GreatCircleSegment], frame: &ManhattanFrame, tol_rad: f64) -> Vec<GreatCircleSegment> {
    let sin_tol = tol_rad.sin();
    segments
        .iter()
        .map(|s| {
            let n = s.circle.normal().vector();
            let dev = |k: usize| n.dot(&frame.axis(k)).abs();
            let label = if dev(2) <= sin_tol {
                DirectionLabel::Z
            } else if dev(0) <= dev(1) && dev(0) <= sin_tol {
                DirectionLabel::X
            } else if dev(1) <= sin_tol {
                DirectionLabel::Y
            } else {
                DirectionLabel::Unassigned
            };
            GreatCircleSegment {
                label,
                ..s.clone()
            }
        })
        .collect()
}

/// Refits every segment's circle under the constraint that it passes
/// through one of the frame directions, choosing the direction with the
/// smallest weighted RMS residual over the segment's inlier samples. The
/// refit is kept, and labelled, when that residual is at most `tol_rad`;
/// otherwise the segment is returned unchanged. Short horizontal segments
/// whose free fit is too noisy to classify are recovered this way, and all
/// intersections become consistent with the frame.
pub fn snap_to_frame(
    segments: &[GreatCircleSegment],
    samples: &[WeightedBearing],
    frame: &ManhattanFrame,
    tol_rad: f64,
) -> Vec<GreatCircleSegment> {
    segments
        .iter()
        .map(|s| {
            let mut best: Option<(f64, usize, Vector3<f64>)> = None;
            for k in 0..3 {
                if let Some((rms, normal)) = constrained_fit(s, samples, &frame.axis(k)) {
                    if best.as_ref().is_none_or(|b| rms < b.0) {
                        best = Some((rms, k, normal));
                    }
                }
            }
            match best {
                Some((rms, k, normal)) if rms <= tol_rad => {
                    let circle = GreatCircle::from_normal(UnitBearing::new(normal).expect("unit normal"));
                    let mut out = GreatCircleSegment::new(circle, s.span.0, s.span.1);
                    out.label = [DirectionLabel::X, DirectionLabel::Y, DirectionLabel::Z][k];
                    out.probability = s.probability;
                    out.inliers = s.inliers.clone();
                    out
                }
                _ => s.clone(),
            }
        })
        .collect()
}

/// Weighted least-squares circle through `dir` fitted to the inliers of
/// `seg`: the normal is confined to the plane orthogonal to `dir`, which
/// leaves a 2×2 eigenproblem. Returns (RMS angular residual, normal).
fn constrained_fit(seg: &GreatCircleSegment, samples: &[WeightedBearing], dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    if seg.inliers.len() < 2 {
        return None;
    }
    let seed = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = dir.cross(&seed).normalize();
    let e2 = dir.cross(&e1);
    let (mut a, mut b, mut c, mut wsum) = (0.0, 0.0, 0.0, 0.0);
    for &i in &seg.inliers {
        let p = samples[i].bearing.vector();
        let w = samples[i].weight;
        let (x, y) = (p.dot(&e1), p.dot(&e2));
        a += w * x * x;
        b += w * x * y;
        c += w * y * y;
        wsum += w;
    }
    if wsum <= 0.0 {
        return None;
    }
    // Smallest eigenvector of [[a, b], [b, c]].
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lambda = half_tr - disc;
    let (vx, vy) = if b.abs() > 1e-15 {
        (lambda - c, b)
    } else if a <= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let normal = (e1 * vx + e2 * vy).try_normalize(1e-15)?;
    let rms = (lambda.max(0.0) / wsum).sqrt().asin();
    Some((rms, normal))
}

/// Sum of `field` over the pixels of an arc, each pixel counted once.
pub fn arc_mass<F: PixelField + ?Sized>(arc: &Arc, field: &F) -> f64 {
    rasterize_arc(arc, field.grid()).iter().map(|&i| field.at(i)).sum()
}

/// Rescores segments by the edge-map mass under their arcs, drops those with
/// zero probability and sorts by probability (descending), ties by normal.
pub fn score_and_prune(segments: &[GreatCircleSegment], edge: &ProbabilityMap) -> Vec<GreatCircleSegment> {
    let mut out: Vec<GreatCircleSegment> = segments
        .iter()
        .map(|s| GreatCircleSegment {
            probability: arc_mass(&s.arc(), edge),
            ..s.clone()
        })
        .filter(|s| s.probability > 0.0)
        .collect();
    out.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.circle.canonical_cmp(&b.circle))
    });
    out
}

/// Debug dump, one segment per line:
/// `label nx ny nz ua va ub vb probability`.
pub fn segments_to_text(segments: &[GreatCircleSegment], grid: EquirectGrid) -> String {
    let mut s = String::new();
    for seg in segments {
        let n = seg.circle.normal();
        let (ua, va) = bearing_to_pixel(&seg.span.0, grid);
        let (ub, vb) = bearing_to_pixel(&seg.span.1, grid);
        writeln!(
            s,
            "{} {:.9} {:.9} {:.9} {:.4} {:.4} {:.4} {:.4} {:.6}",
            seg.label.code(),
            n.x(),
            n.y(),
            n.z(),
            ua,
            va,
            ub,
            vb,
            seg.probability
        )
        .unwrap();
    }
    s
}

/// Angular distance from `p` to a segment (0 when `p` lies on the arc).
pub fn distance_to_segment(p: &UnitBearing, seg: &GreatCircleSegment) -> f64 {
    let off = angular_distance_to_circle(p, &seg.circle);
    let q = seg.circle.project(p);
    off.hypot(seg.outside_span(&q))
}
