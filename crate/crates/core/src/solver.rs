//! Layout hypotheses from structural lines: corner candidates at line
//! intersections, rectilinear circuits over a corner adjacency graph,
//! scoring against the edge and corner maps, and lifting to a metric room.

use std::collections::{BTreeSet, HashMap, HashSet};

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::geom2d::{self, Point2};
use crate::lines::{DirectionLabel, GreatCircleSegment};
use crate::maps::{PixelField, ProbabilityMap};
use crate::room::{Axis, LayoutModel};
use crate::sphere::{bearing_to_pixel, rasterize_arc, Arc, EquirectGrid, ManhattanFrame, UnitBearing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CornerKind {
    CeilingCorner,
    FloorCorner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerCandidate {
    pub bearing: UnitBearing,
    pub pixel: (f64, f64),
    pub kind: CornerKind,
    /// Indices of the two segments whose intersection produced the corner;
    /// `None` for corners synthesized from the room geometry.
    pub parent_lines: Option<(usize, usize)>,
    pub score: f64,
}

impl CornerCandidate {
    fn at(bearing: UnitBearing, kind: CornerKind, parent_lines: Option<(usize, usize)>, corner: &impl PixelField) -> Self {
        let pixel = bearing_to_pixel(&bearing, corner.grid());
        Self {
            bearing,
            pixel,
            kind,
            parent_lines,
            score: corner.bilinear(pixel.0, pixel.1).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_corners: usize,
    pub max_hypotheses: usize,
    /// Intersections may lie this far beyond either segment's span.
    pub span_slack_rad: f64,
    /// Candidates closer than this (angle) on the same azimuth are merged.
    pub merge_tol_rad: f64,
    /// Relative disagreement allowed between the shared coordinate of two
    /// corners joined by a wall edge, on top of `coord_tol_rad`.
    pub coord_tol_rel: f64,
    /// Angular localization error assumed for a corner; converted to a
    /// plan-position tolerance that grows with the corner's distance.
    pub coord_tol_rad: f64,
    /// Minimum mean edge-map value along a projected edge for it to count
    /// as supported when no line supports it.
    pub support_threshold: f64,
    /// Same-label segments whose normals are closer than this share a group.
    pub group_tol_rad: f64,
    /// Ceiling-to-floor distance ratio used when no corner is seen at both
    /// levels.
    pub fallback_height_ratio: f64,
    /// Add corners at rectilinear intersections of supported edges.
    pub synthetic_corners: bool,
    /// Corner-map peaks at least this strong become candidates too; `None`
    /// disables them.
    pub peak_threshold: Option<f64>,
    /// Locally refine the best-ranked rooms against the maps and select
    /// among the refined versions.
    pub refine: bool,
    /// How many top-ranked hypotheses are refined (coarsely) before the
    /// final choice; the winner is then refined finely.
    pub refine_top: usize,
    /// Refined walls projecting shorter than this are collapsed.
    pub min_wall_rad: f64,
    /// Upper bound on circuit search steps.
    pub search_budget: usize,
}

impl SolverConfig {
    /// Defaults tuned at 64×128; angular settings scale with the row size.
    pub fn for_grid(grid: EquirectGrid) -> Self {
        let px = grid.row_angle();
        Self {
            max_corners: 12,
            max_hypotheses: 500,
            span_slack_rad: 3.0 * px,
            merge_tol_rad: 1.5 * px,
            coord_tol_rel: 0.03,
            coord_tol_rad: 0.5 * px,
            support_threshold: 0.35,
            group_tol_rad: 0.4 * px,
            fallback_height_ratio: 1.6,
            synthetic_corners: true,
            peak_threshold: Some(0.3),
            refine: true,
            refine_top: 12,
            min_wall_rad: px,
            search_budget: 200_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_corners < 4 || self.max_hypotheses == 0 {
            return Err(Error::Validation("need max_corners >= 4 and max_hypotheses >= 1".into()));
        }
        if !(self.fallback_height_ratio > 0.0 && self.coord_tol_rel > 0.0 && self.coord_tol_rad >= 0.0) {
            return Err(Error::Validation("solver ratios must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_grid(EquirectGrid::new(128, 64).expect("valid grid"))
    }
}

/// A closed room candidate: paired ceiling and floor rings plus the
/// projected edges and corners it is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutHypothesis {
    pub ceiling: Vec<CornerCandidate>,
    pub floor: Vec<CornerCandidate>,
    pub synthetic: Vec<bool>,
    pub edges: Vec<Arc>,
    /// Ceiling corner pixels followed by floor corner pixels.
    pub corner_set: Vec<(f64, f64)>,
    /// Scale-free room (unit camera-to-floor distance) the rings project from.
    pub model: LayoutModel,
}

impl LayoutHypothesis {
    /// Hypothesis whose rings are the projected corners of `model`.
    pub fn from_room(model: LayoutModel, corner: &impl PixelField) -> Self {
        let n = model.corner_count();
        Self::from_model(model, corner, &[], vec![false; n])
    }

    fn from_model(model: LayoutModel, corner: &impl PixelField, parents: &[Option<(usize, usize)>], synthetic: Vec<bool>) -> Self {
        let n = model.corner_count();
        let bearings = model.corner_bearings();
        let ring = |offset: usize, kind: CornerKind| -> Vec<CornerCandidate> {
            (0..n)
                .map(|i| CornerCandidate::at(bearings[offset + i], kind, parents.get(i).copied().flatten(), corner))
                .collect()
        };
        let ceiling = ring(0, CornerKind::CeilingCorner);
        let floor = ring(n, CornerKind::FloorCorner);
        let edges = model
            .edges()
            .iter()
            .map(|e| {
                Arc::between(
                    &UnitBearing::new(e.a).expect("edge endpoint off camera"),
                    &UnitBearing::new(e.b).expect("edge endpoint off camera"),
                    None,
                )
            })
            .collect();
        let corner_set = ceiling.iter().chain(&floor).map(|c| c.pixel).collect();
        Self {
            ceiling,
            floor,
            synthetic,
            edges,
            corner_set,
            model,
        }
    }

    pub fn corner_count(&self) -> usize {
        self.ceiling.len()
    }

    /// Ring invariants: equal even lengths ≥ 4, vertical pairing, ceiling
    /// corners above and floor corners below the horizon, and a simple
    /// rectilinear floor plan.
    pub fn validate(&self, frame: &ManhattanFrame) -> Result<()> {
        let n = self.ceiling.len();
        if n != self.floor.len() || n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "rings of {} and {} corners",
                n,
                self.floor.len()
            )));
        }
        let mut plan = Vec::with_capacity(n);
        for (c, f) in self.ceiling.iter().zip(&self.floor) {
            let lc = frame.to_frame(&c.bearing.vector());
            let lf = frame.to_frame(&f.bearing.vector());
            if c.kind != CornerKind::CeilingCorner || f.kind != CornerKind::FloorCorner || lc.z <= 0.0 || lf.z >= 0.0 {
                return Err(Error::Validation("corner on the wrong side of the horizon".into()));
            }
            let az = |l: &Vector3<f64>| l.y.atan2(l.x);
            let d = (az(&lc) - az(&lf)).abs();
            if d.min(std::f64::consts::TAU - d) > 1e-6 {
                return Err(Error::Validation("ceiling and floor corners not vertically paired".into()));
            }
            plan.push([lf.x / -lf.z, lf.y / -lf.z]);
        }
        if !geom2d::is_simple(&plan) {
            return Err(Error::Validation("floor ring self-intersects".into()));
        }
        rectilinear_axes(&plan, 1e-6).map(|_| ())
    }
}

/// Axis of every edge of a rectilinear ring, alternating; error otherwise.
fn rectilinear_axes(poly: &[Point2], rel_tol: f64) -> Result<Vec<Axis>> {
    let n = poly.len();
    let scale = poly.iter().flatten().fold(1e-12f64, |m, c| m.max(c.abs()));
    let mut axes = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = ((b[0] - a[0]).abs(), (b[1] - a[1]).abs());
        let axis = if dy <= rel_tol * scale && dx > rel_tol * scale {
            Axis::X
        } else if dx <= rel_tol * scale && dy > rel_tol * scale {
            Axis::Y
        } else {
            return Err(Error::Validation(format!("ring edge {i} is not axis aligned")));
        };
        if i > 0 && axes[i - 1] == axis {
            return Err(Error::Validation(format!("ring edges {} and {i} are collinear", i - 1)));
        }
        axes.push(axis);
    }
    if axes[0] == axes[n - 1] {
        return Err(Error::Validation("ring closes with collinear edges".into()));
    }
    Ok(axes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisScore {
    pub edge_term: f64,
    pub corner_term: f64,
    pub w_e: f64,
    pub w_c: f64,
    pub total: f64,
}

fn level_of(seg: &GreatCircleSegment, frame: &ManhattanFrame) -> Option<CornerKind> {
    let mid = seg.arc().point_at(seg.arc().sweep / 2.0);
    let z = frame.to_frame(&mid.vector()).z;
    if z > 0.0 {
        Some(CornerKind::CeilingCorner)
    } else if z < 0.0 {
        Some(CornerKind::FloorCorner)
    } else {
        None
    }
}

/// Corner candidates at intersections of differently labelled segments.
///
/// Every pair with distinct assigned labels is intersected (`±n1×n2`); an
/// intersection is kept when it lies within both spans extended by
/// `span_slack_rad`. Horizontal segments must lie on the same side of the
/// horizon as the corner. Scores are bilinear corner-map samples.
pub fn candidate_corners(
    segments: &[GreatCircleSegment],
    corner: &ProbabilityMap,
    frame: &ManhattanFrame,
    span_slack_rad: f64,
) -> Vec<CornerCandidate> {
    let levels: Vec<Option<CornerKind>> = segments.iter().map(|s| level_of(s, frame)).collect();
    let up = frame.axis(2);
    let mut out = Vec::new();
    for i in 0..segments.len() {
        for j in (i + 1)..segments.len() {
            let (a, b) = (&segments[i], &segments[j]);
            if a.label == DirectionLabel::Unassigned || b.label == DirectionLabel::Unassigned || a.label == b.label {
                continue;
            }
            let d = a.circle.normal().vector().cross(&b.circle.normal().vector());
            let norm = d.norm();
            if norm < 1e-9 {
                continue;
            }
            let d = d / norm;
            for p in [d, -d] {
                let bearing = UnitBearing::new(p).expect("unit");
                if a.outside_span(&bearing) > span_slack_rad || b.outside_span(&bearing) > span_slack_rad {
                    continue;
                }
                let h = bearing.vector().dot(&up);
                if h == 0.0 {
                    continue;
                }
                let kind = if h > 0.0 {
                    CornerKind::CeilingCorner
                } else {
                    CornerKind::FloorCorner
                };
                let consistent = [(a, levels[i]), (b, levels[j])]
                    .iter()
                    .all(|(s, lvl)| s.label == DirectionLabel::Z || *lvl == Some(kind));
                if consistent {
                    out.push(CornerCandidate::at(bearing, kind, Some((i, j)), corner));
                }
            }
        }
    }
    out
}

/// Extra candidates at sub-pixel local maxima of the corner map (values at
/// least `threshold`) that no line candidate of the same kind lies within
/// `min_sep_rad` of. They carry no parent lines, so their adjacency rests
/// on edge-map support alone.
pub fn corner_peak_candidates(
    corner: &ProbabilityMap,
    frame: &ManhattanFrame,
    threshold: f64,
    existing: &[CornerCandidate],
    min_sep_rad: f64,
) -> Vec<CornerCandidate> {
    let g = corner.grid();
    let (w, h) = (g.width(), g.height());
    let at = |c: i64, r: usize| corner.get(c.rem_euclid(w as i64) as usize, r) as f64;
    let up = frame.axis(2);
    let mut out = Vec::new();
    for r in 1..h.saturating_sub(1) {
        for c in 0..w as i64 {
            let v0 = at(c, r);
            if v0 < threshold {
                continue;
            }
            // Strict maximum against earlier neighbours, weak against later
            // ones, so plateaus yield one peak.
            let mut is_peak = true;
            for (dr, dc) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let n = at(c + dc, (r as i64 + dr) as usize);
                let earlier = dr < 0 || (dr == 0 && dc < 0);
                if n > v0 || (earlier && n == v0) {
                    is_peak = false;
                    break;
                }
            }
            if !is_peak {
                continue;
            }
            let vertex = |m: f64, z: f64, p: f64| {
                let den = m - 2.0 * z + p;
                if den < 0.0 {
                    (0.5 * (m - p) / den).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            };
            let du = vertex(at(c - 1, r), v0, at(c + 1, r));
            let dv = vertex(at(c, r - 1), v0, at(c, r + 1));
            let (u, v) = (c as f64 + du, r as f64 + dv);
            let Ok(bearing) = crate::sphere::pixel_to_bearing(u.rem_euclid(w as f64), v, g) else {
                continue;
            };
            let hgt = bearing.vector().dot(&up);
            if hgt == 0.0 {
                continue;
            }
            let kind = if hgt > 0.0 {
                CornerKind::CeilingCorner
            } else {
                CornerKind::FloorCorner
            };
            if existing
                .iter()
                .any(|e| e.kind == kind && e.bearing.angle_to(&bearing) <= min_sep_rad)
            {
                continue;
            }
            out.push(CornerCandidate::at(bearing, kind, None, corner));
        }
    }
    out
}

/// A wall-wall corner seen at the ceiling, the floor, or both, located in
/// the horizontal plane at unit camera-to-floor distance.
#[derive(Debug, Clone)]
struct Column {
    pos: Point2,
    score: f64,
    /// Line groups through this corner, as `(label, level, group)`.
    groups: BTreeSet<(DirectionLabel, CornerKind, usize)>,
    parents: Option<(usize, usize)>,
    synthetic: bool,
}

/// Union-find grouping of same-label, same-level segments with nearly equal
/// circles.
fn line_groups(segments: &[GreatCircleSegment], frame: &ManhattanFrame, tol: f64) -> Vec<usize> {
    let n = segments.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut k = i;
        while p[k] != r {
            let next = p[k];
            p[k] = r;
            k = next;
        }
        r
    }
    let levels: Vec<Option<CornerKind>> = segments.iter().map(|s| level_of(s, frame)).collect();
    let cos_tol = tol.cos();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&segments[i], &segments[j]);
            let same_level = a.label == DirectionLabel::Z || levels[i] == levels[j];
            if a.label == b.label
                && same_level
                && a.circle.normal().dot(b.circle.normal()).abs() >= cos_tol
            {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

fn local_plane_point(b: &UnitBearing, frame: &ManhattanFrame) -> Vector3<f64> {
    frame.to_frame(&b.vector())
}

fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Ceiling-to-floor distance ratio from candidates seen at both levels on
/// the same azimuth (median), or `None`.
fn height_ratio(cands: &[CornerCandidate], frame: &ManhattanFrame, tol: f64) -> Option<f64> {
    let mut ceil = Vec::new();
    let mut floor = Vec::new();
    for c in cands {
        let l = local_plane_point(&c.bearing, frame);
        let rho = l.x.hypot(l.y);
        if rho < 1e-9 {
            continue;
        }
        let entry = (l.y.atan2(l.x), rho / l.z.abs());
        match c.kind {
            CornerKind::CeilingCorner => ceil.push(entry),
            CornerKind::FloorCorner => floor.push(entry),
        }
    }
    let mut ratios = Vec::new();
    for (ac, rc) in &ceil {
        for (af, rf) in &floor {
            if azimuth_gap(*ac, *af) <= tol {
                ratios.push(rf / rc);
            }
        }
    }
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    Some(ratios[ratios.len() / 2])
}

fn build_columns(
    cands: &[CornerCandidate],
    groups: &[usize],
    segments: &[GreatCircleSegment],
    frame: &ManhattanFrame,
    ratio: f64,
    cfg: &SolverConfig,
) -> Vec<Column> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .score
            .total_cmp(&cands[a].score)
            .then(cands[a].pixel.0.total_cmp(&cands[b].pixel.0))
            .then(cands[a].pixel.1.total_cmp(&cands[b].pixel.1))
    });
    let mut cols: Vec<(Column, f64, [f64; 2])> = Vec::new();
    for &k in &order {
        let c = &cands[k];
        let l = local_plane_point(&c.bearing, frame);
        let scale = match c.kind {
            CornerKind::CeilingCorner => ratio / l.z,
            CornerKind::FloorCorner => 1.0 / -l.z,
        };
        let pos = [l.x * scale, l.y * scale];
        let rho = pos[0].hypot(pos[1]);
        let az = pos[1].atan2(pos[0]);
        let mut tags = BTreeSet::new();
        if let Some((i, j)) = c.parent_lines {
            for s in [i, j] {
                tags.insert((segments[s].label, c.kind, groups[s]));
            }
        }
        let w = c.score + 1e-3;
        let hit = cols.iter_mut().find(|(col, _, _)| {
            let crho = col.pos[0].hypot(col.pos[1]);
            azimuth_gap(col.pos[1].atan2(col.pos[0]), az) <= cfg.merge_tol_rad
                && (crho - rho).abs()
                    <= cfg.coord_tol_rel * crho.max(rho)
                        + cfg.coord_tol_rad * (1.0 + crho * crho).hypot(1.0 + rho * rho)
        });
        match hit {
            Some((col, wsum, acc)) => {
                acc[0] += w * pos[0];
                acc[1] += w * pos[1];
                *wsum += w;
                col.pos = [acc[0] / *wsum, acc[1] / *wsum];
                col.score = col.score.max(c.score);
                col.groups.extend(tags);
            }
            None => cols.push((
                Column {
                    pos,
                    score: c.score,
                    groups: tags,
                    parents: c.parent_lines,
                    synthetic: false,
                },
                w,
                [w * pos[0], w * pos[1]],
            )),
        }
    }
    cols.into_iter().map(|(c, _, _)| c).collect()
}

/// Mean of `field` (bicubic) along the projected edge from `a` to `b`
/// (floor-plane points) at height `z`.
fn edge_support(field: &impl PixelField, frame: &ManhattanFrame, a: Point2, b: Point2, z: f64) -> f64 {
    let pa = frame.to_world(&Vector3::new(a[0], a[1], z));
    let pb = frame.to_world(&Vector3::new(b[0], b[1], z));
    let (Ok(ua), Ok(ub)) = (UnitBearing::new(pa), UnitBearing::new(pb)) else {
        return 0.0;
    };
    let arc = Arc::between(&ua, &ub, None);
    let step = 0.5 * field.grid().row_angle();
    let pts = arc.samples(step);
    if pts.is_empty() {
        return 0.0;
    }
    let g = field.grid();
    pts.iter()
        .map(|p| {
            let (u, v) = bearing_to_pixel(p, g);
            field.bicubic(u, v)
        })
        .sum::<f64>()
        / pts.len() as f64
}

struct Graph {
    /// Neighbours joined by an X-directed (constant y) wall edge.
    along_x: Vec<Vec<usize>>,
    /// Neighbours joined by a Y-directed (constant x) wall edge.
    along_y: Vec<Vec<usize>>,
}

/// Plan-coordinate `k` uncertainty of a column whose bearing is known to
/// `delta` radians: radial error grows as `1 + ρ²` (unit camera height),
/// tangential as `ρ`.
fn coord_sigma(pos: Point2, k: usize, delta: f64) -> f64 {
    let rho = pos[0].hypot(pos[1]);
    if rho < 1e-9 {
        return 0.0;
    }
    let radial = (pos[k] / rho).abs();
    let tangential = (pos[1 - k] / rho).abs();
    delta * (radial * (1.0 + rho * rho) + tangential * rho)
}

fn coord_tol(a: Point2, b: Point2, k: usize, cfg: &SolverConfig) -> f64 {
    let spread = coord_sigma(a, k, cfg.coord_tol_rad).hypot(coord_sigma(b, k, cfg.coord_tol_rad));
    spread + cfg.coord_tol_rel * 0.5 * (a[k].abs() + b[k].abs())
}

fn shares_group(a: &Column, b: &Column, label: DirectionLabel) -> bool {
    a.groups
        .iter()
        .filter(|g| g.0 == label)
        .any(|g| b.groups.contains(g))
}

fn edge_supported(
    a: &Column,
    b: &Column,
    axis: Axis,
    frame: &ManhattanFrame,
    ratio: f64,
    support: Option<&ProbabilityMap>,
    cfg: &SolverConfig,
) -> bool {
    let (k, other) = match axis {
        Axis::X => (1, 0),
        _ => (0, 1),
    };
    let (ca, cb) = (a.pos[k], b.pos[k]);
    let shared = 0.5 * (ca + cb);
    if (ca - cb).abs() > coord_tol(a.pos, b.pos, k, cfg) + 1e-9 {
        return false;
    }
    if (a.pos[other] - b.pos[other]).abs() <= cfg.coord_tol_rel * shared.abs() {
        return false;
    }
    let label = match axis {
        Axis::X => DirectionLabel::X,
        _ => DirectionLabel::Y,
    };
    if shares_group(a, b, label) {
        return true;
    }
    let Some(map) = support else { return false };
    let mut pa = a.pos;
    let mut pb = b.pos;
    pa[k] = shared;
    pb[k] = shared;
    let ceil = edge_support(map, frame, pa, pb, ratio);
    let floor = edge_support(map, frame, pa, pb, -1.0);
    ceil.max(floor) >= cfg.support_threshold
}

fn build_graph(
    cols: &[Column],
    frame: &ManhattanFrame,
    ratio: f64,
    support: Option<&ProbabilityMap>,
    cfg: &SolverConfig,
) -> Graph {
    let n = cols.len();
    let mut g = Graph {
        along_x: vec![Vec::new(); n],
        along_y: vec![Vec::new(); n],
    };
    for a in 0..n {
        for b in (a + 1)..n {
            if edge_supported(&cols[a], &cols[b], Axis::X, frame, ratio, support, cfg) {
                g.along_x[a].push(b);
                g.along_x[b].push(a);
            }
            if edge_supported(&cols[a], &cols[b], Axis::Y, frame, ratio, support, cfg) {
                g.along_y[a].push(b);
                g.along_y[b].push(a);
            }
        }
    }
    g
}

/// Adds corners at `(x_b, y_a)` and `(x_a, y_b)` for column pairs whose two
/// implied wall edges are both supported by the edge map.
fn synthesize_columns(
    cols: &mut Vec<Column>,
    frame: &ManhattanFrame,
    ratio: f64,
    support: &ProbabilityMap,
    cfg: &SolverConfig,
) {
    let base = cols.len();
    let mut added: Vec<Column> = Vec::new();
    for a in 0..base {
        for b in (a + 1)..base {
            let (pa, pb) = (cols[a].pos, cols[b].pos);
            for s in [[pb[0], pa[1]], [pa[0], pb[1]]] {
                let near = |p: Point2| (0..2).all(|k| (p[k] - s[k]).abs() <= coord_tol(p, s, k, cfg));
                if near(pa) || near(pb) || cols.iter().chain(&added).any(|c| near(c.pos)) {
                    continue;
                }
                let probe = Column {
                    pos: s,
                    score: 0.0,
                    groups: BTreeSet::new(),
                    parents: None,
                    synthetic: true,
                };
                let sup = |c: &Column| {
                    let axis = if (c.pos[1] - s[1]).abs() < (c.pos[0] - s[0]).abs() {
                        Axis::X
                    } else {
                        Axis::Y
                    };
                    edge_supported(c, &probe, axis, frame, ratio, Some(support), cfg)
                };
                if sup(&cols[a]) && sup(&cols[b]) {
                    added.push(probe);
                }
            }
        }
    }
    cols.extend(added);
}

/// Alternating X/Y circuits through the graph, each reported once (started
/// at its smallest column with an X edge).
fn enumerate_circuits(g: &Graph, max_len: usize, budget: usize, limit: usize) -> Vec<Vec<usize>> {
    let n = g.along_x.len();
    let mut out = Vec::new();
    let mut steps = 0usize;
    let mut path = Vec::with_capacity(max_len);
    let mut on_path = vec![false; n];

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        g: &Graph,
        start: usize,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        max_len: usize,
        budget: usize,
        limit: usize,
        steps: &mut usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        if *steps >= budget || out.len() >= limit {
            return;
        }
        *steps += 1;
        let last = *path.last().expect("nonempty path");
        // Edge k leaves path[k]; even edges are X-directed.
        let nbrs = if (path.len() - 1).is_multiple_of(2) {
            &g.along_x[last]
        } else {
            &g.along_y[last]
        };
        for &b in nbrs {
            if b == start && path.len() >= 4 && path.len().is_multiple_of(2) {
                out.push(path.clone());
                if out.len() >= limit {
                    return;
                }
                continue;
            }
            if b <= start || on_path[b] || path.len() >= max_len {
                continue;
            }
            path.push(b);
            on_path[b] = true;
            dfs(g, start, path, on_path, max_len, budget, limit, steps, out);
            on_path[b] = false;
            path.pop();
        }
    }

    for s in 0..n {
        path.clear();
        path.push(s);
        on_path[s] = true;
        dfs(g, s, &mut path, &mut on_path, max_len, budget, limit, &mut steps, &mut out);
        on_path[s] = false;
    }
    out
}

/// Snaps a circuit (first edge X-directed) to a Manhattan polygon by
/// averaging the shared coordinate of each wall's two corners.
fn snap_circuit(cols: &[Column], circuit: &[usize]) -> Vec<Point2> {
    let n = circuit.len();
    let walls: Vec<f64> = (0..n)
        .map(|k| {
            let (a, b) = (cols[circuit[k]].pos, cols[circuit[(k + 1) % n]].pos);
            let c = if k % 2 == 0 { 1 } else { 0 };
            0.5 * (a[c] + b[c])
        })
        .collect();
    (0..n)
        .map(|k| {
            let prev = walls[(k + n - 1) % n];
            if k % 2 == 0 {
                [prev, walls[k]]
            } else {
                [walls[k], prev]
            }
        })
        .collect()
}

fn model_from_plan(plan: Vec<Point2>, ratio: f64, frame: &ManhattanFrame) -> Result<(LayoutModel, bool)> {
    let mut plan = plan;
    let reversed = geom2d::signed_area(&plan) < 0.0;
    if reversed {
        plan.reverse();
    }
    Ok((LayoutModel::new(plan, -1.0, ratio, *frame)?, reversed))
}

/// Enumerates closed rectilinear room hypotheses from corner candidates,
/// using only line support for the corner adjacency graph.
pub fn generate_hypotheses(
    candidates: &[CornerCandidate],
    segments: &[GreatCircleSegment],
    frame: &ManhattanFrame,
    corner: &ProbabilityMap,
    cfg: &SolverConfig,
) -> Result<Vec<LayoutHypothesis>> {
    generate_hypotheses_with_support(candidates, segments, frame, corner, None, cfg)
}

/// Enumerates closed rectilinear room hypotheses.
///
/// Candidates are placed in the horizontal plane at unit camera-to-floor
/// distance (ceiling corners scaled by the estimated ceiling-to-floor
/// ratio) and merged into wall-corner columns. Two columns are joined by an
/// X (Y) wall edge when their y (x) coordinates agree and a line group
/// passes through both, or, with `support`, the edge map along the
/// projected edge is strong enough. Alternating circuits of 4 to
/// `max_corners` columns are snapped, validated (simple, camera inside) and
/// returned in order of decreasing corner-score sum, at most
/// `max_hypotheses`. Without circuits the best rectangle over the top
/// corners is returned.
pub fn generate_hypotheses_with_support(
    candidates: &[CornerCandidate],
    segments: &[GreatCircleSegment],
    frame: &ManhattanFrame,
    corner: &ProbabilityMap,
    support: Option<&ProbabilityMap>,
    cfg: &SolverConfig,
) -> Result<Vec<LayoutHypothesis>> {
    cfg.validate()?;
    let ceil = candidates.iter().filter(|c| c.kind == CornerKind::CeilingCorner).count();
    if ceil < 4 && candidates.len() - ceil < 4 {
        return Err(Error::Solver(format!(
            "{} ceiling and {} floor candidates, need 4 at one level",
            ceil,
            candidates.len() - ceil
        )));
    }
    // Line intersections are far more reliable than map peaks for the ratio.
    let from_lines: Vec<CornerCandidate> = candidates.iter().filter(|c| c.parent_lines.is_some()).cloned().collect();
    let ratio = height_ratio(&from_lines, frame, cfg.merge_tol_rad)
        .or_else(|| height_ratio(candidates, frame, cfg.merge_tol_rad))
        .unwrap_or(cfg.fallback_height_ratio);
    let groups = line_groups(segments, frame, cfg.group_tol_rad);
    let mut cols = build_columns(candidates, &groups, segments, frame, ratio, cfg);
    if cfg.synthetic_corners {
        if let Some(map) = support {
            synthesize_columns(&mut cols, frame, ratio, map, cfg);
        }
    }
    let graph = build_graph(&cols, frame, ratio, support, cfg);
    let circuits = enumerate_circuits(&graph, cfg.max_corners, cfg.search_budget, cfg.max_hypotheses * 20);

    let mut seen: HashSet<Vec<[u64; 2]>> = HashSet::new();
    let mut ranked: Vec<(f64, LayoutHypothesis)> = Vec::new();
    for circuit in circuits {
        let plan = snap_circuit(&cols, &circuit);
        let Ok((model, reversed)) = model_from_plan(plan, ratio, frame) else {
            continue;
        };
        let key: Vec<[u64; 2]> = {
            let mut k: Vec<[u64; 2]> = model
                .floor_polygon()
                .iter()
                .map(|p| [p[0].to_bits(), p[1].to_bits()])
                .collect();
            k.sort();
            k
        };
        if !seen.insert(key) {
            continue;
        }
        let mut members: Vec<usize> = circuit.clone();
        if reversed {
            members.reverse();
        }
        let parents: Vec<Option<(usize, usize)>> = members.iter().map(|&c| cols[c].parents).collect();
        let synthetic: Vec<bool> = members.iter().map(|&c| cols[c].synthetic).collect();
        let sum: f64 = members.iter().map(|&c| cols[c].score).sum();
        ranked.push((sum, LayoutHypothesis::from_model(model, corner, &parents, synthetic)));
    }
    if ranked.is_empty() {
        return fallback_rectangle(&cols, ratio, frame, corner, cfg).map(|h| vec![h]);
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(canonical_cmp(&a.1, &b.1)));
    ranked.truncate(cfg.max_hypotheses);
    Ok(ranked.into_iter().map(|(_, h)| h).collect())
}

/// Best-scored rectangle over any four of the eight strongest columns.
fn fallback_rectangle(
    cols: &[Column],
    ratio: f64,
    frame: &ManhattanFrame,
    corner: &ProbabilityMap,
    cfg: &SolverConfig,
) -> Result<LayoutHypothesis> {
    let mut order: Vec<usize> = (0..cols.len()).filter(|&c| !cols[c].synthetic).collect();
    order.sort_by(|&a, &b| cols[b].score.total_cmp(&cols[a].score).then(a.cmp(&b)));
    order.truncate(8);
    let loose = SolverConfig {
        coord_tol_rel: 2.0 * cfg.coord_tol_rel,
        ..cfg.clone()
    };
    let mut best: Option<(f64, LayoutHypothesis)> = None;
    let m = order.len();
    for a in 0..m {
        for b in (a + 1)..m {
            for c in (b + 1)..m {
                for d in (c + 1)..m {
                    let mut quad = [order[a], order[b], order[c], order[d]];
                    quad.sort_by(|&p, &q| {
                        let az = |k: usize| cols[k].pos[1].atan2(cols[k].pos[0]);
                        az(p).total_cmp(&az(q))
                    });
                    for shift in 0..2 {
                        let circuit: Vec<usize> = (0..4).map(|k| quad[(k + shift) % 4]).collect();
                        let ok = (0..4).all(|k| {
                            let axis = if k % 2 == 0 { Axis::X } else { Axis::Y };
                            edge_supported(&cols[circuit[k]], &cols[circuit[(k + 1) % 4]], axis, frame, ratio, None, &loose)
                                || coords_agree(&cols[circuit[k]], &cols[circuit[(k + 1) % 4]], axis, &loose)
                        });
                        if !ok {
                            continue;
                        }
                        let Ok((model, _)) = model_from_plan(snap_circuit(cols, &circuit), ratio, frame) else {
                            continue;
                        };
                        let sum: f64 = circuit.iter().map(|&k| cols[k].score).sum();
                        if best.as_ref().is_none_or(|(s, _)| sum > *s) {
                            let parents: Vec<Option<(usize, usize)>> = circuit.iter().map(|&k| cols[k].parents).collect();
                            best = Some((sum, LayoutHypothesis::from_model(model, corner, &parents, vec![false; 4])));
                        }
                    }
                }
            }
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| Error::Solver("no closed layout circuit and no rectangle fallback".into()))
}

fn coords_agree(a: &Column, b: &Column, axis: Axis, cfg: &SolverConfig) -> bool {
    let k = if axis == Axis::X { 1 } else { 0 };
    (a.pos[k] - b.pos[k]).abs() <= coord_tol(a.pos, b.pos, k, cfg)
}

fn canonical_cmp(a: &LayoutHypothesis, b: &LayoutHypothesis) -> std::cmp::Ordering {
    let key = |h: &LayoutHypothesis| -> Vec<(u64, u64)> {
        h.corner_set.iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect()
    };
    a.corner_count().cmp(&b.corner_count()).then_with(|| key(a).cmp(&key(b)))
}

/// Edge term over the deduplicated rasterized pixels of all hypothesis
/// arcs, corner term over bilinear samples at its corners.
pub fn score_hypothesis(
    h: &LayoutHypothesis,
    edge: &impl PixelField,
    corner: &impl PixelField,
    w_e: f64,
    w_c: f64,
) -> HypothesisScore {
    let pixels = hypothesis_pixels(h, edge.grid());
    let edge_term: f64 = pixels.iter().map(|&i| edge.at(i)).sum();
    let corner_term: f64 = h.corner_set.iter().map(|&(u, v)| corner.bilinear(u, v)).sum();
    HypothesisScore {
        edge_term,
        corner_term,
        w_e,
        w_c,
        total: w_e * edge_term + w_c * corner_term,
    }
}

fn hypothesis_pixels(h: &LayoutHypothesis, grid: EquirectGrid) -> Vec<usize> {
    let mut all: Vec<usize> = h.edges.iter().flat_map(|arc| rasterize_arc(arc, grid)).collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// Hypothesis score with mean-normalized terms: `w_e = 1/#edge pixels`,
/// `w_c = 1/#corners`.
pub fn normalized_score(h: &LayoutHypothesis, edge: &impl PixelField, corner: &impl PixelField) -> HypothesisScore {
    let pixels = hypothesis_pixels(h, edge.grid());
    let w_e = 1.0 / pixels.len().max(1) as f64;
    let w_c = 1.0 / h.corner_set.len().max(1) as f64;
    let edge_term: f64 = pixels.iter().map(|&i| edge.at(i)).sum();
    let corner_term: f64 = h.corner_set.iter().map(|&(u, v)| corner.bilinear(u, v)).sum();
    HypothesisScore {
        edge_term,
        corner_term,
        w_e,
        w_c,
        total: w_e * edge_term + w_c * corner_term,
    }
}

/// Indices of `hypotheses` ordered best first by [`normalized_score`];
/// ties go to fewer corners, then to the canonical corner ordering.
pub fn rank_hypotheses(
    hypotheses: &[LayoutHypothesis],
    edge: &impl PixelField,
    corner: &impl PixelField,
) -> Vec<(usize, HypothesisScore)> {
    let mut ranked: Vec<(usize, HypothesisScore)> = hypotheses
        .iter()
        .enumerate()
        .map(|(i, h)| (i, normalized_score(h, edge, corner)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total
            .total_cmp(&a.1.total)
            .then_with(|| canonical_cmp(&hypotheses[a.0], &hypotheses[b.0]))
            .then(a.0.cmp(&b.0))
    });
    ranked
}

/// Argmax of [`normalized_score`]. Ties go to fewer corners, then to the
/// canonical corner ordering. Returns the winner's index.
pub fn select_best(
    hypotheses: &[LayoutHypothesis],
    edge: &impl PixelField,
    corner: &impl PixelField,
) -> Result<(usize, HypothesisScore)> {
    if hypotheses.is_empty() {
        return Err(Error::Solver("no hypotheses to select from".into()));
    }
    Ok(rank_hypotheses(hypotheses, edge, corner)[0])
}

/// Metric room from a hypothesis: floor corners meet the plane
/// `z = −camera_height`, the ceiling height is the median over the paired
/// ceiling corners, and the polygon is snapped to the frame axes by
/// averaging each wall's two corner coordinates.
pub fn lift_to_3d(h: &LayoutHypothesis, frame: &ManhattanFrame, camera_height: f64) -> Result<LayoutModel> {
    if !(camera_height > 0.0) {
        return Err(Error::Validation("camera height must be > 0".into()));
    }
    let n = h.floor.len();
    if n < 4 || !n.is_multiple_of(2) || h.ceiling.len() != n {
        return Err(Error::Validation(format!("cannot lift rings of {} and {}", h.ceiling.len(), n)));
    }
    let mut plan = Vec::with_capacity(n);
    for f in &h.floor {
        let l = frame.to_frame(&f.bearing.vector());
        if l.z >= 0.0 {
            return Err(Error::Geometry("floor corner ray does not point below the horizon".into()));
        }
        plan.push([camera_height * l.x / -l.z, camera_height * l.y / -l.z]);
    }
    let mut heights: Vec<f64> = h
        .ceiling
        .iter()
        .zip(&plan)
        .filter_map(|(c, p)| {
            let l = frame.to_frame(&c.bearing.vector());
            let rho = l.x.hypot(l.y);
            (l.z > 0.0 && rho > 1e-12).then(|| p[0].hypot(p[1]) * l.z / rho)
        })
        .collect();
    if heights.is_empty() {
        return Err(Error::Geometry("no ceiling corner above the horizon".into()));
    }
    heights.sort_by(f64::total_cmp);
    let ceiling_z = heights[heights.len() / 2];

    // The first edge's dominant direction fixes the alternation.
    let first_x = (plan[1][0] - plan[0][0]).abs() >= (plan[1][1] - plan[0][1]).abs();
    let walls: Vec<f64> = (0..n)
        .map(|k| {
            let (a, b) = (plan[k], plan[(k + 1) % n]);
            let along_x = (k % 2 == 0) == first_x;
            let c = if along_x { 1 } else { 0 };
            0.5 * (a[c] + b[c])
        })
        .collect();
    let mut snapped: Vec<Point2> = (0..n)
        .map(|k| {
            let prev = walls[(k + n - 1) % n];
            let along_x = (k % 2 == 0) == first_x;
            if along_x {
                [prev, walls[k]]
            } else {
                [walls[k], prev]
            }
        })
        .collect();
    if geom2d::signed_area(&snapped) < 0.0 {
        snapped.reverse();
    }
    LayoutModel::new(snapped, -camera_height, ceiling_z, *frame)
}

/// Wall coordinates of a rectilinear polygon: edge `k`'s constant
/// coordinate, plus whether edge 0 is X-directed.
fn walls_of(poly: &[Point2]) -> (Vec<f64>, bool) {
    let first_x = (poly[1][1] - poly[0][1]).abs() <= (poly[1][0] - poly[0][0]).abs();
    let n = poly.len();
    let walls = (0..n)
        .map(|k| {
            let along_x = (k % 2 == 0) == first_x;
            if along_x {
                poly[k][1]
            } else {
                poly[k][0]
            }
        })
        .collect();
    (walls, first_x)
}

fn polygon_of(walls: &[f64], first_x: bool) -> Vec<Point2> {
    let n = walls.len();
    (0..n)
        .map(|k| {
            let prev = walls[(k + n - 1) % n];
            if (k % 2 == 0) == first_x {
                [prev, walls[k]]
            } else {
                [walls[k], prev]
            }
        })
        .collect()
}

/// Removes walls that project shorter than `min_angle_rad` at both the
/// floor and the ceiling, merging their two (then nearly collinear)
/// neighbours at their mean coordinate. Repeats while such walls exist and
/// at least four corners remain; the input is returned when a merge would
/// produce an invalid room.
pub fn collapse_short_walls(model: &LayoutModel, min_angle_rad: f64) -> LayoutModel {
    let mut current = model.clone();
    loop {
        let poly = current.floor_polygon();
        let n = poly.len();
        if n <= 4 {
            return current;
        }
        let seen_length = |k: usize| -> f64 {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            [current.floor_z(), current.ceiling_z()]
                .iter()
                .map(|&z| {
                    let pa = Vector3::new(a[0], a[1], z);
                    let pb = Vector3::new(b[0], b[1], z);
                    pa.angle(&pb)
                })
                .fold(0.0, f64::max)
        };
        let Some(k) = (0..n)
            .filter(|&k| seen_length(k) < min_angle_rad)
            .min_by(|&a, &b| seen_length(a).total_cmp(&seen_length(b)))
        else {
            return current;
        };
        let (walls, first_x) = walls_of(poly);
        let (prev, next) = ((k + n - 1) % n, (k + 1) % n);
        let merged = 0.5 * (walls[prev] + walls[next]);
        // Walk from `next + 1` so the merged wall closes the ring; that
        // first kept edge has the same axis as edge `k`.
        let mut kept: Vec<f64> = (1..(n - 2)).map(|step| walls[(next + step) % n]).collect();
        kept.push(merged);
        let kept_first_x = (k % 2 == 0) == first_x;
        let Ok(next_model) = LayoutModel::new(
            polygon_of(&kept, kept_first_x),
            current.floor_z(),
            current.ceiling_z(),
            *current.frame(),
        ) else {
            return current;
        };
        current = next_model;
    }
}

/// Continuous evidence of a room: mean bicubic edge value over samples
/// (one per row height) of all its edges plus mean bicubic corner value over its corners.
pub fn layout_evidence(model: &LayoutModel, edge: &impl PixelField, corner: &impl PixelField) -> f64 {
    evidence_with(model, corner, |a, b| edge_samples_sum(a, b, edge))
}

/// Sum and count of edge-map samples along one room edge.
fn edge_samples_sum(a: &Vector3<f64>, b: &Vector3<f64>, edge: &impl PixelField) -> (f64, usize) {
    let (Ok(a), Ok(b)) = (UnitBearing::new(*a), UnitBearing::new(*b)) else {
        return (0.0, 0);
    };
    let g = edge.grid();
    let mut sum = 0.0;
    let mut count = 0;
    for p in Arc::between(&a, &b, None).samples(g.row_angle()) {
        let (u, v) = bearing_to_pixel(&p, g);
        sum += edge.bicubic(u, v);
        count += 1;
    }
    (sum, count)
}

fn evidence_with(
    model: &LayoutModel,
    corner: &impl PixelField,
    mut per_edge: impl FnMut(&Vector3<f64>, &Vector3<f64>) -> (f64, usize),
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in model.edges() {
        let (s, c) = per_edge(&e.a, &e.b);
        sum += s;
        count += c;
    }
    let corners = model.corner_pixels(corner.grid());
    let csum: f64 = corners.iter().map(|&(u, v)| corner.bicubic(u, v)).sum();
    sum / count.max(1) as f64 + csum / corners.len().max(1) as f64
}

/// Step schedule of [`refine_layout`]: wall and ceiling steps are relative
/// to the current value, rotation steps are in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSteps {
    pub sweeps: usize,
    pub rel_start: f64,
    pub rot_start: f64,
    pub rel_stop: f64,
}

impl RefineSteps {
    /// Wide search stopped at about a millimetre per metre.
    pub fn coarse() -> Self {
        Self {
            sweeps: 60,
            rel_start: 0.03,
            rot_start: 0.01,
            rel_stop: 1e-3,
        }
    }

    /// Continuation of [`RefineSteps::coarse`] to fine precision.
    pub fn fine() -> Self {
        Self {
            sweeps: 60,
            rel_start: 1e-3,
            rot_start: 1e-3 / 3.0,
            rel_stop: 2e-5,
        }
    }
}

/// Pattern search over wall coordinates, ceiling height and a small frame
/// rotation maximizing [`layout_evidence`]. Each sweep tries one step up
/// and down on every parameter, keeping improvements; steps halve after a
/// sweep without any. The floor plane stays fixed. Moves that break the
/// room's validity are rejected.
pub fn refine_layout(model: &LayoutModel, edge: &impl PixelField, corner: &impl PixelField, steps: &RefineSteps) -> LayoutModel {
    let (mut walls, first_x) = walls_of(model.floor_polygon());
    let n = walls.len();
    let mut ceiling = model.ceiling_z();
    let floor = model.floor_z();
    let base = *model.frame().matrix();
    let mut rot = Vector3::zeros();

    let build = |walls: &[f64], ceiling: f64, rot: &Vector3<f64>| -> Option<LayoutModel> {
        let m = base * Rotation3::new(*rot).matrix();
        let frame = ManhattanFrame::from_matrix(m).ok()?;
        LayoutModel::new(polygon_of(walls, first_x), floor, ceiling, frame).ok()
    };
    // A wall move changes only the edges touching it; the others are
    // looked up by their exact endpoints.
    let mut cache: HashMap<[u64; 6], (f64, usize)> = HashMap::new();
    let mut eval = |m: &Option<LayoutModel>| {
        m.as_ref().map_or(f64::NEG_INFINITY, |m| {
            evidence_with(m, corner, |a, b| {
                let key = [a.x, a.y, a.z, b.x, b.y, b.z].map(f64::to_bits);
                *cache.entry(key).or_insert_with(|| edge_samples_sum(a, b, edge))
            })
        })
    };

    let mut best = eval(&build(&walls, ceiling, &rot));
    if !best.is_finite() {
        return model.clone();
    }
    let mut rel_step = steps.rel_start;
    let mut rot_step = steps.rot_start;
    for _ in 0..steps.sweeps {
        let mut improved = false;
        for k in 0..(n + 4) {
            for sign in [1.0, -1.0] {
                let (mut w2, mut c2, mut r2) = (walls.clone(), ceiling, rot);
                match k {
                    k if k < n => w2[k] += sign * rel_step * walls[k].abs().max(1e-3),
                    k if k == n => c2 += sign * rel_step * ceiling,
                    k => r2[k - n - 1] += sign * rot_step,
                }
                let s = eval(&build(&w2, c2, &r2));
                if s > best {
                    best = s;
                    walls = w2;
                    ceiling = c2;
                    rot = r2;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            rel_step *= 0.5;
            rot_step *= 0.5;
            if rel_step < steps.rel_stop {
                break;
            }
        }
    }
    build(&walls, ceiling, &rot).unwrap_or_else(|| model.clone())
}
