//! Layout metrics: 3D IoU of room prisms, corner error, and pixel error
//! over simple (ceiling/floor/wall) and complete (per-wall) segmentations.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom2d::{self, Point2};
use crate::room::{LayoutModel, Surface};
use crate::sphere::{EquirectGrid, ManhattanFrame};

/// Floor polygon of `model` expressed in `target`'s frame coordinates.
fn polygon_in_frame(model: &LayoutModel, target: &ManhattanFrame) -> Vec<Point2> {
    model
        .floor_polygon()
        .iter()
        .map(|p| {
            let world = model.frame().to_world(&Vector3::new(p[0], p[1], model.floor_z()));
            let local = target.to_frame(&world);
            [local.x, local.y]
        })
        .collect()
}

/// Intersection over union of the two room prisms, compared in `gt`'s
/// frame. Floor polygons are intersected exactly; heights as intervals.
pub fn iou_3d(pred: &LayoutModel, gt: &LayoutModel) -> Result<f64> {
    let p = polygon_in_frame(pred, gt.frame());
    let q = gt.floor_polygon();
    let (ap, aq) = (geom2d::signed_area(&p).abs(), geom2d::signed_area(q).abs());
    if !(ap > 0.0 && aq > 0.0) {
        return Err(Error::Metric("degenerate floor polygon".into()));
    }
    let (hp, hq) = (pred.height(), gt.height());
    let overlap_z = (pred.ceiling_z().min(gt.ceiling_z()) - pred.floor_z().max(gt.floor_z())).max(0.0);
    let inter = geom2d::intersection_area(&p, q) * overlap_z;
    let union = ap * hp + aq * hq - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// [`iou_3d`] after choosing, among the four quarter-turn yaws of `pred`
/// about its own up axis, the one with the smallest corner error.
pub fn iou_3d_aligned(pred: &LayoutModel, gt: &LayoutModel, grid: EquirectGrid) -> Result<f64> {
    let aligned = align_yaw(pred, gt, grid)?;
    iou_3d(&aligned, gt)
}

/// The quarter-turn yaw variant of `pred` closest to `gt` by corner error
/// (ties keep the smaller rotation).
pub fn align_yaw(pred: &LayoutModel, gt: &LayoutModel, grid: EquirectGrid) -> Result<LayoutModel> {
    let up = pred.frame().axis(2);
    let mut best: Option<(f64, LayoutModel)> = None;
    for k in 0..4 {
        let angle = k as f64 * std::f64::consts::FRAC_PI_2;
        let rot: Matrix3<f64> = *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(up), angle).matrix();
        let cand = if k == 0 { pred.clone() } else { pred.rotated(&rot)? };
        let ce = corner_error(&cand, gt, grid);
        if best.as_ref().is_none_or(|(b, _)| ce < *b) {
            best = Some((ce, cand));
        }
    }
    Ok(best.expect("four candidates").1)
}

/// Corner error in percent of the image diagonal.
///
/// Both corner sets are projected to pixels and matched by a minimum-cost
/// assignment on (column-wrapping) pixel distance; corners left unmatched
/// when the counts differ cost one diagonal each. The mean is taken over
/// the larger of the two counts.
pub fn corner_error(pred: &LayoutModel, gt: &LayoutModel, grid: EquirectGrid) -> f64 {
    let p = pred.corner_pixels(grid);
    let g = gt.corner_pixels(grid);
    corner_error_pixels(&p, &g, grid)
}

pub fn corner_error_pixels(pred: &[(f64, f64)], gt: &[(f64, f64)], grid: EquirectGrid) -> f64 {
    let n = pred.len().max(gt.len());
    if n == 0 {
        return 0.0;
    }
    let diag = grid.diagonal();
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (pred.get(i), gt.get(j)) {
                    (Some(a), Some(b)) => grid.pixel_distance(*a, *b),
                    _ => diag,
                })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    100.0 * total / n as f64 / diag
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// algorithm with potentials). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegScheme {
    /// Ceiling, floor, wall.
    Simple,
    /// Ceiling, floor and one label per wall.
    Complete,
}

pub const CEILING_LABEL: u32 = 0;
pub const FLOOR_LABEL: u32 = 1;
pub const WALL_LABEL: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub grid: EquirectGrid,
    pub scheme: SegScheme,
    /// Row-major labels.
    pub labels: Vec<u32>,
}

/// Labels every pixel by the first room surface its center ray hits.
/// Complete-scheme walls are numbered from 2 in order of first appearance
/// scanning columns from `u = 0`, each column top to bottom.
pub fn render_segmentation(model: &LayoutModel, grid: EquirectGrid, scheme: SegScheme) -> SegmentationMap {
    let (w, h) = (grid.width(), grid.height());
    let mut labels = vec![0u32; grid.len()];
    let mut wall_ids: Vec<Option<u32>> = vec![None; model.corner_count()];
    let mut next = WALL_LABEL;
    for u in 0..w {
        for v in 0..h {
            let b = grid.pixel_center_bearing(u, v);
            labels[v * w + u] = match model.surface_at(&b) {
                Surface::Ceiling => CEILING_LABEL,
                Surface::Floor => FLOOR_LABEL,
                Surface::Wall(i) => match scheme {
                    SegScheme::Simple => WALL_LABEL,
                    SegScheme::Complete => *wall_ids[i].get_or_insert_with(|| {
                        next += 1;
                        next - 1
                    }),
                },
            };
        }
    }
    SegmentationMap { grid, scheme, labels }
}

/// Percentage of pixels with different labels. Complete-scheme wall labels
/// are first put in correspondence greedily by largest overlap (one to
/// one); walls left without a partner count as wrong everywhere.
pub fn pixel_error(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<f64> {
    if pred.scheme != gt.scheme {
        return Err(Error::Metric("segmentation schemes differ".into()));
    }
    if pred.grid != gt.grid || pred.labels.len() != gt.labels.len() {
        return Err(Error::Metric("segmentation grids differ".into()));
    }
    let n = gt.labels.len();
    let mapped: Vec<u32> = match pred.scheme {
        SegScheme::Simple => pred.labels.clone(),
        SegScheme::Complete => {
            let max_p = pred.labels.iter().copied().max().unwrap_or(0) as usize + 1;
            let max_g = gt.labels.iter().copied().max().unwrap_or(0) as usize + 1;
            let mut overlap = vec![vec![0usize; max_g]; max_p];
            for (a, b) in pred.labels.iter().zip(&gt.labels) {
                if *a >= WALL_LABEL && *b >= WALL_LABEL {
                    overlap[*a as usize][*b as usize] += 1;
                }
            }
            let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
            for (a, row) in overlap.iter().enumerate() {
                for (b, &c) in row.iter().enumerate() {
                    if c > 0 {
                        pairs.push((c, a, b));
                    }
                }
            }
            pairs.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut to_gt: Vec<Option<u32>> = vec![None; max_p];
            let mut taken = vec![false; max_g];
            for (_, a, b) in pairs {
                if to_gt[a].is_none() && !taken[b] {
                    to_gt[a] = Some(b as u32);
                    taken[b] = true;
                }
            }
            pred.labels
                .iter()
                .map(|&a| {
                    if a < WALL_LABEL {
                        a
                    } else {
                        to_gt[a as usize].unwrap_or(u32::MAX)
                    }
                })
                .collect()
        }
    };
    let wrong = mapped.iter().zip(&gt.labels).filter(|(a, b)| a != b).count();
    Ok(100.0 * wrong as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub iou3d: f64,
    pub corner_error_pct: f64,
    pub pe_ss_pct: f64,
    pub pe_cs_pct: f64,
}

impl EvalReport {
    pub fn mean(reports: &[EvalReport]) -> EvalReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        EvalReport {
            iou3d: sum(|r| r.iou3d),
            corner_error_pct: sum(|r| r.corner_error_pct),
            pe_ss_pct: sum(|r| r.pe_ss_pct),
            pe_cs_pct: sum(|r| r.pe_cs_pct),
        }
    }
}

/// All four metrics of `pred` against `gt`. The prediction is first
/// yaw-aligned by corner error; segmentations are rendered on `grid`.
pub fn evaluate(pred: &LayoutModel, gt: &LayoutModel, grid: EquirectGrid) -> Result<EvalReport> {
    let aligned = align_yaw(pred, gt, grid)?;
    let pe = |scheme| {
        pixel_error(
            &render_segmentation(&aligned, grid, scheme),
            &render_segmentation(gt, grid, scheme),
        )
    };
    Ok(EvalReport {
        iou3d: iou_3d(&aligned, gt)?,
        corner_error_pct: corner_error(&aligned, gt, grid),
        pe_ss_pct: pe(SegScheme::Simple)?,
        pe_cs_pct: pe(SegScheme::Complete)?,
    })
}

pub const REPORT_HEADER: &str = "id,iou3d,ce_pct,pe_ss_pct,pe_cs_pct";

/// CSV with one row per image and a final `mean` row.
pub fn report_csv(rows: &[(String, EvalReport)]) -> String {
    let mut s = String::new();
    writeln!(s, "{REPORT_HEADER}").unwrap();
    let line = |s: &mut String, id: &str, r: &EvalReport| {
        writeln!(
            s,
            "{id},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iou3d, r.corner_error_pct, r.pe_ss_pct, r.pe_cs_pct
        )
        .unwrap();
    };
    for (id, r) in rows {
        line(&mut s, id, r);
    }
    let reports: Vec<EvalReport> = rows.iter().map(|(_, r)| *r).collect();
    line(&mut s, "mean", &EvalReport::mean(&reports));
    s
}
