//! Brute-force oracles shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::Vector3;
use panoroom::lines::{
    classify_lines, estimate_manhattan_frame_with_samples, extract_ridge_samples, ransac_great_circles, score_and_prune,
    snap_to_frame, GreatCircleSegment,
};
use panoroom::maps::{render_gt_maps, ProbabilityMap, RenderParams};
use panoroom::pipeline::PipelineConfig;
use panoroom::room::LayoutModel;
use panoroom::solver::{candidate_corners, corner_peak_candidates, CornerCandidate};
use panoroom::sphere::{EquirectGrid, ManhattanFrame};
use panoroom::synth::{sample_room, RoomSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut odd = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) && x < a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            odd = !odd;
        }
        j = i;
    }
    odd
}

/// Floor polygon in world coordinates.
fn world_polygon(m: &LayoutModel) -> Vec<[f64; 2]> {
    m.floor_polygon()
        .iter()
        .map(|p| {
            let w = m.frame().to_world(&Vector3::new(p[0], p[1], 0.0));
            [w.x, w.y]
        })
        .collect()
}

/// Voxel IoU on a `res³` lattice over the joint bounding box. Prisms are
/// vertical, so each lattice column contributes the number of z centers
/// inside each height interval.
pub fn voxel_iou(a: &LayoutModel, b: &LayoutModel, res: usize) -> f64 {
    let (pa, pb) = (world_polygon(a), world_polygon(b));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pa.iter().chain(&pb) {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let z0 = a.floor_z().min(b.floor_z());
    let z1 = a.ceiling_z().max(b.ceiling_z());
    let centers = |lo: f64, hi: f64| -> Vec<f64> { (0..res).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / res as f64).collect() };
    let (xs, ys, zs) = (centers(x0, x1), centers(y0, y1), centers(z0, z1));
    let count = |lo: f64, hi: f64| zs.iter().filter(|z| **z >= lo && **z <= hi).count() as f64;
    let na = count(a.floor_z(), a.ceiling_z());
    let nb = count(b.floor_z(), b.ceiling_z());
    let nab = count(a.floor_z().max(b.floor_z()), a.ceiling_z().min(b.ceiling_z()));
    let (mut inter, mut union) = (0.0, 0.0);
    for &x in &xs {
        for &y in &ys {
            match (inside(&pa, x, y), inside(&pb, x, y)) {
                (true, true) => {
                    inter += nab;
                    union += na + nb - nab;
                }
                (true, false) => union += na,
                (false, true) => union += nb,
                (false, false) => {}
            }
        }
    }
    inter / union
}

/// A sampled room and a second room sharing its up axis: either a
/// jittered copy or an unrelated room.
pub fn random_pair(rng: &mut ChaCha8Rng, i: u64) -> (LayoutModel, LayoutModel) {
    let n = [4, 6, 8, 10][rng.random_range(0..4)];
    let a = sample_room(&RoomSpec { corner_count: n, seed: 1000 + i, ..Default::default() }).unwrap();
    if i % 3 == 2 {
        let m = [4, 6, 8][rng.random_range(0..3)];
        let b = sample_room(&RoomSpec { corner_count: m, seed: 5000 + i, ..Default::default() }).unwrap();
        return (a, b);
    }
    let dx = rng.random_range(-0.3..0.3);
    let dy = rng.random_range(-0.3..0.3);
    let poly: Vec<[f64; 2]> = a.floor_polygon().iter().map(|p| [p[0] * 1.05 + dx, p[1] * 0.97 + dy]).collect();
    let b = LayoutModel::new(poly, a.floor_z() * rng.random_range(0.9..1.1), a.ceiling_z() * rng.random_range(0.9..1.1), *a.frame());
    match b {
        Ok(b) => (a, b),
        // The shift can leave the camera outside; fall back to the unshifted scale.
        Err(_) => {
            let poly: Vec<[f64; 2]> = a.floor_polygon().iter().map(|p| [p[0] * 1.05, p[1] * 0.97]).collect();
            let b = LayoutModel::new(poly, a.floor_z(), a.ceiling_z() * 1.08, *a.frame()).unwrap();
            (a, b)
        }
    }
}

/// A sampled box room and a stretched, shifted copy; both project to
/// eight corners.
pub fn box_pair(rng: &mut ChaCha8Rng, i: u64) -> (LayoutModel, LayoutModel) {
    let a = sample_room(&RoomSpec { corner_count: 4, seed: i, ..Default::default() }).unwrap();
    let (sx, sy) = (rng.random_range(0.9..1.1), rng.random_range(0.9..1.1));
    let (dx, dy) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let poly: Vec<[f64; 2]> = a.floor_polygon().iter().map(|p| [p[0] * sx + dx, p[1] * sy + dy]).collect();
    let b = LayoutModel::new(poly, a.floor_z(), a.ceiling_z(), *a.frame()).unwrap();
    (a, b)
}

/// Pixel distance with column wrap.
fn pixel_gap(a: (f64, f64), b: (f64, f64), w: f64) -> f64 {
    let du = (a.0 - b.0).abs() % w;
    du.min(w - du).hypot(a.1 - b.1)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Corner error from the best of all permutations; missing partners cost
/// a diagonal.
pub fn exhaustive_ce(pred: &[(f64, f64)], gt: &[(f64, f64)], g: EquirectGrid) -> f64 {
    let (w, h) = (g.width() as f64, g.height() as f64);
    let diag = w.hypot(h);
    let n = pred.len().max(gt.len());
    let best = permutations(n)
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| match (pred.get(i), gt.get(j)) {
                    (Some(a), Some(b)) => pixel_gap(*a, *b, w),
                    _ => diag,
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    100.0 * best / n as f64 / diag
}

/// Per-pixel loss written directly from the sigmoid, with class weights
/// counted in a first pass.
pub fn naive_bce(logits: &[f64], labels: &[f64], w: usize, h: usize) -> f64 {
    let n = (w * h) as f64;
    let mut positives = 0.0;
    for r in 0..h {
        for c in 0..w {
            if labels[r * w + c] >= 0.5 {
                positives += 1.0;
            }
        }
    }
    let (l1, l0) = (n / positives, n / (n - positives));
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let s = 1.0 / (1.0 + (-logits[r * w + c]).exp());
            let y = if labels[r * w + c] >= 0.5 { 1.0 } else { 0.0 };
            total += l1 * y * -s.max(1e-12).ln() + l0 * (1.0 - y) * -(1.0 - s).max(1e-12).ln();
        }
    }
    total / n
}

/// Squared distance of two `ch × h × w` tensors by explicit loops.
pub fn naive_perceptual(a: &[f64], b: &[f64], ch: usize, h: usize, w: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..ch {
        for r in 0..h {
            for c in 0..w {
                let i = (k * h + r) * w + c;
                total += (a[i] - b[i]).powi(2);
            }
        }
    }
    total
}

pub struct FrontEnd {
    pub corner_s: ProbabilityMap,
    pub edge_s: ProbabilityMap,
    pub segments: Vec<GreatCircleSegment>,
    pub frame: ManhattanFrame,
    pub candidates: Vec<CornerCandidate>,
}

/// The pipeline up to corner candidates, stage by stage.
pub fn front_end(room: &LayoutModel, with_peaks: bool) -> FrontEnd {
    let g = EquirectGrid::new(128, 64).unwrap();
    let cfg = PipelineConfig::for_grid(g);
    let (edge, corner) = render_gt_maps(room, g, RenderParams::default()).unwrap();
    let edge_s = edge.smoothed(cfg.smooth_sigma_px);
    let corner_s = corner.smoothed(cfg.smooth_sigma_px);
    let samples = extract_ridge_samples(&edge_s, cfg.ransac.edge_threshold);
    let segs = ransac_great_circles(&samples, &cfg.ransac).unwrap();
    let segs = score_and_prune(&segs, &edge);
    let frame = estimate_manhattan_frame_with_samples(&segs, &samples, &cfg.frame).unwrap();
    let segs = snap_to_frame(&segs, &samples, &frame, cfg.snap_tol_rad);
    let segments = classify_lines(&segs, &frame, cfg.classify_tol_rad);
    let mut candidates = candidate_corners(&segments, &corner_s, &frame, cfg.solver.span_slack_rad);
    if with_peaks {
        let t = cfg.solver.peak_threshold.unwrap();
        let peaks = corner_peak_candidates(&corner_s, &frame, t, &candidates, cfg.solver.merge_tol_rad);
        candidates.extend(peaks);
    }
    FrontEnd { corner_s, edge_s, segments, frame, candidates }
}
