//! Room sampler and map corruption against independent checks.

use panoroom::maps::{render_gt_maps, RenderParams};
use panoroom::synth::{corrupt_maps, sample_room, NoiseSpec, RoomSpec};
use panoroom::sphere::EquirectGrid;

type P = [f64; 2];

fn shoelace(poly: &[P]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>() / 2.0
}

/// Two axis-aligned segments share a point.
fn touch(a: (P, P), b: (P, P)) -> bool {
    let lo = |s: (P, P), k: usize| s.0[k].min(s.1[k]);
    let hi = |s: (P, P), k: usize| s.0[k].max(s.1[k]);
    (0..2).all(|k| lo(a, k) <= hi(b, k) && lo(b, k) <= hi(a, k))
}

fn strictly_inside(poly: &[P]) -> bool {
    let n = poly.len();
    let mut crossings = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        // Origin on an edge is not inside.
        if touch((a, b), ([0.0, 0.0], [0.0, 0.0])) {
            return false;
        }
        if (a[1] > 0.0) != (b[1] > 0.0) && 0.0 < a[0] + (0.0 - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}

#[test]
fn thousand_eight_corner_rooms_are_valid() {
    for seed in 0..1000 {
        let room = sample_room(&RoomSpec { corner_count: 8, seed, ..Default::default() }).unwrap();
        room.validate().unwrap();
        let poly = room.floor_polygon();
        let n = poly.len();
        assert_eq!(n, 8);
        assert!(shoelace(poly) > 0.0, "seed {seed}: clockwise");
        let edges: Vec<(P, P)> = (0..n).map(|i| (poly[i], poly[(i + 1) % n])).collect();
        for (i, e) in edges.iter().enumerate() {
            let dx = (e.1[0] - e.0[0]).abs();
            let dy = (e.1[1] - e.0[1]).abs();
            assert!((dx == 0.0) != (dy == 0.0), "seed {seed}: edge {i} not axis aligned");
            let next = edges[(i + 1) % n];
            let turns = (next.1[0] - next.0[0]).abs() == 0.0;
            assert_eq!(dx == 0.0, !turns, "seed {seed}: edges {i} and {} are collinear", (i + 1) % n);
            for j in i + 2..n {
                if (i + n - j) % n == 1 {
                    continue;
                }
                assert!(!touch(*e, edges[j]), "seed {seed}: edges {i} and {j} cross");
            }
        }
        assert!(strictly_inside(poly), "seed {seed}: camera outside");
        assert!(room.floor_z() < 0.0 && room.ceiling_z() > 0.0);
    }
}

#[test]
fn gaussian_corruption_stays_within_folded_normal_mean() {
    let g = EquirectGrid::new(128, 64).unwrap();
    let sigma = 0.1;
    let noise = NoiseSpec { gaussian_sigma: sigma, ..Default::default() };
    let bound = sigma * (2.0 / std::f64::consts::PI).sqrt() * 1.05;
    let mut total = 0.0;
    let mut count = 0.0;
    for seed in 0..10 {
        let room = sample_room(&RoomSpec { corner_count: 6, seed, ..Default::default() }).unwrap();
        let (edge, corner) = render_gt_maps(&room, g, RenderParams::default()).unwrap();
        let (e2, c2) = corrupt_maps(&edge, &corner, &noise, seed).unwrap();
        for (a, b) in edge.values().iter().zip(e2.values()).chain(corner.values().iter().zip(c2.values())) {
            assert!((0.0..=1.0).contains(b));
            total += (*a as f64 - *b as f64).abs();
            count += 1.0;
        }
    }
    let mean = total / count;
    assert!(mean <= bound, "{mean} > {bound}");
    // Clipping at 0 halves the change on empty background; the rest is
    // unclipped, so the mean cannot be far below half the bound.
    assert!(mean >= 0.4 * bound, "{mean}");
}
