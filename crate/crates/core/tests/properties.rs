use nalgebra::{Matrix3, Rotation3, Vector3};
use panoroom::maps::{
    map_metrics, perceptual_distance, render_gt_maps, weighted_bce, Channel, FeatureTensor, LogitMap, PixelField, ProbabilityMap,
    RenderParams,
};
use panoroom::metrics::{corner_error_pixels, iou_3d, pixel_error, render_segmentation, SegScheme};
use panoroom::room::LayoutModel;
use panoroom::solver::{lift_to_3d, select_best, LayoutHypothesis};
use panoroom::sphere::{bearing_to_pixel, pixel_to_bearing, EquirectGrid};
use panoroom::synth::{corrupt_maps, sample_room, NoiseSpec, RoomSpec};
use proptest::prelude::*;

fn grid() -> EquirectGrid {
    EquirectGrid::new(128, 64).unwrap()
}

fn room(n_index: usize, seed: u64) -> LayoutModel {
    sample_room(&RoomSpec { corner_count: [4, 6, 8, 10][n_index % 4], seed, ..Default::default() }).unwrap()
}

fn yaw_rotation(angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
}

proptest! {
    #[test]
    fn pixel_round_trip(u in 0.0f64..128.0, v in 0.0f64..63.5) {
        let g = grid();
        let b = pixel_to_bearing(u, v, g).unwrap();
        let (u2, v2) = bearing_to_pixel(&b, g);
        let du = (u2 - u).rem_euclid(128.0);
        prop_assert!(du.min(128.0 - du) < 1e-6 && (v2 - v).abs() < 1e-6);
    }

    #[test]
    fn iou_symmetric_and_bounded(na in 0usize..4, nb in 0usize..4, sa in 0u64..10_000, sb in 0u64..10_000) {
        let (a, b) = (room(na, sa), room(nb, sb));
        let ab = iou_3d(&a, &b).unwrap();
        let ba = iou_3d(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-12, "{} vs {}", ab, ba);
        prop_assert!((iou_3d(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn iou_invariant_to_common_yaw(na in 0usize..4, sa in 0u64..10_000, sb in 0u64..10_000, yaw in -3.0f64..3.0) {
        let (a, b) = (room(na, sa), room(na, sb));
        let r = yaw_rotation(yaw);
        let before = iou_3d(&a, &b).unwrap();
        let after = iou_3d(&a.rotated(&r).unwrap(), &b.rotated(&r).unwrap()).unwrap();
        prop_assert!((before - after).abs() <= 1e-9);
    }

    #[test]
    fn corner_error_ignores_list_order(
        pts in prop::collection::vec((0.0f64..512.0, 0.0f64..256.0), 1..10),
        gt in prop::collection::vec((0.0f64..512.0, 0.0f64..256.0), 1..10),
        rot in 0usize..10,
    ) {
        let g = EquirectGrid::new(512, 256).unwrap();
        let mut shuffled = pts.clone();
        shuffled.rotate_left(rot % pts.len());
        shuffled.reverse();
        let a = corner_error_pixels(&pts, &gt, g);
        let b = corner_error_pixels(&shuffled, &gt, g);
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn weighted_bce_nonnegative_and_monotone(
        logits in prop::collection::vec(-10.0f64..10.0, 32),
        labels in prop::collection::vec(any::<bool>(), 32),
        idx in 0usize..32,
        step in 0.01f64..2.0,
    ) {
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let g = EquirectGrid::new(8, 4).unwrap();
        let gt = ProbabilityMap::new(g, Channel::Edge, labels.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect()).unwrap();
        let before = weighted_bce(&LogitMap::new(g, logits.clone()).unwrap(), &gt).unwrap();
        prop_assert!(before >= 0.0);
        let mut moved = logits.clone();
        moved[idx] += if labels[idx] { step } else { -step };
        let after = weighted_bce(&LogitMap::new(g, moved).unwrap(), &gt).unwrap();
        prop_assert!(after < before);
    }

    #[test]
    fn perceptual_symmetric_and_zero_on_equal(
        a in prop::collection::vec(-5.0f64..5.0, 24),
        b in prop::collection::vec(-5.0f64..5.0, 24),
    ) {
        let ta = FeatureTensor::new(2, 3, 4, a).unwrap();
        let tb = FeatureTensor::new(2, 3, 4, b.clone()).unwrap();
        let ab = perceptual_distance(&ta, &tb).unwrap();
        prop_assert!((ab - perceptual_distance(&tb, &ta).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(perceptual_distance(&tb, &FeatureTensor::new(2, 3, 4, b).unwrap()).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn map_metrics_consistent(
        p in prop::collection::vec(0.0f32..=1.0, 32),
        q in prop::collection::vec(0.0f32..=1.0, 32),
        threshold in 0.05f64..0.95,
    ) {
        let g = EquirectGrid::new(8, 4).unwrap();
        let pred = ProbabilityMap::new(g, Channel::Edge, p).unwrap();
        let gt = ProbabilityMap::new(g, Channel::Edge, q).unwrap();
        let m = map_metrics(&pred, &gt, threshold).unwrap();
        let n = m.true_positives + m.false_positives + m.false_negatives + m.true_negatives;
        prop_assert_eq!(n, 32);
        prop_assert_eq!(m.accuracy, (m.true_positives + m.true_negatives) as f64 / 32.0);
        let denom = m.precision + m.recall;
        let f1 = if denom > 0.0 { 2.0 * m.precision * m.recall / denom } else { 0.0 };
        prop_assert!((m.f1 - f1).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rendered_and_corrupted_maps_stay_in_range(
        n in 0usize..4,
        seed in 0u64..10_000,
        sigma in 0.0f64..0.3,
        spurious in 0.0f64..0.2,
        dropout in 0.0f64..0.5,
    ) {
        let g = grid();
        let (edge, corner) = render_gt_maps(&room(n, seed), g, RenderParams::default()).unwrap();
        let noise = NoiseSpec { gaussian_sigma: sigma, spurious_edge_fraction: spurious, dropout_fraction: dropout };
        let (e2, c2) = corrupt_maps(&edge, &corner, &noise, seed).unwrap();
        for m in [&edge, &corner, &e2, &c2] {
            prop_assert_eq!(m.grid(), g);
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let (e3, c3) = corrupt_maps(&edge, &corner, &noise, seed).unwrap();
        prop_assert!(e2 == e3 && c2 == c3);
    }

    #[test]
    fn segmentation_self_error_is_zero(n in 0usize..4, seed in 0u64..10_000, other in 0u64..10_000) {
        let g = EquirectGrid::new(64, 32).unwrap();
        let a = room(n, seed);
        let b = room(n, other);
        for scheme in [SegScheme::Simple, SegScheme::Complete] {
            let sa = render_segmentation(&a, g, scheme);
            prop_assert_eq!(pixel_error(&sa, &sa).unwrap(), 0.0);
        }
        let sa = render_segmentation(&a, g, SegScheme::Simple);
        let sb = render_segmentation(&b, g, SegScheme::Simple);
        prop_assert_eq!(pixel_error(&sa, &sb).unwrap(), pixel_error(&sb, &sa).unwrap());
    }

    #[test]
    fn layout_text_round_trip_is_exact(n in 0usize..4, seed in 0u64..10_000) {
        let a = room(n, seed);
        let back = LayoutModel::from_text(&a.to_text(Some(grid()))).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn lift_scales_with_camera_height(n in 0usize..4, seed in 0u64..10_000, s in 0.2f64..5.0) {
        let a = room(n, seed);
        let hyp = LayoutHypothesis::from_room(a.clone(), &ProbabilityMap::zeros(grid(), Channel::Corner));
        let one = lift_to_3d(&hyp, a.frame(), 1.0).unwrap();
        let scaled = lift_to_3d(&hyp, a.frame(), s).unwrap();
        for (p, q) in scaled.floor_polygon().iter().zip(one.floor_polygon()) {
            prop_assert!((p[0] - s * q[0]).abs() <= 1e-9 * s && (p[1] - s * q[1]).abs() <= 1e-9 * s);
        }
        prop_assert!((scaled.ceiling_z() - s * one.ceiling_z()).abs() <= 1e-9 * s);
    }

    #[test]
    fn selection_ignores_map_scale(seed in 0u64..10_000, c in prop::sample::select(vec![0.1, 0.5, 3.0, 100.0])) {
        let g = grid();
        let gt = room(seed as usize, seed);
        let (edge, corner) = render_gt_maps(&gt, g, RenderParams::default()).unwrap();
        let hyps: Vec<LayoutHypothesis> = (0..6)
            .map(|k| LayoutHypothesis::from_room(room(k, seed.wrapping_add(k as u64)), &corner))
            .chain(std::iter::once(LayoutHypothesis::from_room(gt, &corner)))
            .collect();
        let (base, _) = select_best(&hyps, &edge, &corner).unwrap();
        let (scaled, _) = select_best(&hyps, &edge.scaled(c), &corner.scaled(c)).unwrap();
        prop_assert_eq!(base, scaled);
    }
}
