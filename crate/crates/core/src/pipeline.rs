//! End-to-end layout recovery from an edge and a corner map.

use crate::error::{Error, Result};
use crate::lines::{
    classify_lines, estimate_manhattan_frame_with_samples, extract_ridge_samples, ransac_great_circles, score_and_prune, snap_to_frame,
    FrameConfig, GreatCircleSegment, RansacConfig,
};
use crate::maps::{PixelField, ProbabilityMap};
use crate::room::LayoutModel;
use crate::solver::{
    candidate_corners, collapse_short_walls, corner_peak_candidates, generate_hypotheses_with_support, lift_to_3d, refine_layout, rank_hypotheses, RefineSteps, select_best, HypothesisScore,
    LayoutHypothesis, SolverConfig,
};
use crate::sphere::{EquirectGrid, ManhattanFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub ransac: RansacConfig,
    pub frame: FrameConfig,
    /// Line labelling tolerance against the estimated frame.
    pub classify_tol_rad: f64,
    /// RMS residual allowed when refitting a segment through a frame
    /// direction.
    pub snap_tol_rad: f64,
    pub solver: SolverConfig,
    /// Gaussian pre-smoothing of both maps before line extraction and
    /// refinement.
    pub smooth_sigma_px: f64,
    pub camera_height: f64,
}

impl PipelineConfig {
    pub fn for_grid(grid: EquirectGrid) -> Self {
        Self {
            ransac: RansacConfig::for_grid(grid),
            frame: FrameConfig::default(),
            classify_tol_rad: 0.08,
            snap_tol_rad: 0.75 * grid.row_angle(),
            solver: SolverConfig::for_grid(grid),
            smooth_sigma_px: 1.0,
            camera_height: 1.0,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_grid(EquirectGrid::new(128, 64).expect("valid grid"))
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub model: LayoutModel,
    pub frame: ManhattanFrame,
    pub segments: Vec<GreatCircleSegment>,
    pub hypothesis_count: usize,
    pub selected: LayoutHypothesis,
    pub score: HypothesisScore,
}

/// Lines → frame → corner candidates → hypotheses → selection → metric
/// room, followed by optional local refinement against the maps.
pub fn reconstruct(edge: &ProbabilityMap, corner: &ProbabilityMap, cfg: &PipelineConfig) -> Result<Reconstruction> {
    if edge.grid() != corner.grid() {
        return Err(Error::Dimension("edge and corner maps differ in size".into()));
    }
    let edge_s = edge.smoothed(cfg.smooth_sigma_px);
    let corner_s = corner.smoothed(cfg.smooth_sigma_px);
    let samples = extract_ridge_samples(&edge_s, cfg.ransac.edge_threshold);
    let segments = ransac_great_circles(&samples, &cfg.ransac)?;
    let segments = score_and_prune(&segments, edge);
    let frame = estimate_manhattan_frame_with_samples(&segments, &samples, &cfg.frame)?;
    let segments = snap_to_frame(&segments, &samples, &frame, cfg.snap_tol_rad);
    let segments = classify_lines(&segments, &frame, cfg.classify_tol_rad);
    // Candidate scores and peaks come from the smoothed corner map; the
    // final selection scores against the maps as given.
    let mut candidates = candidate_corners(&segments, &corner_s, &frame, cfg.solver.span_slack_rad);
    if let Some(t) = cfg.solver.peak_threshold {
        let peaks = corner_peak_candidates(&corner_s, &frame, t, &candidates, cfg.solver.merge_tol_rad);
        candidates.extend(peaks);
    }
    let hypotheses =
        generate_hypotheses_with_support(&candidates, &segments, &frame, &corner_s, Some(&edge_s), &cfg.solver)?;
    let (selected, score, model) = if cfg.solver.refine {
        let ranked = rank_hypotheses(&hypotheses, edge, corner);
        let refined: Vec<(LayoutHypothesis, LayoutModel)> = ranked
            .iter()
            .take(cfg.solver.refine_top.max(1))
            .filter_map(|&(i, _)| {
                let m = lift_to_3d(&hypotheses[i], &frame, cfg.camera_height).ok()?;
                let m = refine_layout(&m, &edge_s, &corner_s, &RefineSteps::coarse());
                let m = collapse_short_walls(&m, cfg.solver.min_wall_rad);
                Some((LayoutHypothesis::from_room(m.clone(), corner), m))
            })
            .collect();
        let rings: Vec<LayoutHypothesis> = refined.iter().map(|(h, _)| h.clone()).collect();
        let (best, score) = select_best(&rings, edge, corner)?;
        let m = refine_layout(&refined[best].1, &edge_s, &corner_s, &RefineSteps::fine());
        let m = collapse_short_walls(&m, cfg.solver.min_wall_rad);
        (refined[best].0.clone(), score, m)
    } else {
        let (best, score) = select_best(&hypotheses, edge, corner)?;
        let model = lift_to_3d(&hypotheses[best], &frame, cfg.camera_height)?;
        (hypotheses[best].clone(), score, model)
    };
    Ok(Reconstruction {
        model,
        frame,
        segments,
        hypothesis_count: hypotheses.len(),
        selected,
        score,
    })
}
