//! Synthetic corpora on disk: sampled rooms, their rendered (optionally
//! corrupted) maps, and a manifest. Also overlay images for inspection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maps::{render_gt_maps, Channel, PixelField, ProbabilityMap, RenderParams};
use crate::room::LayoutModel;
use crate::sphere::{rasterize_arc, Arc, EquirectGrid, UnitBearing};
use crate::synth::{corpus_corner_count, CORNER_COUNTS, corrupt_maps, room_seed, sample_room, NoiseSpec, RoomSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub rooms: usize,
    pub seed: u64,
    pub corner_counts: Vec<usize>,
    /// Never sample box rooms.
    pub complex_only: bool,
    pub grid: EquirectGrid,
    pub render: RenderParams,
    pub noise: NoiseSpec,
    /// Template for every room; `corner_count` and `seed` are overridden.
    pub room: RoomSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            rooms: 200,
            seed: 0,
            corner_counts: vec![4, 6, 8, 10],
            complex_only: false,
            grid: EquirectGrid::new(128, 64).expect("valid grid"),
            render: RenderParams::default(),
            noise: NoiseSpec::default(),
            room: RoomSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub seed: u64,
    pub corner_count: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub entry: CorpusEntry,
    pub room: LayoutModel,
    pub edge: ProbabilityMap,
    pub corner: ProbabilityMap,
}

pub fn room_id(index: usize) -> String {
    format!("room_{index:05}")
}

/// One corpus room: sampled with the per-index seed, rendered, and
/// corrupted with the same seed when the noise spec is nonzero.
pub fn corpus_item(cfg: &CorpusConfig, index: usize) -> Result<CorpusItem> {
    let seed = room_seed(cfg.seed, index as u64);
    let corner_count = corpus_corner_count(cfg.seed, index as u64, &cfg.corner_counts, cfg.complex_only);
    let room = sample_room(&RoomSpec {
        corner_count,
        seed,
        ..cfg.room.clone()
    })?;
    let (edge, corner) = render_gt_maps(&room, cfg.grid, cfg.render)?;
    let (edge, corner) = corrupt_maps(&edge, &corner, &cfg.noise, seed)?;
    Ok(CorpusItem {
        entry: CorpusEntry {
            id: room_id(index),
            seed,
            corner_count,
        },
        room,
        edge,
        corner,
    })
}

/// All rooms of a corpus, generated in parallel, in index order.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<CorpusItem>> {
    if cfg.corner_counts.is_empty() {
        return Err(Error::Validation("no corner counts allowed".into()));
    }
    if let Some(bad) = cfg.corner_counts.iter().find(|n| !CORNER_COUNTS.contains(n)) {
        return Err(Error::Validation(format!(
            "corner count {bad} not allowed; choose from {CORNER_COUNTS:?}"
        )));
    }
    cfg.noise.validate()?;
    (0..cfg.rooms).into_par_iter().map(|i| corpus_item(cfg, i)).collect()
}

pub const MANIFEST_HEADER: &str = "id,seed,corner_count";

pub fn manifest_csv(entries: &[CorpusEntry]) -> String {
    let mut s = String::new();
    writeln!(s, "{MANIFEST_HEADER}").unwrap();
    for e in entries {
        writeln!(s, "{},{},{}", e.id, e.seed, e.corner_count).unwrap();
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<CorpusEntry>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::Parse(format!("manifest must start with {MANIFEST_HEADER:?}")));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("bad manifest row {l:?}")));
            }
            let num = |t: &str| t.parse::<u64>().map_err(|e| Error::Parse(format!("{t:?}: {e}")));
            Ok(CorpusEntry {
                id: f[0].to_string(),
                seed: num(f[1])?,
                corner_count: num(f[2])? as usize,
            })
        })
        .collect()
}

pub fn layout_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("rooms").join(format!("{id}.layout"))
}

pub fn map_path(dir: &Path, id: &str, channel: Channel) -> PathBuf {
    let suffix = match channel {
        Channel::Edge => "edge",
        Channel::Corner => "corner",
    };
    dir.join("maps").join(format!("{id}_{suffix}.prm"))
}

/// Writes `rooms/<id>.layout`, `maps/<id>_edge.prm`, `maps/<id>_corner.prm`
/// and `manifest.csv` under `dir`.
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Vec<CorpusEntry>> {
    let items = generate_corpus(cfg)?;
    fs::create_dir_all(dir.join("rooms"))?;
    fs::create_dir_all(dir.join("maps"))?;
    items.par_iter().try_for_each(|it| -> Result<()> {
        fs::write(layout_path(dir, &it.entry.id), it.room.to_text(Some(cfg.grid)))?;
        it.edge.save(map_path(dir, &it.entry.id, Channel::Edge))?;
        it.corner.save(map_path(dir, &it.entry.id, Channel::Corner))?;
        Ok(())
    })?;
    let entries: Vec<CorpusEntry> = items.into_iter().map(|it| it.entry).collect();
    fs::write(dir.join("manifest.csv"), manifest_csv(&entries))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<CorpusEntry>> {
    parse_manifest(&fs::read_to_string(dir.join("manifest.csv"))?)
}

fn draw_wireframe(img: &mut image::RgbImage, model: &LayoutModel, grid: EquirectGrid, color: [u8; 3]) {
    let w = grid.width();
    for e in model.edges() {
        let (Ok(a), Ok(b)) = (UnitBearing::new(e.a), UnitBearing::new(e.b)) else {
            continue;
        };
        for idx in rasterize_arc(&Arc::between(&a, &b, None), grid) {
            img.put_pixel((idx % w) as u32, (idx / w) as u32, image::Rgb(color));
        }
    }
}

/// Overlay of a predicted room (yellow) over the ground truth (green) on a
/// dimmed edge map background.
pub fn overlay_image(
    background: Option<&ProbabilityMap>,
    pred: &LayoutModel,
    gt: Option<&LayoutModel>,
    grid: EquirectGrid,
) -> image::RgbImage {
    let mut img = image::RgbImage::new(grid.width() as u32, grid.height() as u32);
    if let Some(bg) = background.filter(|m| m.grid() == grid) {
        for (i, v) in bg.values().iter().enumerate() {
            let g = (v * 96.0).round() as u8;
            img.put_pixel((i % grid.width()) as u32, (i / grid.width()) as u32, image::Rgb([g, g, g]));
        }
    }
    if let Some(gt) = gt {
        draw_wireframe(&mut img, gt, grid, [0, 200, 0]);
    }
    draw_wireframe(&mut img, pred, grid, [255, 230, 0]);
    img
}

pub fn save_overlay(path: &Path, img: &image::RgbImage) -> Result<()> {
    img.save(path)?;
    Ok(())
}
