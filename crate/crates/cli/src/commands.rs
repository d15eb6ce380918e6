use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use panoroom::corpus::{
    layout_path, manifest_csv, map_path, overlay_image, read_manifest, save_overlay, write_corpus, CorpusConfig,
    CorpusEntry,
};
use panoroom::maps::{map_metrics, render_gt_maps, Channel, MapMetrics, PixelField, ProbabilityMap, RenderParams};
use panoroom::metrics::{evaluate, report_csv, EvalReport};
use panoroom::pipeline::{reconstruct, PipelineConfig};
use panoroom::room::LayoutModel;
use panoroom::sphere::EquirectGrid;
use panoroom::synth::{corrupt_maps, room_seed, NoiseSpec};

use crate::config::{CountList, FileConfig};
use crate::{
    CliError, CorruptArgs, EvaluateArgs, MapMetricsArgs, NoiseArgs, ReconstructArgs, RenderGtArgs, SynthArgs,
};

fn grid_from_width(width: usize) -> Result<EquirectGrid, CliError> {
    if !width.is_multiple_of(2) {
        return Err(CliError::Config(format!("width {width} must be even")));
    }
    EquirectGrid::new(width, width / 2).map_err(|e| CliError::Config(e.to_string()))
}

fn noise_spec(args: &NoiseArgs, file: &FileConfig) -> Result<NoiseSpec, CliError> {
    let noise = NoiseSpec {
        gaussian_sigma: file.pick(args.noise_sigma, "noise_sigma", 0.0)?,
        spurious_edge_fraction: file.pick(args.noise_spurious, "noise_spurious", 0.0)?,
        dropout_fraction: file.pick(args.noise_dropout, "noise_dropout", 0.0)?,
    };
    noise.validate()?;
    Ok(noise)
}

fn render_params(file: &FileConfig, thickness: Option<f64>, blur: Option<f64>) -> Result<RenderParams, CliError> {
    let d = RenderParams::default();
    Ok(RenderParams {
        line_thickness_px: file.pick(thickness, "line_thickness", d.line_thickness_px)?,
        blur_sigma_px: file.pick(blur, "blur_sigma", d.blur_sigma_px)?,
    })
}

fn read_entries(dir: &Path) -> Result<Vec<CorpusEntry>, CliError> {
    read_manifest(dir).map_err(|e| CliError::Failed(format!("cannot read manifest in {}: {e}", dir.display())))
}

fn load_layout(path: &Path) -> panoroom::Result<LayoutModel> {
    LayoutModel::from_text(&fs::read_to_string(path)?)
}

/// Copies the manifest and layouts of a corpus unless `from` and `to` are
/// the same directory.
fn mirror_corpus(from: &Path, to: &Path, entries: &[CorpusEntry]) -> Result<(), CliError> {
    fs::create_dir_all(to.join("rooms"))?;
    fs::create_dir_all(to.join("maps"))?;
    if fs::canonicalize(from)? == fs::canonicalize(to)? {
        return Ok(());
    }
    fs::write(to.join("manifest.csv"), manifest_csv(entries))?;
    for e in entries {
        let src = layout_path(from, &e.id);
        if src.exists() {
            fs::copy(&src, layout_path(to, &e.id))?;
        }
    }
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn synth(args: &SynthArgs, file: &FileConfig) -> Result<(), CliError> {
    let d = CorpusConfig::default();
    let cfg = CorpusConfig {
        rooms: file.pick(args.rooms, "rooms", d.rooms)?,
        seed: file.pick(args.seed, "seed", d.seed)?,
        corner_counts: file.pick(args.corners.clone(), "corners", CountList(d.corner_counts))?.0,
        complex_only: file.pick(args.complex_only, "complex_only", false)?,
        grid: grid_from_width(file.pick(args.width, "width", d.grid.width())?)?,
        render: render_params(file, args.line_thickness, args.blur_sigma)?,
        noise: noise_spec(&args.noise, file)?,
        room: d.room,
    };
    let entries = write_corpus(&args.out, &cfg)?;
    let mut summary = String::new();
    for n in panoroom::synth::CORNER_COUNTS {
        let k = entries.iter().filter(|e| e.corner_count == n).count();
        if k > 0 {
            write!(summary, " {n}:{k}").unwrap();
        }
    }
    println!("wrote {} rooms to {} (corners{summary})", entries.len(), args.out.display());
    Ok(())
}

pub fn render_gt(args: &RenderGtArgs, file: &FileConfig) -> Result<(), CliError> {
    let grid = grid_from_width(file.pick(args.width, "width", 128)?)?;
    let params = render_params(file, args.line_thickness, args.blur_sigma)?;
    let out = args.out.as_deref().unwrap_or(&args.input);
    let entries = read_entries(&args.input)?;
    mirror_corpus(&args.input, out, &entries)?;
    entries.par_iter().try_for_each(|e| -> Result<(), CliError> {
        let room = load_layout(&layout_path(&args.input, &e.id))?;
        let (edge, corner) = render_gt_maps(&room, grid, params)?;
        edge.save(map_path(out, &e.id, Channel::Edge))?;
        corner.save(map_path(out, &e.id, Channel::Corner))?;
        Ok(())
    })?;
    println!("rendered {} rooms at {}x{} into {}", entries.len(), grid.width(), grid.height(), out.display());
    Ok(())
}

pub fn corrupt(args: &CorruptArgs, file: &FileConfig) -> Result<(), CliError> {
    let noise = noise_spec(&args.noise, file)?;
    let seed = file.pick(args.seed, "seed", 0)?;
    let entries = read_entries(&args.input)?;
    mirror_corpus(&args.input, &args.out, &entries)?;
    // Same per-room stream as a noisy `synth` run: with seed 0 the output
    // matches synthesizing with these noise settings directly.
    entries.par_iter().try_for_each(|e| -> Result<(), CliError> {
        let edge = ProbabilityMap::load_channel(map_path(&args.input, &e.id, Channel::Edge), Channel::Edge)?;
        let corner = ProbabilityMap::load_channel(map_path(&args.input, &e.id, Channel::Corner), Channel::Corner)?;
        let (edge, corner) = corrupt_maps(&edge, &corner, &noise, room_seed(seed, e.seed))?;
        edge.save(map_path(&args.out, &e.id, Channel::Edge))?;
        corner.save(map_path(&args.out, &e.id, Channel::Corner))?;
        Ok(())
    })?;
    println!("corrupted {} rooms into {}", entries.len(), args.out.display());
    Ok(())
}

struct Outcome {
    id: String,
    result: Result<(usize, usize), String>,
}

fn reconstruct_one(args: &ReconstructArgs, file: &FileConfig, e: &CorpusEntry) -> Result<(usize, usize), CliError> {
    let edge = ProbabilityMap::load_channel(map_path(&args.input, &e.id, Channel::Edge), Channel::Edge)?;
    let corner = ProbabilityMap::load_channel(map_path(&args.input, &e.id, Channel::Corner), Channel::Corner)?;
    let grid = edge.grid();
    let mut cfg = PipelineConfig::for_grid(grid);
    cfg.ransac.seed = file.pick(args.ransac_seed, "ransac_seed", cfg.ransac.seed)?;
    cfg.camera_height = file.pick(args.camera_height, "camera_height", cfg.camera_height)?;
    cfg.solver.max_corners = file.pick(args.max_corners, "max_corners", cfg.solver.max_corners)?;
    cfg.solver.max_hypotheses = file.pick(args.max_hypotheses, "max_hypotheses", cfg.solver.max_hypotheses)?;
    cfg.solver.refine = file.pick(args.refine, "refine", cfg.solver.refine)?;
    let rec = reconstruct(&edge, &corner, &cfg)?;
    fs::write(layout_path(&args.out, &e.id), rec.model.to_text(Some(grid)))?;
    if args.overlay {
        let gt = load_layout(&layout_path(&args.input, &e.id)).ok();
        let img = overlay_image(Some(&edge), &rec.model, gt.as_ref(), grid);
        save_overlay(&args.out.join("overlays").join(format!("{}.png", e.id)), &img)?;
    }
    Ok((rec.model.corner_count(), rec.hypothesis_count))
}

pub fn reconstruct_cmd(args: &ReconstructArgs, file: &FileConfig) -> Result<(), CliError> {
    // Validate numeric settings once up front so a bad value is a config
    // error rather than a failure of every image.
    file.pick(args.ransac_seed, "ransac_seed", 0u64)?;
    file.pick(args.camera_height, "camera_height", 1.0f64)?;
    file.pick(args.max_corners, "max_corners", 0usize)?;
    file.pick(args.max_hypotheses, "max_hypotheses", 0usize)?;
    file.pick(args.refine, "refine", true)?;
    let entries = read_entries(&args.input)?;
    fs::create_dir_all(args.out.join("rooms"))?;
    if args.overlay {
        fs::create_dir_all(args.out.join("overlays"))?;
    }
    let outcomes: Vec<Outcome> = entries
        .par_iter()
        .map(|e| Outcome {
            id: e.id.clone(),
            result: reconstruct_one(args, file, e).map_err(|err| err.to_string()),
        })
        .collect();
    let mut report = String::from("id,status,corners,hypotheses,message\n");
    let mut failures = 0;
    for o in &outcomes {
        match &o.result {
            Ok((n, h)) => writeln!(report, "{},ok,{n},{h},", o.id).unwrap(),
            Err(msg) => {
                failures += 1;
                eprintln!("{}: {msg}", o.id);
                writeln!(report, "{},error,,,{}", o.id, msg.replace([',', '\n'], ";")).unwrap();
            }
        }
    }
    fs::write(args.out.join("reconstruct.csv"), report)?;
    println!(
        "reconstructed {}/{} rooms into {} ({failures} failed)",
        outcomes.len() - failures,
        outcomes.len(),
        args.out.display()
    );
    if !outcomes.is_empty() && failures == outcomes.len() {
        return Err(CliError::Failed("every image failed".into()));
    }
    Ok(())
}

fn layout_ids(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let rooms = dir.join("rooms");
    let rd = fs::read_dir(&rooms).map_err(|e| CliError::Failed(format!("{}: {e}", rooms.display())))?;
    let mut ids = BTreeSet::new();
    for ent in rd {
        let p: PathBuf = ent?.path();
        if p.extension().is_some_and(|x| x == "layout") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

fn describe_mismatch(pred: &BTreeSet<String>, gt: &BTreeSet<String>) -> String {
    let list = |s: Vec<&String>| {
        let mut v: Vec<String> = s.iter().take(5).map(|x| x.to_string()).collect();
        if s.len() > 5 {
            v.push(format!("... ({} total)", s.len()));
        }
        v.join(" ")
    };
    let missing: Vec<&String> = gt.difference(pred).collect();
    let extra: Vec<&String> = pred.difference(gt).collect();
    format!("prediction and ground-truth ids differ; missing predictions: [{}]; unexpected predictions: [{}]", list(missing), list(extra))
}

pub fn evaluate_cmd(args: &EvaluateArgs, file: &FileConfig) -> Result<(), CliError> {
    let grid = grid_from_width(file.pick(args.eval_width, "eval_width", 512)?)?;
    let entries = read_entries(&args.gt)?;
    let gt_ids: BTreeSet<String> = entries.iter().map(|e| e.id.clone()).collect();
    let pred_ids = layout_ids(&args.pred)?;
    if gt_ids != pred_ids {
        return Err(CliError::Failed(describe_mismatch(&pred_ids, &gt_ids)));
    }
    let rows: Vec<(String, EvalReport)> = entries
        .par_iter()
        .map(|e| -> Result<(String, EvalReport), CliError> {
            let pred = load_layout(&layout_path(&args.pred, &e.id))?;
            let gt = load_layout(&layout_path(&args.gt, &e.id))?;
            Ok((e.id.clone(), evaluate(&pred, &gt, grid)?))
        })
        .collect::<Result<_, _>>()?;
    write_or_print(args.out.as_deref(), &report_csv(&rows))
}

pub const MAP_REPORT_HEADER: &str = "id,channel,precision,recall,f1,accuracy";

fn map_row(s: &mut String, id: &str, ch: &str, m: [f64; 4]) {
    writeln!(s, "{id},{ch},{:.17e},{:.17e},{:.17e},{:.17e}", m[0], m[1], m[2], m[3]).unwrap();
}

pub fn map_metrics_cmd(args: &MapMetricsArgs, file: &FileConfig) -> Result<(), CliError> {
    let threshold = file.pick(args.threshold, "threshold", panoroom::maps::DEFAULT_BIN_THRESHOLD)?;
    let channel = file.pick(args.channel.clone(), "channel", "both".to_string())?;
    let channels: Vec<Channel> = match channel.as_str() {
        "edge" => vec![Channel::Edge],
        "corner" => vec![Channel::Corner],
        "both" => vec![Channel::Edge, Channel::Corner],
        other => return Err(CliError::Config(format!("channel must be edge, corner or both, got {other:?}"))),
    };
    let entries = read_entries(&args.gt)?;
    let rows: Vec<Vec<MapMetrics>> = entries
        .par_iter()
        .map(|e| {
            channels
                .iter()
                .map(|&ch| -> Result<MapMetrics, CliError> {
                    let pred = ProbabilityMap::load_channel(map_path(&args.pred, &e.id, ch), ch)?;
                    let gt = ProbabilityMap::load_channel(map_path(&args.gt, &e.id, ch), ch)?;
                    Ok(map_metrics(&pred, &gt, threshold)?)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let name = |ch: Channel| match ch {
        Channel::Edge => "edge",
        Channel::Corner => "corner",
    };
    let values = |m: &MapMetrics| [m.precision, m.recall, m.f1, m.accuracy];
    let mut s = format!("{MAP_REPORT_HEADER}\n");
    for (e, ms) in entries.iter().zip(&rows) {
        for (&ch, m) in channels.iter().zip(ms) {
            map_row(&mut s, &e.id, name(ch), values(m));
        }
    }
    for (k, &ch) in channels.iter().enumerate() {
        let mut mean = [0.0; 4];
        for ms in &rows {
            for (acc, v) in mean.iter_mut().zip(values(&ms[k])) {
                *acc += v;
            }
        }
        let n = rows.len().max(1) as f64;
        map_row(&mut s, "mean", name(ch), mean.map(|v| v / n));
    }
    write_or_print(args.out.as_deref(), &s)
}
