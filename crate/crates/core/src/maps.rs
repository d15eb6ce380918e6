//! Edge and corner probability maps: storage, `PRM1` files, ground-truth
//! rendering, the weighted sigmoid cross-entropy and perceptual losses, and
//! binary map metrics.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::room::LayoutModel;
use crate::sphere::{bearing_to_pixel, Arc, EquirectGrid, UnitBearing};

pub const MAP_TAG: &str = "PRM1";
/// Minimum header length in bytes; shorter headers are space padded.
const HEADER_LEN: usize = 16;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Edge,
    Corner,
}

impl Channel {
    fn code(self) -> char {
        match self {
            Channel::Edge => 'E',
            Channel::Corner => 'C',
        }
    }

    fn from_code(s: &str) -> Result<Self> {
        match s {
            "E" => Ok(Channel::Edge),
            "C" => Ok(Channel::Corner),
            _ => Err(Error::Parse(format!("unknown channel {s:?}"))),
        }
    }
}

/// Read access to a scalar field over panorama pixels.
pub trait PixelField {
    fn grid(&self) -> EquirectGrid;

    /// Value at row-major pixel index.
    fn at(&self, idx: usize) -> f64;

    /// Bilinear sample at a continuous pixel coordinate (pixel centers at
    /// integers); columns wrap, rows clamp.
    fn bilinear(&self, u: f64, v: f64) -> f64 {
        let g = self.grid();
        let (w, h) = (g.width() as i64, g.height() as i64);
        let v = v.clamp(0.0, (h - 1) as f64);
        let (u0, v0) = (u.floor(), v.floor());
        let (fu, fv) = (u - u0, v - v0);
        let c0 = (u0 as i64).rem_euclid(w) as usize;
        let c1 = (u0 as i64 + 1).rem_euclid(w) as usize;
        let r0 = v0 as usize;
        let r1 = (r0 + 1).min(h as usize - 1);
        let wd = w as usize;
        let top = self.at(r0 * wd + c0) * (1.0 - fu) + self.at(r0 * wd + c1) * fu;
        let bot = self.at(r1 * wd + c0) * (1.0 - fu) + self.at(r1 * wd + c1) * fu;
        top * (1.0 - fv) + bot * fv
    }

    /// Catmull–Rom bicubic sample; unlike [`PixelField::bilinear`] its
    /// maxima are not pinned to pixel centers. Columns wrap, rows clamp.
    fn bicubic(&self, u: f64, v: f64) -> f64 {
        let g = self.grid();
        let (w, h) = (g.width() as i64, g.height() as i64);
        let v = v.clamp(0.0, (h - 1) as f64);
        let (u0, v0) = (u.floor(), v.floor());
        let (fu, fv) = (u - u0, v - v0);
        let weights = |t: f64| {
            let t2 = t * t;
            let t3 = t2 * t;
            [
                0.5 * (-t3 + 2.0 * t2 - t),
                0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                0.5 * (t3 - t2),
            ]
        };
        let (wu, wv) = (weights(fu), weights(fv));
        let mut acc = 0.0;
        for (j, wvj) in wv.iter().enumerate() {
            let r = (v0 as i64 + j as i64 - 1).clamp(0, h - 1) as usize;
            let mut row = 0.0;
            for (i, wui) in wu.iter().enumerate() {
                let c = (u0 as i64 + i as i64 - 1).rem_euclid(w) as usize;
                row += wui * self.at(r * w as usize + c);
            }
            acc += wvj * row;
        }
        acc
    }

    fn sample_bearing(&self, b: &UnitBearing) -> f64 {
        let (u, v) = bearing_to_pixel(b, self.grid());
        self.bilinear(u, v)
    }
}

/// Per-pixel probabilities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    grid: EquirectGrid,
    channel: Channel,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(grid: EquirectGrid, channel: Channel, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for a {}x{} map",
                values.len(),
                grid.width(),
                grid.height()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("map value {bad} outside [0, 1]")));
        }
        Ok(Self {
            grid,
            channel,
            values,
        })
    }

    pub fn zeros(grid: EquirectGrid, channel: Channel) -> Self {
        Self {
            grid,
            channel,
            values: vec![0.0; grid.len()],
        }
    }

    /// Builds a map from `f64` values, clamping them into `[0, 1]`.
    pub fn from_f64_clamped(grid: EquirectGrid, channel: Channel, values: &[f64]) -> Result<Self> {
        let v = values.iter().map(|x| x.clamp(0.0, 1.0) as f32).collect();
        Self::new(grid, channel, v)
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.grid.width() + col]
    }

    /// Gaussian-smoothed copy (columns wrap, rows replicate the border).
    pub fn smoothed(&self, sigma_px: f64) -> ProbabilityMap {
        let mut buf: Vec<f64> = self.values.iter().map(|v| *v as f64).collect();
        gaussian_blur(&mut buf, self.grid, sigma_px);
        ProbabilityMap::from_f64_clamped(self.grid, self.channel, &buf).expect("same grid")
    }

    /// View of this map multiplied by `factor`; values may exceed 1.
    pub fn scaled(&self, factor: f64) -> ScaledMap<'_> {
        ScaledMap { map: self, factor }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!(
            "{MAP_TAG} {} {} {}",
            self.grid.width(),
            self.grid.height(),
            self.channel.code()
        );
        while header.len() < HEADER_LEN - 1 {
            header.push(' ');
        }
        header.push('\n');
        let mut out = header.into_bytes();
        out.reserve(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .take(64)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("map header has no line terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Parse("map header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != MAP_TAG {
            return Err(Error::Parse(format!("malformed map header {header:?}")));
        }
        let w: usize = fields[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad width {:?}", fields[1])))?;
        let h: usize = fields[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad height {:?}", fields[2])))?;
        let channel = Channel::from_code(fields[3])?;
        let grid = EquirectGrid::new(w, h)?;
        let payload = &bytes[nl + 1..];
        if payload.len() != 4 * grid.len() {
            return Err(Error::Dimension(format!(
                "header declares {w}x{h} but payload holds {} bytes",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(grid, channel, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a map and checks its declared channel.
    pub fn load_channel(path: impl AsRef<Path>, channel: Channel) -> Result<Self> {
        let map = Self::load(path)?;
        if map.channel != channel {
            return Err(Error::Validation(format!(
                "expected {channel:?} map, file declares {:?}",
                map.channel
            )));
        }
        Ok(map)
    }

    /// 8-bit grayscale PNG, value `round(p * 255)`. Visualization only.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().map(|p| (p * 255.0).round() as u8).collect();
        let img = image::GrayImage::from_raw(self.grid.width() as u32, self.grid.height() as u32, bytes)
            .expect("buffer matches grid");
        img.save(path)?;
        Ok(())
    }
}

impl PixelField for ProbabilityMap {
    fn grid(&self) -> EquirectGrid {
        self.grid
    }

    fn at(&self, idx: usize) -> f64 {
        self.values[idx] as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScaledMap<'a> {
    map: &'a ProbabilityMap,
    factor: f64,
}

impl PixelField for ScaledMap<'_> {
    fn grid(&self) -> EquirectGrid {
        self.map.grid
    }

    fn at(&self, idx: usize) -> f64 {
        self.map.values[idx] as f64 * self.factor
    }
}

/// Pre-sigmoid predictions `ŷ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    grid: EquirectGrid,
    values: Vec<f64>,
}

impl LogitMap {
    pub fn new(grid: EquirectGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} logits for a {}-pixel map",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> EquirectGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `C×H×W` feature activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Class balancing for [`weighted_bce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassWeighting {
    /// `λ_c = N / N_c`; both classes must be present.
    #[default]
    Balanced,
    /// `λ_0 = λ_1 = 1`.
    Unit,
}

/// Mean over pixels of
/// `λ₁·y·(−log S(ŷ)) + λ₀·(1−y)·(−log(1 − S(ŷ)))`,
/// with `y` the ground truth binarized at 0.5 and logs floored at `1e-12`.
pub fn weighted_bce(pred: &LogitMap, gt: &ProbabilityMap) -> Result<f64> {
    weighted_bce_with(pred, gt, ClassWeighting::Balanced)
}

pub fn weighted_bce_with(pred: &LogitMap, gt: &ProbabilityMap, weighting: ClassWeighting) -> Result<f64> {
    if pred.grid != gt.grid {
        return Err(Error::Dimension("logit and ground-truth grids differ".into()));
    }
    let n = gt.values.len();
    let positives = gt.values.iter().filter(|v| **v >= 0.5).count();
    let (lambda1, lambda0) = match weighting {
        ClassWeighting::Unit => (1.0, 1.0),
        ClassWeighting::Balanced => {
            if positives == 0 || positives == n {
                return Err(Error::DegenerateClass(format!(
                    "{positives} of {n} pixels are positive; both classes are required"
                )));
            }
            (n as f64 / positives as f64, n as f64 / (n - positives) as f64)
        }
    };
    let max_nll = -LOG_FLOOR.ln();
    let total: f64 = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(&logit, &y)| {
            if y >= 0.5 {
                // −log S(x) = softplus(−x)
                lambda1 * softplus(-logit).min(max_nll)
            } else {
                lambda0 * softplus(logit).min(max_nll)
            }
        })
        .sum();
    Ok(total / n as f64)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `‖φ̂ − φ‖²₂`: sum of squared element-wise differences.
pub fn perceptual_distance(pred: &FeatureTensor, gt: &FeatureTensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Dimension(format!(
            "feature shapes {:?} and {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Positive-class metrics of a binarized prediction against binarized GT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl MapMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
        }
    }
}

pub const DEFAULT_BIN_THRESHOLD: f64 = 0.25;

pub fn map_metrics(pred: &ProbabilityMap, gt: &ProbabilityMap, bin_threshold: f64) -> Result<MapMetrics> {
    if pred.grid != gt.grid {
        return Err(Error::Dimension("prediction and ground-truth grids differ".into()));
    }
    if !(bin_threshold > 0.0 && bin_threshold < 1.0) {
        return Err(Error::Validation(format!("threshold {bin_threshold} outside (0, 1)")));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        match (p as f64 >= bin_threshold, g as f64 >= bin_threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(MapMetrics::from_counts(tp, fp, fn_, tn))
}

/// Ground-truth rendering parameters, in map pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub line_thickness_px: f64,
    pub blur_sigma_px: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            line_thickness_px: 2.0,
            blur_sigma_px: 1.5,
        }
    }
}

/// Dense samples of an arc, fine enough to visit every pixel it crosses
/// even where columns shrink near the poles.
pub(crate) fn dense_arc_samples(arc: &Arc, grid: EquirectGrid) -> Vec<UnitBearing> {
    let base = 0.125 * grid.row_angle();
    let mut out = vec![arc.from];
    let mut t = 0.0;
    while t < arc.sweep {
        let p = arc.point_at(t);
        let cos_lat = (1.0 - p.z() * p.z()).max(0.0).sqrt();
        t = (t + base * cos_lat.max(0.02)).min(arc.sweep);
        out.push(arc.point_at(t));
    }
    out
}

/// Renders the ground-truth edge and corner maps of a room.
///
/// Edges are drawn as `line_thickness_px` wide antialiased great-circle arcs
/// (value 1 inside, partial coverage on the rim),
/// then Gaussian blurred and rescaled to a maximum of 1. Corners are
/// Gaussian impulses at their exact projected positions. Every edge and
/// corner of the room is drawn; occlusion is not modelled.
pub fn render_gt_maps(
    layout: &LayoutModel,
    grid: EquirectGrid,
    params: RenderParams,
) -> Result<(ProbabilityMap, ProbabilityMap)> {
    if !(params.line_thickness_px >= 0.0 && params.blur_sigma_px >= 0.0) {
        return Err(Error::Validation("thickness and blur must be >= 0".into()));
    }
    layout.validate()?;
    let (w, h) = (grid.width(), grid.height());
    let mut edge = vec![0.0f64; grid.len()];
    let radius = params.line_thickness_px / 2.0;
    for e in layout.edges() {
        let a = UnitBearing::new(e.a)?;
        let b = UnitBearing::new(e.b)?;
        let arc = Arc::between(&a, &b, None);
        for p in dense_arc_samples(&arc, grid) {
            let (u, v) = bearing_to_pixel(&p, grid);
            if radius > 0.0 {
                stamp_disc(&mut edge, grid, u, v, radius);
            } else {
                edge[grid.pixel_index(u, v)] = 1.0;
            }
        }
    }
    gaussian_blur(&mut edge, grid, params.blur_sigma_px);
    normalize_max(&mut edge);

    let mut corner = vec![0.0f64; grid.len()];
    let sigma = params.blur_sigma_px;
    for (cu, cv) in layout.corner_pixels(grid) {
        if sigma == 0.0 {
            corner[grid.pixel_index(cu, cv)] = 1.0;
            continue;
        }
        let reach = (4.0 * sigma).ceil() as i64;
        let (c0, r0) = (cu.round() as i64, cv.round() as i64);
        for r in (r0 - reach).max(0)..=(r0 + reach).min(h as i64 - 1) {
            for c in (c0 - reach)..=(c0 + reach) {
                let col = c.rem_euclid(w as i64) as usize;
                let d = grid.pixel_distance((col as f64, r as f64), (cu, cv));
                let val = (-d * d / (2.0 * sigma * sigma)).exp();
                let idx = r as usize * w + col;
                corner[idx] = corner[idx].max(val);
            }
        }
    }
    normalize_max(&mut corner);
    Ok((
        ProbabilityMap::from_f64_clamped(grid, Channel::Edge, &edge)?,
        ProbabilityMap::from_f64_clamped(grid, Channel::Corner, &corner)?,
    ))
}

fn stamp_disc(buf: &mut [f64], grid: EquirectGrid, u: f64, v: f64, radius: f64) {
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let reach = radius.ceil() as i64 + 1;
    let (c0, r0) = (u.round() as i64, v.round() as i64);
    for r in (r0 - reach).max(0)..=(r0 + reach).min(h - 1) {
        for c in (c0 - reach)..=(c0 + reach) {
            let col = c.rem_euclid(w) as usize;
            // Antialiased rim: coverage falls from 1 to 0 over one pixel.
            let d = grid.pixel_distance((col as f64, r as f64), (u, v));
            let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
            let idx = r as usize * w as usize + col;
            buf[idx] = buf[idx].max(cover);
        }
    }
}

/// Separable Gaussian blur; columns wrap around, rows replicate the border.
pub(crate) fn gaussian_blur(buf: &mut [f64], grid: EquirectGrid, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let (w, h) = (grid.width(), grid.height());
    let reach = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-reach..=reach)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let mut tmp = vec![0.0; buf.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let cc = (c as i64 + i as i64 - reach).rem_euclid(w as i64) as usize;
                acc += k * buf[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let rr = (r as i64 + i as i64 - reach).clamp(0, h as i64 - 1) as usize;
                acc += k * tmp[rr * w + c];
            }
            buf[r * w + c] = acc;
        }
    }
}

fn normalize_max(buf: &mut [f64]) {
    let max = buf.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        buf.iter_mut().for_each(|v| *v /= max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::ManhattanFrame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_grid() -> EquirectGrid {
        EquirectGrid::new(8, 4).unwrap()
    }

    fn map_from(grid: EquirectGrid, ch: Channel, vals: &[f32]) -> ProbabilityMap {
        ProbabilityMap::new(grid, ch, vals.to_vec()).unwrap()
    }

    #[test]
    fn rejects_out_of_range_values() {
        let g = tiny_grid();
        let mut v = vec![0.0; 32];
        v[3] = 1.5;
        assert!(matches!(
            ProbabilityMap::new(g, Channel::Edge, v),
            Err(Error::Validation(_))
        ));
        assert!(ProbabilityMap::new(g, Channel::Edge, vec![0.0; 31]).is_err());
    }

    #[test]
    fn saturated_correct_pixel_costs_nothing() {
        let g = tiny_grid();
        let mut y = vec![0.0f32; 32];
        y[0] = 1.0;
        let mut logits = vec![-30.0; 32];
        logits[0] = 30.0;
        let loss = weighted_bce(&LogitMap::new(g, logits).unwrap(), &map_from(g, Channel::Edge, &y)).unwrap();
        assert!(loss < 1e-11);
    }

    #[test]
    fn balanced_two_class_value() {
        // Half positives: λ₀ = λ₁ = 2 and every logit is 0, so each pixel costs 2·ln 2.
        let g = tiny_grid();
        let y: Vec<f32> = (0..32).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let loss = weighted_bce(&LogitMap::new(g, vec![0.0; 32]).unwrap(), &map_from(g, Channel::Edge, &y)).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let unit = weighted_bce_with(
            &LogitMap::new(g, vec![0.0; 32]).unwrap(),
            &map_from(g, Channel::Edge, &y),
            ClassWeighting::Unit,
        )
        .unwrap();
        assert!((loss - 2.0 * unit).abs() < 1e-12);
    }

    #[test]
    fn single_class_gt_is_degenerate() {
        let g = tiny_grid();
        let logits = LogitMap::new(g, vec![0.0; 32]).unwrap();
        let gt = ProbabilityMap::zeros(g, Channel::Edge);
        assert!(matches!(weighted_bce(&logits, &gt), Err(Error::DegenerateClass(_))));
        assert!(weighted_bce_with(&logits, &gt, ClassWeighting::Unit).is_ok());
    }

    #[test]
    fn loss_decreases_as_logit_moves_toward_label() {
        let g = tiny_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f32> = (0..32).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let mut y = y;
        y[0] = 1.0;
        y[1] = 0.0;
        let gt = map_from(g, Channel::Edge, &y);
        let base: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
        let l0 = weighted_bce(&LogitMap::new(g, base.clone()).unwrap(), &gt).unwrap();
        for i in 0..32 {
            let mut moved = base.clone();
            moved[i] += if y[i] >= 0.5 { 0.1 } else { -0.1 };
            let l1 = weighted_bce(&LogitMap::new(g, moved).unwrap(), &gt).unwrap();
            assert!(l1 < l0, "pixel {i}");
        }
    }

    #[test]
    fn perceptual_constant_offset() {
        let a = FeatureTensor::new(2, 3, 4, vec![0.5; 24]).unwrap();
        let b = FeatureTensor::new(2, 3, 4, vec![1.5; 24]).unwrap();
        assert_eq!(perceptual_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(perceptual_distance(&b, &a).unwrap(), 24.0);
        let c = FeatureTensor::new(3, 2, 4, vec![0.5; 24]).unwrap();
        assert!(matches!(perceptual_distance(&a, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn metrics_identity_and_empty_prediction() {
        let g = tiny_grid();
        let y: Vec<f32> = (0..32).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        let gt = map_from(g, Channel::Edge, &y);
        let m = map_metrics(&gt, &gt, 0.25).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
        let empty = ProbabilityMap::zeros(g, Channel::Edge);
        let m = map_metrics(&empty, &gt, 0.25).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.accuracy, 24.0 / 32.0);
        assert!(map_metrics(&gt, &gt, 1.0).is_err());
    }

    #[test]
    fn metrics_hand_counted_confusion() {
        // 8x4 grid; only the first 16 pixels are varied, the rest are TN.
        let g = tiny_grid();
        let pred: [f32; 16] = [0.9, 0.9, 0.9, 0.1, 0.1, 0.3, 0.2, 0.0, 0.6, 0.24, 0.25, 0.0, 1.0, 0.0, 0.7, 0.0];
        let gt: [f32; 16] = [1.0, 0.0, 0.5, 1.0, 0.0, 0.3, 0.9, 0.0, 0.0, 0.3, 0.0, 0.0, 1.0, 0.0, 0.0, 0.2];
        // TP: 0,2,5,12 -> 4 | FP: 1,8,10,14 -> 4 | FN: 3,6,9 -> 3 | TN: 16 - 11 = 5 (+16 padding)
        let mut p = pred.to_vec();
        p.resize(32, 0.0);
        let mut t = gt.to_vec();
        t.resize(32, 0.0);
        let m = map_metrics(&map_from(g, Channel::Edge, &p), &map_from(g, Channel::Edge, &t), 0.25).unwrap();
        assert_eq!(
            (m.true_positives, m.false_positives, m.false_negatives, m.true_negatives),
            (4, 4, 3, 21)
        );
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 4.0 / 7.0);
        assert_eq!(m.accuracy, 25.0 / 32.0);
        assert!((m.f1 - 2.0 * 0.5 * (4.0 / 7.0) / (0.5 + 4.0 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn prm_round_trip_and_validation() {
        let g = EquirectGrid::new(128, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<f32> = (0..g.len()).map(|_| rng.random::<f32>()).collect();
        let map = map_from(g, Channel::Corner, &vals);
        let bytes = map.to_bytes();
        assert_eq!(&bytes[..16], b"PRM1 128 64 C  \n");
        assert_eq!(ProbabilityMap::from_bytes(&bytes).unwrap(), map);

        let mut bad = b"PRM1 100 64 E  \n".to_vec();
        bad.extend(std::iter::repeat_n(0u8, 4 * 6400));
        assert!(matches!(ProbabilityMap::from_bytes(&bad), Err(Error::Validation(_))));

        let mut short = bytes.clone();
        short.truncate(bytes.len() - 4);
        assert!(matches!(ProbabilityMap::from_bytes(&short), Err(Error::Dimension(_))));

        let mut out_of_range = b"PRM1 8 4 E      \n".to_vec();
        for i in 0..32 {
            out_of_range.extend_from_slice(&(if i == 5 { 1.25f32 } else { 0.0 }).to_le_bytes());
        }
        assert!(ProbabilityMap::from_bytes(&out_of_range).is_err());
        assert!(ProbabilityMap::from_bytes(b"PRM9 8 4 E\n").is_err());
        assert!(ProbabilityMap::from_bytes(b"PRM1 8 4 Q\n").is_err());
    }

    #[test]
    fn half_map_fixture_checksum() {
        let g = EquirectGrid::new(128, 64).unwrap();
        let map = map_from(g, Channel::Edge, &vec![0.5; g.len()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.prm");
        map.save(&path).unwrap();
        let loaded = ProbabilityMap::load_channel(&path, Channel::Edge).unwrap();
        let sum: f64 = loaded.values().iter().map(|v| *v as f64).sum();
        assert_eq!(sum, 4096.0);
        assert_eq!(fs::read(&path).unwrap().len(), 16 + 4 * 8192);
        assert!(ProbabilityMap::load_channel(&path, Channel::Corner).is_err());
    }

    #[test]
    fn bilinear_wraps_columns() {
        let g = tiny_grid();
        let mut v = vec![0.0f32; 32];
        v[7] = 1.0;
        let m = map_from(g, Channel::Corner, &v);
        assert!((m.bilinear(7.5, 0.0) - 0.5).abs() < 1e-12);
        assert!((m.bilinear(-0.25, 0.0) - 0.25).abs() < 1e-7);
        assert!((m.bilinear(7.0, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corner_peaks_survive_blur() {
        let room = LayoutModel::new(
            vec![[-2.0, -1.0], [2.5, -1.0], [2.5, 1.7], [-2.0, 1.7]],
            -1.0,
            1.3,
            ManhattanFrame::identity(),
        )
        .unwrap();
        let g = EquirectGrid::new(128, 64).unwrap();
        let (edge, corner) = render_gt_maps(&room, g, RenderParams::default()).unwrap();
        assert!(edge.values().iter().all(|v| (0.0..=1.0).contains(v)));
        for (u, v) in room.corner_pixels(g) {
            // Argmax of the 5x5 neighbourhood sits within half a pixel of the corner.
            let (c0, r0) = (u.round() as i64, v.round() as i64);
            let mut best = (f32::MIN, 0i64, 0i64);
            for r in (r0 - 2).max(0)..=(r0 + 2).min(63) {
                for c in c0 - 2..=c0 + 2 {
                    let cc = c.rem_euclid(128) as usize;
                    let val = corner.get(cc, r as usize);
                    if val > best.0 {
                        best = (val, c, r);
                    }
                }
            }
            assert!((best.1 as f64 - u).abs() <= 0.5 + 1e-9 && (best.2 as f64 - v).abs() <= 0.5 + 1e-9);
        }
    }
}
