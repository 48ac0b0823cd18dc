//! Deterministic batch generation of image/mask training pairs, paired
//! augmentation, train/val splitting, and run evaluation.
//!
//! Entries are independent jobs keyed by a per-entry seed derived from the
//! master seed and the entry index, so a worker pool may render them in any
//! order (or with any thread count) and still produce byte-identical output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{diameter_mae, DiameterReport, SegMask};
use crate::phantom::{generate_phantom, labels, PhantomSpec};
use crate::probe::{BModeImage, ProbeConfig};
use crate::raytrace::{render, render_label_mask, SimConfig};
use crate::rng::{derive_seed, salt, stream};
use crate::volume::{load_label_volume, load_tissue_table, Axis, LabelVolume, TissueTable};

/// Where a dataset entry's slices come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Volume(PathBuf),
    Phantom(PhantomSpec),
}

/// Paired geometric augmentation plus image-only noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum |rotation| in degrees.
    pub rotation_deg: f64,
    /// Maximum |translation| as a fraction of width/height.
    pub translation_frac: f64,
    pub scale_range: [f64; 2],
    /// Additive Gaussian noise on the image only.
    pub noise_sd: f64,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            translation_frac: 0.0625,
            scale_range: [0.9, 1.1],
            noise_sd: 0.02,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_deg < 0.0 || self.translation_frac < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::invalid("augmentation bounds must be >= 0"));
        }
        if !(self.scale_range[0] > 0.0) || self.scale_range[0] > self.scale_range[1] {
            return Err(Error::invalid("scale_range must be ordered and positive"));
        }
        Ok(())
    }
}

/// One concrete transform draw, applied identically to image and mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translate_px: [f64; 2],
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        translate_px: [0.0, 0.0],
        scale: 1.0,
    };
}

fn uniform(rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draw one transform from the config's ranges (seed-deterministic).
pub fn draw_augment_params(cfg: &AugmentConfig, seed: u64) -> AugmentParams {
    let mut rng = stream(seed, salt::AUGMENT, 0);
    let rot = uniform(&mut rng, -cfg.rotation_deg, cfg.rotation_deg);
    let tx = uniform(&mut rng, -cfg.translation_frac, cfg.translation_frac);
    let ty = uniform(&mut rng, -cfg.translation_frac, cfg.translation_frac);
    let scale = uniform(&mut rng, cfg.scale_range[0], cfg.scale_range[1]);
    AugmentParams {
        rotation_deg: rot,
        translate_px: [0.0, 0.0], // filled per image size below
        scale,
    }
    .with_translation_frac(tx, ty)
}

impl AugmentParams {
    fn with_translation_frac(mut self, tx: f64, ty: f64) -> Self {
        // stored as fractions here; scaled to pixels in apply_augment
        self.translate_px = [tx, ty];
        self
    }
}

/// Apply the same rotate/scale/translate to the image (bilinear) and mask
/// (nearest); the image's sector mask is transported with nearest sampling
/// so out-of-mask pixels stay exactly zero. `translate_px` in `params` is
/// interpreted as a fraction of width/height when |value| <= 1 was drawn by
/// `draw_augment_params`; callers passing explicit pixel offsets should use
/// `apply_augment_px`.
pub fn apply_augment(
    image: &BModeImage,
    mask: &SegMask,
    params: &AugmentParams,
) -> Result<(BModeImage, SegMask, AugmentParams)> {
    let (h, w) = image.pixels.dim();
    let px = AugmentParams {
        rotation_deg: params.rotation_deg,
        translate_px: [params.translate_px[0] * w as f64, params.translate_px[1] * h as f64],
        scale: params.scale,
    };
    let (img, msk) = apply_augment_px(image, mask, &px)?;
    Ok((img, msk, px))
}

/// As `apply_augment`, but translation is given directly in pixels.
pub fn apply_augment_px(
    image: &BModeImage,
    mask: &SegMask,
    params: &AugmentParams,
) -> Result<(BModeImage, SegMask)> {
    let (h, w) = image.pixels.dim();
    if mask.pixels().dim() != (h, w) {
        return Err(Error::mismatch("image and mask dims differ"));
    }
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let theta = params.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_scale = 1.0 / params.scale;
    let [tx, ty] = params.translate_px;

    let mut out_pixels = Array2::<f64>::zeros((h, w));
    let mut out_mask = Array2::<u8>::zeros((h, w));
    let mut out_seg = Array2::<u8>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            // inverse map: undo translation, rotation, then scale about center
            let qx = (c as f64 + 0.5) - cx - tx;
            let qy = (r as f64 + 0.5) - cy - ty;
            let rx = cos * qx + sin * qy;
            let ry = -sin * qx + cos * qy;
            let sx = cx + rx * inv_scale - 0.5;
            let sy = cy + ry * inv_scale - 0.5;

            // nearest-neighbor lookups keep masks binary
            let nx = sx.round();
            let ny = sy.round();
            let inside_nearest =
                nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h;
            let sector = if inside_nearest {
                image.mask[(ny as usize, nx as usize)]
            } else {
                0
            };
            if inside_nearest {
                out_mask[(r, c)] = sector;
                out_seg[(r, c)] = mask.pixels()[(ny as usize, nx as usize)];
            }
            if sector == 1 {
                // bilinear with zero border for the grayscale image
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let sample = |yy: f64, xx: f64| -> f64 {
                    if xx < 0.0 || yy < 0.0 || xx as usize >= w || yy as usize >= h {
                        0.0
                    } else {
                        image.pixels[(yy as usize, xx as usize)]
                    }
                };
                let a = sample(y0, x0);
                let b = sample(y0, x0 + 1.0);
                let cc = sample(y0 + 1.0, x0);
                let d = sample(y0 + 1.0, x0 + 1.0);
                let top = a + fx * (b - a);
                let bot = cc + fx * (d - cc);
                out_pixels[(r, c)] = (top + fy * (bot - top)).clamp(0.0, 1.0);
            }
        }
    }
    let img = BModeImage {
        pixels: out_pixels,
        mask: out_mask,
        spacing_mm: image.spacing_mm,
    };
    let seg = SegMask::new(out_seg, mask.spacing_mm())?;
    Ok((img, seg))
}

fn add_image_noise(image: &mut BModeImage, noise_sd: f64, seed: u64) {
    if noise_sd <= 0.0 {
        return;
    }
    let mut rng = stream(seed, salt::AUGMENT, 1);
    for (p, m) in image.pixels.iter_mut().zip(image.mask.iter()) {
        if *m == 1 {
            let z: f64 = rng.sample(StandardNormal);
            *p = (*p + noise_sd * z).clamp(0.0, 1.0);
        }
    }
}

/// One rotation/translation/scale draw applied identically to both, plus
/// Gaussian noise on the image only. Disabled configs return the pair
/// unchanged.
pub fn augment_pair(
    image: &BModeImage,
    mask: &SegMask,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(BModeImage, SegMask)> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok((image.clone(), mask.clone()));
    }
    let params = draw_augment_params(cfg, seed);
    let (mut img, msk, _) = apply_augment(image, mask, &params)?;
    add_image_noise(&mut img, cfg.noise_sd, seed);
    Ok((img, msk))
}

/// Train/val split of any item list.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    /// Set when one side of the split came out empty (e.g. a single item).
    pub degenerate: bool,
}

/// Shuffle by seed, then cut at round(ratio * n): disjoint and exhaustive.
pub fn split_manifest<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<SplitOutcome<T>> {
    if items.is_empty() {
        return Err(Error::invalid("cannot split an empty manifest"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must be in (0,1), got {ratio}")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = stream(seed, salt::SPLIT, 0);
    order.shuffle(&mut rng);
    let n_train = ((ratio * items.len() as f64).round() as usize).min(items.len());
    let train: Vec<T> = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val: Vec<T> = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    let degenerate = train.is_empty() || val.is_empty();
    Ok(SplitOutcome {
        train,
        val,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub source: String,
    pub axis: Axis,
    pub slice_index: usize,
    /// Paths relative to the dataset directory.
    pub image: String,
    pub mask: String,
    pub seed: u64,
    pub augment: Option<AugmentParams>,
    pub split: Split,
}

/// Batch generation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub sources: Vec<Source>,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_out_size")]
    pub out_size: [usize; 2],
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Tissue table path; the built-in abdominal table when absent.
    #[serde(default)]
    pub tissues: Option<PathBuf>,
}

fn default_frames() -> usize {
    5000
}

fn default_out_size() -> [usize; 2] {
    [256, 256]
}

fn default_split_ratio() -> f64 {
    0.8
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::invalid("dataset needs at least one source"));
        }
        if self.frames < 1 {
            return Err(Error::invalid("frames must be >= 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid("split_ratio must be in (0,1)"));
        }
        if self.out_size[0] < 2 || self.out_size[1] < 2 {
            return Err(Error::invalid("out_size must be at least 2x2"));
        }
        self.probe.validate()?;
        self.sim.validate()?;
        self.augment.validate()
    }
}

/// Save a [0,1] grayscale image as 8-bit PNG (value = round(255·x)).
pub fn save_gray_png(path: impl AsRef<Path>, pixels: &Array2<f64>) -> Result<()> {
    let (h, w) = pixels.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (r, row) in pixels.outer_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            img.put_pixel(c as u32, r as u32, image::Luma([(255.0 * v).round() as u8]));
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

/// Read a strictly binary ({0,255}) mask PNG.
pub fn load_mask_png(path: impl AsRef<Path>, spacing_mm: f64) -> Result<SegMask> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .into_luma8();
    let (w, h) = img.dimensions();
    let mut pixels = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        pixels[(y as usize, x as usize)] = match p.0[0] {
            0 => 0,
            255 => 1,
            other => {
                return Err(Error::invalid(format!(
                    "non-binary mask {path:?}: value {other} at ({x},{y})"
                )))
            }
        };
    }
    SegMask::new(pixels, spacing_mm)
}

fn load_sources(cfg: &DatasetConfig) -> Result<Vec<(String, LabelVolume)>> {
    cfg.sources
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Source::Volume(path) => Ok((format!("volume:{}", path.display()), load_label_volume(path)?)),
            Source::Phantom(spec) => Ok((format!("phantom:{i}"), generate_phantom(spec)?)),
        })
        .collect()
}

fn render_entry(
    id: usize,
    seed: u64,
    source_name: &str,
    volume: &LabelVolume,
    slice_index: usize,
    table: &TissueTable,
    cfg: &DatasetConfig,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let slice = volume.extract_slice(Axis::Z, slice_index)?;
    let out_size = (cfg.out_size[0], cfg.out_size[1]);
    let sim = SimConfig {
        rng_seed: derive_seed(seed, salt::RENDER, 0),
        ..cfg.sim
    };
    let image = render(&slice, table, &cfg.probe, &sim, out_size)?;
    let mask = render_label_mask(&slice, labels::BLOOD, &cfg.probe, out_size)?;

    let (image, mask, params) = if cfg.augment.enabled {
        let drawn = draw_augment_params(&cfg.augment, seed);
        let (mut img, msk, px) = apply_augment(&image, &mask, &drawn)?;
        add_image_noise(&mut img, cfg.augment.noise_sd, seed);
        (img, msk, Some(px))
    } else {
        (image, mask, None)
    };

    let image_rel = format!("images/{id:05}.png");
    let mask_rel = format!("masks/{id:05}.png");
    save_gray_png(out_dir.join(&image_rel), &image.pixels)?;
    save_gray_png(out_dir.join(&mask_rel), &mask.pixels().mapv(|v| v as f64))?;
    Ok(ManifestEntry {
        id,
        source: source_name.to_string(),
        axis: Axis::Z,
        slice_index,
        image: image_rel,
        mask: mask_rel,
        seed,
        augment: params,
        split: Split::Train, // assigned after the split below
    })
}

/// Generate `cfg.frames` image/mask pairs under `out_dir` plus a
/// `manifest.jsonl`. Fully deterministic from the config (including
/// `master_seed`) regardless of `workers`.
pub fn generate_dataset(
    cfg: &DatasetConfig,
    out_dir: impl AsRef<Path>,
    workers: Option<usize>,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;
    fs::create_dir_all(out_dir.join("masks")).map_err(|e| Error::io(out_dir, e))?;

    let table = match &cfg.tissues {
        Some(path) => load_tissue_table(path)?,
        None => TissueTable::default_abdominal(),
    };
    let sources = load_sources(cfg)?;
    for (_, vol) in &sources {
        table.covers(&vol.label_set())?;
    }

    // slice sampling is part of the deterministic plan, not the worker run
    let plans: Vec<(usize, u64, usize, usize)> = (0..cfg.frames)
        .map(|id| {
            let seed = derive_seed(cfg.master_seed, salt::ENTRY, id as u64);
            let mut rng = stream(seed, salt::SOURCE_PICK, 0);
            let src = rng.random_range(0..sources.len());
            let slice_index = rng.random_range(0..sources[src].1.dims()[2]);
            (id, seed, src, slice_index)
        })
        .collect();

    let run = |(id, seed, src, slice_index): &(usize, u64, usize, usize)| -> Result<ManifestEntry> {
        let (name, volume) = &sources[*src];
        render_entry(*id, *seed, name, volume, *slice_index, &table, cfg, out_dir).map_err(|e| {
            Error::Entry {
                id: *id,
                source: Box::new(e),
            }
        })
    };
    let mut entries: Vec<ManifestEntry> = match workers {
        Some(1) => plans.iter().map(run).collect::<Result<_>>()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?
            .install(|| plans.par_iter().map(run).collect::<Result<_>>())?,
        None => plans.par_iter().map(run).collect::<Result<_>>()?,
    };

    let ids: Vec<usize> = entries.iter().map(|e| e.id).collect();
    let split = split_manifest(&ids, cfg.split_ratio, cfg.master_seed)?;
    for e in &mut entries {
        e.split = if split.train.contains(&e.id) {
            Split::Train
        } else {
            Split::Val
        };
    }

    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        manifest.push('\n');
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(entries)
}

/// Read back a manifest written by `generate_dataset`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                what: "manifest",
                detail: e.to_string(),
            })
        })
        .collect()
}

fn png_names(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                path,
            );
        }
    }
    Ok(out)
}

/// Pair same-named mask PNGs from two directories and report diameter and
/// Dice statistics.
pub fn evaluate_run(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    spacing_mm: f64,
) -> Result<DiameterReport> {
    let preds = png_names(pred_dir.as_ref())?;
    let gts = png_names(gt_dir.as_ref())?;
    let pred_names: Vec<&String> = preds.keys().collect();
    let gt_names: Vec<&String> = gts.keys().collect();
    if pred_names != gt_names {
        let only_pred: Vec<&&String> = pred_names.iter().filter(|n| !gts.contains_key(**n)).collect();
        let only_gt: Vec<&&String> = gt_names.iter().filter(|n| !preds.contains_key(**n)).collect();
        return Err(Error::mismatch(format!(
            "mask file names differ (pred-only {only_pred:?}, gt-only {only_gt:?})"
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no mask PNGs found"));
    }
    let mut pred_masks = Vec::with_capacity(preds.len());
    let mut gt_masks = Vec::with_capacity(gts.len());
    for name in preds.keys() {
        pred_masks.push(load_mask_png(&preds[name], spacing_mm)?);
        gt_masks.push(load_mask_png(&gts[name], spacing_mm)?);
    }
    diameter_mae(&pred_masks, &gt_masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;
    use crate::probe::sector_mask;
    use approx::assert_relative_eq;

    fn small_probe() -> ProbeConfig {
        ProbeConfig {
            scan_lines: 48,
            axial_resolution: 160,
            ..ProbeConfig::default()
        }
    }

    fn tiny_config(dir_frames: usize) -> DatasetConfig {
        DatasetConfig {
            sources: vec![Source::Phantom(PhantomSpec::abdominal_demo(22.0, 5))],
            frames: dir_frames,
            out_size: [96, 96],
            probe: small_probe(),
            sim: SimConfig::default(),
            augment: AugmentConfig {
                enabled: false,
                ..AugmentConfig::default()
            },
            split_ratio: 0.8,
            master_seed: 77,
            tissues: None,
        }
    }

    fn demo_pair() -> (BModeImage, SegMask) {
        let vol = generate_phantom(&PhantomSpec::abdominal_demo(22.0, 5)).unwrap();
        let slice = vol.extract_slice(Axis::Z, 4).unwrap();
        let table = TissueTable::default_abdominal();
        let probe = small_probe();
        let img = render(&slice, &table, &probe, &SimConfig::default(), (96, 96)).unwrap();
        let mask = render_label_mask(&slice, labels::BLOOD, &probe, (96, 96)).unwrap();
        (img, mask)
    }

    #[test]
    fn augment_disabled_returns_inputs_unchanged() {
        let (img, mask) = demo_pair();
        let cfg = AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        };
        let (i2, m2) = augment_pair(&img, &mask, &cfg, 9).unwrap();
        assert_eq!(img, i2);
        assert_eq!(mask, m2);
    }

    #[test]
    fn four_quarter_turns_recover_the_mask() {
        let (img, mask) = demo_pair();
        let quarter = AugmentParams {
            rotation_deg: 90.0,
            translate_px: [0.0, 0.0],
            scale: 1.0,
        };
        let mut cur = (img.clone(), mask.clone());
        for _ in 0..4 {
            cur = apply_augment_px(&cur.0, &cur.1, &quarter).unwrap();
        }
        assert_eq!(dice(&cur.1, &mask).unwrap(), 1.0);
        // the sector mask also returns home
        assert_eq!(cur.0.mask, img.mask);
    }

    #[test]
    fn identity_transform_without_noise_is_lossless() {
        let (img, mask) = demo_pair();
        let (i2, m2) = apply_augment_px(&img, &mask, &AugmentParams::IDENTITY).unwrap();
        let max_dev = img
            .pixels
            .iter()
            .zip(i2.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-12);
        assert_eq!(mask.pixels(), m2.pixels());
    }

    #[test]
    fn augmented_masks_stay_binary_and_images_stay_masked() {
        let (img, mask) = demo_pair();
        let cfg = AugmentConfig::default();
        for seed in 0..8u64 {
            let (i2, m2) = augment_pair(&img, &mask, &cfg, seed).unwrap();
            assert!(m2.pixels().iter().all(|&v| v <= 1));
            assert!(i2.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (p, m) in i2.pixels.iter().zip(i2.mask.iter()) {
                if *m == 0 {
                    assert_eq!(*p, 0.0);
                }
            }
            // per-seed determinism
            let (i3, m3) = augment_pair(&img, &mask, &cfg, seed).unwrap();
            assert_eq!(i2, i3);
            assert_eq!(m2, m3);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..500).collect();
        let s = split_manifest(&items, 0.8, 3).unwrap();
        assert_eq!(s.train.len(), 400);
        assert_eq!(s.val.len(), 100);
        assert!(!s.degenerate);
        // disjoint and exhaustive
        let mut all: Vec<usize> = s.train.iter().chain(s.val.iter()).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        // same seed, same partition
        let s2 = split_manifest(&items, 0.8, 3).unwrap();
        assert_eq!(s.train, s2.train);
        assert_eq!(s.val, s2.val);
    }

    #[test]
    fn split_single_item_is_degenerate() {
        let s = split_manifest(&[42usize], 0.8, 1).unwrap();
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.val.len(), 0);
        assert!(s.degenerate);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let empty: Vec<usize> = vec![];
        assert!(split_manifest(&empty, 0.8, 1).is_err());
        assert!(split_manifest(&[1, 2], 1.0, 1).is_err());
        assert!(split_manifest(&[1, 2], 0.0, 1).is_err());
    }

    #[test]
    fn tiny_dataset_generates_aligned_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(4);
        let entries = generate_dataset(&cfg, dir.path(), Some(2)).unwrap();
        assert_eq!(entries.len(), 4);
        let table = TissueTable::default_abdominal();
        let _ = table;
        let sector = sector_mask(&cfg.probe, (96, 96));
        let vol = generate_phantom(&PhantomSpec::abdominal_demo(22.0, 5)).unwrap();
        for e in &entries {
            let img_path = dir.path().join(&e.image);
            let mask_path = dir.path().join(&e.mask);
            assert!(img_path.exists());
            assert!(mask_path.exists());
            let mask = load_mask_png(&mask_path, 1.0).unwrap();
            // containment in the sector (entries are unaugmented)
            for (m, s) in mask.pixels().iter().zip(sector.iter()) {
                assert!(*m == 0 || *s == 1);
            }
            // pixel-exact alignment with a re-derived ground-truth mask
            let slice = vol.extract_slice(Axis::Z, e.slice_index).unwrap();
            let expect = render_label_mask(&slice, labels::BLOOD, &cfg.probe, (96, 96)).unwrap();
            let mask = load_mask_png(&mask_path, expect.spacing_mm()).unwrap();
            assert_eq!(dice(&mask, &expect).unwrap(), 1.0);
        }
        // manifest round-trips
        let manifest = load_manifest(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(manifest, entries);
        // seeds are unique
        let mut seeds: Vec<u64> = entries.iter().map(|e| e.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), entries.len());
    }

    #[test]
    fn evaluate_run_on_copies_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred");
        let gt = dir.path().join("gt");
        fs::create_dir_all(&pred).unwrap();
        fs::create_dir_all(&gt).unwrap();
        for i in 0..3 {
            let mut arr = Array2::<f64>::zeros((32, 32));
            for r in 8..(20 + i) {
                for c in 10..20 {
                    arr[(r, c)] = 1.0;
                }
            }
            save_gray_png(pred.join(format!("{i}.png")), &arr).unwrap();
            save_gray_png(gt.join(format!("{i}.png")), &arr).unwrap();
        }
        let report = evaluate_run(&pred, &gt, 0.5).unwrap();
        assert_eq!(report.mae_mm, 0.0);
        assert_eq!(report.dsc_mean, 1.0);
        assert!(report.clinically_acceptable());
    }

    #[test]
    fn evaluate_run_detects_dilation_offset() {
        // disks dilated by a radius-2 square element grow 2 px on each side:
        // +4 px vertical extent = +2 mm at 0.5 mm spacing
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred");
        let gt = dir.path().join("gt");
        fs::create_dir_all(&pred).unwrap();
        fs::create_dir_all(&gt).unwrap();
        let disk = |r2: f64| {
            Array2::<f64>::from_shape_fn((48, 48), |(y, x)| {
                let dx = x as f64 + 0.5 - 24.0;
                let dy = y as f64 + 0.5 - 24.0;
                if dx * dx + dy * dy <= r2 {
                    1.0
                } else {
                    0.0
                }
            })
        };
        let base = disk(100.0);
        let dilated = {
            let mut out = Array2::<f64>::zeros((48, 48));
            for y in 0..48isize {
                for x in 0..48isize {
                    'search: for dy in -2..=2isize {
                        for dx in -2..=2isize {
                            let (yy, xx) = (y + dy, x + dx);
                            if yy >= 0
                                && xx >= 0
                                && yy < 48
                                && xx < 48
                                && base[(yy as usize, xx as usize)] == 1.0
                            {
                                out[(y as usize, x as usize)] = 1.0;
                                break 'search;
                            }
                        }
                    }
                }
            }
            out
        };
        for i in 0..4 {
            save_gray_png(pred.join(format!("f{i}.png")), &dilated).unwrap();
            save_gray_png(gt.join(format!("f{i}.png")), &base).unwrap();
        }
        let report = evaluate_run(&pred, &gt, 0.5).unwrap();
        assert_relative_eq!(report.mae_mm, 2.0, epsilon = 1e-9);
        assert_eq!(report.sd_mm, 0.0);
        assert!(report.dsc_mean < 1.0);
    }

    #[test]
    fn evaluate_run_rejects_unmatched_and_non_binary() {
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred");
        let gt = dir.path().join("gt");
        fs::create_dir_all(&pred).unwrap();
        fs::create_dir_all(&gt).unwrap();
        let mut arr = Array2::<f64>::zeros((8, 8));
        arr[(4, 4)] = 1.0;
        save_gray_png(pred.join("a.png"), &arr).unwrap();
        save_gray_png(gt.join("b.png"), &arr).unwrap();
        assert!(matches!(evaluate_run(&pred, &gt, 1.0), Err(Error::Mismatch(_))));

        save_gray_png(gt.join("a.png"), &arr).unwrap();
        fs::remove_file(gt.join("b.png")).unwrap();
        let mut gray = Array2::<f64>::zeros((8, 8));
        gray[(4, 4)] = 0.5; // encodes as 128
        save_gray_png(pred.join("a.png"), &gray).unwrap();
        assert!(matches!(evaluate_run(&pred, &gt, 1.0), Err(Error::Invalid(_))));
    }

    #[test]
    fn dataset_config_json_round_trip() {
        let cfg = tiny_config(10);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: DatasetConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        // sources accept both forms
        let parsed: DatasetConfig = serde_json::from_str(
            r#"{"sources":[{"volume":"v.lmap.json"}],"frames":3}"#,
        )
        .unwrap();
        assert_eq!(parsed.frames, 3);
        assert_eq!(parsed.out_size, [256, 256]);
        assert!(matches!(parsed.sources[0], Source::Volume(_)));
    }
}
