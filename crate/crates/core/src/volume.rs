//! Labeled volumes, tissue property tables, slicing, and pseudo-CT synthesis.
//!
//! Volumes are stored on disk as a two-file pair: a `<name>.lmap.json` header
//! (dims, spacing, payload path, dtype) plus a raw `u8` payload, row-major
//! with x fastest. Tissue tables are JSON arrays mapping a label id to the
//! acoustic and appearance properties of one tissue.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pseudo-HU rescale window: the full 12-bit CT range.
pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3071.0;

/// Volume axis selector for slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

/// A 3-D tissue label grid with physical spacing. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("all dims must be >= 1, got {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!(
                "all spacings must be > 0, got {spacing_mm:?}"
            )));
        }
        let expect = dims[0] * dims[1] * dims[2];
        if labels.len() != expect {
            return Err(Error::mismatch(format!(
                "payload length {} != nx*ny*nz = {}",
                labels.len(),
                expect
            )));
        }
        Ok(Self {
            dims,
            spacing_mm,
            labels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Row-major, x fastest.
    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn voxel(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.linear_index(x, y, z)]
    }

    /// Distinct label values present in the volume.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Axis-aligned 2-D cut. The two remaining axes, in ascending order,
    /// become (width, height) of the slice.
    pub fn extract_slice(&self, axis: Axis, index: usize) -> Result<LabelSlice> {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing_mm;
        let limit = self.dims[axis.index()];
        if index >= limit {
            return Err(Error::OutOfRange {
                what: "slice",
                index,
                limit,
            });
        }
        let (w, h, spacing) = match axis {
            Axis::X => (ny, nz, [sy, sz]),
            Axis::Y => (nx, nz, [sx, sz]),
            Axis::Z => (nx, ny, [sx, sy]),
        };
        let mut labels = Array2::<u8>::zeros((h, w));
        for j in 0..h {
            for i in 0..w {
                let v = match axis {
                    Axis::X => self.voxel(index, i, j),
                    Axis::Y => self.voxel(i, index, j),
                    Axis::Z => self.voxel(i, j, index),
                };
                labels[(j, i)] = v;
            }
        }
        LabelSlice::new(spacing, labels)
    }
}

/// A 2-D cut of a label volume, fed to the 2-D renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSlice {
    spacing_mm: [f64; 2],
    /// Shape (height, width), x fastest within a row.
    labels: Array2<u8>,
}

impl LabelSlice {
    pub fn new(spacing_mm: [f64; 2], labels: Array2<u8>) -> Result<Self> {
        let (h, w) = labels.dim();
        if w == 0 || h == 0 {
            return Err(Error::invalid("slice dims must be >= 1"));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!(
                "slice spacing must be > 0, got {spacing_mm:?}"
            )));
        }
        Ok(Self { spacing_mm, labels })
    }

    pub fn width(&self) -> usize {
        self.labels.dim().1
    }

    pub fn height(&self) -> usize {
        self.labels.dim().0
    }

    pub fn spacing_mm(&self) -> [f64; 2] {
        self.spacing_mm
    }

    /// Physical extent (width, height) in mm.
    pub fn extent_mm(&self) -> [f64; 2] {
        [
            self.width() as f64 * self.spacing_mm[0],
            self.height() as f64 * self.spacing_mm[1],
        ]
    }

    #[inline]
    pub fn label_at(&self, ix: usize, iy: usize) -> u8 {
        self.labels[(iy, ix)]
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in self.labels.iter() {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}

/// Acoustic and appearance properties of one tissue class.
///
/// `c` m/s, `z` MRayl, `alpha` dB·cm⁻¹·MHz⁻¹; the scattering triple
/// (`mu0`, `mu1`, `sigma0`) drives the speckled baseline only;
/// `echogenicity` is the intermediate-representation brightness in [0,1];
/// `pseudo_hu` is the CT-like intensity used for the edge baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticProps {
    pub c: f64,
    pub z: f64,
    pub alpha: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub echogenicity: f64,
    pub pseudo_hu: f64,
}

impl AcousticProps {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, what: &str, v: f64) -> Result<()> {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} out of range: {v}")))
            }
        }
        check(self.c > 0.0, "c", self.c)?;
        check(self.z > 0.0, "z", self.z)?;
        check(self.alpha >= 0.0, "alpha", self.alpha)?;
        check((0.0..=1.0).contains(&self.mu0), "mu0", self.mu0)?;
        check((0.0..=1.0).contains(&self.mu1), "mu1", self.mu1)?;
        check(self.sigma0 >= 0.0, "sigma0", self.sigma0)?;
        check(
            (0.0..=1.0).contains(&self.echogenicity),
            "echogenicity",
            self.echogenicity,
        )?;
        check(
            (HU_MIN..=HU_MAX).contains(&self.pseudo_hu),
            "pseudo_hu",
            self.pseudo_hu,
        )
    }
}

/// One row of the tissue table file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TissueRow {
    label: u8,
    name: String,
    c: f64,
    z: f64,
    alpha: f64,
    mu0: f64,
    mu1: f64,
    sigma0: f64,
    echogenicity: f64,
    pseudo_hu: f64,
}

/// Per-label acoustic and appearance properties.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueTable {
    pub name: String,
    entries: BTreeMap<u8, (String, AcousticProps)>,
}

impl TissueTable {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, label: u8, tissue_name: impl Into<String>, props: AcousticProps) -> Result<()> {
        props.validate()?;
        if self.entries.contains_key(&label) {
            return Err(Error::invalid(format!("duplicate label id {label}")));
        }
        self.entries.insert(label, (tissue_name.into(), props));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, label: u8) -> Option<&AcousticProps> {
        self.entries.get(&label).map(|(_, p)| p)
    }

    pub fn tissue_name(&self, label: u8) -> Option<&str> {
        self.entries.get(&label).map(|(n, _)| n.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.keys().copied()
    }

    /// Every label in `present` must have an entry.
    pub fn covers(&self, present: &[u8]) -> Result<()> {
        for &l in present {
            if !self.entries.contains_key(&l) {
                return Err(Error::UnknownLabel(l));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<TissueRow> = self
            .entries
            .iter()
            .map(|(&label, (name, p))| TissueRow {
                label,
                name: name.clone(),
                c: p.c,
                z: p.z,
                alpha: p.alpha,
                mu0: p.mu0,
                mu1: p.mu1,
                sigma0: p.sigma0,
                echogenicity: p.echogenicity,
                pseudo_hu: p.pseudo_hu,
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("tissue rows serialize")
    }

    /// Built-in abdominal table covering every label the phantom generator
    /// emits. Acoustic values follow standard tissue-property compendia.
    pub fn default_abdominal() -> Self {
        let mut t = TissueTable::new("abdominal-default");
        let rows: [(u8, &str, AcousticProps); 9] = [
            // label, name, c m/s, Z MRayl, alpha dB/cm/MHz, mu0, mu1, sigma0, L, HU
            (0, "gel", props(1480.0, 1.48, 0.002, 0.0, 0.0, 0.0, 0.0, 0.0)),
            (1, "skin", props(1610.0, 1.68, 0.60, 0.60, 0.55, 0.18, 0.45, 40.0)),
            (2, "fat", props(1450.0, 1.38, 0.48, 0.70, 0.50, 0.25, 0.60, -100.0)),
            (3, "muscle", props(1580.0, 1.70, 1.09, 0.55, 0.45, 0.20, 0.30, 50.0)),
            (4, "bone", props(3476.0, 7.80, 6.90, 0.30, 0.80, 0.30, 0.95, 1200.0)),
            (5, "lung", props(650.0, 0.26, 8.00, 0.90, 0.75, 0.35, 0.15, -780.0)),
            (6, "liver", props(1595.0, 1.65, 0.50, 0.80, 0.50, 0.15, 0.45, 55.0)),
            (7, "blood", props(1570.0, 1.61, 0.20, 0.02, 0.10, 0.05, 0.002, 45.0)),
            (8, "vessel wall", props(1580.0, 1.72, 0.60, 0.60, 0.60, 0.20, 0.80, 65.0)),
        ];
        for (label, name, p) in rows {
            t.insert(label, name, p).expect("default table is valid");
        }
        t
    }
}

const fn props(
    c: f64,
    z: f64,
    alpha: f64,
    mu0: f64,
    mu1: f64,
    sigma0: f64,
    echogenicity: f64,
    pseudo_hu: f64,
) -> AcousticProps {
    AcousticProps {
        c,
        z,
        alpha,
        mu0,
        mu1,
        sigma0,
        echogenicity,
        pseudo_hu,
    }
}

/// Load a tissue table from a JSON array of rows.
pub fn load_tissue_table(path: impl AsRef<Path>) -> Result<TissueTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tissue_table(&text, path.file_stem().and_then(|s| s.to_str()).unwrap_or("tissues"))
}

pub fn parse_tissue_table(json: &str, name: &str) -> Result<TissueTable> {
    let rows: Vec<TissueRow> = serde_json::from_str(json).map_err(|e| Error::Parse {
        what: "tissue table",
        detail: e.to_string(),
    })?;
    if rows.is_empty() {
        return Err(Error::invalid("tissue table must have at least one entry"));
    }
    let mut table = TissueTable::new(name);
    for row in rows {
        let p = AcousticProps {
            c: row.c,
            z: row.z,
            alpha: row.alpha,
            mu0: row.mu0,
            mu1: row.mu1,
            sigma0: row.sigma0,
            echogenicity: row.echogenicity,
            pseudo_hu: row.pseudo_hu,
        };
        table.insert(row.label, row.name, p)?;
    }
    Ok(table)
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    payload: String,
    dtype: String,
}

/// Load a volume from its `.lmap.json` header (payload path is relative to
/// the header's directory).
pub fn load_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: "volume header",
        detail: e.to_string(),
    })?;
    if header.dtype != "u8" {
        return Err(Error::Parse {
            what: "volume header",
            detail: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let payload_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let payload = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    LabelVolume::new(header.dims, header.spacing_mm, payload)
}

/// Save a volume as header + raw payload. The payload file sits next to the
/// header, named after it with the `.json` suffix replaced by `.raw`.
pub fn save_label_volume(volume: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("volume path {path:?} has no file name")))?;
    let payload_name = match file_name.strip_suffix(".json") {
        Some(stem) => format!("{stem}.raw"),
        None => format!("{file_name}.raw"),
    };
    let header = VolumeHeader {
        dims: volume.dims,
        spacing_mm: volume.spacing_mm,
        payload: payload_name.clone(),
        dtype: "u8".to_string(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let payload_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&payload_name);
    fs::write(&payload_path, &volume.labels).map_err(|e| Error::io(&payload_path, e))
}

/// A real-valued 2-D image with physical spacing (pseudo-CT slices).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    /// Shape (height, width), values in [0,1].
    pub pixels: Array2<f64>,
    pub spacing_mm: [f64; 2],
}

/// Map each pixel's tissue to its pseudo-HU, rescaled linearly to [0,1]
/// over the full CT window.
pub fn synth_ct_slice(slice: &LabelSlice, table: &TissueTable) -> Result<IntensityImage> {
    table.covers(&slice.label_set())?;
    let mut lut = [0.0f64; 256];
    for l in table.labels() {
        let hu = table.get(l).expect("label present").pseudo_hu;
        lut[l as usize] = (hu - HU_MIN) / (HU_MAX - HU_MIN);
    }
    let pixels = slice.labels.mapv(|l| lut[l as usize]);
    Ok(IntensityImage {
        pixels,
        spacing_mm: slice.spacing_mm,
    })
}
