//! Procedural abdominal label phantoms.
//!
//! The phantom stacks tissue layers along the depth (y) axis — skin, fat,
//! muscle, then a liver-filled viscera zone — and embeds a parametric aorta
//! (lumen cylinder plus a 1.5 mm wall shell along z), an optional vertebral
//! body, and two lung ellipses in the posterior flanks. Everything is a pure
//! function of the spec, including the seeded boundary jitter, so phantoms
//! are bit-reproducible.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SegMask;
use crate::rng::{salt, stream};
use crate::volume::{Axis, LabelVolume};

/// Fixed label ids shared by tissue tables and tests.
pub mod labels {
    pub const BACKGROUND: u8 = 0;
    pub const SKIN: u8 = 1;
    pub const FAT: u8 = 2;
    pub const MUSCLE: u8 = 3;
    pub const BONE: u8 = 4;
    pub const LUNG: u8 = 5;
    pub const LIVER: u8 = 6;
    /// Aorta lumen; the id extracted for ground-truth masks.
    pub const BLOOD: u8 = 7;
    pub const VESSEL_WALL: u8 = 8;
}

/// Thickness of the vessel wall shell around the aorta lumen, mm.
pub const VESSEL_WALL_MM: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerThicknesses {
    pub skin: f64,
    pub fat: f64,
    pub muscle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AortaSpec {
    /// Lumen axis position (x, y) in mm; the cylinder runs along z.
    pub center: [f64; 2],
    /// Lumen diameter, mm.
    pub diameter: f64,
    #[serde(default = "axis_z")]
    pub axis: Axis,
}

fn axis_z() -> Axis {
    Axis::Z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertebraSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// mm/voxel.
    pub spacing: [f64; 3],
    pub layer_thicknesses: LayerThicknesses,
    pub aorta: AortaSpec,
    pub vertebra: VertebraSpec,
    #[serde(default)]
    pub rng_seed: u64,
    /// Boundary jitter amplitude, mm. Layer boundaries undulate by up to
    /// this much; the aorta centerline wanders laterally by up to this much
    /// (its radius and depth stay exact so the AP diameter is preserved).
    #[serde(default)]
    pub perturbation: f64,
}

impl PhantomSpec {
    /// Physical extent (width, depth, length) in mm.
    pub fn extent_mm(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("phantom dims must be >= 1"));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("phantom spacing must be > 0"));
        }
        let l = &self.layer_thicknesses;
        if l.skin < 0.0 || l.fat < 0.0 || l.muscle < 0.0 {
            return Err(Error::invalid("layer thicknesses must be >= 0"));
        }
        let [w, depth, _] = self.extent_mm();
        if l.skin + l.fat + l.muscle >= depth {
            return Err(Error::invalid(format!(
                "layer stack {} mm must be thinner than the volume depth {} mm",
                l.skin + l.fat + l.muscle,
                depth
            )));
        }
        if !(self.aorta.diameter > 0.0) {
            return Err(Error::invalid("aorta diameter must be > 0"));
        }
        if self.aorta.axis != Axis::Z {
            return Err(Error::invalid("only a z-axis aorta is supported"));
        }
        if self.perturbation < 0.0 {
            return Err(Error::invalid("perturbation must be >= 0"));
        }
        // lumen + wall (+ lateral wander) must stay inside the volume
        let r_out = self.aorta.diameter / 2.0 + VESSEL_WALL_MM;
        let [cx, cy] = self.aorta.center;
        if cx - r_out - self.perturbation < 0.0
            || cx + r_out + self.perturbation > w
            || cy - r_out < 0.0
            || cy + r_out > depth
        {
            return Err(Error::invalid(format!(
                "aorta (center {:?}, outer radius {r_out} mm) does not fit inside {w} x {depth} mm",
                self.aorta.center
            )));
        }
        if self.vertebra.present && !(self.vertebra.radius > 0.0) {
            return Err(Error::invalid("vertebra radius must be > 0"));
        }
        Ok(())
    }

    /// A scanning-scale phantom covering the default probe's field of view:
    /// 128 x 110 x 16 mm at 0.5 mm in-plane spacing.
    pub fn abdominal_demo(aorta_diameter_mm: f64, rng_seed: u64) -> Self {
        PhantomSpec {
            dims: [256, 220, 16],
            spacing: [0.5, 0.5, 1.0],
            layer_thicknesses: LayerThicknesses {
                skin: 2.0,
                fat: 8.0,
                muscle: 10.0,
            },
            aorta: AortaSpec {
                center: [64.0, 45.0],
                diameter: aorta_diameter_mm,
                axis: Axis::Z,
            },
            vertebra: VertebraSpec {
                center: [64.0, 78.0],
                radius: 13.0,
                present: true,
            },
            rng_seed,
            perturbation: 0.0,
        }
    }
}

/// A smooth, zero-centered field of a few random harmonics with |value| <= 1.
struct HarmonicField {
    comps: Vec<(f64, f64, f64, f64)>, // (amplitude, cycles_u, cycles_v, phase)
    norm: f64,
}

impl HarmonicField {
    fn new(rng: &mut ChaCha8Rng, with_u: bool) -> Self {
        let comps: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let amp = rng.random_range(0.5..1.0);
                let cu = if with_u { rng.random_range(1..=3) as f64 } else { 0.0 };
                let cv = rng.random_range(0..=1) as f64;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, cu, cv, phase)
            })
            .collect();
        let norm = comps.iter().map(|c| c.0).sum::<f64>();
        Self { comps, norm }
    }

    /// u, v in [0, 1].
    fn eval(&self, u: f64, v: f64) -> f64 {
        self.comps
            .iter()
            .map(|&(a, cu, cv, p)| a * (std::f64::consts::TAU * (cu * u + cv * v) + p).sin())
            .sum::<f64>()
            / self.norm
    }
}

/// Generate the label volume for `spec`. Deterministic for a fixed spec.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<LabelVolume> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let [sx, sy, sz] = spec.spacing;
    let [w_mm, h_mm, d_mm] = spec.extent_mm();
    let l = spec.layer_thicknesses;

    let mut rng = stream(spec.rng_seed, salt::JITTER, 0);
    let boundary_fields: Vec<HarmonicField> =
        (0..3).map(|_| HarmonicField::new(&mut rng, true)).collect();
    let aorta_field = HarmonicField::new(&mut rng, false);

    // precompute jittered layer boundaries per (z, x) and the lateral aorta
    // centerline per z
    let base = [l.skin, l.skin + l.fat, l.skin + l.fat + l.muscle];
    let mut bounds = vec![Array2::<f64>::zeros((nz, nx)); 3];
    for z in 0..nz {
        let v = ((z as f64 + 0.5) * sz) / d_mm;
        for x in 0..nx {
            let u = ((x as f64 + 0.5) * sx) / w_mm;
            let mut prev = 0.0f64;
            for b in 0..3 {
                let jittered = base[b] + spec.perturbation * boundary_fields[b].eval(u, v);
                let clamped = jittered.max(prev).max(0.0);
                bounds[b][(z, x)] = clamped;
                prev = clamped;
            }
        }
    }
    let aorta_cx: Vec<f64> = (0..nz)
        .map(|z| {
            let v = ((z as f64 + 0.5) * sz) / d_mm;
            spec.aorta.center[0] + spec.perturbation * aorta_field.eval(0.0, v)
        })
        .collect();

    // lung ellipses in the posterior flanks of the viscera zone
    let viscera_top = base[2];
    let lung_cy = viscera_top + 0.35 * (h_mm - viscera_top);
    let lung_ax = 0.10 * w_mm;
    let lung_ay = 0.16 * (h_mm - viscera_top);
    let lung_cx = [0.22 * w_mm, 0.78 * w_mm];

    let r_in = spec.aorta.diameter / 2.0;
    let r_out = r_in + VESSEL_WALL_MM;
    let (r_in2, r_out2) = (r_in * r_in, r_out * r_out);
    let cy = spec.aorta.center[1];
    let vert = spec.vertebra;
    let vr2 = vert.radius * vert.radius;

    let mut labels = vec![0u8; nx * ny * nz];
    let mut idx = 0usize;
    for z in 0..nz {
        let cx = aorta_cx[z];
        for y in 0..ny {
            let y_mm = (y as f64 + 0.5) * sy;
            for x in 0..nx {
                let x_mm = (x as f64 + 0.5) * sx;
                let mut label = if y_mm < bounds[0][(z, x)] {
                    labels::SKIN
                } else if y_mm < bounds[1][(z, x)] {
                    labels::FAT
                } else if y_mm < bounds[2][(z, x)] {
                    labels::MUSCLE
                } else {
                    labels::LIVER
                };
                if label == labels::LIVER {
                    for lcx in lung_cx {
                        let ex = (x_mm - lcx) / lung_ax;
                        let ey = (y_mm - lung_cy) / lung_ay;
                        if ex * ex + ey * ey <= 1.0 {
                            label = labels::LUNG;
                        }
                    }
                }
                if vert.present {
                    let dx = x_mm - vert.center[0];
                    let dy = y_mm - vert.center[1];
                    if dx * dx + dy * dy <= vr2 {
                        label = labels::BONE;
                    }
                }
                let dx = x_mm - cx;
                let dy = y_mm - cy;
                let d2 = dx * dx + dy * dy;
                if d2 <= r_out2 {
                    label = if d2 <= r_in2 {
                        labels::BLOOD
                    } else {
                        labels::VESSEL_WALL
                    };
                }
                labels[idx] = label;
                idx += 1;
            }
        }
    }
    LabelVolume::new(spec.dims, spec.spacing, labels)
}

/// Binary mask of the aorta lumen in one slice. A slice without any lumen
/// yields an all-zero mask. The mask's isotropic spacing is the slice's
/// vertical (depth-direction) spacing.
pub fn aorta_mask_slice(volume: &LabelVolume, axis: Axis, index: usize) -> Result<SegMask> {
    let slice = volume.extract_slice(axis, index)?;
    let pixels = slice.labels().mapv(|l| (l == labels::BLOOD) as u8);
    SegMask::new(pixels, slice.spacing_mm()[1])
}
