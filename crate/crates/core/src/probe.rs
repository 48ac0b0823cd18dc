//! Convex-probe fan geometry and fan-to-Cartesian scan conversion.
//!
//! Frame convention used throughout the crate: the fan apex (center of
//! curvature of the probe face) sits at the origin, x is lateral (right
//! positive) and y is depth (down positive). Scanline k leaves the apex at
//! angle `probe_angle * (k/(N-1) - 1/2)` from vertical and originates on the
//! face arc of radius `r0 = probe_width / probe_angle_rad` ("probe width" is
//! the arc length of the convex face). The rendered Cartesian field of view
//! is laterally centered on x = 0; its top edge is the highest point of the
//! face arc, `y_top = r0 * cos(angle/2)`, and its height is
//! `image_depth + r0 * (1 - cos(angle/2))`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scan parameters of the convex probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Arc length of the convex face, mm.
    pub probe_width: f64,
    /// Full fan opening angle, degrees.
    pub probe_angle: f64,
    /// Imaging depth along each scanline, mm.
    pub image_depth: f64,
    /// Transmit focus depth, mm (also the reference depth for the
    /// elevational thin-slab footprint offset).
    pub focus_depth: f64,
    pub scan_lines: usize,
    /// Samples per rendered scanline.
    pub axial_resolution: usize,
    pub center_frequency_mhz: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probe_width: 59.0,
            probe_angle: 40.0,
            image_depth: 100.0,
            focus_depth: 50.0,
            scan_lines: 196,
            axial_resolution: 1024,
            center_frequency_mhz: 3.5,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("probe_width", self.probe_width),
            ("image_depth", self.image_depth),
            ("focus_depth", self.focus_depth),
            ("center_frequency_mhz", self.center_frequency_mhz),
        ];
        for (what, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{what} must be > 0, got {v}")));
            }
        }
        if !(self.probe_angle > 0.0 && self.probe_angle < 180.0) {
            return Err(Error::invalid(format!(
                "probe_angle must be in (0, 180), got {}",
                self.probe_angle
            )));
        }
        if self.scan_lines < 2 {
            return Err(Error::invalid("scan_lines must be >= 2"));
        }
        if self.axial_resolution < 1 {
            return Err(Error::invalid("axial_resolution must be >= 1"));
        }
        Ok(())
    }

    pub fn angle_rad(&self) -> f64 {
        self.probe_angle.to_radians()
    }

    /// Radius of the convex face arc, mm.
    pub fn face_radius_mm(&self) -> f64 {
        self.probe_width / self.angle_rad()
    }

    /// Angle of scanline `k` from vertical, radians. Exactly -angle/2 at
    /// k = 0 and +angle/2 at k = N-1.
    pub fn scanline_angle(&self, k: usize) -> f64 {
        let n = self.scan_lines;
        self.angle_rad() * (k as f64 / (n - 1) as f64 - 0.5)
    }

    /// Depth of the top edge of the field of view below the apex, mm.
    pub fn fov_top_mm(&self) -> f64 {
        self.face_radius_mm() * (self.angle_rad() / 2.0).cos()
    }

    /// Vertical drop of the convex face arc (center below edges), mm.
    /// Written as 2 r0 sin^2(angle/4) so it stays accurate for tiny angles.
    pub fn arc_drop_mm(&self) -> f64 {
        let s = (self.angle_rad() / 4.0).sin();
        2.0 * self.face_radius_mm() * s * s
    }

    /// Physical height of the rendered field of view, mm.
    pub fn fov_height_mm(&self) -> f64 {
        self.image_depth + self.arc_drop_mm()
    }
}

/// A straight acoustic ray. Fan rays lie in the imaging plane (z = 0);
/// elevational rays carry an out-of-plane direction component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    /// mm, probe frame; z = 0 for in-plane origins.
    pub origin: [f64; 3],
    /// Unit vector.
    pub direction: [f64; 3],
    pub max_length_mm: f64,
}

impl Ray {
    pub fn new(origin: [f64; 3], direction: [f64; 3], max_length_mm: f64) -> Result<Self> {
        let n = (direction[0] * direction[0]
            + direction[1] * direction[1]
            + direction[2] * direction[2])
            .sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("ray direction not unit length: |d| = {n}")));
        }
        if !(max_length_mm > 0.0) {
            return Err(Error::invalid("ray max_length must be > 0"));
        }
        Ok(Self {
            origin,
            direction,
            max_length_mm,
        })
    }
}

/// The in-plane scanline fan: one ray per scanline, uniformly spaced in
/// angle, originating on the convex face arc.
pub fn scanline_fan(probe: &ProbeConfig) -> Result<Vec<Ray>> {
    probe.validate()?;
    let r0 = probe.face_radius_mm();
    (0..probe.scan_lines)
        .map(|k| {
            let phi = probe.scanline_angle(k);
            let d = [phi.sin(), phi.cos(), 0.0];
            Ray::new([r0 * d[0], r0 * d[1], 0.0], d, probe.image_depth)
        })
        .collect()
}

/// Tilt `ray` out of plane into `count` rays spanning +-spread/2 uniformly.
/// `count == 1` returns the input unchanged.
///
/// Contract: count >= 1, spread_deg >= 0.
pub fn elevational_fan(ray: &Ray, count: usize, spread_deg: f64) -> Vec<Ray> {
    assert!(count >= 1, "elevational ray count must be >= 1");
    assert!(spread_deg >= 0.0, "elevational spread must be >= 0");
    if count == 1 {
        return vec![*ray];
    }
    let spread = spread_deg.to_radians();
    (0..count)
        .map(|k| {
            let psi = spread * (k as f64 / (count - 1) as f64 - 0.5);
            // rotate the direction about the in-plane normal: the in-plane
            // part scales by cos(psi) and the out-of-plane part is sin(psi)
            let (s, c) = psi.sin_cos();
            let d = ray.direction;
            Ray {
                origin: ray.origin,
                direction: [d[0] * c, d[1] * c, s],
                max_length_mm: ray.max_length_mm,
            }
        })
        .collect()
}

/// Pre-scan-conversion buffer: scan_lines x axial_resolution intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct FanImage {
    /// Shape (scan_lines, axial_resolution).
    pub data: Array2<f64>,
    pub probe: ProbeConfig,
}

impl FanImage {
    pub fn new(data: Array2<f64>, probe: ProbeConfig) -> Result<Self> {
        probe.validate()?;
        let (lines, samples) = data.dim();
        if lines != probe.scan_lines || samples != probe.axial_resolution {
            return Err(Error::mismatch(format!(
                "fan data {lines}x{samples} does not match probe {}x{}",
                probe.scan_lines, probe.axial_resolution
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("fan intensities must be finite and >= 0"));
        }
        Ok(Self { data, probe })
    }
}

/// Scan-converted grayscale image with its convex sector mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    /// Shape (height, width), values in [0,1]; exactly 0 outside the mask.
    pub pixels: Array2<f64>,
    /// Shape (height, width), 1 inside the convex sector.
    pub mask: Array2<u8>,
    /// Isotropic pixel spacing, mm/px.
    pub spacing_mm: f64,
}

impl BModeImage {
    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    /// Mean pixel value over the sector.
    pub fn in_mask_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (p, m) in self.pixels.iter().zip(self.mask.iter()) {
            if *m != 0 {
                sum += *p;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Population variance of pixel values over the sector.
    pub fn in_mask_variance(&self) -> f64 {
        let mean = self.in_mask_mean();
        let mut acc = 0.0;
        let mut n = 0usize;
        for (p, m) in self.pixels.iter().zip(self.mask.iter()) {
            if *m != 0 {
                let d = *p - mean;
                acc += d * d;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}

/// Interpolation used when resampling fan data onto the Cartesian grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Bilinear,
    /// For mask-like data that must stay binary.
    Nearest,
}

/// Isotropic output pixel spacing: field-of-view height divided by the
/// output height (width follows the same scale).
pub fn pixel_spacing(probe: &ProbeConfig, out_size: (usize, usize)) -> f64 {
    probe.fov_height_mm() / out_size.1 as f64
}

/// Fan-frame coordinates of one output pixel center, if it lies inside the
/// convex sector: (scanline coordinate in [0, N-1], depth coordinate in
/// [0, M-1]).
#[derive(Debug, Clone, Copy)]
struct SectorGrid {
    theta: f64,
    r0: f64,
    depth: f64,
    y_top: f64,
    spacing: f64,
    half_w: f64,
    n_lines: usize,
    n_samples: usize,
}

impl SectorGrid {
    fn new(probe: &ProbeConfig, out_size: (usize, usize)) -> Self {
        let spacing = pixel_spacing(probe, out_size);
        Self {
            theta: probe.angle_rad(),
            r0: probe.face_radius_mm(),
            depth: probe.image_depth,
            y_top: probe.fov_top_mm(),
            spacing,
            half_w: out_size.0 as f64 * spacing / 2.0,
            n_lines: probe.scan_lines,
            n_samples: probe.axial_resolution,
        }
    }

    /// Probe-frame position of the pixel center at (row, col).
    #[inline]
    fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = (col as f64 + 0.5) * self.spacing - self.half_w;
        let y = self.y_top + (row as f64 + 0.5) * self.spacing;
        (x, y)
    }

    #[inline]
    fn fan_coords(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let r = x.hypot(y);
        let phi = x.atan2(y);
        if phi.abs() > self.theta / 2.0 || r < self.r0 || r > self.r0 + self.depth {
            return None;
        }
        let u = (phi / self.theta + 0.5) * (self.n_lines - 1) as f64;
        let v = (r - self.r0) / self.depth * (self.n_samples - 1) as f64;
        Some((u, v))
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Resample fan data into a Cartesian image with bilinear interpolation.
pub fn scan_convert(fan: &FanImage, out_size: (usize, usize)) -> Result<BModeImage> {
    scan_convert_with(fan, out_size, Interp::Bilinear)
}

pub fn scan_convert_with(
    fan: &FanImage,
    out_size: (usize, usize),
    interp: Interp,
) -> Result<BModeImage> {
    let (w, h) = out_size;
    if w < 2 || h < 2 {
        return Err(Error::invalid("output size must be at least 2x2"));
    }
    let grid = SectorGrid::new(&fan.probe, out_size);
    let mut pixels = Array2::<f64>::zeros((h, w));
    let mut mask = Array2::<u8>::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let (x, y) = grid.pixel_center(row, col);
            if let Some((u, v)) = grid.fan_coords(x, y) {
                mask[(row, col)] = 1;
                pixels[(row, col)] = match interp {
                    Interp::Nearest => {
                        let ui = (u.round() as usize).min(grid.n_lines - 1);
                        let vi = (v.round() as usize).min(grid.n_samples - 1);
                        fan.data[(ui, vi)]
                    }
                    Interp::Bilinear => {
                        let u0 = (u.floor() as usize).min(grid.n_lines - 1);
                        let v0 = (v.floor() as usize).min(grid.n_samples - 1);
                        let u1 = (u0 + 1).min(grid.n_lines - 1);
                        let v1 = (v0 + 1).min(grid.n_samples - 1);
                        let fu = u - u0 as f64;
                        let fv = v - v0 as f64;
                        let a = fan.data[(u0, v0)];
                        let b = fan.data[(u1, v0)];
                        let c = fan.data[(u0, v1)];
                        let d = fan.data[(u1, v1)];
                        let val = lerp(lerp(a, b, fu), lerp(c, d, fu), fv);
                        // keep the interpolant inside the stencil's range
                        let lo = a.min(b).min(c).min(d);
                        let hi = a.max(b).max(c).max(d);
                        val.clamp(lo, hi)
                    }
                };
            }
        }
    }
    Ok(BModeImage {
        pixels,
        mask,
        spacing_mm: grid.spacing,
    })
}

/// The convex sector mask alone, for stamping non-fan images.
pub fn sector_mask(probe: &ProbeConfig, out_size: (usize, usize)) -> Array2<u8> {
    let (w, h) = out_size;
    let grid = SectorGrid::new(probe, out_size);
    let mut mask = Array2::<u8>::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let (x, y) = grid.pixel_center(row, col);
            if grid.fan_coords(x, y).is_some() {
                mask[(row, col)] = 1;
            }
        }
    }
    mask
}

/// Probe-frame position of the pixel center at (row, col) for a given
/// output size; shared by the renderer and baselines so images stay
/// pixel-aligned.
pub fn image_pixel_center(
    probe: &ProbeConfig,
    out_size: (usize, usize),
    row: usize,
    col: usize,
) -> (f64, f64) {
    SectorGrid::new(probe, out_size).pixel_center(row, col)
}
