//! Edge-detection intermediate representation: bilateral filter, Canny
//! edges, and the convex sector mask stamped on top.
//!
//! Works on pseudo-CT intensity slices. The slice is first resampled onto
//! the probe's Cartesian image grid (same frame as `render` output) so the
//! three representations of one slice stay pixel-aligned.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::probe::{image_pixel_center, pixel_spacing, sector_mask, BModeImage, ProbeConfig};
use crate::volume::IntensityImage;

/// Bilateral filter parameters for the edge baseline.
pub const BILATERAL_SIGMA_SPACE_PX: f64 = 2.0;
pub const BILATERAL_SIGMA_RANGE: f64 = 0.1;
/// Canny parameters: Gaussian sigma and hysteresis thresholds as fractions
/// of the gradient-magnitude maximum.
pub const CANNY_GAUSS_SIGMA: f64 = 1.4;
pub const CANNY_LOW_FRAC: f64 = 0.1;
pub const CANNY_HIGH_FRAC: f64 = 0.2;

/// Edge-preserving smoothing: Gaussian in space, Gaussian in intensity.
pub fn bilateral_filter(img: &Array2<f64>, sigma_space_px: f64, sigma_range: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let radius = (3.0 * sigma_space_px).ceil() as isize;
    let inv_2ss = 1.0 / (2.0 * sigma_space_px * sigma_space_px);
    let inv_2sr = 1.0 / (2.0 * sigma_range * sigma_range);
    // spatial weights are shift-invariant
    let size = (2 * radius + 1) as usize;
    let mut spatial = vec![0.0f64; size * size];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial[(dy + radius) as usize * size + (dx + radius) as usize] = (-d2 * inv_2ss).exp();
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = img[(y as usize, x as usize)];
            let mut acc = 0.0;
            let mut norm = 0.0;
            for dy in -radius..=radius {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -radius..=radius {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let v = img[(yy as usize, xx as usize)];
                    let dr = v - center;
                    let wgt = spatial[(dy + radius) as usize * size + (dx + radius) as usize]
                        * (-dr * dr * inv_2sr).exp();
                    acc += wgt * v;
                    norm += wgt;
                }
            }
            out[(y as usize, x as usize)] = acc / norm;
        }
    }
    out
}

fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = gaussian_kernel_1d(sigma);
    let radius = (k.len() / 2) as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let xx = (x + j as isize - radius).clamp(0, w as isize - 1);
                acc += kv * img[(y, xx as usize)];
            }
            tmp[(y, x as usize)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let yy = (y + j as isize - radius).clamp(0, h as isize - 1);
                acc += kv * tmp[(yy as usize, x)];
            }
            out[(y as usize, x)] = acc;
        }
    }
    out
}

/// Canny edge detection with thresholds relative to the gradient-magnitude
/// maximum. Returns a binary edge map.
pub fn canny(img: &Array2<f64>, gauss_sigma: f64, low_frac: f64, high_frac: f64) -> Array2<u8> {
    let (h, w) = img.dim();
    let blurred = gaussian_blur(img, gauss_sigma);

    // Sobel gradients
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    let mut mag = Array2::<f64>::zeros((h, w));
    let mut gmax = 0.0f64;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dy: usize, dx: usize| blurred[(y + dy - 1, x + dx - 1)];
            let sx = (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
            let sy = (p(2, 0) + 2.0 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2.0 * p(0, 1) + p(0, 2));
            let m = sx.hypot(sy);
            gx[(y, x)] = sx;
            gy[(y, x)] = sy;
            mag[(y, x)] = m;
            gmax = gmax.max(m);
        }
    }
    if gmax <= 0.0 {
        return Array2::zeros((h, w));
    }

    // non-maximum suppression along the quantized gradient direction
    let mut thin = Array2::<f64>::zeros((h, w));
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let m = mag[(y, x)];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[(y, x)].atan2(gx[(y, x)]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                (mag[(y, x - 1)], mag[(y, x + 1)])
            } else if angle < 67.5 {
                (mag[(y - 1, x - 1)], mag[(y + 1, x + 1)])
            } else if angle < 112.5 {
                (mag[(y - 1, x)], mag[(y + 1, x)])
            } else {
                (mag[(y - 1, x + 1)], mag[(y + 1, x - 1)])
            };
            if m >= n1 && m >= n2 {
                thin[(y, x)] = m;
            }
        }
    }

    // hysteresis: breadth-first from strong edges through weak ones
    let low = low_frac * gmax;
    let high = high_frac * gmax;
    let mut edges = Array2::<u8>::zeros((h, w));
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin[(y, x)] >= high && edges[(y, x)] == 0 {
                edges[(y, x)] = 1;
                stack.push((y, x));
                while let Some((cy, cx)) = stack.pop() {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let ny = cy as isize + dy;
                            let nx = cx as isize + dx;
                            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                                continue;
                            }
                            let (ny, nx) = (ny as usize, nx as usize);
                            if edges[(ny, nx)] == 0 && thin[(ny, nx)] >= low {
                                edges[(ny, nx)] = 1;
                                stack.push((ny, nx));
                            }
                        }
                    }
                }
            }
        }
    }
    edges
}

/// Bilinearly resample a physical intensity slice onto the probe's output
/// pixel grid (zero outside the slice).
pub fn resample_to_image_grid(
    ct: &IntensityImage,
    probe: &ProbeConfig,
    out_size: (usize, usize),
) -> Array2<f64> {
    let (w, h) = out_size;
    let (sh, sw) = ct.pixels.dim();
    let [sx, sy] = ct.spacing_mm;
    let w_mm = sw as f64 * sx;
    let y_top = probe.fov_top_mm();
    let mut out = Array2::<f64>::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let (px, py) = image_pixel_center(probe, out_size, row, col);
            // slice frame: laterally centered, top edge at the FOV top
            let fx = (px + w_mm / 2.0) / sx - 0.5;
            let fy = (py - y_top) / sy - 0.5;
            if fx < -0.5 || fy < -0.5 || fx > sw as f64 - 0.5 || fy > sh as f64 - 0.5 {
                continue;
            }
            let x0 = fx.floor().clamp(0.0, (sw - 1) as f64) as usize;
            let y0 = fy.floor().clamp(0.0, (sh - 1) as f64) as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let y1 = (y0 + 1).min(sh - 1);
            let tx = (fx - x0 as f64).clamp(0.0, 1.0);
            let ty = (fy - y0 as f64).clamp(0.0, 1.0);
            let a = ct.pixels[(y0, x0)];
            let b = ct.pixels[(y0, x1)];
            let c = ct.pixels[(y1, x0)];
            let d = ct.pixels[(y1, x1)];
            out[(row, col)] = (a + tx * (b - a)) + ty * ((c + tx * (d - c)) - (a + tx * (b - a)));
        }
    }
    out
}

/// The edge-based intermediate representation: bilateral filter, Canny,
/// convex sector mask.
pub fn render_edge_ir(
    ct_slice: &IntensityImage,
    probe: &ProbeConfig,
    out_size: (usize, usize),
) -> Result<BModeImage> {
    probe.validate()?;
    if out_size.0 < 2 || out_size.1 < 2 {
        return Err(Error::invalid("output size must be at least 2x2"));
    }
    if ct_slice.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("pseudo-CT intensities must be in [0,1]"));
    }
    let resampled = resample_to_image_grid(ct_slice, probe, out_size);
    let smoothed = bilateral_filter(&resampled, BILATERAL_SIGMA_SPACE_PX, BILATERAL_SIGMA_RANGE);
    let edges = canny(&smoothed, CANNY_GAUSS_SIGMA, CANNY_LOW_FRAC, CANNY_HIGH_FRAC);
    let mask = sector_mask(probe, out_size);
    let (w, h) = out_size;
    let mut pixels = Array2::<f64>::zeros((h, w));
    for ((p, &e), &m) in pixels.iter_mut().zip(edges.iter()).zip(mask.iter()) {
        if m == 1 && e == 1 {
            *p = 1.0;
        }
    }
    Ok(BModeImage {
        pixels,
        mask,
        spacing_mm: pixel_spacing(probe, out_size),
    })
}
