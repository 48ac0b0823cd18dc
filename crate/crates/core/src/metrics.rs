//! Clinical and statistical evaluation: Dice overlap, anterior-posterior
//! aortic diameter, aneurysm classification, and the Fréchet distance
//! between Gaussian-summarized feature distributions.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::BModeImage;

/// A vessel is aneurysmatic when its AP diameter strictly exceeds 3 cm.
pub const AAA_THRESHOLD_MM: f64 = 30.0;

/// Diameter error below 8 mm is clinically acceptable for AAA diagnosis.
pub const CLINICAL_MAE_LIMIT_MM: f64 = 8.0;

/// A binary segmentation mask with isotropic pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    /// Shape (height, width), values in {0, 1}.
    pixels: Array2<u8>,
    spacing_mm: f64,
}

impl SegMask {
    pub fn new(pixels: Array2<u8>, spacing_mm: f64) -> Result<Self> {
        if !(spacing_mm > 0.0) || !spacing_mm.is_finite() {
            return Err(Error::invalid(format!("mask spacing must be > 0, got {spacing_mm}")));
        }
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { pixels, spacing_mm })
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn pixels(&self) -> &Array2<u8> {
        &self.pixels
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0)
    }
}

/// Dice overlap 2|A∩B| / (|A|+|B|). Two empty masks agree vacuously (1.0).
pub fn dice(a: &SegMask, b: &SegMask) -> Result<f64> {
    if a.pixels.dim() != b.pixels.dim() {
        return Err(Error::mismatch(format!(
            "mask dims {:?} vs {:?}",
            a.pixels.dim(),
            b.pixels.dim()
        )));
    }
    let mut inter = 0u64;
    let mut na = 0u64;
    let mut nb = 0u64;
    for (&x, &y) in a.pixels.iter().zip(b.pixels.iter()) {
        inter += (x & y) as u64;
        na += x as u64;
        nb += y as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Anterior-posterior diameter: the longest contiguous vertical run of
/// 1-pixels over all columns, times the pixel spacing.
pub fn ap_diameter(mask: &SegMask) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("cannot measure diameter of an empty mask"));
    }
    let (h, w) = mask.pixels.dim();
    let mut best = 0usize;
    for col in 0..w {
        let mut run = 0usize;
        for row in 0..h {
            if mask.pixels[(row, col)] == 1 {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
    }
    Ok(best as f64 * mask.spacing_mm)
}

/// AAA screening decision: strictly greater than the 3 cm threshold.
pub fn classify_aaa(diameter_mm: f64) -> Result<bool> {
    if diameter_mm < 0.0 || !diameter_mm.is_finite() {
        return Err(Error::invalid(format!("diameter must be >= 0, got {diameter_mm}")));
    }
    Ok(diameter_mm > AAA_THRESHOLD_MM)
}

/// Per-run diameter and overlap statistics (population standard deviations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterReport {
    /// Predicted AP diameter per frame, mm.
    pub diameters_mm: Vec<f64>,
    pub mae_mm: f64,
    pub sd_mm: f64,
    pub dsc_mean: f64,
    pub dsc_sd: f64,
}

impl DiameterReport {
    /// The 8 mm clinical-acceptability gate on the diameter error.
    pub fn clinically_acceptable(&self) -> bool {
        self.mae_mm < CLINICAL_MAE_LIMIT_MM
    }

    /// Aligned DSC/MAE table in the style used for segmentation comparisons.
    pub fn text_table(&self) -> String {
        format!(
            "{:<10}{:>18}\n{:<10}{:>12.3} \u{00b1} {:.3}\n{:<10}{:>12.2} \u{00b1} {:.2}\n",
            "", "value", "DSC", self.dsc_mean, self.dsc_sd, "MAE (mm)", self.mae_mm, self.sd_mm
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "diameters_mm": self.diameters_mm,
            "mae_mm": self.mae_mm,
            "sd_mm": self.sd_mm,
            "dsc_mean": self.dsc_mean,
            "dsc_sd": self.dsc_sd,
            "clinically_acceptable": self.clinically_acceptable(),
        })
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pairwise |AP(pred) − AP(gt)| plus Dice, aggregated over a run.
///
/// An empty prediction measures 0 mm (a failed segmentation has no extent);
/// an empty ground-truth mask is an error.
pub fn diameter_mae(preds: &[SegMask], gts: &[SegMask]) -> Result<DiameterReport> {
    if preds.len() != gts.len() {
        return Err(Error::mismatch(format!(
            "{} predictions vs {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::mismatch("empty mask lists"));
    }
    let mut diameters = Vec::with_capacity(preds.len());
    let mut errors = Vec::with_capacity(preds.len());
    let mut dscs = Vec::with_capacity(preds.len());
    for (i, (p, g)) in preds.iter().zip(gts.iter()).enumerate() {
        if p.pixels.dim() != g.pixels.dim() || p.spacing_mm != g.spacing_mm {
            return Err(Error::mismatch(format!("pair {i}: dims or spacing differ")));
        }
        if g.is_empty() {
            return Err(Error::invalid(format!("pair {i}: ground-truth mask is empty")));
        }
        let dg = ap_diameter(g)?;
        let dp = if p.is_empty() { 0.0 } else { ap_diameter(p)? };
        diameters.push(dp);
        errors.push((dp - dg).abs());
        dscs.push(dice(p, g)?);
    }
    let (mae_mm, sd_mm) = mean_sd(&errors);
    let (dsc_mean, dsc_sd) = mean_sd(&dscs);
    Ok(DiameterReport {
        diameters_mm: diameters,
        mae_mm,
        sd_mm,
        dsc_mean,
        dsc_sd,
    })
}

/// Gaussian summary (mean, covariance) of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    n: usize,
}

impl FeatureStats {
    /// `sigma` is symmetrized on construction; it must be symmetric and
    /// positive semidefinite within 1e-8.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        let k = mu.len();
        if sigma.nrows() != k || sigma.ncols() != k {
            return Err(Error::mismatch(format!(
                "covariance {}x{} does not match mean length {k}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::invalid("feature stats need at least 2 samples"));
        }
        let asym = max_asymmetry(&sigma);
        if asym > 1e-8 {
            return Err(Error::invalid(format!("covariance asymmetric by {asym}")));
        }
        let sigma = symmetrize(&sigma);
        let eig = sigma.clone().symmetric_eigen();
        if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
            if min < -1e-8 {
                return Err(Error::invalid(format!("covariance not PSD: eigenvalue {min}")));
            }
        }
        Ok(Self { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sample mean and unbiased (n-1) covariance of the feature vectors.
pub fn accumulate_stats(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 feature vectors"));
    }
    let k = features[0].len();
    if features.iter().any(|f| f.len() != k) {
        return Err(Error::mismatch("feature vectors have differing lengths"));
    }
    let mut mu = DVector::<f64>::zeros(k);
    for f in features {
        for (i, v) in f.iter().enumerate() {
            mu[i] += v;
        }
    }
    mu /= n as f64;
    let mut sigma = DMatrix::<f64>::zeros(k, k);
    for f in features {
        for i in 0..k {
            let di = f[i] - mu[i];
            for j in i..k {
                let dj = f[j] - mu[j];
                sigma[(i, j)] += di * dj;
            }
        }
    }
    sigma /= (n - 1) as f64;
    // fill the lower triangle from the accumulated upper one
    for i in 0..k {
        for j in 0..i {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    FeatureStats::new(mu, sigma, n)
}

/// Symmetric PSD square root via eigendecomposition: S with S·S ≈ m.
///
/// Eigenvalues in [-1e-8, 0) are treated as rounding noise and clamped to
/// zero; anything lower is an error, as is an asymmetric input.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::mismatch(format!("matrix {}x{} not square", m.nrows(), m.ncols())));
    }
    let asym = max_asymmetry(m);
    if asym > 1e-8 {
        return Err(Error::invalid(format!("matrix asymmetric by {asym}")));
    }
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
        if min < -1e-8 {
            return Err(Error::invalid(format!("matrix not PSD: eigenvalue {min}")));
        }
    }
    Ok(sqrt_from_eigen(&eig.eigenvectors, &eig.eigenvalues))
}

fn sqrt_from_eigen(q: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let k = lambda.len();
    let mut scaled = q.clone();
    for j in 0..k {
        let s = lambda[j].max(0.0).sqrt();
        for i in 0..k {
            scaled[(i, j)] *= s;
        }
    }
    let s = &scaled * q.transpose();
    symmetrize(&s)
}

/// Fréchet distance between two Gaussians:
/// ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2·(Σ₁Σ₂)^½), with the cross product symmetrized
/// before the square root and the trace term floored at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::mismatch(format!(
            "feature dimensions {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dmu = a.mu.iter().zip(b.mu.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    // (Σa·Σb + Σb·Σa)/2 is identical for (a,b) and (b,a), so the distance is
    // exactly symmetric. The symmetrized product of two PSD matrices can have
    // small negative eigenvalues; clamp them all rather than erroring.
    let cross = (&a.sigma * &b.sigma + &b.sigma * &a.sigma) * 0.5;
    let eig = cross.symmetric_eigen();
    let sqrt_cross = sqrt_from_eigen(&eig.eigenvectors, &eig.eigenvalues);
    let trace_term = (a.sigma.trace() + b.sigma.trace() - 2.0 * sqrt_cross.trace()).max(0.0);
    Ok(dmu + trace_term)
}

/// Deterministic image features standing in for a learned feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Area-averaged 16x16 downsample, flattened (256 values).
    Pixels16x16,
    /// Mean, sd, skewness, excess kurtosis plus a 32-bin in-mask histogram
    /// (36 values).
    HistMoments,
}

/// Exact area-weighted rebinning of `img` onto an `oh x ow` grid.
fn area_downsample(img: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut acc = Array2::<f64>::zeros((oh, ow));
    let mut area = Array2::<f64>::zeros((oh, ow));
    let ry = oh as f64 / h as f64;
    let rx = ow as f64 / w as f64;
    for i in 0..h {
        let y0 = i as f64 * ry;
        let y1 = (i + 1) as f64 * ry;
        for j in 0..w {
            let x0 = j as f64 * rx;
            let x1 = (j + 1) as f64 * rx;
            let v = img[(i, j)];
            let bi0 = y0.floor() as usize;
            let bi1 = (y1.ceil() as usize).min(oh);
            let bj0 = x0.floor() as usize;
            let bj1 = (x1.ceil() as usize).min(ow);
            for bi in bi0..bi1 {
                let oy = (y1.min((bi + 1) as f64) - y0.max(bi as f64)).max(0.0);
                for bj in bj0..bj1 {
                    let ox = (x1.min((bj + 1) as f64) - x0.max(bj as f64)).max(0.0);
                    let wgt = oy * ox;
                    acc[(bi, bj)] += v * wgt;
                    area[(bi, bj)] += wgt;
                }
            }
        }
    }
    for (a, ar) in acc.iter_mut().zip(area.iter()) {
        if *ar > 0.0 {
            *a /= *ar;
        }
    }
    acc
}

pub fn image_features(image: &BModeImage, kind: FeatureKind) -> Vec<f64> {
    match kind {
        FeatureKind::Pixels16x16 => area_downsample(&image.pixels, 16, 16).into_iter().collect(),
        FeatureKind::HistMoments => {
            let values: Vec<f64> = image
                .pixels
                .iter()
                .zip(image.mask.iter())
                .filter(|(_, m)| **m != 0)
                .map(|(p, _)| *p)
                .collect();
            let mut out = vec![0.0; 36];
            if values.is_empty() {
                return out;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = m2.sqrt();
            let (skew, kurt) = if sd > 1e-12 {
                let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
                let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
                (m3 / (sd * sd * sd), m4 / (m2 * m2) - 3.0)
            } else {
                (0.0, 0.0)
            };
            out[0] = mean;
            out[1] = sd;
            out[2] = skew;
            out[3] = kurt;
            for v in &values {
                let bin = ((v * 32.0) as usize).min(31);
                out[4 + bin] += 1.0;
            }
            for b in &mut out[4..] {
                *b /= n;
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(arr: Array2<u8>, spacing: f64) -> SegMask {
        SegMask::new(arr, spacing).unwrap()
    }

    /// Independent run-length oracle: group each column into runs and take
    /// the longest run of ones.
    fn ap_oracle(mask: &SegMask) -> f64 {
        let (h, w) = mask.pixels().dim();
        let mut best = 0usize;
        for col in 0..w {
            let column: Vec<u8> = (0..h).map(|r| mask.pixels()[(r, col)]).collect();
            let mut i = 0;
            while i < h {
                if column[i] == 1 {
                    let start = i;
                    while i < h && column[i] == 1 {
                        i += 1;
                    }
                    best = best.max(i - start);
                } else {
                    i += 1;
                }
            }
        }
        best as f64 * mask.spacing_mm()
    }

    #[test]
    fn dice_identical_disjoint_and_shifted() {
        let mut a = Array2::<u8>::zeros((6, 6));
        for r in 2..4 {
            for c in 2..4 {
                a[(r, c)] = 1;
            }
        }
        let ma = mask_from(a.clone(), 1.0);
        assert_eq!(dice(&ma, &ma).unwrap(), 1.0);

        let mut b = Array2::<u8>::zeros((6, 6));
        b[(0, 0)] = 1;
        let mb = mask_from(b, 1.0);
        assert_eq!(dice(&ma, &mb).unwrap(), 0.0);

        // 2x2 block shifted right by one: overlap 2, sizes 4 and 4 -> 0.5
        let mut c = Array2::<u8>::zeros((6, 6));
        for r in 2..4 {
            for col in 3..5 {
                c[(r, col)] = 1;
            }
        }
        let mc = mask_from(c, 1.0);
        assert_eq!(dice(&ma, &mc).unwrap(), 0.5);
    }

    #[test]
    fn dice_both_empty_is_one_and_dims_must_match() {
        let e1 = mask_from(Array2::zeros((4, 4)), 1.0);
        let e2 = mask_from(Array2::zeros((4, 4)), 1.0);
        assert_eq!(dice(&e1, &e2).unwrap(), 1.0);
        let other = mask_from(Array2::zeros((4, 5)), 1.0);
        assert!(matches!(dice(&e1, &other), Err(Error::Mismatch(_))));
    }

    #[test]
    fn dice_is_symmetric_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = mask_from(Array2::from_shape_fn((12, 9), |_| rng.random::<bool>() as u8), 1.0);
            let b = mask_from(Array2::from_shape_fn((12, 9), |_| rng.random::<bool>() as u8), 1.0);
            assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        }
    }

    #[test]
    fn ap_diameter_full_column_and_single_pixel() {
        let mut arr = Array2::<u8>::zeros((64, 8));
        for r in 10..50 {
            arr[(r, 3)] = 1;
        }
        let m = mask_from(arr, 0.5);
        assert_eq!(ap_diameter(&m).unwrap(), 20.0);

        let mut one = Array2::<u8>::zeros((8, 8));
        one[(4, 4)] = 1;
        let m1 = mask_from(one, 0.7);
        assert_eq!(ap_diameter(&m1).unwrap(), 0.7);
    }

    #[test]
    fn ap_diameter_on_disk_matches_exhaustive_scan() {
        let mut arr = Array2::<u8>::zeros((32, 32));
        let (cx, cy, r) = (16.0, 16.0, 10.0);
        for row in 0..32 {
            for col in 0..32 {
                let dx = col as f64 + 0.5 - cx;
                let dy = row as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    arr[(row, col)] = 1;
                }
            }
        }
        let m = mask_from(arr, 0.5);
        assert_eq!(ap_diameter(&m).unwrap(), ap_oracle(&m));
    }

    #[test]
    fn ap_diameter_empty_mask_errors() {
        let m = mask_from(Array2::zeros((4, 4)), 1.0);
        assert!(ap_diameter(&m).is_err());
    }

    #[test]
    fn classify_aaa_threshold_is_strict() {
        assert!(classify_aaa(31.0).unwrap());
        assert!(!classify_aaa(30.0).unwrap());
        assert!(!classify_aaa(0.0).unwrap());
        assert!(classify_aaa(-1.0).is_err());
        // monotone
        let mut prev = false;
        for d in [0.0, 10.0, 29.9, 30.0, 30.1, 45.0] {
            let c = classify_aaa(d).unwrap();
            assert!(!prev || c);
            prev = c;
        }
    }

    #[test]
    fn diameter_mae_identity_and_offset() {
        let mut arr = Array2::<u8>::zeros((32, 16));
        for r in 8..24 {
            arr[(r, 5)] = 1;
        }
        let gt = mask_from(arr.clone(), 0.5);
        let report = diameter_mae(&[gt.clone()], &[gt.clone()]).unwrap();
        assert_eq!(report.mae_mm, 0.0);
        assert_eq!(report.dsc_mean, 1.0);
        assert!(report.clinically_acceptable());

        // every prediction exactly 2 mm (4 px at 0.5 mm) taller
        let mut tall = Array2::<u8>::zeros((32, 16));
        for r in 6..26 {
            tall[(r, 5)] = 1;
        }
        let pred = mask_from(tall, 0.5);
        let report = diameter_mae(&[pred.clone(), pred.clone()], &[gt.clone(), gt.clone()]).unwrap();
        assert_relative_eq!(report.mae_mm, 2.0, epsilon = 1e-12);
        assert_eq!(report.sd_mm, 0.0);
        assert_eq!(report.diameters_mm, vec![10.0, 10.0]);
    }

    #[test]
    fn diameter_mae_rejects_bad_pairs() {
        let a = mask_from(Array2::zeros((4, 4)), 1.0);
        let mut one = Array2::<u8>::zeros((4, 4));
        one[(1, 1)] = 1;
        let b = mask_from(one, 1.0);
        // empty ground truth
        assert!(diameter_mae(&[b.clone()], &[a.clone()]).is_err());
        // length mismatch
        assert!(diameter_mae(&[b.clone(), b.clone()], &[b.clone()]).is_err());
    }

    #[test]
    fn report_table_mentions_both_metrics() {
        let r = DiameterReport {
            diameters_mm: vec![20.0],
            mae_mm: 1.5,
            sd_mm: 0.2,
            dsc_mean: 0.93,
            dsc_sd: 0.01,
        };
        let t = r.text_table();
        assert!(t.contains("DSC"));
        assert!(t.contains("MAE"));
        assert!(r.to_json()["clinically_acceptable"].as_bool().unwrap());
    }

    #[test]
    fn matrix_sqrt_identity_and_diagonal() {
        let i4 = DMatrix::<f64>::identity(4, 4);
        let s = matrix_sqrt_psd(&i4).unwrap();
        assert_relative_eq!((&s - &i4).norm(), 0.0, epsilon = 1e-12);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt_psd(&d).unwrap();
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(s[(1, 1)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s[(0, 1)], 0.0, epsilon = 1e-12);
    }

    fn random_psd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        symmetrize(&(&a * a.transpose()))
    }

    #[test]
    fn matrix_sqrt_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = random_psd(8, &mut rng);
            let s = matrix_sqrt_psd(&m).unwrap();
            let rel = (&s * &s - &m).norm() / m.norm();
            assert!(rel < 1e-8, "reconstruction error {rel}");
            assert!(max_asymmetry(&s) < 1e-10);
        }
    }

    #[test]
    fn matrix_sqrt_rejects_asymmetric_and_negative() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(matrix_sqrt_psd(&m).is_err());

        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matrix_sqrt_psd(&neg).is_err());
    }

    fn stats_1d(mu: f64, var: f64) -> FeatureStats {
        FeatureStats::new(
            DVector::from_vec(vec![mu]),
            DMatrix::from_vec(1, 1, vec![var]),
            16,
        )
        .unwrap()
    }

    #[test]
    fn frechet_matches_1d_closed_form() {
        // (mu1-mu2)^2 + (s1-s2)^2 on standard deviations
        let a = stats_1d(0.0, 1.0);
        let b = stats_1d(1.0, 1.0);
        assert_relative_eq!(frechet_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-9);

        let c = stats_1d(0.0, 4.0); // sd 2
        assert_relative_eq!(frechet_distance(&a, &c).unwrap(), 1.0, epsilon = 1e-9);

        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let k = 5;
            let a = FeatureStats::new(
                DVector::from_fn(k, |_, _| rng.random::<f64>()),
                random_psd(k, &mut rng),
                8,
            )
            .unwrap();
            let b = FeatureStats::new(
                DVector::from_fn(k, |_, _| rng.random::<f64>()),
                random_psd(k, &mut rng),
                8,
            )
            .unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() <= 1e-9);
        }
    }

    #[test]
    fn frechet_dimension_mismatch_errors() {
        let a = stats_1d(0.0, 1.0);
        let b = FeatureStats::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::identity(2, 2),
            4,
        )
        .unwrap();
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Mismatch(_))));
    }

    #[test]
    fn accumulate_stats_hand_example() {
        let stats = accumulate_stats(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(stats.mean()[0], 1.0);
        assert_eq!(stats.mean()[1], 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(stats.covariance()[(i, j)], 2.0);
            }
        }
    }

    #[test]
    fn accumulate_stats_identical_vectors_give_zero_covariance() {
        let stats = accumulate_stats(&vec![vec![3.0, 1.0]; 5]).unwrap();
        assert!(stats.covariance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_stats_is_order_invariant() {
        // sums divide evenly so means and deviations are exact in f64
        let a = vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![8.0, 11.0]];
        let b = vec![a[2].clone(), a[0].clone(), a[1].clone()];
        let sa = accumulate_stats(&a).unwrap();
        let sb = accumulate_stats(&b).unwrap();
        assert_eq!(sa.mean(), sb.mean());
        assert_eq!(sa.covariance(), sb.covariance());
    }

    #[test]
    fn accumulate_stats_needs_two_samples() {
        assert!(accumulate_stats(&[vec![1.0]]).is_err());
        assert!(accumulate_stats(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn flat_image(value: f64) -> BModeImage {
        BModeImage {
            pixels: Array2::from_elem((32, 32), value),
            mask: Array2::from_elem((32, 32), 1),
            spacing_mm: 0.5,
        }
    }

    #[test]
    fn features_of_constant_image() {
        let img = flat_image(0.25);
        let px = image_features(&img, FeatureKind::Pixels16x16);
        assert_eq!(px.len(), 256);
        assert!(px.iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let hm = image_features(&img, FeatureKind::HistMoments);
        assert_eq!(hm.len(), 36);
        assert_relative_eq!(hm[0], 0.25, epsilon = 1e-12);
        assert_eq!(hm[1], 0.0); // sd
        let occupied = hm[4..].iter().filter(|&&b| b > 0.0).count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn identical_image_sets_have_zero_frechet_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let images: Vec<BModeImage> = (0..6)
            .map(|_| {
                let pixels = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>());
                BModeImage {
                    pixels,
                    mask: Array2::from_elem((32, 32), 1),
                    spacing_mm: 0.5,
                }
            })
            .collect();
        for kind in [FeatureKind::Pixels16x16, FeatureKind::HistMoments] {
            let feats: Vec<Vec<f64>> = images.iter().map(|i| image_features(i, kind)).collect();
            let s1 = accumulate_stats(&feats).unwrap();
            let s2 = accumulate_stats(&feats).unwrap();
            let d = frechet_distance(&s1, &s2).unwrap();
            assert!(d.abs() < 1e-9, "distance {d}");
        }
    }

    #[test]
    fn area_downsample_averages_blocks_exactly() {
        // 4x4 image of distinct values downsampled to 2x2: each output bin is
        // the mean of its 2x2 block
        let img = array![
            [0.0, 1.0, 2.0, 3.0],
            [4.0, 5.0, 6.0, 7.0],
            [8.0, 9.0, 10.0, 11.0],
            [12.0, 13.0, 14.0, 15.0]
        ];
        let out = area_downsample(&img, 2, 2);
        assert_relative_eq!(out[(0, 0)], 2.5, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 1)], 4.5, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 0)], 10.5, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 1)], 12.5, epsilon = 1e-12);
    }
}
