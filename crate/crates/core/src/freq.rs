//! Frequency-domain features from the centered 2D DFT.
//!
//! The spectrum is split into three radial bands by the normalized radius
//! `rho = sqrt((du / (H/2))^2 + (dv / (W/2))^2) / sqrt(2)`, measured from the
//! centered DC coefficient:
//!
//! | band | radius |
//! |------|--------|
//! | low  | `rho <= 1/8` (includes DC) |
//! | mid  | `1/8 < rho <= 1/2` |
//! | high | `rho > 1/2` |

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image_io::GrayImage;

pub const LOW_BAND_EDGE: f64 = 1.0 / 8.0;
pub const HIGH_BAND_EDGE: f64 = 1.0 / 2.0;

/// Number of frequency features.
pub const FREQ_DIM: usize = 9;

/// Powers below this fraction of the total are round-off from the transform
/// and are treated as exact zeros.
const POWER_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Low,
    Mid,
    High,
}

/// Centered magnitude and power spectrum (DC at `(H/2, W/2)`).
#[derive(Debug, Clone)]
pub struct Spectrum {
    height: usize,
    width: usize,
    magnitude: Vec<f64>,
    power: Vec<f64>,
}

impl Spectrum {
    /// Builds a spectrum directly from centered magnitudes.
    pub fn from_magnitude(height: usize, width: usize, magnitude: Vec<f64>) -> Result<Self> {
        if magnitude.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                actual: magnitude.len(),
            });
        }
        let power = magnitude.iter().map(|m| m * m).collect();
        Ok(Self { height, width, magnitude, power })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn band_of(&self, row: usize, col: usize) -> Band {
        band_for(normalized_radius(self.height, self.width, row, col))
    }
}

/// Normalized radius of a centered coefficient, in `[0, 1]`.
pub fn normalized_radius(height: usize, width: usize, row: usize, col: usize) -> f64 {
    let du = row as f64 - (height / 2) as f64;
    let dv = col as f64 - (width / 2) as f64;
    let a = du / (height as f64 / 2.0);
    let b = dv / (width as f64 / 2.0);
    ((a * a + b * b).sqrt() / std::f64::consts::SQRT_2).min(1.0)
}

pub fn band_for(rho: f64) -> Band {
    if rho <= LOW_BAND_EDGE {
        Band::Low
    } else if rho <= HIGH_BAND_EDGE {
        Band::Mid
    } else {
        Band::High
    }
}

/// In-place unnormalized 2D FFT over a row-major buffer. The inverse is also
/// unnormalized; divide by `height * width` to invert a forward pass.
pub fn fft2_in_place(data: &mut [Complex<f64>], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(data.len(), height * width);
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    row_fft.process(data);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

/// Centered, unnormalized 2D DFT of an image.
pub fn dft2(image: &GrayImage) -> Result<Spectrum> {
    let (h, w) = (image.height(), image.width());
    if h < 2 || w < 2 {
        return Err(Error::ImageTooSmall { height: h, width: w, min: 2 });
    }
    let mut data: Vec<Complex<f64>> = image.pixels().iter().map(|&p| Complex::new(p, 0.0)).collect();
    fft2_in_place(&mut data, h, w, false);
    let mut magnitude = vec![0.0; h * w];
    let (sh, sw) = (h / 2, w / 2);
    for r in 0..h {
        let rr = (r + sh) % h;
        for c in 0..w {
            let cc = (c + sw) % w;
            magnitude[rr * w + cc] = data[r * w + c].norm();
        }
    }
    Spectrum::from_magnitude(h, w, magnitude)
}

/// The nine frequency features, in order: LowFreqRatio, MidFreqRatio,
/// HighFreqRatio, HighFreqConcentration, HighFreqMeanMag, FreqEntropy,
/// FreqSkewness, FreqKurtosis, FreqContrast.
///
/// Shape moments use `L = ln(1 + |F|)` over the non-DC coefficients, so a
/// flat image (all energy at DC) has zero skewness, kurtosis and contrast.
/// A spectrum with zero total power yields `(1, 0, 0, 0, 0, 0, 0, 0, 0)`.
pub fn frequency_features(spectrum: &Spectrum) -> [f64; FREQ_DIM] {
    let (h, w) = (spectrum.height, spectrum.width);
    let total: f64 = spectrum.total_power();
    if !(total > 0.0) {
        return [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    }
    let floor = total * POWER_FLOOR;
    let dc = (h / 2) * w + w / 2;

    let mut band_power = [0.0f64; 3];
    let mut high_count = 0usize;
    let mut high_mag = 0.0;
    let mut entropy = 0.0;
    let mut log_mag = Vec::with_capacity(h * w - 1);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let (p, m) = if spectrum.power[i] > floor {
                (spectrum.power[i], spectrum.magnitude[i])
            } else {
                (0.0, 0.0)
            };
            match spectrum.band_of(r, c) {
                Band::Low => band_power[0] += p,
                Band::Mid => band_power[1] += p,
                Band::High => {
                    band_power[2] += p;
                    high_count += 1;
                    high_mag += m;
                }
            }
            if p > 0.0 {
                let q = p / total;
                entropy -= q * q.ln();
            }
            if i != dc {
                log_mag.push(m.ln_1p());
            }
        }
    }
    let kept: f64 = band_power.iter().sum();

    let mut concentration = 0.0;
    if band_power[2] > 0.0 {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if spectrum.power[i] > floor && spectrum.band_of(r, c) == Band::High {
                    let q = spectrum.power[i] / band_power[2];
                    concentration += q * q;
                }
            }
        }
    }
    let high_mean = if high_count > 0 { high_mag / high_count as f64 } else { 0.0 };
    let entropy = if h * w > 1 { (entropy / ((h * w) as f64).ln()).clamp(0.0, 1.0) } else { 0.0 };
    let (skew, kurt, contrast) = shape_moments(&log_mag);

    [
        band_power[0] / kept,
        band_power[1] / kept,
        band_power[2] / kept,
        concentration,
        high_mean,
        entropy,
        skew,
        kurt,
        contrast,
    ]
}

/// Skewness, excess kurtosis and standard deviation (population moments).
fn shape_moments(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return (0.0, 0.0, 0.0);
    }
    (m3 / (m2 * std), m4 / (m2 * m2) - 3.0, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Direct O(N^4) DFT, centered by the same quadrant swap.
    fn naive_dft_magnitude(img: &GrayImage) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for x in 0..h {
                    for y in 0..w {
                        let angle = -2.0
                            * std::f64::consts::PI
                            * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                        re += img.get(x, y) * angle.cos();
                        im += img.get(x, y) * angle.sin();
                    }
                }
                out[((u + h / 2) % h) * w + (v + w / 2) % w] = (re * re + im * im).sqrt();
            }
        }
        out
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = GrayImage::constant(8, 8, 0.25);
        let s = dft2(&img).unwrap();
        let dc = 4 * 8 + 4;
        assert!((s.magnitude()[dc] - 0.25 * 64.0).abs() < 1e-12);
        for (i, m) in s.magnitude().iter().enumerate() {
            if i != dc {
                assert!(m.abs() < 1e-12);
            }
        }
        let f = frequency_features(&s);
        assert_eq!(f, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_has_two_symmetric_peaks() {
        let img = GrayImage::from_fn(8, 8, |x, _| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 2.0 * x as f64 / 8.0).cos());
        let s = dft2(&img).unwrap();
        let oracle = naive_dft_magnitude(&img);
        for (a, b) in s.magnitude().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        // Peaks at rows 4 +- 2 of the DC column, each 0.5 * 64 / 2 = 16.
        assert!((oracle[2 * 8 + 4] - 16.0).abs() < 1e-9);
        assert!((oracle[6 * 8 + 4] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn parseval_holds_on_random_image() {
        let mut rng = crate::util::rng(3);
        let img = GrayImage::from_fn(16, 16, |_, _| rng_val(&mut rng));
        let s = dft2(&img).unwrap();
        let energy: f64 = img.pixels().iter().map(|p| p * p).sum::<f64>() * 256.0;
        assert!((s.total_power() - energy).abs() <= 1e-9 * energy);
    }

    fn rng_val(rng: &mut crate::util::Rng) -> f64 {
        rng.random::<f64>()
    }

    #[test]
    fn uniform_power_has_unit_entropy() {
        let s = Spectrum::from_magnitude(8, 8, vec![2.0; 64]).unwrap();
        let f = frequency_features(&s);
        assert!((f[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn checkerboard_splits_power_between_dc_and_nyquist() {
        let img = GrayImage::from_fn(16, 16, |r, c| ((r + c) % 2) as f64);
        let oracle = naive_dft_magnitude(&img);
        // Nyquist corner (row 0, col 0 after centering) carries the same
        // magnitude as DC: 0.5 * 256.
        assert!((oracle[0] - 128.0).abs() < 1e-9);
        assert!((oracle[8 * 16 + 8] - 128.0).abs() < 1e-9);
        let f = frequency_features(&dft2(&img).unwrap());
        assert!((f[2] - 0.5).abs() < 1e-12);
        assert!((f[0] - 0.5).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
    }

    #[test]
    fn zero_image_uses_degenerate_convention() {
        let f = frequency_features(&dft2(&GrayImage::constant(4, 4, 0.0)).unwrap());
        assert_eq!(f, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn band_edges() {
        assert_eq!(band_for(0.0), Band::Low);
        assert_eq!(band_for(0.125), Band::Low);
        assert_eq!(band_for(0.126), Band::Mid);
        assert_eq!(band_for(0.5), Band::Mid);
        assert_eq!(band_for(0.51), Band::High);
        assert!((normalized_radius(8, 8, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(normalized_radius(8, 8, 4, 4), 0.0);
    }

    #[test]
    fn tiny_image_rejected() {
        let img = GrayImage::constant(1, 5, 0.5);
        assert!(matches!(dft2(&img), Err(Error::ImageTooSmall { .. })));
    }
}
