//! Gradient, edge and texture features.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::freq::fft2_in_place;
use crate::image_io::GrayImage;

pub const ORIENTATION_BINS: usize = 36;
pub const MAGNITUDE_BINS: usize = 64;
/// GradMean, GradStd, GradEntropy and the orientation histogram.
pub const GRADIENT_DIM: usize = 3 + ORIENTATION_BINS;
/// Gradients at or below this magnitude carry no orientation.
pub const ORIENTATION_EPS: f64 = 1e-8;

pub const GABOR_ORIENTATIONS_DEG: [f64; 4] = [0.0, 45.0, 90.0, 135.0];
pub const GABOR_WAVELENGTHS: [f64; 2] = [4.0, 8.0];

/// Per-pixel Sobel responses.
#[derive(Debug, Clone)]
pub struct GradientField {
    height: usize,
    width: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    magnitude: Vec<f64>,
}

impl GradientField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    /// Orientation in degrees in `[0, 360)`, or `None` for flat pixels.
    pub fn orientation(&self, index: usize) -> Option<f64> {
        if self.magnitude[index] > ORIENTATION_EPS {
            let deg = self.gy[index].atan2(self.gx[index]).to_degrees();
            let deg = if deg < 0.0 { deg + 360.0 } else { deg };
            Some(if deg >= 360.0 { 0.0 } else { deg })
        } else {
            None
        }
    }
}

/// 3x3 Sobel operator with replicate padding. `gx` responds to increases
/// along columns, `gy` along rows.
pub fn sobel(image: &GrayImage) -> Result<GradientField> {
    let (h, w) = (image.height(), image.width());
    if h < 3 || w < 3 {
        return Err(Error::ImageTooSmall { height: h, width: w, min: 3 });
    }
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut magnitude = vec![0.0; h * w];
    for r in 0..h {
        let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let p = |rr: usize, cc: usize| image.get(rr, cc);
            let x = (p(ru, cr) - p(ru, cl)) + 2.0 * (p(r, cr) - p(r, cl)) + (p(rd, cr) - p(rd, cl));
            let y = (p(rd, cl) - p(ru, cl)) + 2.0 * (p(rd, c) - p(ru, c)) + (p(rd, cr) - p(ru, cr));
            let i = r * w + c;
            gx[i] = x;
            gy[i] = y;
            magnitude[i] = x.hypot(y);
        }
    }
    Ok(GradientField { height: h, width: w, gx, gy, magnitude })
}

/// GradMean, GradStd, GradEntropy, then the 36-bin magnitude-weighted
/// orientation histogram (10 degree bins from 0, normalized to sum 1).
pub fn gradient_features(field: &GradientField) -> [f64; GRADIENT_DIM] {
    let mags = &field.magnitude;
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let var = mags.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    let max = mags.iter().cloned().fold(0.0, f64::max);

    let mut entropy = 0.0;
    if max > 0.0 {
        let mut counts = [0usize; MAGNITUDE_BINS];
        for &m in mags {
            let b = ((m / max) * MAGNITUDE_BINS as f64) as usize;
            counts[b.min(MAGNITUDE_BINS - 1)] += 1;
        }
        for &c in counts.iter().filter(|&&c| c > 0) {
            let p = c as f64 / n;
            entropy -= p * p.ln();
        }
        entropy /= (MAGNITUDE_BINS as f64).ln();
    }

    let mut hist = [0.0f64; ORIENTATION_BINS];
    let mut weight = 0.0;
    for i in 0..mags.len() {
        if let Some(deg) = field.orientation(i) {
            let b = ((deg / 10.0) as usize).min(ORIENTATION_BINS - 1);
            hist[b] += mags[i];
            weight += mags[i];
        }
    }
    if weight > 0.0 {
        hist.iter_mut().for_each(|v| *v /= weight);
    } else {
        hist = [1.0 / ORIENTATION_BINS as f64; ORIENTATION_BINS];
    }

    let mut out = [0.0; GRADIENT_DIM];
    out[0] = mean;
    out[1] = var.sqrt();
    out[2] = entropy;
    out[3..].copy_from_slice(&hist);
    out
}

/// Fraction of pixels whose gradient magnitude exceeds mean + one std.
pub fn edge_density(field: &GradientField) -> f64 {
    let mags = &field.magnitude;
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let std = (mags.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n).sqrt();
    let threshold = mean + std;
    mags.iter().filter(|&&m| m > threshold).count() as f64 / n
}

/// A real, zero-mean Gabor kernel of odd side `2 * half_width + 1`.
#[derive(Debug, Clone)]
pub struct GaborKernel {
    pub orientation_deg: f64,
    pub wavelength: f64,
    pub half_width: usize,
    /// Row-major taps; `taps[(dy + hw) * side + (dx + hw)]`.
    pub taps: Vec<f64>,
}

impl GaborKernel {
    /// `sigma = 0.5 * wavelength`, unit aspect ratio, zero phase.
    pub fn new(orientation_deg: f64, wavelength: f64) -> Self {
        let sigma = 0.5 * wavelength;
        let half_width = (2.0 * sigma).ceil() as usize;
        let side = 2 * half_width + 1;
        let theta = orientation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let hw = half_width as isize;
        let mut taps = Vec::with_capacity(side * side);
        for dy in -hw..=hw {
            for dx in -hw..=hw {
                let (x, y) = (dx as f64, dy as f64);
                let along = x * cos + y * sin;
                let envelope = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                taps.push(envelope * (2.0 * PI * along / wavelength).cos());
            }
        }
        let mean = taps.iter().sum::<f64>() / taps.len() as f64;
        taps.iter_mut().for_each(|t| *t -= mean);
        Self { orientation_deg, wavelength, half_width, taps }
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    #[inline]
    pub fn tap(&self, dy: isize, dx: isize) -> f64 {
        let hw = self.half_width as isize;
        self.taps[((dy + hw) as usize) * self.side() + (dx + hw) as usize]
    }
}

/// The fixed 8-filter bank: 4 orientations x 2 wavelengths.
pub fn gabor_bank() -> Vec<GaborKernel> {
    let mut bank = Vec::with_capacity(8);
    for &lambda in &GABOR_WAVELENGTHS {
        for &theta in &GABOR_ORIENTATIONS_DEG {
            bank.push(GaborKernel::new(theta, lambda));
        }
    }
    bank
}

/// Gabor responses computed by FFT on a replicate-padded frame. Kernel
/// spectra are precomputed for one image size, so a single bank can be
/// reused across many images of that size.
#[derive(Debug, Clone)]
pub struct TextureBank {
    height: usize,
    width: usize,
    pad: usize,
    frame_h: usize,
    frame_w: usize,
    kernels: Vec<GaborKernel>,
    // Pairs of kernel spectra packed as K_a + i K_b.
    packed: Vec<Vec<Complex<f64>>>,
}

impl TextureBank {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let kernels = gabor_bank();
        let pad = kernels.iter().map(|k| k.half_width).max().unwrap_or(0);
        if height <= pad || width <= pad {
            return Err(Error::ImageTooSmall { height, width, min: pad + 1 });
        }
        let (frame_h, frame_w) = (height + 2 * pad, width + 2 * pad);
        let spectrum_of = |k: &GaborKernel| {
            // Kernels are point-symmetric, so wrapping taps at +offset gives
            // circular correlation.
            let mut buf = vec![Complex::new(0.0, 0.0); frame_h * frame_w];
            let hw = k.half_width as isize;
            for dy in -hw..=hw {
                for dx in -hw..=hw {
                    let r = dy.rem_euclid(frame_h as isize) as usize;
                    let c = dx.rem_euclid(frame_w as isize) as usize;
                    buf[r * frame_w + c] = Complex::new(k.tap(dy, dx), 0.0);
                }
            }
            fft2_in_place(&mut buf, frame_h, frame_w, false);
            buf
        };
        let packed = kernels
            .chunks(2)
            .map(|pair| {
                let a = spectrum_of(&pair[0]);
                let b = spectrum_of(&pair[1]);
                a.iter().zip(&b).map(|(x, y)| x + Complex::new(0.0, 1.0) * y).collect()
            })
            .collect();
        Ok(Self { height, width, pad, frame_h, frame_w, kernels, packed })
    }

    pub fn kernels(&self) -> &[GaborKernel] {
        &self.kernels
    }

    /// Per-filter mean absolute response, in bank order.
    pub fn filter_means(&self, image: &GrayImage) -> Result<Vec<f64>> {
        if image.height() != self.height || image.width() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.height * self.width,
                actual: image.height() * image.width(),
            });
        }
        let pad = self.pad as isize;
        let mut frame = Vec::with_capacity(self.frame_h * self.frame_w);
        for r in 0..self.frame_h as isize {
            for c in 0..self.frame_w as isize {
                frame.push(Complex::new(image.get_clamped(r - pad, c - pad), 0.0));
            }
        }
        fft2_in_place(&mut frame, self.frame_h, self.frame_w, false);

        let scale = 1.0 / (self.frame_h * self.frame_w) as f64;
        let n = (self.height * self.width) as f64;
        let mut means = Vec::with_capacity(self.kernels.len());
        let mut buf = vec![Complex::new(0.0, 0.0); frame.len()];
        for spec in &self.packed {
            for ((out, f), k) in buf.iter_mut().zip(&frame).zip(spec) {
                *out = f * k;
            }
            fft2_in_place(&mut buf, self.frame_h, self.frame_w, true);
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in 0..self.height {
                let row = (r + self.pad) * self.frame_w + self.pad;
                for v in &buf[row..row + self.width] {
                    sa += (v.re * scale).abs();
                    sb += (v.im * scale).abs();
                }
            }
            means.push(sa / n);
            means.push(sb / n);
        }
        Ok(means)
    }

    /// Mean over filters of the mean absolute response.
    pub fn response_mean(&self, image: &GrayImage) -> Result<f64> {
        let means = self.filter_means(image)?;
        Ok(means.iter().sum::<f64>() / means.len() as f64)
    }
}

/// TextureResponseMean for a single image. Builds a fresh bank; use
/// [`TextureBank`] directly when processing many images.
pub fn texture_response_mean(image: &GrayImage) -> Result<f64> {
    TextureBank::new(image.height(), image.width())?.response_mean(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ramp_x(n: usize) -> GrayImage {
        GrayImage::from_fn(n, n, |_, c| c as f64 / n as f64)
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let f = sobel(&GrayImage::constant(8, 8, 0.3)).unwrap();
        assert!(f.gx().iter().chain(f.gy()).all(|&v| v == 0.0));
        let feats = gradient_features(&f);
        assert_eq!(&feats[..3], &[0.0, 0.0, 0.0]);
        for v in &feats[3..] {
            assert!((v - 1.0 / 36.0).abs() < 1e-15);
        }
        assert_eq!(edge_density(&f), 0.0);
    }

    #[test]
    fn horizontal_ramp_interior() {
        let n = 5;
        let f = sobel(&ramp_x(n)).unwrap();
        // Hand convolution: (1 + 2 + 1) * (2 / W) at interior columns.
        for r in 0..n {
            for c in 1..n - 1 {
                let i = r * n + c;
                assert!((f.gx()[i] - 8.0 / n as f64).abs() < 1e-12);
                assert!(f.gy()[i].abs() < 1e-12);
                assert_eq!(f.orientation(i), Some(0.0));
            }
        }
        let feats = gradient_features(&f);
        assert!((feats[3] - 1.0).abs() < 1e-12);
        assert!((feats[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_ramp_points_down() {
        let img = GrayImage::from_fn(5, 5, |r, _| r as f64 / 5.0);
        let f = sobel(&img).unwrap();
        let o = f.orientation(2 * 5 + 2).unwrap();
        assert!((o - 90.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_image_rejected() {
        assert!(matches!(
            sobel(&GrayImage::constant(2, 8, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn single_bright_pixel_edge_density() {
        let mut v = vec![0.0; 32 * 32];
        v[16 * 32 + 16] = 1.0;
        let img = GrayImage::from_matrix(32, 32, v, false).unwrap();
        let f = sobel(&img).unwrap();
        let m = f.magnitude();
        let mean = m.iter().sum::<f64>() / 1024.0;
        let std = (m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1024.0).sqrt();
        let count = m.iter().filter(|&&x| x > mean + std).count();
        let d = edge_density(&f);
        assert_eq!(d, count as f64 / 1024.0);
        assert!(d > 0.0 && d < 0.05);
    }

    /// Direct replicate-padded correlation, independent of the FFT path.
    fn naive_texture(img: &GrayImage) -> f64 {
        let bank = gabor_bank();
        let mut total = 0.0;
        for k in &bank {
            let hw = k.half_width as isize;
            let mut acc = 0.0;
            for r in 0..img.height() as isize {
                for c in 0..img.width() as isize {
                    let mut s = 0.0;
                    for dy in -hw..=hw {
                        for dx in -hw..=hw {
                            s += k.tap(dy, dx) * img.get_clamped(r + dy, c + dx);
                        }
                    }
                    acc += s.abs();
                }
            }
            total += acc / (img.height() * img.width()) as f64;
        }
        total / bank.len() as f64
    }

    #[test]
    fn texture_matches_direct_convolution() {
        let mut rng = crate::util::rng(11);
        let img = GrayImage::from_fn(32, 32, |_, _| rng.random::<f64>());
        let fast = texture_response_mean(&img).unwrap();
        let slow = naive_texture(&img);
        assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn texture_of_constant_is_zero() {
        let v = texture_response_mean(&GrayImage::constant(32, 32, 0.7)).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn texture_kernels_are_zero_mean() {
        for k in gabor_bank() {
            assert!(k.taps.iter().sum::<f64>().abs() < 1e-12);
        }
        let bank = gabor_bank();
        assert_eq!(bank[0].half_width, 4);
        assert_eq!(bank[4].half_width, 8);
    }

    #[test]
    fn stripes_excite_matching_filter() {
        let img = GrayImage::from_fn(32, 32, |_, c| if c % 4 < 2 { 1.0 } else { 0.0 });
        let bank = TextureBank::new(32, 32).unwrap();
        let means = bank.filter_means(&img).unwrap();
        let best = (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        assert_eq!(bank.kernels()[best].orientation_deg, 0.0);
        assert_eq!(bank.kernels()[best].wavelength, 4.0);
        assert!(bank.response_mean(&img).unwrap() > 0.0);
    }
}
