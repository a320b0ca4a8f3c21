//! Image decoding, grayscale conversion and canonical resizing.
//!
//! Every image entering the extractor is a single-channel intensity grid in
//! `[0, 1]`. Color inputs are reduced with BT.601 luma weights and resized
//! bilinearly to [`CANONICAL_SIZE`] on both axes.
//!
//! Besides the usual raster formats, a plain-text matrix format is supported:
//!
//! ```text
//! FLGRAY <H> <W>
//! v00 v01 ... v0(W-1)
//! ...
//! ```
//!
//! Values are written with the shortest representation that round-trips, so a
//! write/read cycle is bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Working resolution of the feature extractor.
pub const CANONICAL_SIZE: usize = 256;

pub const RAW_MAGIC: &str = "FLGRAY";

const LUMA_R: f64 = 0.299;
const LUMA_B: f64 = 0.114;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Builds an image at native size. With `clamp` set, values are clipped
    /// into `[0, 1]`; otherwise out-of-range values are rejected. NaN is
    /// rejected either way.
    pub fn from_matrix(height: usize, width: usize, mut values: Vec<f64>, clamp: bool) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        for (index, v) in values.iter_mut().enumerate() {
            if v.is_nan() {
                return Err(Error::OutOfRange { index, value: *v });
            }
            if !(0.0..=1.0).contains(v) {
                if clamp {
                    *v = v.clamp(0.0, 1.0);
                } else {
                    return Err(Error::OutOfRange { index, value: *v });
                }
            }
        }
        Ok(Self { height, width, pixels: values })
    }

    /// Same as [`GrayImage::from_matrix`] followed by resizing to the
    /// canonical resolution.
    pub fn from_matrix_canonical(height: usize, width: usize, values: Vec<f64>, clamp: bool) -> Result<Self> {
        Ok(Self::from_matrix(height, width, values, clamp)?.canonical())
    }

    /// Builds an image from a closure evaluated at every `(row, col)`,
    /// clamping the result.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c).clamp(0.0, 1.0));
            }
        }
        Self { height, width, pixels }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_fn(height, width, |_, _| value)
    }

    /// Converts interleaved RGB samples in `[0, 1]` to luma.
    pub fn from_rgb(height: usize, width: usize, rgb: &[f64]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::DimensionMismatch {
                expected: height * width * 3,
                actual: rgb.len(),
            });
        }
        let values = rgb.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        Self::from_matrix(height, width, values, true)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Pixel access with replicate-border semantics.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.pixels[r * self.width + c]
    }

    pub fn is_canonical(&self) -> bool {
        self.height == CANONICAL_SIZE && self.width == CANONICAL_SIZE
    }

    pub fn canonical(self) -> Self {
        if self.is_canonical() {
            self
        } else {
            self.resize(CANONICAL_SIZE, CANONICAL_SIZE)
        }
    }

    /// Bilinear resize with half-pixel-centre alignment; source coordinates
    /// are clamped to the image so borders replicate.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let max_r = (self.height - 1) as f64;
        let max_c = (self.width - 1) as f64;
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, max_r);
            let r0 = fy.floor() as usize;
            let r1 = (r0 + 1).min(self.height - 1);
            let ty = fy - r0 as f64;
            for c in 0..width {
                let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, max_c);
                let c0 = fx.floor() as usize;
                let c1 = (c0 + 1).min(self.width - 1);
                let tx = fx - c0 as f64;
                let top = self.get(r0, c0) * (1.0 - tx) + self.get(r0, c1) * tx;
                let bottom = self.get(r1, c0) * (1.0 - tx) + self.get(r1, c1) * tx;
                pixels.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
        Self { height, width, pixels }
    }

    /// Writes the plain-text matrix format.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        self.write_raw_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_raw_to(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{RAW_MAGIC} {} {}", self.height, self.width)?;
        for row in self.pixels.chunks_exact(self.width) {
            let mut first = true;
            for v in row {
                if !first {
                    out.write_all(b" ")?;
                }
                first = false;
                write!(out, "{v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Stores the image as a 16-bit grayscale PNG (values quantized to
    /// multiples of 1/65535).
    pub fn write_png16(&self, path: &Path) -> Result<()> {
        let data: Vec<u16> = self
            .pixels
            .iter()
            .map(|v| (v * 65535.0).round() as u16)
            .collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, data)
            .ok_or_else(|| Error::InvalidArgument("png buffer size".into()))?;
        buf.save(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// BT.601 luma, arranged so that equal channels return that channel exactly.
#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    g + LUMA_R * (r - g) + LUMA_B * (b - g)
}

/// Parses the plain-text matrix format at native size.
pub fn parse_raw(text: &str) -> Result<GrayImage> {
    let mut tokens = text.split_ascii_whitespace();
    let bad = |reason: &str| Error::parse("raw matrix", reason);
    if tokens.next() != Some(RAW_MAGIC) {
        return Err(bad("missing FLGRAY header"));
    }
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| bad("missing dimension"))?
            .parse::<usize>()
            .map_err(|e| bad(&e.to_string()))
    };
    let height = dim()?;
    let width = dim()?;
    if height == 0 || width == 0 {
        return Err(Error::EmptyImage);
    }
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| bad(&format!("{t:?}: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != height * width {
        return Err(bad(&format!("expected {} values, found {}", height * width, values.len())));
    }
    GrayImage::from_matrix(height, width, values, false)
}

/// Loads an image at its native resolution (grayscale, `[0, 1]`).
pub fn load_native(path: &Path) -> Result<GrayImage> {
    let unreadable = |reason: String| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| unreadable(e.to_string()))?;
    if bytes.starts_with(RAW_MAGIC.as_bytes()) {
        let text = std::str::from_utf8(&bytes).map_err(|e| unreadable(e.to_string()))?;
        return parse_raw(text).map_err(|e| match e {
            Error::EmptyImage => Error::EmptyImage,
            other => unreadable(other.to_string()),
        });
    }
    let decoded = image::load_from_memory(&bytes).map_err(|e| unreadable(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let values: Vec<f64> = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other if other.color().has_color() || other.color().bytes_per_pixel() > 2 => {
            let rgb = other.to_rgb16();
            rgb.pixels()
                .map(|p| {
                    let [r, g, b] = p.0.map(|c| c as f64 / 65535.0);
                    luma(r, g, b)
                })
                .collect()
        }
        other => other.to_luma16().pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
    };
    GrayImage::from_matrix(height, width, values, true)
}

/// Loads and canonicalizes an image file (PNG, JPEG, BMP or raw matrix).
pub fn load_image(path: &Path) -> Result<GrayImage> {
    Ok(load_native(path)?.canonical())
}
