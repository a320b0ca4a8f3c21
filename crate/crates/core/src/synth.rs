//! Desk-scale benchmark generation: synthetic clean images and bounded
//! surrogate perturbations shaped like single-step sign attacks, projected
//! iterative attacks and low-visibility high-frequency attacks.
//!
//! These are stand-ins; no classifier gradients are involved. The detector
//! only ever sees images, so any bounded perturbation family drives the same
//! code path.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::freq::{fft2_in_place, normalized_radius, HIGH_BAND_EDGE};
use crate::image_io::{GrayImage, CANONICAL_SIZE};
use crate::util::{self, derive_seed};

/// Standard L-infinity budget, 8/255.
pub const DEFAULT_EPSILON: f64 = 8.0 / 255.0;
pub const ITERATIVE_STEPS: usize = 8;

pub const TRAIN_FRACTION: f64 = 0.6;
pub const VALID_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CleanKind {
    Smooth,
    Blobs,
    Sinusoid,
    BlurredNoise,
    /// Cycles through the four kinds by sample index.
    Mixed,
}

impl CleanKind {
    pub const BASIC: [CleanKind; 4] = [CleanKind::Smooth, CleanKind::Blobs, CleanKind::Sinusoid, CleanKind::BlurredNoise];

    pub fn name(self) -> &'static str {
        match self {
            CleanKind::Smooth => "smooth",
            CleanKind::Blobs => "blobs",
            CleanKind::Sinusoid => "sinusoid",
            CleanKind::BlurredNoise => "blurred_noise",
            CleanKind::Mixed => "mixed",
        }
    }

    fn resolve(self, index: usize) -> CleanKind {
        match self {
            CleanKind::Mixed => Self::BASIC[index % Self::BASIC.len()],
            k => k,
        }
    }
}

impl FromStr for CleanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(CleanKind::Smooth),
            "blobs" => Ok(CleanKind::Blobs),
            "sinusoid" => Ok(CleanKind::Sinusoid),
            "blurred_noise" => Ok(CleanKind::BlurredNoise),
            "mixed" => Ok(CleanKind::Mixed),
            other => Err(Error::InvalidArgument(format!("unknown image kind {other:?}"))),
        }
    }
}

impl fmt::Display for CleanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attack {
    Sign,
    Iterative,
    Bandpass,
}

impl Attack {
    pub const ALL: [Attack; 3] = [Attack::Sign, Attack::Iterative, Attack::Bandpass];

    pub fn name(self) -> &'static str {
        match self {
            Attack::Sign => "sign",
            Attack::Iterative => "iterative",
            Attack::Bandpass => "bandpass",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Attack::Sign => 1,
            Attack::Iterative => 2,
            Attack::Bandpass => 3,
        }
    }
}

impl FromStr for Attack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign" => Ok(Attack::Sign),
            "iterative" => Ok(Attack::Iterative),
            "bandpass" => Ok(Attack::Bandpass),
            other => Err(Error::InvalidArgument(format!("unknown attack {other:?}"))),
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub kind: CleanKind,
    pub attack: Attack,
    pub epsilon: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(Error::InvalidArgument(format!("epsilon {} must lie in (0, 0.5]", self.epsilon)));
        }
        if self.n == 0 || self.n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("sample count {} must be even and positive", self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn box_blur(img: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let at = |y: isize, x: isize| img[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    // Separable: rows then columns.
    let mut tmp = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            tmp[y as usize * w + x as usize] = (-r..=r).map(|d| at(y, x + d)).sum();
        }
    }
    let at_tmp = |y: isize, x: usize| tmp[y.clamp(0, h as isize - 1) as usize * w + x];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w {
            out[y as usize * w + x] = (-r..=r).map(|d| at_tmp(y + d, x)).sum::<f64>() / norm;
        }
    }
    out
}

/// Generates one canonical-size clean image.
pub fn gen_clean(kind: CleanKind, seed: u64) -> GrayImage {
    gen_clean_sized(kind, seed, CANONICAL_SIZE, CANONICAL_SIZE)
}

pub fn gen_clean_sized(kind: CleanKind, seed: u64, h: usize, w: usize) -> GrayImage {
    let mut rng = util::rng(seed);
    let kind = kind.resolve(rng.random_range(0..4));
    match kind {
        CleanKind::Smooth | CleanKind::Mixed => {
            let base = rng.random_range(0.25..0.75);
            let gx = rng.random_range(-0.25..0.25);
            let gy = rng.random_range(-0.25..0.25);
            GrayImage::from_fn(h, w, |r, c| {
                base + gx * (c as f64 / w as f64 - 0.5) + gy * (r as f64 / h as f64 - 0.5)
            })
        }
        CleanKind::Blobs => {
            let background = rng.random_range(0.0..0.2);
            let count = rng.random_range(3..=8);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
                .map(|_| {
                    (
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..w as f64),
                        rng.random_range(8.0..40.0) * h as f64 / CANONICAL_SIZE as f64,
                        rng.random_range(0.15..0.5),
                    )
                })
                .collect();
            GrayImage::from_fn(h, w, |r, c| {
                background
                    + blobs
                        .iter()
                        .map(|&(cy, cx, s, a)| {
                            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                            a * (-d2 / (2.0 * s * s)).exp()
                        })
                        .sum::<f64>()
            })
        }
        CleanKind::Sinusoid => {
            let count = rng.random_range(1..=4);
            let waves: Vec<(f64, f64, f64, f64)> = (0..count)
                .map(|_| {
                    let (fu, fv) = loop {
                        let fu: i32 = rng.random_range(0..=8);
                        let fv: i32 = rng.random_range(-8..=8);
                        if fu != 0 || fv != 0 {
                            break (fu as f64, fv as f64);
                        }
                    };
                    (fu, fv, rng.random_range(0.03..0.1), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            GrayImage::from_fn(h, w, |r, c| {
                0.5 + waves
                    .iter()
                    .map(|&(fu, fv, a, phase)| {
                        a * (std::f64::consts::TAU * (fu * r as f64 / h as f64 + fv * c as f64 / w as f64) + phase).cos()
                    })
                    .sum::<f64>()
            })
        }
        CleanKind::BlurredNoise => {
            let mut v: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
            for _ in 0..3 {
                v = box_blur(&v, h, w, 2);
            }
            GrayImage::from_fn(h, w, |r, c| v[r * w + c])
        }
    }
}

/// Applies a bounded surrogate perturbation; the result is clamped to [0, 1].
pub fn perturb(image: &GrayImage, attack: Attack, epsilon: f64, seed: u64) -> Result<GrayImage> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must lie in (0, 0.5]")));
    }
    let (h, w) = (image.height(), image.width());
    let x = image.pixels();
    let mut rng = util::rng(seed);
    let out: Vec<f64> = match attack {
        Attack::Sign => x
            .iter()
            .map(|&p| p + if rng.random::<bool>() { epsilon } else { -epsilon })
            .collect(),
        Attack::Iterative => {
            let step = epsilon / 4.0;
            let mut adv = x.to_vec();
            for _ in 0..ITERATIVE_STEPS {
                let field: Vec<f64> = (0..h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let field = box_blur(&field, h, w, 1);
                for i in 0..h * w {
                    let dir = if field[i] >= 0.0 { 1.0 } else { -1.0 };
                    adv[i] = (adv[i] + step * dir).clamp(x[i] - epsilon, x[i] + epsilon).clamp(0.0, 1.0);
                }
            }
            adv
        }
        Attack::Bandpass => {
            let mut noise: Vec<Complex<f64>> =
                (0..h * w).map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
            fft2_in_place(&mut noise, h, w, false);
            for r in 0..h {
                for c in 0..w {
                    let rho = normalized_radius(h, w, (r + h / 2) % h, (c + w / 2) % w);
                    if rho <= HIGH_BAND_EDGE {
                        noise[r * w + c] = Complex::new(0.0, 0.0);
                    }
                }
            }
            fft2_in_place(&mut noise, h, w, true);
            let real: Vec<f64> = noise.iter().map(|v| v.re).collect();
            let norm = real.iter().map(|v| v * v).sum::<f64>().sqrt();
            let budget = epsilon * ((h * w) as f64).sqrt() / 4.0;
            let scale = if norm > 0.0 { budget / norm } else { 0.0 };
            x.iter().zip(&real).map(|(p, n)| p + scale * n).collect()
        }
    };
    GrayImage::from_matrix(h, w, out, true)
}

/// One generated sample.
#[derive(Debug, Clone)]
pub struct BenchmarkSample {
    pub name: String,
    pub image: GrayImage,
    pub label: u8,
    pub attack: Option<Attack>,
    pub epsilon: f64,
    pub split: Split,
}

/// Stratified split assignment for `count` samples of one class.
fn split_assignment(count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut util::rng(seed));
    let n_train = (count as f64 * TRAIN_FRACTION).floor() as usize;
    let n_valid = (count as f64 * VALID_FRACTION).floor() as usize;
    let mut out = vec![Split::Test; count];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    out
}

/// Generates `n/2` clean and `n/2` perturbed images in memory. Perturbations
/// are applied to fresh clean images, never to the retained clean half.
pub fn generate_benchmark(spec: &SynthSpec) -> Result<Vec<BenchmarkSample>> {
    spec.validate()?;
    let half = spec.n / 2;
    let tag = spec.attack.tag();
    let clean_splits = split_assignment(half, derive_seed(spec.seed, &[tag, 3, 0]));
    let adv_splits = split_assignment(half, derive_seed(spec.seed, &[tag, 3, 1]));
    let kind_at = |i: usize| spec.kind.resolve(i);

    let mut samples: Vec<BenchmarkSample> = (0..spec.n)
        .into_par_iter()
        .map(|k| {
            let (label, i) = if k < half { (0u8, k) } else { (1u8, k - half) };
            if label == 0 {
                let image = gen_clean(kind_at(i), derive_seed(spec.seed, &[tag, 0, i as u64]));
                Ok(BenchmarkSample {
                    name: format!("clean_{i:05}"),
                    image,
                    label,
                    attack: None,
                    epsilon: 0.0,
                    split: clean_splits[i],
                })
            } else {
                let base = gen_clean(kind_at(i), derive_seed(spec.seed, &[tag, 1, i as u64]));
                let image = perturb(&base, spec.attack, spec.epsilon, derive_seed(spec.seed, &[tag, 2, i as u64]))?;
                Ok(BenchmarkSample {
                    name: format!("adv_{i:05}"),
                    image,
                    label,
                    attack: Some(spec.attack),
                    epsilon: spec.epsilon,
                    split: adv_splits[i],
                })
            }
        })
        .collect::<Result<_>>()?;
    samples.sort_by_key(|s| (s.label, s.name.clone()));
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Plain-text matrix, bit-exact.
    Raw,
    /// 16-bit grayscale PNG, quantized to 1/65535.
    Png16,
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ImageFormat::Raw),
            "png16" => Ok(ImageFormat::Png16),
            other => Err(Error::InvalidArgument(format!("unknown image format {other:?}"))),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: u8,
    pub attack: String,
    pub epsilon: f64,
    pub split: Split,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "path,label,attack,epsilon,split";

/// Generates a benchmark and writes images plus `manifest.csv` under `dir`.
pub fn make_benchmark(spec: &SynthSpec, dir: &Path, format: ImageFormat) -> Result<Vec<ManifestRow>> {
    let samples = generate_benchmark(spec)?;
    fs::create_dir_all(dir.join("images"))?;
    let ext = match format {
        ImageFormat::Raw => "flg",
        ImageFormat::Png16 => "png",
    };
    let rows: Vec<ManifestRow> = samples
        .par_iter()
        .map(|s| {
            let rel = format!("images/{}.{ext}", s.name);
            let path = dir.join(&rel);
            match format {
                ImageFormat::Raw => s.image.write_raw(&path)?,
                ImageFormat::Png16 => s.image.write_png16(&path)?,
            }
            Ok(ManifestRow {
                path: rel,
                label: s.label,
                attack: s.attack.map_or("none".to_string(), |a| a.name().to_string()),
                epsilon: s.epsilon,
                split: s.split,
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(&rows, &dir.join(MANIFEST_FILE))?;
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{MANIFEST_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.path, r.label, r.attack, util::fmt_f64(r.epsilon), r.split)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let what = || format!("manifest {}", path.display());
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::parse(what(), "bad header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(Error::parse(what(), format!("row {l:?}")));
            }
            let label = match f[1] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(what(), format!("label {other:?}"))),
            };
            Ok(ManifestRow {
                path: f[0].to_string(),
                label,
                attack: f[2].to_string(),
                epsilon: f[3].parse().map_err(|e| Error::parse(what(), e))?,
                split: f[4].parse()?,
            })
        })
        .collect()
}

/// Resolves a manifest row's image path against the manifest location.
pub fn resolve_path(manifest: &Path, row: &ManifestRow) -> PathBuf {
    let p = Path::new(&row.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_bounded() {
        for kind in CleanKind::BASIC {
            let a = gen_clean_sized(kind, 9, 64, 64);
            let b = gen_clean_sized(kind, 9, 64, 64);
            assert_eq!(a, b);
            assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn linf_bound_for_sign_and_iterative() {
        let img = gen_clean_sized(CleanKind::Blobs, 1, 64, 64);
        for attack in [Attack::Sign, Attack::Iterative] {
            let adv = perturb(&img, attack, DEFAULT_EPSILON, 5).unwrap();
            let linf = img.pixels().iter().zip(adv.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(linf <= DEFAULT_EPSILON + 1e-15, "{attack}: {linf}");
            assert_eq!(adv, perturb(&img, attack, DEFAULT_EPSILON, 5).unwrap());
        }
    }

    #[test]
    fn bandpass_meets_l2_budget_before_clamp() {
        let img = GrayImage::constant(64, 64, 0.5);
        let adv = perturb(&img, Attack::Bandpass, 0.1, 2).unwrap();
        let l2 = img.pixels().iter().zip(adv.pixels()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((l2 - 0.1 * 64.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn split_counts_are_balanced() {
        let s = split_assignment(600, 3);
        let count = |sp| s.iter().filter(|&&x| x == sp).count();
        assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (360, 120, 120));
    }

    #[test]
    fn spec_validation() {
        let spec = SynthSpec { n: 3, kind: CleanKind::Smooth, attack: Attack::Sign, epsilon: 0.03, seed: 0 };
        assert!(spec.validate().is_err());
        let spec = SynthSpec { n: 4, epsilon: 0.6, ..spec };
        assert!(spec.validate().is_err());
    }
}
