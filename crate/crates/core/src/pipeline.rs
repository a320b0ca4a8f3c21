//! Fusion of all descriptors into the 51-dimensional feature vector, plus
//! standardization and the feature-matrix CSV format.
//!
//! Standardization runs in two stages because the MMD column depends on
//! standardized inputs: the 50 structural columns are scaled first, the clean
//! training rows of that scaled matrix become the MMD reference, and finally
//! the MMD column is scaled with its own training mean and deviation.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::{dft2, frequency_features, FREQ_DIM};
use crate::image_io::GrayImage;
use crate::mmd::{build_reference, mmd_score, MmdReference, DEFAULT_REFERENCE_SIZE};
use crate::spatial::{edge_density, gradient_features, sobel, TextureBank, GRADIENT_DIM};
use crate::util::fmt_f64;

pub const FEATURE_DIM: usize = 51;
pub const STRUCTURAL_DIM: usize = 50;

pub const IDX_HIGH_FREQ_RATIO: usize = 2;
pub const IDX_GRAD_ENTROPY: usize = 11;
pub const IDX_EDGE_DENSITY: usize = 48;
pub const IDX_TEXTURE: usize = 49;
pub const IDX_MMD: usize = 50;

/// Canonical feature names, in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "LowFreqRatio",
    "MidFreqRatio",
    "HighFreqRatio",
    "HighFreqConcentration",
    "HighFreqMeanMag",
    "FreqEntropy",
    "FreqSkewness",
    "FreqKurtosis",
    "FreqContrast",
    "GradMean",
    "GradStd",
    "GradEntropy",
    "GradHist_0",
    "GradHist_1",
    "GradHist_2",
    "GradHist_3",
    "GradHist_4",
    "GradHist_5",
    "GradHist_6",
    "GradHist_7",
    "GradHist_8",
    "GradHist_9",
    "GradHist_10",
    "GradHist_11",
    "GradHist_12",
    "GradHist_13",
    "GradHist_14",
    "GradHist_15",
    "GradHist_16",
    "GradHist_17",
    "GradHist_18",
    "GradHist_19",
    "GradHist_20",
    "GradHist_21",
    "GradHist_22",
    "GradHist_23",
    "GradHist_24",
    "GradHist_25",
    "GradHist_26",
    "GradHist_27",
    "GradHist_28",
    "GradHist_29",
    "GradHist_30",
    "GradHist_31",
    "GradHist_32",
    "GradHist_33",
    "GradHist_34",
    "GradHist_35",
    "EdgeDensity",
    "TextureResponseMean",
    "MMDScore",
];

/// CSV column name for feature `i`, e.g. `f02_HighFreqRatio`.
pub fn column_name(i: usize) -> String {
    format!("f{i:02}_{}", FEATURE_NAMES[i])
}

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES
        .iter()
        .position(|n| *n == name)
        .or_else(|| (0..FEATURE_DIM).find(|&i| column_name(i) == name))
}

/// A 51-dimensional feature vector in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_DIM] = values.try_into().map_err(|_| Error::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: values.len(),
        })?;
        Ok(Self(arr))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.0[i])
    }
}

impl std::ops::Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Structural (non-MMD) feature extractor. Holds the precomputed texture
/// bank, so one instance should be reused for a batch of same-size images.
#[derive(Debug, Clone)]
pub struct Extractor {
    bank: TextureBank,
}

impl Extractor {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Ok(Self { bank: TextureBank::new(height, width)? })
    }

    pub fn canonical() -> Self {
        let n = crate::image_io::CANONICAL_SIZE;
        Self::new(n, n).expect("canonical size fits the texture bank")
    }

    pub fn extract_raw50(&self, image: &GrayImage) -> Result<[f64; STRUCTURAL_DIM]> {
        let mut out = [0.0; STRUCTURAL_DIM];
        out[..FREQ_DIM].copy_from_slice(&frequency_features(&dft2(image)?));
        let field = sobel(image)?;
        out[FREQ_DIM..FREQ_DIM + GRADIENT_DIM].copy_from_slice(&gradient_features(&field));
        out[IDX_EDGE_DENSITY] = edge_density(&field);
        out[IDX_TEXTURE] = self.bank.response_mean(image)?;
        Ok(out)
    }

    /// Extracts in parallel; output order follows input order.
    pub fn extract_many(&self, images: &[GrayImage]) -> Result<Vec<[f64; STRUCTURAL_DIM]>> {
        images.par_iter().map(|img| self.extract_raw50(img)).collect()
    }
}

/// Structural features for a single image of any supported size.
pub fn extract_raw50(image: &GrayImage) -> Result<[f64; STRUCTURAL_DIM]> {
    Extractor::new(image.height(), image.width())?.extract_raw50(image)
}

/// Per-column Z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose variance was zero; their std was forced to 1.
    #[serde(default)]
    pub constant_columns: Vec<usize>,
}

impl ScalerState {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row.iter().zip(self.mean.iter().zip(&self.std)).map(|(x, (m, s))| (x - m) / s).collect())
    }

    pub fn inverse(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row.iter().zip(self.mean.iter().zip(&self.std)).map(|(z, (m, s))| z * s + m).collect())
    }

    /// First `k` columns only.
    pub fn prefix(&self, k: usize) -> ScalerState {
        ScalerState {
            mean: self.mean[..k].to_vec(),
            std: self.std[..k].to_vec(),
            constant_columns: self.constant_columns.iter().copied().filter(|&c| c < k).collect(),
        }
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: row.len(),
            });
        }
        Ok(())
    }
}

/// Column means and population standard deviations.
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<ScalerState> {
    if rows.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, actual: rows.len() });
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: r.len() });
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut constant_columns = Vec::new();
    let std = var
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                constant_columns.push(j);
                1.0
            }
        })
        .collect();
    Ok(ScalerState { mean, std, constant_columns })
}

/// One extracted sample awaiting standardization.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub raw: [f64; STRUCTURAL_DIM],
    pub label: u8,
    pub train: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<u8>,
    pub scaler: ScalerState,
    pub reference: MmdReference,
}

/// Standardizes raw structural features and appends the standardized MMD
/// column, fitting every statistic on training rows only.
///
/// `reference_size` defaults to `min(500, clean training rows)`.
pub fn build_dataset(samples: &[RawSample], seed: u64, reference_size: Option<usize>) -> Result<Dataset> {
    let train_rows: Vec<Vec<f64>> = samples.iter().filter(|s| s.train).map(|s| s.raw.to_vec()).collect();
    let scaler50 = fit_scaler(&train_rows)?;
    let standardized: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| scaler50.transform(&s.raw))
        .collect::<Result<_>>()?;

    let clean: Vec<Vec<f64>> = samples
        .iter()
        .zip(&standardized)
        .filter(|(s, _)| s.train && s.label == 0)
        .map(|(_, z)| z.clone())
        .collect();
    if clean.len() < 2 {
        return Err(Error::InsufficientReference(clean.len()));
    }
    let m = reference_size.unwrap_or(DEFAULT_REFERENCE_SIZE).min(clean.len());
    let reference = build_reference(&clean, m, seed)?;

    let scores: Vec<f64> = standardized
        .iter()
        .map(|z| mmd_score(z, &reference))
        .collect::<Result<_>>()?;
    let train_scores: Vec<f64> = samples.iter().zip(&scores).filter(|(s, _)| s.train).map(|(_, v)| *v).collect();
    let mmd_mean = crate::util::mean(&train_scores);
    let mmd_sd = crate::util::std_dev(&train_scores);

    let mut scaler = scaler50;
    scaler.mean.push(mmd_mean);
    if mmd_sd > 0.0 {
        scaler.std.push(mmd_sd);
    } else {
        scaler.std.push(1.0);
        scaler.constant_columns.push(IDX_MMD);
    }

    let features = standardized
        .into_iter()
        .zip(&scores)
        .map(|(mut z, s)| {
            z.push((s - scaler.mean[IDX_MMD]) / scaler.std[IDX_MMD]);
            FeatureVector::from_slice(&z)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        features,
        labels: samples.iter().map(|s| s.label).collect(),
        scaler,
        reference,
    })
}

/// Applies fitted artifacts to raw structural features (evaluation mode).
pub fn standardize(raw: &[f64], scaler: &ScalerState, reference: &MmdReference) -> Result<FeatureVector> {
    if scaler.dim() != FEATURE_DIM {
        return Err(Error::DimensionMismatch { expected: FEATURE_DIM, actual: scaler.dim() });
    }
    if raw.len() != STRUCTURAL_DIM {
        return Err(Error::DimensionMismatch { expected: STRUCTURAL_DIM, actual: raw.len() });
    }
    let mut z = scaler.prefix(STRUCTURAL_DIM).transform(raw)?;
    let score = mmd_score(&z, reference)?;
    z.push((score - scaler.mean[IDX_MMD]) / scaler.std[IDX_MMD]);
    FeatureVector::from_slice(&z)
}

/// Boolean selection over the 51 canonical features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMask(Vec<bool>);

impl FeatureMask {
    pub fn full() -> Self {
        Self(vec![true; FEATURE_DIM])
    }

    pub fn from_bools(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch { expected: FEATURE_DIM, actual: bits.len() });
        }
        Ok(Self(bits))
    }

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; FEATURE_DIM];
        for &i in indices {
            *bits.get_mut(i).ok_or_else(|| Error::InvalidArgument(format!("feature index {i}")))? = true;
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..FEATURE_DIM).filter(|&i| self.0[i]).collect()
    }

    pub fn select(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.0).filter(|(_, b)| **b).map(|(v, _)| *v).collect()
    }

    /// Mask file: a `feature` header followed by one canonical name per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("feature\n");
        for i in self.indices() {
            out.push_str(FEATURE_NAMES[i]);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("feature") {
            return Err(Error::parse("mask file", "missing `feature` header"));
        }
        let indices = lines
            .map(|name| feature_index(name).ok_or_else(|| Error::parse("mask file", format!("unknown feature {name}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(&indices)
    }
}

/// Labeled feature matrix as stored in CSV. Missing values (the MMD column of
/// raw extraction output) are NaN in memory and empty on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub paths: Vec<String>,
    pub labels: Vec<u8>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, path: impl Into<String>, label: u8, row: Vec<f64>) {
        self.paths.push(path.into());
        self.labels.push(label);
        self.rows.push(row);
    }

    pub fn header() -> String {
        let mut h = String::from("path,label");
        for i in 0..FEATURE_DIM {
            h.push(',');
            h.push_str(&column_name(i));
        }
        h
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{}", Self::header())?;
        for ((p, l), row) in self.paths.iter().zip(&self.labels).zip(&self.rows) {
            write!(out, "{},{}", csv_field(p), l)?;
            for i in 0..FEATURE_DIM {
                match row.get(i) {
                    Some(v) if !v.is_nan() => write!(out, ",{}", fmt_f64(*v))?,
                    _ => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let what = || format!("feature table {}", path.display());
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(what(), e))?;
        let headers = reader.headers().map_err(|e| Error::parse(what(), e))?.clone();
        let expected: Vec<String> = Self::header().split(',').map(String::from).collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::parse(what(), "header does not match the feature dictionary"));
        }
        let mut table = FeatureTable::default();
        for record in reader.records() {
            let record = record.map_err(|e| Error::parse(what(), e))?;
            let label = match &record[1] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(what(), format!("label {other:?}"))),
            };
            let row = record
                .iter()
                .skip(2)
                .map(|f| {
                    if f.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        f.parse::<f64>().map_err(|e| Error::parse(what(), format!("{f:?}: {e}")))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            table.push(&record[0], label, row);
        }
        Ok(table)
    }

    /// Rows restricted to a mask, rejecting missing values.
    pub fn matrix(&self, mask: Option<&FeatureMask>) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput { row: r, col: c });
                }
                Ok(match mask {
                    Some(m) => m.select(row),
                    None => row.clone(),
                })
            })
            .collect()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn dictionary_shape() {
        assert_eq!(FEATURE_NAMES.len(), 51);
        assert_eq!(FEATURE_NAMES[IDX_HIGH_FREQ_RATIO], "HighFreqRatio");
        assert_eq!(FEATURE_NAMES[IDX_GRAD_ENTROPY], "GradEntropy");
        assert_eq!(FEATURE_NAMES[12], "GradHist_0");
        assert_eq!(FEATURE_NAMES[47], "GradHist_35");
        assert_eq!(column_name(50), "f50_MMDScore");
        assert_eq!(FeatureTable::header().split(',').count(), 53);
    }

    #[test]
    fn constant_image_structural_features() {
        let f = extract_raw50(&GrayImage::constant(32, 32, 0.5)).unwrap();
        assert_eq!(&f[..9], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&f[9..12], &[0.0, 0.0, 0.0]);
        for v in &f[12..48] {
            assert!((v - 1.0 / 36.0).abs() < 1e-15);
        }
        assert_eq!(f[48], 0.0);
        assert!(f[49].abs() < 1e-12);
    }

    #[test]
    fn scaler_symmetric_pair() {
        let s = fit_scaler(&[vec![0.0; 3], vec![2.0; 3]]).unwrap();
        assert_eq!(s.mean, vec![1.0; 3]);
        assert_eq!(s.std, vec![1.0; 3]);
        assert!(s.constant_columns.is_empty());
    }

    #[test]
    fn scaler_constant_columns() {
        let s = fit_scaler(&[vec![4.0, 1.0], vec![4.0, 3.0]]).unwrap();
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.constant_columns, vec![0]);
        assert!(matches!(fit_scaler(&[vec![1.0]]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn standardized_moments() {
        let mut rng = crate::util::rng(5);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..51).map(|j| rng.random::<f64>() * (j + 1) as f64 + j as f64).collect())
            .collect();
        let s = fit_scaler(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r).unwrap()).collect();
        for j in 0..51 {
            let col: Vec<f64> = z.iter().map(|r| r[j]).collect();
            assert!(crate::util::mean(&col).abs() < 1e-10);
            assert!((crate::util::std_dev(&col) - 1.0).abs() < 1e-10);
        }
        for r in &rows {
            let back = s.inverse(&s.transform(r).unwrap()).unwrap();
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mask_selection_and_file() {
        let m = FeatureMask::from_indices(&[0, 2, 50]).unwrap();
        assert_eq!(m.count(), 3);
        let row: Vec<f64> = (0..51).map(|i| i as f64).collect();
        assert_eq!(m.select(&row), vec![0.0, 2.0, 50.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.csv");
        m.write(&p).unwrap();
        assert_eq!(FeatureMask::read(&p).unwrap(), m);
    }

    #[test]
    fn table_round_trip_keeps_missing_values() {
        let mut t = FeatureTable::default();
        let mut row: Vec<f64> = (0..51).map(|i| 0.1 * i as f64 - 1.7).collect();
        row[50] = f64::NAN;
        t.push("a,b.flg", 1, row);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write(&p).unwrap();
        let back = FeatureTable::read(&p).unwrap();
        assert_eq!(back.paths, t.paths);
        assert!(back.rows[0][50].is_nan());
        assert_eq!(&back.rows[0][..50], &t.rows[0][..50]);
        assert!(matches!(back.matrix(None), Err(Error::NonFiniteInput { row: 0, col: 50 })));
    }
}
