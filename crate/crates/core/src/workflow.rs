//! End-to-end orchestration shared by the command line and by tests:
//! extraction of whole benchmarks, standardizer fitting, detector training
//! on fixed splits and the cross-attack transfer matrix.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::classifiers::{self, predict_scores, DetectorModel, Hyperparams, ModelKind};
use crate::error::{Error, Result};
use crate::image_io::{load_image, GrayImage};
use crate::metrics::{evaluate, EvalReport, DEFAULT_THRESHOLD};
use crate::mmd::MmdReference;
use crate::pipeline::{build_dataset, standardize, Extractor, FeatureMask, FeatureTable, RawSample, ScalerState, STRUCTURAL_DIM};
use crate::synth::{read_manifest, resolve_path, BenchmarkSample, Split};
use crate::util::{self, fmt_f64};

/// Raw structural features of a labeled, split benchmark.
#[derive(Debug, Clone)]
pub struct ExtractedBenchmark {
    pub name: String,
    pub paths: Vec<String>,
    pub labels: Vec<u8>,
    pub splits: Vec<Split>,
    pub raw: Vec<[f64; STRUCTURAL_DIM]>,
}

fn extract_images(images: &[GrayImage]) -> Result<Vec<[f64; STRUCTURAL_DIM]>> {
    let extractor = Extractor::canonical();
    images
        .par_iter()
        .map(|img| {
            if img.is_canonical() {
                extractor.extract_raw50(img)
            } else {
                extractor.extract_raw50(&img.clone().canonical())
            }
        })
        .collect()
}

impl ExtractedBenchmark {
    pub fn from_samples(name: impl Into<String>, samples: &[BenchmarkSample]) -> Result<Self> {
        let images: Vec<GrayImage> = samples.iter().map(|s| s.image.clone()).collect();
        Ok(Self {
            name: name.into(),
            paths: samples.iter().map(|s| s.name.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            splits: samples.iter().map(|s| s.split).collect(),
            raw: extract_images(&images)?,
        })
    }

    /// Loads and extracts every image listed in a manifest; parallel over
    /// images, results in manifest order.
    pub fn from_manifest(manifest: &Path) -> Result<Self> {
        Self::from_manifest_splits(manifest, &[Split::Train, Split::Valid, Split::Test])
    }

    /// Like [`ExtractedBenchmark::from_manifest`], restricted to the given splits.
    pub fn from_manifest_splits(manifest: &Path, splits: &[Split]) -> Result<Self> {
        let mut rows = read_manifest(manifest)?;
        rows.retain(|r| splits.contains(&r.split));
        let extractor = Extractor::canonical();
        let raw = rows
            .par_iter()
            .map(|r| {
                let img = load_image(&resolve_path(manifest, r))?;
                extractor.extract_raw50(&img)
            })
            .collect::<Result<Vec<_>>>()?;
        let name = manifest
            .parent()
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| manifest.display().to_string());
        Ok(Self {
            name,
            paths: rows.iter().map(|r| r.path.clone()).collect(),
            labels: rows.iter().map(|r| r.label).collect(),
            splits: rows.iter().map(|r| r.split).collect(),
            raw,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Fits the scaler and MMD reference on the training split.
    pub fn fit_standardizer(&self, seed: u64) -> Result<(ScalerState, MmdReference)> {
        let samples: Vec<RawSample> = self
            .raw
            .iter()
            .zip(&self.labels)
            .zip(&self.splits)
            .map(|((raw, &label), &split)| RawSample { raw: *raw, label, train: split == Split::Train })
            .collect();
        let ds = build_dataset(&samples, seed, None)?;
        Ok((ds.scaler, ds.reference))
    }

    /// Standardized 51-column rows and labels, optionally restricted to a split.
    pub fn standardized(
        &self,
        scaler: &ScalerState,
        reference: &MmdReference,
        split: Option<Split>,
    ) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| split.is_none_or(|s| self.splits[i] == s)).collect();
        let rows = keep
            .par_iter()
            .map(|&i| standardize(&self.raw[i], scaler, reference).map(|v| v.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok((rows, keep.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Raw table with the MMD column missing.
    pub fn raw_table(&self, split: Option<Split>) -> FeatureTable {
        let mut t = FeatureTable::default();
        for i in 0..self.len() {
            if split.is_none_or(|s| self.splits[i] == s) {
                let mut row = self.raw[i].to_vec();
                row.push(f64::NAN);
                t.push(self.paths[i].clone(), self.labels[i], row);
            }
        }
        t
    }

    pub fn standardized_table(
        &self,
        scaler: &ScalerState,
        reference: &MmdReference,
        split: Option<Split>,
    ) -> Result<FeatureTable> {
        let (rows, labels) = self.standardized(scaler, reference, split)?;
        let paths = (0..self.len()).filter(|&i| split.is_none_or(|s| self.splits[i] == s)).map(|i| self.paths[i].clone());
        Ok(FeatureTable { paths: paths.collect(), labels, rows })
    }
}

/// Trains a detector on a benchmark's training split, validating on its
/// validation split, and embeds the fitted standardizer and mask.
pub fn train_on_benchmark(
    bench: &ExtractedBenchmark,
    kind: ModelKind,
    hyperparams: Hyperparams,
    mask: Option<&FeatureMask>,
) -> Result<DetectorModel> {
    let (scaler, reference) = bench.fit_standardizer(hyperparams.seed)?;
    let (train_x, train_y) = bench.standardized(&scaler, &reference, Some(Split::Train))?;
    let (valid_x, valid_y) = bench.standardized(&scaler, &reference, Some(Split::Valid))?;
    let select = |rows: Vec<Vec<f64>>| match mask {
        Some(m) => rows.iter().map(|r| m.select(r)).collect(),
        None => rows,
    };
    let train_x = select(train_x);
    let valid_x = select(valid_x);
    let mut model = classifiers::train(kind, &train_x, &train_y, Some((&valid_x, &valid_y)), hyperparams)?;
    model.scaler = Some(scaler);
    model.mmd_reference = Some(reference);
    model.feature_mask = mask.cloned();
    Ok(model)
}

/// Evaluates a model carrying its own standardizer on one split of a benchmark.
pub fn evaluate_on_benchmark(model: &DetectorModel, bench: &ExtractedBenchmark, split: Split) -> Result<EvalReport> {
    let (scaler, reference) = match (&model.scaler, &model.mmd_reference) {
        (Some(s), Some(r)) => (s, r),
        _ => return Err(Error::InvalidArgument("model carries no scaler or MMD reference".into())),
    };
    let (x, y) = bench.standardized(scaler, reference, Some(split))?;
    let scores = predict_scores(model, &model.select_columns(&x))?;
    evaluate(&scores, &y, DEFAULT_THRESHOLD)
}

/// One off-diagonal transfer cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEvalMatrix {
    pub names: Vec<String>,
    /// `cells[train][test]`; `None` on the diagonal.
    pub cells: Vec<Vec<Option<TransferCell>>>,
}

impl CrossEvalMatrix {
    pub fn off_diagonal(&self) -> impl Iterator<Item = &TransferCell> {
        self.cells.iter().flatten().flatten()
    }

    /// Mean and population standard deviation of a training row's accuracies.
    pub fn row_accuracy_stats(&self, row: usize) -> (f64, f64) {
        let v: Vec<f64> = self.cells[row].iter().flatten().map(|c| c.accuracy).collect();
        (util::mean(&v), util::std_dev(&v))
    }

    pub fn row_auc_stats(&self, row: usize) -> (f64, f64) {
        let v: Vec<f64> = self.cells[row].iter().flatten().map(|c| c.auc).collect();
        (util::mean(&v), util::std_dev(&v))
    }

    /// Wide CSV: one line per training benchmark with accuracy and AUC per
    /// test benchmark (`excluded` on the diagonal), then row mean and std.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut header = vec!["train".to_string()];
        header.extend(self.names.iter().map(|n| format!("acc_{n}")));
        header.extend(self.names.iter().map(|n| format!("auc_{n}")));
        header.extend(["acc_mean", "acc_std", "auc_mean", "auc_std"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for (i, name) in self.names.iter().enumerate() {
            let mut fields = vec![name.clone()];
            let cell = |j: usize, f: fn(&TransferCell) -> f64| {
                self.cells[i][j].as_ref().map_or("excluded".to_string(), |c| fmt_f64(f(c)))
            };
            fields.extend((0..self.names.len()).map(|j| cell(j, |c| c.accuracy)));
            fields.extend((0..self.names.len()).map(|j| cell(j, |c| c.auc)));
            let (am, asd) = self.row_accuracy_stats(i);
            let (um, usd) = self.row_auc_stats(i);
            fields.extend([am, asd, um, usd].map(fmt_f64));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Trains one model per benchmark and tests it on every other benchmark's
/// test split.
pub fn cross_evaluate(benches: &[ExtractedBenchmark], kind: ModelKind, hyperparams: Hyperparams) -> Result<CrossEvalMatrix> {
    if benches.len() < 2 {
        return Err(Error::InvalidArgument("cross evaluation needs at least two benchmarks".into()));
    }
    let mut cells = Vec::with_capacity(benches.len());
    for (i, train) in benches.iter().enumerate() {
        let model = train_on_benchmark(train, kind, hyperparams, None)?;
        let row = benches
            .iter()
            .enumerate()
            .map(|(j, test)| {
                if i == j {
                    return Ok(None);
                }
                let r = evaluate_on_benchmark(&model, test, Split::Test)?;
                Ok(Some(TransferCell { accuracy: r.accuracy, auc: r.auc }))
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(CrossEvalMatrix { names: benches.iter().map(|b| b.name.clone()).collect(), cells })
}
