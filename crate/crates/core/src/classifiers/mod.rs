//! Shallow detectors behind one interface.
//!
//! All three kinds emit a probability-like score in `[0, 1]` for the
//! adversarial class: the SVM through the logistic of its decision value, the
//! MLP through its softmax, and boosted trees through the logistic of the
//! ensemble margin.

pub mod gbt;
pub mod mlp;
pub mod svm;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::MmdReference;
use crate::pipeline::{FeatureMask, ScalerState};

pub use gbt::{GbtConfig, GbtParams};
pub use mlp::{MlpConfig, MlpParams};
pub use svm::{SvmConfig, SvmParams};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Mlp,
    Gbt,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::Mlp => "mlp",
            ModelKind::Gbt => "gbt",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(ModelKind::Svm),
            "mlp" => Ok(ModelKind::Mlp),
            "gbt" => Ok(ModelKind::Gbt),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub seed: u64,
    pub svm: SvmConfig,
    pub mlp: MlpConfig,
    pub gbt: GbtConfig,
}

impl Hyperparams {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, svm: SvmConfig::default(), mlp: MlpConfig::default(), gbt: GbtConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParams {
    Svm(SvmParams),
    Mlp(MlpParams),
    Gbt(GbtParams),
}

impl ModelParams {
    fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Svm(_) => ModelKind::Svm,
            ModelParams::Mlp(_) => ModelKind::Mlp,
            ModelParams::Gbt(_) => ModelKind::Gbt,
        }
    }
}

/// A trained detector with the artifacts needed to score new feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub format_version: u64,
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hyperparams: Hyperparams,
    pub scaler: Option<ScalerState>,
    pub mmd_reference: Option<MmdReference>,
    pub feature_mask: Option<FeatureMask>,
    pub params: ModelParams,
}

impl DetectorModel {
    pub fn new(kind: ModelKind, input_dim: usize, hyperparams: Hyperparams, params: ModelParams) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            input_dim,
            hyperparams,
            scaler: None,
            mmd_reference: None,
            feature_mask: None,
            params,
        }
    }

    pub fn gbt(&self) -> Option<&GbtParams> {
        match &self.params {
            ModelParams::Gbt(p) => Some(p),
            _ => None,
        }
    }

    /// Score of one row already restricted to the model's input columns.
    pub fn score(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Svm(p) => gbt::sigmoid(p.decision(x)),
            ModelParams::Mlp(p) => p.score(x),
            ModelParams::Gbt(p) => p.predict_proba(x),
        }
    }

    /// Applies the mask (if any) to full 51-column rows.
    pub fn select_columns(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match &self.feature_mask {
            Some(m) => rows.iter().map(|r| m.select(r)).collect(),
            None => rows.to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::CorruptModel(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptModel("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let model: DetectorModel = serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
        if model.params.kind() != model.kind {
            return Err(Error::CorruptModel(format!(
                "kind {} does not match parameter block {}",
                model.kind,
                model.params.kind()
            )));
        }
        if let Some(mask) = &model.feature_mask {
            if mask.count() != model.input_dim {
                return Err(Error::CorruptModel("feature mask does not match input_dim".into()));
            }
        }
        Ok(model)
    }
}

/// Validates a training set: enough rows, finite values, both classes.
fn check_training_set(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), actual: y.len() });
    }
    if x.len() < 4 {
        return Err(Error::TooFewSamples { needed: 4, actual: x.len() });
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::InvalidArgument("training rows have no features".into()));
    }
    for (r, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: row.len() });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row: r, col: c });
        }
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::SingleClass);
    }
    Ok(d)
}

/// Trains a detector on standardized rows.
pub fn train(
    kind: ModelKind,
    x: &[Vec<f64>],
    y: &[u8],
    valid: Option<(&[Vec<f64>], &[u8])>,
    hyperparams: Hyperparams,
) -> Result<DetectorModel> {
    let d = check_training_set(x, y)?;
    if let Some((vx, vy)) = valid {
        if vx.len() != vy.len() {
            return Err(Error::DimensionMismatch { expected: vx.len(), actual: vy.len() });
        }
        if let Some(r) = vx.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: r.len() });
        }
    }
    let valid = valid.filter(|(vx, _)| !vx.is_empty());
    let params = match kind {
        ModelKind::Svm => ModelParams::Svm(svm::train(x, y, hyperparams.svm, hyperparams.seed)),
        ModelKind::Mlp => ModelParams::Mlp(mlp::train(x, y, valid, hyperparams.mlp, hyperparams.seed)),
        ModelKind::Gbt => {
            gbt::check_config(&hyperparams.gbt)?;
            ModelParams::Gbt(gbt::train(x, y, valid, hyperparams.gbt)?)
        }
    };
    Ok(DetectorModel::new(kind, d, hyperparams, params))
}

/// Scores rows already restricted to the model's input columns.
pub fn predict_scores(model: &DetectorModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    x.iter()
        .map(|row| {
            if row.len() != model.input_dim {
                Err(Error::DimensionMismatch { expected: model.input_dim, actual: row.len() })
            } else {
                Ok(model.score(row))
            }
        })
        .collect()
}

pub fn predict_labels(scores: &[f64]) -> Vec<u8> {
    scores.iter().map(|&s| (s >= 0.5) as u8).collect()
}

pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    let text = fs::read_to_string(path)?;
    DetectorModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> (Vec<Vec<f64>>, Vec<u8>) {
        let x = (0..40).map(|i| vec![if i < 20 { -1.0 } else { 1.0 }]).collect();
        let y = (0..40).map(|i| (i >= 20) as u8).collect();
        (x, y)
    }

    #[test]
    fn every_kind_separates_a_line() {
        let (x, y) = line_data();
        for kind in [ModelKind::Svm, ModelKind::Mlp, ModelKind::Gbt] {
            let m = train(kind, &x, &y, None, Hyperparams::with_seed(7)).unwrap();
            let labels = predict_labels(&predict_scores(&m, &x).unwrap());
            assert_eq!(labels, y, "{kind}");
        }
    }

    #[test]
    fn training_errors() {
        let (x, _) = line_data();
        let y = vec![1u8; 40];
        assert!(matches!(train(ModelKind::Gbt, &x, &y, None, Hyperparams::with_seed(0)), Err(Error::SingleClass)));
        let mut bad = x.clone();
        bad[3][0] = f64::NAN;
        let (_, y) = line_data();
        assert!(matches!(
            train(ModelKind::Svm, &bad, &y, None, Hyperparams::with_seed(0)),
            Err(Error::NonFiniteInput { row: 3, col: 0 })
        ));
    }

    #[test]
    fn prediction_dimension_checked() {
        let (x, y) = line_data();
        let m = train(ModelKind::Gbt, &x, &y, None, Hyperparams::with_seed(0)).unwrap();
        assert!(matches!(predict_scores(&m, &[vec![0.0, 1.0]]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn json_errors() {
        let (x, y) = line_data();
        let m = train(ModelKind::Gbt, &x, &y, None, Hyperparams::with_seed(0)).unwrap();
        let text = m.to_json().unwrap();
        assert!(matches!(DetectorModel::from_json(&text[..text.len() / 2]), Err(Error::CorruptModel(_))));
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(DetectorModel::from_json(&bumped), Err(Error::VersionMismatch { found: 2, .. })));
        let back = DetectorModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
