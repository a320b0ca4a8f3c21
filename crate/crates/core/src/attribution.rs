//! Feature attribution: split statistics of boosted trees and model-agnostic
//! permutation importance, plus top-k feature selection.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::classifiers::gbt::Node;
use crate::classifiers::{predict_scores, DetectorModel, GbtParams};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::pipeline::{FeatureMask, FEATURE_DIM, FEATURE_NAMES};
use crate::util::{self, fmt_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceMetric {
    /// Total split gain.
    Gain,
    /// Total split gain divided by the number of splits.
    GainAverage,
    /// Total hessian mass at split nodes.
    Cover,
    /// Number of splits.
    Weight,
}

/// Per-feature split statistics over the whole ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeImportance {
    pub gain: Vec<f64>,
    pub gain_avg: Vec<f64>,
    pub cover: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TreeImportance {
    pub fn metric(&self, metric: ImportanceMetric) -> &[f64] {
        match metric {
            ImportanceMetric::Gain => &self.gain,
            ImportanceMetric::GainAverage => &self.gain_avg,
            ImportanceMetric::Cover => &self.cover,
            ImportanceMetric::Weight => &self.weight,
        }
    }
}

/// Gain, average gain, cover and weight per input feature of a tree ensemble.
pub fn tree_importance(params: &GbtParams) -> TreeImportance {
    let d = params.n_features;
    let mut imp = TreeImportance { gain: vec![0.0; d], gain_avg: vec![0.0; d], cover: vec![0.0; d], weight: vec![0.0; d] };
    for tree in &params.trees {
        for node in tree.splits() {
            if let Node::Split { feature, gain, cover, .. } = *node {
                imp.gain[feature] += gain;
                imp.cover[feature] += cover;
                imp.weight[feature] += 1.0;
            }
        }
    }
    for f in 0..d {
        if imp.weight[f] > 0.0 {
            imp.gain_avg[f] = imp.gain[f] / imp.weight[f];
        }
    }
    imp
}

/// One importance metric for a boosted-tree detector.
pub fn gbt_importance(model: &DetectorModel, metric: ImportanceMetric) -> Result<Vec<f64>> {
    let params = model.gbt().ok_or(Error::WrongModelKind { expected: "gbt", actual: model.kind.name() })?;
    Ok(tree_importance(params).metric(metric).to_vec())
}

/// Mean AUC drop over `repeats` seeded shuffles of each column. `x` holds rows
/// already restricted to the model's inputs. Drops are not clipped, so noise
/// can make them slightly negative.
pub fn permutation_importance(model: &DetectorModel, x: &[Vec<f64>], y: &[u8], repeats: usize, seed: u64) -> Result<Vec<f64>> {
    let base = auc(&predict_scores(model, x)?, y)?;
    let d = model.input_dim;
    let mut drops = vec![0.0; d];
    let mut work = x.to_vec();
    for (f, drop) in drops.iter_mut().enumerate() {
        let column: Vec<f64> = x.iter().map(|r| r[f]).collect();
        let mut total = 0.0;
        for r in 0..repeats {
            let mut rng = util::rng(util::derive_seed(seed, &[f as u64, r as u64]));
            let mut shuffled = column.clone();
            shuffled.shuffle(&mut rng);
            for (row, v) in work.iter_mut().zip(&shuffled) {
                row[f] = *v;
            }
            total += base - auc(&predict_scores(model, &work)?, y)?;
        }
        for (row, v) in work.iter_mut().zip(&column) {
            row[f] = *v;
        }
        *drop = if repeats > 0 { total / repeats as f64 } else { 0.0 };
    }
    Ok(drops)
}

/// Selects the `k` highest-importance features; ties go to the lower index.
pub fn reduce_features(importances: &[f64], k: usize) -> Result<FeatureMask> {
    if importances.len() != FEATURE_DIM {
        return Err(Error::DimensionMismatch { expected: FEATURE_DIM, actual: importances.len() });
    }
    if k > FEATURE_DIM {
        return Err(Error::InvalidArgument(format!("cannot keep {k} of {FEATURE_DIM} features")));
    }
    let mut order: Vec<usize> = (0..FEATURE_DIM).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    FeatureMask::from_indices(&order[..k])
}

/// Expands values over a model's masked inputs back to the 51 canonical
/// slots; unselected features get `fill`.
pub fn expand_to_full(values: &[f64], mask: Option<&FeatureMask>, fill: f64) -> Vec<f64> {
    match mask {
        None => values.to_vec(),
        Some(m) => {
            let mut out = vec![fill; FEATURE_DIM];
            for (v, i) in values.iter().zip(m.indices()) {
                out[i] = *v;
            }
            out
        }
    }
}

/// One row of the importance report.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub feature: &'static str,
    pub gain: Option<f64>,
    pub gain_avg: Option<f64>,
    pub cover: Option<f64>,
    pub weight: Option<f64>,
    pub perm_auc_drop: f64,
}

/// Builds the report rows sorted by gain (or permutation drop when tree
/// statistics are unavailable), descending, ties by feature order.
pub fn importance_rows(tree: Option<&TreeImportance>, perm: &[f64]) -> Vec<ImportanceRow> {
    let mut rows: Vec<ImportanceRow> = (0..FEATURE_DIM)
        .map(|i| ImportanceRow {
            feature: FEATURE_NAMES[i],
            gain: tree.map(|t| t.gain[i]),
            gain_avg: tree.map(|t| t.gain_avg[i]),
            cover: tree.map(|t| t.cover[i]),
            weight: tree.map(|t| t.weight[i]),
            perm_auc_drop: perm[i],
        })
        .collect();
    let key = |r: &ImportanceRow| r.gain.unwrap_or(r.perm_auc_drop);
    let index = |r: &ImportanceRow| FEATURE_NAMES.iter().position(|n| *n == r.feature).unwrap_or(0);
    rows.sort_by(|a, b| key(b).total_cmp(&key(a)).then(index(a).cmp(&index(b))));
    rows
}

pub fn write_importance_csv(rows: &[ImportanceRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "feature,gain,gain_avg,cover,weight,perm_auc_drop")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.feature,
            opt(r.gain),
            opt(r.gain_avg),
            opt(r.cover),
            opt(r.weight),
            fmt_f64(r.perm_auc_drop)
        )?;
    }
    Ok(())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    let ma = util::mean(&ra);
    let mb = util::mean(&rb);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            out[k] = r;
        }
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{train, GbtConfig, Hyperparams, ModelKind};

    #[test]
    fn untrained_ensemble_has_zero_importance() {
        let p = GbtParams::empty(GbtConfig::default(), 51);
        let imp = tree_importance(&p);
        assert!(imp.gain.iter().chain(&imp.cover).chain(&imp.weight).all(|&v| v == 0.0));
    }

    #[test]
    fn weight_counts_every_split() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.3).sin(), (i as f64 * 0.7).cos(), i as f64 % 3.0]).collect();
        let y: Vec<u8> = (0..50).map(|i| (i % 4 < 2) as u8).collect();
        let m = train(ModelKind::Gbt, &x, &y, None, Hyperparams::with_seed(0)).unwrap();
        let w = gbt_importance(&m, ImportanceMetric::Weight).unwrap();
        let splits: usize = m.gbt().unwrap().trees.iter().map(|t| t.splits().count()).sum();
        assert_eq!(w.iter().sum::<f64>(), splits as f64);
    }

    #[test]
    fn non_tree_model_is_rejected() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..8).map(|i| (i >= 4) as u8).collect();
        let m = train(ModelKind::Svm, &x, &y, None, Hyperparams::with_seed(0)).unwrap();
        assert!(matches!(gbt_importance(&m, ImportanceMetric::Gain), Err(Error::WrongModelKind { .. })));
    }

    #[test]
    fn reduce_keeps_top_k_with_index_ties() {
        let mut imp = vec![0.0; 51];
        imp[7] = 3.0;
        imp[3] = 3.0;
        imp[40] = 1.0;
        let m = reduce_features(&imp, 2).unwrap();
        assert_eq!(m.indices(), vec![3, 7]);
        assert_eq!(reduce_features(&imp, 51).unwrap(), FeatureMask::full());
        assert_eq!(reduce_features(&imp, 0).unwrap().count(), 0);
        // Zero-importance ties fall back to index order.
        assert_eq!(reduce_features(&imp, 4).unwrap().indices(), vec![0, 3, 7, 40]);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }
}
