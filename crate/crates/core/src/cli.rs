//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attribution::{expand_to_full, importance_rows, permutation_importance, tree_importance, write_importance_csv};
use crate::classifiers::{self, load_model, predict_scores, save_model, Hyperparams, ModelKind};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, write_roc_csv, DEFAULT_THRESHOLD};
use crate::mmd::MmdReference;
use crate::pipeline::{build_dataset, standardize, Extractor, FeatureMask, FeatureTable, RawSample, ScalerState, FEATURE_DIM};
use crate::separability::{class_displacement_ratio, diagnose_pair, write_diagnostics_csv};
use crate::synth::{self, make_benchmark, Attack, CleanKind, ImageFormat, Split, SynthSpec, MANIFEST_FILE};
use crate::util::derive_seed;
use crate::workflow::{cross_evaluate, ExtractedBenchmark};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (model format_version 1)");

#[derive(Debug, Parser)]
#[command(name = "featurelens", version = VERSION, about = "Adversarial image detection from handcrafted features")]
pub struct Cli {
    /// Worker threads for image generation and extraction (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clean/perturbed benchmark with a manifest.
    Synth(SynthArgs),
    /// Extract feature tables from a manifest.
    Extract(ExtractArgs),
    /// Train a detector on a standardized feature table.
    Fit(FitArgs),
    /// Score a feature table and write metrics and the ROC curve.
    Eval(EvalArgs),
    /// Train on each benchmark and test on every other one.
    CrossEval(CrossEvalArgs),
    /// Feature importances of a trained detector.
    Explain(ExplainArgs),
    /// Feature displacement and pairwise separators for clean/perturbed pairs.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1200)]
    pub n: usize,
    #[arg(long, default_value = "mixed")]
    pub kind: CleanKind,
    #[arg(long, default_value = "sign")]
    pub attack: Attack,
    #[arg(long, default_value_t = synth::DEFAULT_EPSILON)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image encoding: `raw` (exact text matrix) or `png16`.
    #[arg(long, default_value = "raw")]
    pub format: ImageFormat,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fitted scaler; together with `--ref` switches to standardized output.
    #[arg(long, requires = "reference")]
    pub scaler: Option<PathBuf>,
    #[arg(long = "ref", requires = "scaler")]
    pub reference: Option<PathBuf>,
    /// Only emit rows of this split.
    #[arg(long)]
    pub split: Option<Split>,
    /// Seed for the MMD reference subsample.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub svm_c: Option<f64>,
    #[arg(long)]
    pub svm_gamma: Option<f64>,
    /// Scaler and reference to embed in the model file.
    #[arg(long, requires = "reference")]
    pub scaler: Option<PathBuf>,
    #[arg(long = "ref", requires = "scaler")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct CrossEvalArgs {
    /// Comma-separated benchmark directories (or manifest files).
    #[arg(long, value_delimiter = ',', required = true)]
    pub benchmarks: Vec<PathBuf>,
    #[arg(long, default_value = "gbt")]
    pub model_kind: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    #[arg(long, default_value = "mixed")]
    pub kind: CleanKind,
    #[arg(long, default_value = "sign")]
    pub attack: Attack,
    #[arg(long, default_value_t = synth::DEFAULT_EPSILON)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standardize with these artifacts instead of fitting them on the pairs.
    #[arg(long, requires = "reference")]
    pub scaler: Option<PathBuf>,
    #[arg(long = "ref", requires = "scaler")]
    pub reference: Option<PathBuf>,
    /// Use the 50 raw structural features without standardization.
    #[arg(long, conflicts_with = "scaler")]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be positive".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::CrossEval(a) => cmd_cross_eval(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn load_artifacts(scaler: &Path, reference: &Path) -> Result<(ScalerState, MmdReference)> {
    let scaler: ScalerState = read_json(scaler)?;
    let reference: MmdReference = read_json(reference)?;
    if scaler.dim() != FEATURE_DIM {
        return Err(Error::DimensionMismatch { expected: FEATURE_DIM, actual: scaler.dim() });
    }
    Ok((scaler, reference))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec { n: a.n, kind: a.kind, attack: a.attack, epsilon: a.eps, seed: a.seed };
    let rows = make_benchmark(&spec, &a.out, a.format)?;
    eprintln!("wrote {} images and {}", rows.len(), a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let needed: Vec<Split> = match (a.split, a.scaler.is_some()) {
        (None, _) => vec![Split::Train, Split::Valid, Split::Test],
        (Some(s), true) => vec![s],
        // Fitting always needs the training rows.
        (Some(s), false) => vec![Split::Train, s],
    };
    let bench = ExtractedBenchmark::from_manifest_splits(&a.manifest, &needed)?;
    eprintln!("extracted {} images", bench.len());
    match (&a.scaler, &a.reference) {
        (Some(s), Some(r)) => {
            let (scaler, reference) = load_artifacts(s, r)?;
            bench.standardized_table(&scaler, &reference, a.split)?.write(&a.out)?;
        }
        _ => {
            let (scaler, reference) = bench.fit_standardizer(a.seed)?;
            bench.raw_table(a.split).write(&a.out)?;
            let dir = a.out.parent().unwrap_or(Path::new("."));
            write_json(&scaler, &dir.join("scaler.json"))?;
            write_json(&reference, &dir.join("ref.json"))?;
        }
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let table = FeatureTable::read(&a.features)?;
    let mask = a.mask.as_deref().map(FeatureMask::read).transpose()?;
    let x = table.matrix(mask.as_ref())?;
    let valid = a.valid.as_deref().map(FeatureTable::read).transpose()?;
    let valid_x = valid.as_ref().map(|v| v.matrix(mask.as_ref())).transpose()?;
    let mut hyper = Hyperparams::with_seed(a.seed);
    if let Some(c) = a.svm_c {
        hyper.svm.c = c;
    }
    if a.svm_gamma.is_some() {
        hyper.svm.gamma = a.svm_gamma;
    }
    let valid_pair = valid.as_ref().zip(valid_x.as_ref()).map(|(v, vx)| (vx.as_slice(), v.labels.as_slice()));
    let mut model = classifiers::train(a.model, &x, &table.labels, valid_pair, hyper)?;
    model.feature_mask = mask;
    if let (Some(s), Some(r)) = (&a.scaler, &a.reference) {
        let (scaler, reference) = load_artifacts(s, r)?;
        model.scaler = Some(scaler);
        model.mmd_reference = Some(reference);
    }
    save_model(&model, &a.out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let table = FeatureTable::read(&a.features)?;
    let x = table.matrix(model.feature_mask.as_ref())?;
    let scores = predict_scores(&model, &x)?;
    let report = evaluate(&scores, &table.labels, a.threshold)?;
    write_json(&report, &a.report)?;
    if let Some(roc) = &a.roc {
        let mut out = BufWriter::new(fs::File::create(roc)?);
        write_roc_csv(&report.roc, &mut out)?;
        out.flush()?;
    }
    println!("accuracy {:.4} f1 {:.4} auc {:.4}", report.accuracy, report.f1, report.auc);
    Ok(())
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn cmd_cross_eval(a: CrossEvalArgs) -> Result<()> {
    let benches = a
        .benchmarks
        .iter()
        .map(|p| ExtractedBenchmark::from_manifest(&manifest_path(p)))
        .collect::<Result<Vec<_>>>()?;
    let matrix = cross_evaluate(&benches, a.model_kind, Hyperparams::with_seed(a.seed))?;
    let mut out = BufWriter::new(fs::File::create(&a.out)?);
    matrix.write_csv(&mut out)?;
    out.flush()?;
    for (i, name) in matrix.names.iter().enumerate() {
        let (m, s) = matrix.row_accuracy_stats(i);
        println!("{name}: accuracy {:.2} ± {:.2}", 100.0 * m, 100.0 * s);
    }
    Ok(())
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let table = FeatureTable::read(&a.features)?;
    let x = table.matrix(model.feature_mask.as_ref())?;
    let mask = model.feature_mask.as_ref();
    let perm = permutation_importance(&model, &x, &table.labels, a.repeats, a.seed)?;
    let perm = expand_to_full(&perm, mask, 0.0);
    let tree = model.gbt().map(|p| {
        let t = tree_importance(p);
        crate::attribution::TreeImportance {
            gain: expand_to_full(&t.gain, mask, 0.0),
            gain_avg: expand_to_full(&t.gain_avg, mask, 0.0),
            cover: expand_to_full(&t.cover, mask, 0.0),
            weight: expand_to_full(&t.weight, mask, 0.0),
        }
    });
    if tree.is_none() {
        eprintln!("note: {} model has no split statistics; only permutation importance is reported", model.kind);
    }
    let rows = importance_rows(tree.as_ref(), &perm);
    let mut out = BufWriter::new(fs::File::create(&a.out)?);
    write_importance_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    if a.pairs < 2 {
        return Err(Error::TooFewSamples { needed: 2, actual: a.pairs });
    }
    let extractor = Extractor::canonical();
    let mut raw_clean = Vec::with_capacity(a.pairs);
    let mut raw_adv = Vec::with_capacity(a.pairs);
    for i in 0..a.pairs as u64 {
        let kind = match a.kind {
            CleanKind::Mixed => CleanKind::BASIC[i as usize % CleanKind::BASIC.len()],
            k => k,
        };
        let x = synth::gen_clean(kind, derive_seed(a.seed, &[0, i]));
        let x_adv = synth::perturb(&x, a.attack, a.eps, derive_seed(a.seed, &[1, i]))?;
        raw_clean.push(extractor.extract_raw50(&x)?);
        raw_adv.push(extractor.extract_raw50(&x_adv)?);
    }
    let (clean, adv): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if a.raw {
        (raw_clean.iter().map(|r| r.to_vec()).collect(), raw_adv.iter().map(|r| r.to_vec()).collect())
    } else if let (Some(s), Some(r)) = (&a.scaler, &a.reference) {
        let (scaler, reference) = load_artifacts(s, r)?;
        let apply = |rows: &[[f64; 50]]| -> Result<Vec<Vec<f64>>> {
            rows.iter().map(|raw| Ok(standardize(raw, &scaler, &reference)?.to_vec())).collect()
        };
        (apply(&raw_clean)?, apply(&raw_adv)?)
    } else {
        // Fit the standardizer on the pairs themselves.
        let samples: Vec<RawSample> = raw_clean
            .iter()
            .map(|r| RawSample { raw: *r, label: 0, train: true })
            .chain(raw_adv.iter().map(|r| RawSample { raw: *r, label: 1, train: true }))
            .collect();
        let ds = build_dataset(&samples, a.seed, None)?;
        let mut rows: Vec<Vec<f64>> = ds.features.iter().map(|f| f.to_vec()).collect();
        let adv = rows.split_off(a.pairs);
        (rows, adv)
    };
    let diags = clean.iter().zip(&adv).map(|(c, v)| diagnose_pair(c, v)).collect::<Result<Vec<_>>>()?;
    let mut out = BufWriter::new(fs::File::create(&a.out)?);
    write_diagnostics_csv(&diags, &mut out)?;
    out.flush()?;
    let separated = diags.iter().filter(|d| d.f_clean < 0.0 && d.f_adv > 0.0).count();
    println!("separated pairs {separated}/{}", diags.len());
    println!("inter/intra displacement ratio {:.4}", class_displacement_ratio(&clean, &adv)?);
    Ok(())
}
