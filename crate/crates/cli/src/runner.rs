//! The `discretize`, `train`, `eval` and `ablate` commands. One model (and
//! one dictionary) is fitted per category id.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use bindelta::binning::{kmeans_fit, quantization_floor};
use bindelta::data::{split, Dataset};
use bindelta::eval::{
    angle_error, emit_report, metrics_from_errors, summarize_trials, MetricOptions, MetricReport,
    ReportFormat, TrialSummary,
};
use bindelta::models::{
    history_to_csv, load_bundle, save_bundle, train, EpochRecord, PoseModel, TrainError,
};

use crate::config::{ExperimentConfig, RunManifest};
use crate::RunError;

pub struct CategoryRun {
    pub category: u32,
    pub model: PoseModel,
    pub history: Vec<EpochRecord>,
    pub val: Dataset,
}

pub struct TrainRun {
    pub categories: Vec<CategoryRun>,
    /// Validation metrics over all categories.
    pub report: MetricReport,
}

fn category_dir(out: &Path, category: u32) -> PathBuf {
    out.join(format!("cat_{category}"))
}

/// Angle errors (radians) of `model` on `ds`.
pub fn prediction_errors(model: &PoseModel, ds: &Dataset) -> Result<Vec<f64>, RunError> {
    ds.samples
        .iter()
        .map(|s| Ok(angle_error(&model.predict_pose(&s.features)?, &s.pose)))
        .collect()
}

fn report_over(
    parts: &[(&PoseModel, &Dataset)],
    cfg: &ExperimentConfig,
) -> Result<MetricReport, RunError> {
    let mut errors = Vec::new();
    let mut cats = Vec::new();
    for (model, ds) in parts {
        errors.extend(prediction_errors(model, ds)?);
        cats.extend(ds.samples.iter().map(|s| s.category));
    }
    let mut report = metrics_from_errors(&errors, &cats, &MetricOptions::default())?;
    report.config = serde_json::json!({
        "variant": cfg.variant,
        "seed": cfg.seed,
        "config_sha256": cfg.hash(),
    });
    Ok(report)
}

/// Trains one model per category with trial seed `seed`. Nothing is written.
pub fn train_run(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<TrainRun, RunError> {
    let variant = cfg.model_variant()?;
    let tc = cfg.train_config(seed);
    let mut runs = Vec::new();
    for category in ds.categories() {
        let (tr, va) = split(&ds.filter_category(category), cfg.val_fraction, seed)?;
        match train(&variant, &tr, &va, &tc) {
            Ok(out) => runs.push(CategoryRun {
                category,
                model: out.model,
                history: out.history,
                val: va,
            }),
            Err(TrainError::Invalid(e)) => return Err(e.into()),
            Err(TrainError::Diverged {
                epoch,
                reason,
                last_good,
                history,
            }) => {
                return Err(RunError::Diverged {
                    category,
                    epoch,
                    reason,
                    last_good: Some(last_good),
                    history,
                })
            }
        }
    }
    let parts: Vec<(&PoseModel, &Dataset)> = runs.iter().map(|r| (&r.model, &r.val)).collect();
    let report = report_over(&parts, cfg)?;
    Ok(TrainRun {
        categories: runs,
        report,
    })
}

/// `train`: bundle and `history.csv` per category, plus the manifest and
/// the validation report. A diverged category leaves its last good
/// parameters in `cat_<id>/last_good`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainRun, RunError> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    RunManifest::new("train", cfg, &ds).write(out)?;
    let run = match train_run(cfg, &ds, cfg.seed) {
        Ok(run) => run,
        Err(RunError::Diverged {
            category,
            epoch,
            reason,
            last_good: Some(model),
            history,
        }) => {
            let dir = category_dir(out, category);
            save_bundle(&model, cfg.seed, &dir.join("last_good"))?;
            std::fs::write(dir.join("history.csv"), history_to_csv(&history))?;
            return Err(RunError::Diverged {
                category,
                epoch,
                reason: format!("{reason}; last good parameters in {}", dir.join("last_good").display()),
                last_good: None,
                history,
            });
        }
        Err(e) => return Err(e),
    };
    for c in &run.categories {
        let dir = category_dir(out, c.category);
        save_bundle(&c.model, cfg.seed, &dir.join("bundle"))?;
        std::fs::write(dir.join("history.csv"), history_to_csv(&c.history))?;
    }
    emit_report(&run.report, ReportFormat::Json, &out.join("report.json"))?;
    emit_report(&run.report, ReportFormat::Csv, &out.join("report.csv"))?;
    Ok(run)
}

/// Which samples `eval` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    /// The validation split the run was trained against.
    Val,
    All,
}

impl FromStr for EvalSplit {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "val" => Ok(EvalSplit::Val),
            "all" => Ok(EvalSplit::All),
            _ => Err(RunError::Usage(format!("split must be 'val' or 'all', got '{s}'"))),
        }
    }
}

/// `eval`: scores the bundles of a finished `train` run. `data_cfg`
/// replaces the run's own data source when given.
pub fn cmd_eval(
    run_dir: &Path,
    data_cfg: Option<&ExperimentConfig>,
    which: EvalSplit,
) -> Result<MetricReport, RunError> {
    let text = std::fs::read_to_string(run_dir.join("manifest.json"))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(bindelta::Error::from)?;
    let cfg = &manifest.config;
    let ds = data_cfg.unwrap_or(cfg).load_dataset()?;
    let mut models = Vec::new();
    for category in ds.categories() {
        let bundle = category_dir(run_dir, category).join("bundle");
        if !bundle.exists() {
            return Err(RunError::Usage(format!(
                "run has no model for category {category} ({})",
                bundle.display()
            )));
        }
        let (model, _) = load_bundle(&bundle)?;
        let subset = ds.filter_category(category);
        let subset = match which {
            EvalSplit::Val => split(&subset, cfg.val_fraction, cfg.seed)?.1,
            EvalSplit::All => subset,
        };
        models.push((model, subset));
    }
    let parts: Vec<(&PoseModel, &Dataset)> = models.iter().map(|(m, d)| (m, d)).collect();
    let report = report_over(&parts, cfg)?;
    emit_report(&report, ReportFormat::Json, &run_dir.join("eval_report.json"))?;
    emit_report(&report, ReportFormat::Csv, &run_dir.join("eval_report.csv"))?;
    Ok(report)
}

/// Quantization floor of one dictionary on the validation poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorRecord {
    pub category: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub median_deg: f64,
    pub mean_deg: f64,
    pub n: usize,
}

/// `discretize`: one dictionary per category and K in `cfg.k_values`,
/// written to `dictionaries/`, and `floor.json` / `floor.csv`.
pub fn cmd_discretize(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<FloorRecord>, RunError> {
    cfg.validate()?;
    if cfg.k_values.is_empty() {
        return Err(RunError::Usage("no K values to discretize".into()));
    }
    let ds = cfg.load_dataset()?;
    RunManifest::new("discretize", cfg, &ds).write(out)?;
    let dict_dir = out.join("dictionaries");
    std::fs::create_dir_all(&dict_dir)?;
    let mut records = Vec::new();
    for category in ds.categories() {
        let (tr, va) = split(&ds.filter_category(category), cfg.val_fraction, cfg.seed)?;
        for &k in &cfg.k_values {
            let dict = kmeans_fit(&tr.poses(), k, cfg.seed)?;
            dict.save(&dict_dir.join(format!("cat_{category}_K{k}.json")))?;
            let f = quantization_floor(&dict, &va.poses())?;
            records.push(FloorRecord {
                category,
                k,
                median_deg: f.median_deg,
                mean_deg: f.mean_deg,
                n: f.n,
            });
        }
    }
    let mut csv = String::from("category,K,median_deg,mean_deg,n\n");
    for r in &records {
        let _ = writeln!(csv, "{},{},{},{},{}", r.category, r.k, r.median_deg, r.mean_deg, r.n);
    }
    std::fs::write(out.join("floor.csv"), csv)?;
    std::fs::write(
        out.join("floor.json"),
        serde_json::to_string_pretty(&records).map_err(bindelta::Error::from)?,
    )?;
    Ok(records)
}

/// A one-parameter sweep, written `K=4,16,64` or `alpha=0.1,1,10`.
#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    K(Vec<usize>),
    Alpha(Vec<f64>),
}

impl FromStr for Sweep {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, RunError> {
        let usage = |m: &str| RunError::Usage(format!("sweep '{s}': {m}"));
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| usage("expected K=... or alpha=..."))?;
        let items: Vec<&str> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .collect();
        if items.is_empty() {
            return Err(usage("empty value list"));
        }
        match key.trim() {
            "K" | "k" => items
                .iter()
                .map(|v| v.parse().map_err(|_| usage("K values must be positive integers")))
                .collect::<Result<_, _>>()
                .map(Sweep::K),
            "alpha" => items
                .iter()
                .map(|v| v.parse().map_err(|_| usage("alpha values must be numbers")))
                .collect::<Result<_, _>>()
                .map(Sweep::Alpha),
            other => Err(usage(&format!("unknown parameter '{other}'"))),
        }
    }
}

impl Sweep {
    fn settings(&self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        match self {
            Sweep::K(ks) => ks
                .iter()
                .map(|&k| (format!("K={k}"), ExperimentConfig { k: Some(k), ..base.clone() }))
                .collect(),
            Sweep::Alpha(alphas) => alphas
                .iter()
                .map(|&a| (format!("alpha={a}"), ExperimentConfig { alpha: Some(a), ..base.clone() }))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricReport>,
    pub summary: TrialSummary,
}

/// Trains every sweep setting with seeds `seed, seed + 1, …` (`cfg.trials`
/// of them) on one dataset. Points are returned in sweep order.
pub fn ablate(cfg: &ExperimentConfig, ds: &Dataset, sweep: &Sweep) -> Result<Vec<SweepPoint>, RunError> {
    if cfg.trials == 0 {
        return Err(RunError::Usage("trials must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|t| cfg.seed + t).collect();
    let mut points = Vec::new();
    for (setting, point_cfg) in sweep.settings(cfg) {
        point_cfg.validate()?;
        let reports = seeds
            .iter()
            .map(|&s| train_run(&point_cfg, ds, s).map(|r| r.report))
            .collect::<Result<Vec<_>, _>>()?;
        points.push(SweepPoint {
            setting,
            seeds: seeds.clone(),
            summary: summarize_trials(&reports),
            reports,
        });
    }
    Ok(points)
}

/// Two rows per setting (MedErr, then Acc): per-category means over trials,
/// the mean over categories and its standard deviation across trials.
pub fn ablation_table(points: &[SweepPoint]) -> String {
    let names: Vec<String> = points
        .first()
        .and_then(|p| p.reports.first())
        .map(|r| r.categories.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default();
    let mut out = format!("setting,metric,{},mean,std\n", names.join(","));
    for p in points {
        let per_cat = |f: &dyn Fn(&bindelta::eval::CategoryMetrics) -> f64| -> Vec<String> {
            (0..names.len())
                .map(|i| {
                    let v: f64 = p.reports.iter().map(|r| f(&r.categories[i])).sum::<f64>();
                    format!("{:.4}", v / p.reports.len() as f64)
                })
                .collect()
        };
        let s = &p.summary;
        let _ = writeln!(
            out,
            "{},MedErr,{},{:.4},{:.4}",
            p.setting,
            per_cat(&|c| c.med_err_deg).join(","),
            s.med_err_deg.mean,
            s.med_err_deg.std
        );
        let _ = writeln!(
            out,
            "{},Acc,{},{:.4},{:.4}",
            p.setting,
            per_cat(&|c| c.acc).join(","),
            s.acc.mean,
            s.acc.std
        );
    }
    out
}

/// `ablate`: `ablation.csv` and `ablation.json` in `out`.
pub fn cmd_ablate(cfg: &ExperimentConfig, sweep: &Sweep, out: &Path) -> Result<Vec<SweepPoint>, RunError> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    RunManifest::new("ablate", cfg, &ds).write(out)?;
    let points = ablate(cfg, &ds, sweep)?;
    std::fs::write(out.join("ablation.csv"), ablation_table(&points))?;
    std::fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&points).map_err(bindelta::Error::from)?,
    )?;
    Ok(points)
}
