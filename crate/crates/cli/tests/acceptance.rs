//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use bindelta::binning::{quantization_floor, Composition};
use bindelta::data::{Dataset, SynthConfig};
use bindelta::eval::MeanStd;
use bindelta::models::VariantKind;
use bindelta_cli::runner::{ablate, cmd_train, train_run, Sweep, SweepPoint};
use bindelta_cli::selftest::{
    check_bi_invariance, check_composition, check_exp_log_roundtrip, check_metric_fixture,
    check_published_table_fixture, check_trace_formula, check_variant_gradients, CheckResult,
};
use bindelta_cli::{DataSource, ExperimentConfig};

const SO3_SAMPLES: usize = 10_000;
const SO3_BUDGET: Duration = Duration::from_secs(5);
const GRADIENT_PROBES: usize = 100;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const COMPOSITION_SAMPLES: usize = 10_000;
const FLOOR_SLACK_DEG: f64 = 0.5;
const FLOOR_REFINEMENT: f64 = 0.8;
const FLOOR_BUDGET: Duration = Duration::from_secs(600);
const MULTIMODAL_RATIO: f64 = 1.5;
const SEEDS: [u64; 3] = [0, 1, 2];
const SWEEP_BUDGET: Duration = Duration::from_secs(1800);
const SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn config(variant: &str, k: Option<usize>, symmetry_order: u32) -> ExperimentConfig {
    ExperimentConfig {
        variant: variant.into(),
        k,
        seed: SEED,
        data: DataSource::Synthetic(SynthConfig {
            symmetry_order,
            ..SynthConfig::default()
        }),
        ..ExperimentConfig::default()
    }
}

fn dataset(cfg: &ExperimentConfig) -> Dataset {
    cfg.load_dataset().expect("synthetic data")
}

fn mean_med_err(cfg: &ExperimentConfig, ds: &Dataset) -> MeanStd {
    let errs: Vec<f64> = SEEDS
        .iter()
        .map(|&s| train_run(cfg, ds, s).expect("training").report.mean_med_err_deg)
        .collect();
    MeanStd::of(&errs)
}

fn all_pass(checks: &[CheckResult]) -> (bool, String) {
    let mut s = String::new();
    for c in checks {
        let _ = write!(s, "{} {:.1e}/{:.0e} ", c.name, c.worst, c.tolerance);
    }
    (checks.iter().all(CheckResult::passed), s.trim_end().to_string())
}

fn so3_suite() -> Verdict {
    let t = Instant::now();
    let log = bindelta::so3::log_map;
    let checks = [
        check_exp_log_roundtrip(log, SO3_SAMPLES, SEED),
        check_trace_formula(log, SO3_SAMPLES, SEED + 1),
        check_bi_invariance(SO3_SAMPLES, SEED + 2),
    ];
    let elapsed = t.elapsed();
    let (ok, detail) = all_pass(&checks);
    Verdict::new(
        ok && elapsed < SO3_BUDGET,
        format!("{detail}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let checks: Vec<CheckResult> = VariantKind::ALL
        .into_iter()
        .enumerate()
        .map(|(i, k)| check_variant_gradients(k, GRADIENT_PROBES, SEED + i as u64).expect("gradient check"))
        .collect();
    let elapsed = t.elapsed();
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let min_probes = checks.iter().map(|c| c.probes).min().unwrap_or(0);
    let ok = checks.len() == 11 && checks.iter().all(CheckResult::passed) && min_probes >= GRADIENT_PROBES;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} {:.2e} ({})", c.name, c.worst, c.note.as_deref().unwrap_or("")))
        .collect();
    Verdict::new(
        ok && elapsed < GRADIENT_BUDGET,
        format!(
            "{} variants, worst rel err {worst:.1e}, min probes {min_probes}, failed {failed:?}; {:.1}s",
            checks.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn composition_roundtrip() -> Verdict {
    let checks: Vec<CheckResult> = [Composition::Additive, Composition::Riemannian]
        .into_iter()
        .map(|m| check_composition(m, COMPOSITION_SAMPLES, SEED).expect("composition check"))
        .collect();
    let (ok, detail) = all_pass(&checks);
    Verdict::new(ok, detail)
}

fn quantization_floor_oracle() -> Verdict {
    let t = Instant::now();
    let c_cfg = config("C", Some(16), 1);
    let g_cfg = config("M_G", Some(16), 1);
    let ds = dataset(&c_cfg);
    let c = train_run(&c_cfg, &ds, SEED).expect("C");
    let g = train_run(&g_cfg, &ds, SEED).expect("M_G");
    let run = &c.categories[0];
    let dict = run.model.dictionary.as_ref().expect("dictionary");
    let floor = quantization_floor(dict, &run.val.poses()).expect("floor").median_deg;
    let same_dict = g.categories[0].model.dictionary.as_ref() == Some(dict);
    let c_err = c.report.mean_med_err_deg;
    let g_err = g.report.mean_med_err_deg;
    let elapsed = t.elapsed();
    Verdict::new(
        same_dict && c_err >= floor - FLOOR_SLACK_DEG && g_err <= FLOOR_REFINEMENT * floor && elapsed < FLOOR_BUDGET,
        format!(
            "train {} / val {}, floor {floor:.2}°, C {c_err:.2}°, M_G {g_err:.2}° ({:.0}% below floor); {:.0}s",
            ds.len() - run.val.len(),
            run.val.len(),
            100.0 * (1.0 - g_err / floor),
            elapsed.as_secs_f64()
        ),
    )
}

fn multimodality() -> Verdict {
    let r_cfg = config("R_G", None, 2);
    let g_cfg = config("M_G", Some(16), 2);
    let ds = dataset(&r_cfg);
    let r = mean_med_err(&r_cfg, &ds);
    let g = mean_med_err(&g_cfg, &ds);
    Verdict::new(
        r.mean >= MULTIMODAL_RATIO * g.mean,
        format!(
            "s=2: R_G {:.2}±{:.2}°, M_G {:.2}±{:.2}°, ratio {:.2} (need ≥ {MULTIMODAL_RATIO})",
            r.mean,
            r.std,
            g.mean,
            g.std,
            r.mean / g.mean
        ),
    )
}

fn baseline_ordering() -> Verdict {
    let g_cfg = config("R_G", None, 1);
    let e_cfg = config("R_E", None, 1);
    let ds = dataset(&g_cfg);
    let g = mean_med_err(&g_cfg, &ds);
    let e = mean_med_err(&e_cfg, &ds);
    Verdict::new(
        g.mean < e.mean,
        format!("R_G {:.2}±{:.2}°, R_E {:.2}±{:.2}°", g.mean, g.std, e.mean, e.std),
    )
}

fn describe(points: &[SweepPoint]) -> String {
    points
        .iter()
        .map(|p| format!("{} {:.2}±{:.2}°", p.setting, p.summary.med_err_deg.mean, p.summary.med_err_deg.std))
        .collect::<Vec<_>>()
        .join(", ")
}

fn ablation_trends() -> Verdict {
    let t = Instant::now();
    let mut k_cfg = config("M_G", None, 1);
    k_cfg.trials = SEEDS.len();
    let ds = dataset(&k_cfg);
    let ks = ablate(&k_cfg, &ds, &Sweep::K(vec![4, 16, 64])).expect("K sweep");
    let k_elapsed = t.elapsed();
    // each step may rise by at most the larger of the two stds
    let k_ok = ks.windows(2).all(|w| {
        let (a, b) = (&w[0].summary.med_err_deg, &w[1].summary.med_err_deg);
        b.mean <= a.mean + a.std.max(b.std)
    });

    let t = Instant::now();
    let mut a_cfg = config("M_G+", Some(16), 1);
    a_cfg.trials = SEEDS.len();
    let alphas = ablate(&a_cfg, &ds, &Sweep::Alpha(vec![0.1, 1.0, 10.0])).expect("alpha sweep");
    let a_elapsed = t.elapsed();
    let best = alphas
        .iter()
        .min_by(|a, b| a.summary.med_err_deg.mean.total_cmp(&b.summary.med_err_deg.mean))
        .expect("non-empty sweep");
    let a_ok = best.setting == "alpha=10";

    Verdict::new(
        k_ok && a_ok && k_elapsed < SWEEP_BUDGET && a_elapsed < SWEEP_BUDGET,
        format!(
            "M_G [{}] {}; M_G+ [{}] best {} {}; {:.0}s + {:.0}s",
            describe(&ks),
            if k_ok { "non-increasing" } else { "RISES" },
            describe(&alphas),
            best.setting,
            if a_ok { "ok" } else { "WRONG" },
            k_elapsed.as_secs_f64(),
            a_elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Verdict {
    let mut cfg = config("M_G+", Some(16), 1);
    if let DataSource::Synthetic(s) = &mut cfg.data {
        s.n_samples = 1500;
    }
    cfg.epochs = 5;
    let read = |dir: &std::path::Path, f: &str| std::fs::read(dir.join(f)).expect("run output");
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    cmd_train(&cfg, a.path()).expect("first run");
    cmd_train(&cfg, b.path()).expect("second run");
    let history_same = read(a.path(), "cat_0/history.csv") == read(b.path(), "cat_0/history.csv");
    let report_same = read(a.path(), "report.csv") == read(b.path(), "report.csv");
    Verdict::new(
        history_same && report_same,
        format!("history identical: {history_same}, report identical: {report_same}"),
    )
}

fn metric_fixtures() -> Verdict {
    let checks = [
        check_metric_fixture().expect("metric fixture"),
        check_published_table_fixture().expect("published table fixture"),
    ];
    let (ok, detail) = all_pass(&checks);
    Verdict::new(ok, detail)
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        ("so3 suite", so3_suite),
        ("gradient suite", gradient_suite),
        ("composition roundtrip", composition_roundtrip),
        ("quantization floor oracle", quantization_floor_oracle),
        ("multimodality", multimodality),
        ("baseline ordering", baseline_ordering),
        ("ablation trends", ablation_trends),
        ("determinism", determinism),
        ("metric fixtures", metric_fixtures),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("[PRIMARY] criterion {} {name}: {status} ({})", i + 1, v.detail);
        if !v.pass {
            failed.push(i + 1);
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
