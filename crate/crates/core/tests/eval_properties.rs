use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use bindelta::binning::{assign_hard, kmeans_fit};
use bindelta::data::{generate_synthetic, split, SynthConfig};
use bindelta::eval::{
    angle_error, compute_metrics, compute_metrics_with, MetricOptions, MetricReport,
};
use bindelta::models::{evaluate, train, Architecture, ModelVariant, TrainConfig, VariantKind};
use bindelta::so3::AxisAngle;
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = AxisAngle> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| AxisAngle::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn angle_error_is_symmetric_and_bounded(a in pose(), b in pose()) {
        let e = angle_error(&a, &b);
        prop_assert!((0.0..=PI).contains(&e));
        prop_assert_eq!(e, angle_error(&b, &a));
    }

    #[test]
    fn looser_threshold_never_lowers_accuracy(
        pairs in proptest::collection::vec((pose(), pose()), 1..40),
        t in 0.0..PI,
    ) {
        let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let cats = vec![0; preds.len()];
        let acc = |threshold: f64| {
            compute_metrics_with(&preds, &gts, &cats, &MetricOptions { threshold, ..MetricOptions::default() })
                .unwrap()
                .mean_acc
        };
        prop_assert!(acc(t) <= acc(t + 0.1));
    }

    #[test]
    fn median_ignores_sample_order(
        pairs in proptest::collection::vec((pose(), pose()), 1..40),
        rot in 0usize..40,
    ) {
        let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let cats = vec![0; preds.len()];
        let r = rot % preds.len();
        let (mut p2, mut g2) = (preds.clone(), gts.clone());
        p2.rotate_left(r);
        g2.rotate_left(r);
        p2.reverse();
        g2.reverse();
        let a = compute_metrics(&preds, &gts, &cats).unwrap();
        let b = compute_metrics(&p2, &g2, &cats).unwrap();
        prop_assert_eq!(a.mean_med_err_deg, b.mean_med_err_deg);
        prop_assert_eq!(a.mean_acc, b.mean_acc);
    }
}

#[test]
fn three_sample_example() {
    let about_z = |deg: f64| AxisAngle::new(0.0, 0.0, deg.to_radians());
    let r = compute_metrics(
        &[about_z(10.0), about_z(20.0), about_z(40.0)],
        &[AxisAngle::IDENTITY; 3],
        &[0, 0, 0],
    )
    .unwrap();
    assert!((r.mean_med_err_deg - 20.0).abs() < 1e-9);
    assert!((r.mean_acc - 2.0 / 3.0).abs() < 1e-12);
}

/// Reports from a fixed-seed pipeline: a key-pose oracle and a short
/// M_G+ training run, on two categories.
fn golden_reports() -> String {
    let mut samples = Vec::new();
    for category in 0..2 {
        let ds = generate_synthetic(&SynthConfig {
            n_samples: 600,
            feature_dim: 16,
            seed: 40 + category as u64,
            category,
            ..SynthConfig::default()
        })
        .unwrap();
        samples.extend(ds.samples);
    }
    let ds = bindelta::data::Dataset::new(samples, bindelta::data::Provenance::Synthetic).unwrap();
    let names: BTreeMap<u32, String> = [(0, "alpha".into()), (1, "beta".into())].into();
    let opts = MetricOptions {
        names,
        ..MetricOptions::default()
    };

    let mut oracle_preds = Vec::new();
    let mut oracle_gts = Vec::new();
    let mut cats = Vec::new();
    let mut trained = Vec::new();
    for category in ds.categories() {
        let (tr, va) = split(&ds.filter_category(category), 0.25, 1).unwrap();
        let dict = kmeans_fit(&tr.poses(), 8, 1).unwrap();
        for s in &va.samples {
            oracle_preds.push(*dict.key_pose(assign_hard(&s.pose, &dict)));
            oracle_gts.push(s.pose);
            cats.push(category);
        }
        let v = ModelVariant::new(VariantKind::BinDelta {
            family: bindelta::models::Family::Geodesic,
            per_bin: true,
        })
        .with_k(4);
        let tc = TrainConfig {
            epochs: 3,
            seed: 1,
            arch: Architecture {
                hidden: vec![16],
                per_bin_hidden: vec![8],
            },
            ..TrainConfig::default()
        };
        let out = train(&v, &tr, &va, &tc).unwrap();
        let mut r = evaluate(&out.model, &va, &MetricOptions::default()).unwrap();
        r.categories[0].name = opts.names[&category].clone();
        trained.extend(r.categories);
    }
    let oracle = compute_metrics_with(&oracle_preds, &oracle_gts, &cats, &opts).unwrap();
    let n = trained.len() as f64;
    let trained = MetricReport {
        mean_med_err_deg: trained.iter().map(|c| c.med_err_deg).sum::<f64>() / n,
        mean_acc: trained.iter().map(|c| c.acc).sum::<f64>() / n,
        categories: trained,
        config: serde_json::Value::Null,
    };
    format!("# key-pose oracle, K=8\n{}# M_G+, K=4, 3 epochs\n{}", oracle.to_csv(), trained.to_csv())
}

#[test]
fn fixed_seed_reports_match_the_golden_file() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/reports.csv");
    let actual = golden_reports();
    if std::env::var_os("BINDELTA_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file (set BINDELTA_BLESS=1 to create)");
    assert_eq!(actual, expected);
}

#[test]
fn csv_and_json_roundtrips() {
    let about_z = |deg: f64| AxisAngle::new(0.0, 0.0, deg.to_radians());
    let r = compute_metrics(
        &[about_z(12.5), about_z(31.0), about_z(3.0), about_z(50.0)],
        &[AxisAngle::IDENTITY; 4],
        &[0, 0, 1, 1],
    )
    .unwrap();
    assert_eq!(MetricReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    let back = MetricReport::from_csv(&r.to_csv()).unwrap();
    assert_eq!(back.to_csv(), r.to_csv());
    assert_eq!(r.to_csv().lines().next(), Some("0,1,mean"));
}
