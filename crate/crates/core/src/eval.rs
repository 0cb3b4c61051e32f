//! Median angle error and accuracy at π/6, per category and averaged.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::so3::{self, AxisAngle, RotationMatrix};

/// Geodesic angle between two poses, in radians.
pub fn angle_error(y_pred: &AxisAngle, y_star: &AxisAngle) -> f64 {
    let a = RotationMatrix::from_raw(so3::rodrigues(&y_pred.0));
    let b = RotationMatrix::from_raw(so3::rodrigues(&y_star.0));
    so3::geodesic_distance(&a, &b)
}

/// Lower-middle order statistic (the ⌈n/2⌉-th smallest). Sorts in place.
/// Returns NaN for an empty slice.
pub fn median_lower(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Average of the two middle order statistics for even counts.
pub fn median_interpolated(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianRule {
    #[default]
    LowerMiddle,
    Interpolated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricOptions {
    pub median: MedianRule,
    /// Accuracy counts errors strictly below this angle (radians).
    pub threshold: f64,
    /// Display names by category id; ids without a name print as numbers.
    pub names: BTreeMap<u32, String>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            median: MedianRule::LowerMiddle,
            threshold: PI / 6.0,
            names: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub name: String,
    pub med_err_deg: f64,
    pub acc: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub categories: Vec<CategoryMetrics>,
    /// Unweighted average over categories.
    pub mean_med_err_deg: f64,
    pub mean_acc: f64,
    /// Free-form echo of the run that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl MetricReport {
    fn from_categories(categories: Vec<CategoryMetrics>) -> Self {
        let n = categories.len().max(1) as f64;
        MetricReport {
            mean_med_err_deg: categories.iter().map(|c| c.med_err_deg).sum::<f64>() / n,
            mean_acc: categories.iter().map(|c| c.acc).sum::<f64>() / n,
            categories,
            config: serde_json::Value::Null,
        }
    }

    pub fn category(&self, name: &str) -> Option<&CategoryMetrics> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Header of category names then `mean`; first row MedErr in degrees
    /// (2 decimals), second row accuracy (4 decimals).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.categories.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(out, "{},mean", names.join(","));
        let med: Vec<String> = self
            .categories
            .iter()
            .map(|c| format!("{:.2}", c.med_err_deg))
            .collect();
        let _ = writeln!(out, "{},{:.2}", med.join(","), self.mean_med_err_deg);
        let acc: Vec<String> = self
            .categories
            .iter()
            .map(|c| format!("{:.4}", c.acc))
            .collect();
        let _ = writeln!(out, "{},{:.4}", acc.join(","), self.mean_acc);
        out
    }

    /// Parses the table layout written by [`MetricReport::to_csv`]. The mean
    /// column is taken as stored, not recomputed. Counts are not part of the
    /// table and come back as zero.
    pub fn from_csv(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| invalid("report table is empty"))?
            .split(',')
            .map(str::trim)
            .collect();
        if header.last() != Some(&"mean") {
            return Err(invalid("report header must end with 'mean'"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.take(2).enumerate() {
            let values = line
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| Error::Parse {
                        row: i + 2,
                        message: format!("'{v}': {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != header.len() {
                return Err(Error::Parse {
                    row: i + 2,
                    message: format!("expected {} columns, found {}", header.len(), values.len()),
                });
            }
            rows.push(values);
        }
        if rows.len() != 2 {
            return Err(invalid("report table needs a MedErr row and an accuracy row"));
        }
        let n = header.len() - 1;
        let categories = (0..n)
            .map(|i| CategoryMetrics {
                name: header[i].to_string(),
                med_err_deg: rows[0][i],
                acc: rows[1][i],
                count: 0,
            })
            .collect();
        Ok(MetricReport {
            categories,
            mean_med_err_deg: rows[0][n],
            mean_acc: rows[1][n],
            config: serde_json::Value::Null,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn emit_report(r: &MetricReport, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => r.to_csv(),
        ReportFormat::Json => r.to_json()?,
    };
    std::fs::write(path, body)?;
    Ok(())
}

pub fn compute_metrics(
    preds: &[AxisAngle],
    gts: &[AxisAngle],
    categories: &[u32],
) -> Result<MetricReport> {
    compute_metrics_with(preds, gts, categories, &MetricOptions::default())
}

pub fn compute_metrics_with(
    preds: &[AxisAngle],
    gts: &[AxisAngle],
    categories: &[u32],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    if preds.len() != gts.len() || preds.len() != categories.len() {
        return Err(invalid(format!(
            "length mismatch: {} predictions, {} ground truths, {} categories",
            preds.len(),
            gts.len(),
            categories.len()
        )));
    }
    let errors: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| angle_error(p, g))
        .collect();
    metrics_from_errors(&errors, categories, opts)
}

/// Builds a report from precomputed angle errors (radians).
pub fn metrics_from_errors(
    errors: &[f64],
    categories: &[u32],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    if errors.len() != categories.len() {
        return Err(invalid("errors and categories differ in length"));
    }
    let mut by_cat: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (&e, &c) in errors.iter().zip(categories) {
        by_cat.entry(c).or_default().push(e);
    }
    let cats = by_cat
        .into_iter()
        .map(|(id, mut errs)| {
            let acc = errs.iter().filter(|&&e| e < opts.threshold).count() as f64 / errs.len() as f64;
            let med = match opts.median {
                MedianRule::LowerMiddle => median_lower(&mut errs),
                MedianRule::Interpolated => median_interpolated(&mut errs),
            };
            CategoryMetrics {
                name: opts.names.get(&id).cloned().unwrap_or_else(|| id.to_string()),
                med_err_deg: med.to_degrees(),
                acc,
                count: errs.len(),
            }
        })
        .collect();
    Ok(MetricReport::from_categories(cats))
}

/// Mean and sample standard deviation of a metric across trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub med_err_deg: MeanStd,
    pub acc: MeanStd,
}

pub fn summarize_trials(reports: &[MetricReport]) -> TrialSummary {
    let med: Vec<f64> = reports.iter().map(|r| r.mean_med_err_deg).collect();
    let acc: Vec<f64> = reports.iter().map(|r| r.mean_acc).collect();
    TrialSummary {
        trials: reports.len(),
        med_err_deg: MeanStd::of(&med),
        acc: MeanStd::of(&acc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn about_z(deg: f64) -> AxisAngle {
        AxisAngle::new(0.0, 0.0, deg.to_radians())
    }

    #[test]
    fn angle_error_examples() {
        let y = AxisAngle::new(0.3, -0.1, 1.2);
        assert!(angle_error(&y, &y) < 1e-7);
        let e = angle_error(&AxisAngle::IDENTITY, &AxisAngle::new(0.0, 0.0, PI / 6.0));
        assert!((e - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn three_sample_fixture() {
        let gts = vec![AxisAngle::IDENTITY; 3];
        let preds = vec![about_z(10.0), about_z(20.0), about_z(40.0)];
        let r = compute_metrics(&preds, &gts, &[0, 0, 0]).unwrap();
        assert!((r.mean_med_err_deg - 20.0).abs() < 1e-9);
        assert!((r.mean_acc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.categories[0].count, 3);
    }

    #[test]
    fn perfect_predictions() {
        let gts = vec![AxisAngle::new(0.1, 0.2, 0.3), AxisAngle::new(-1.0, 0.0, 2.0)];
        let r = compute_metrics(&gts, &gts, &[4, 4]).unwrap();
        assert!(r.mean_med_err_deg < 1e-5);
        assert_eq!(r.mean_acc, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(compute_metrics(&[AxisAngle::IDENTITY], &[], &[0]).is_err());
    }

    #[test]
    fn even_count_median_rules() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median_lower(&mut v), 2.0);
        assert_eq!(median_interpolated(&mut v), 2.5);
    }

    #[test]
    fn accuracy_is_strict() {
        let opts = MetricOptions::default();
        let r = metrics_from_errors(&[PI / 6.0, 0.1], &[0, 0], &opts).unwrap();
        assert_eq!(r.mean_acc, 0.5);
    }

    #[test]
    fn category_mean_is_unweighted() {
        let opts = MetricOptions {
            names: [(0, "aero".to_string()), (1, "bike".to_string())].into(),
            ..Default::default()
        };
        let errs = [10f64, 10.0, 10.0, 40.0].map(f64::to_radians);
        let r = metrics_from_errors(&errs, &[0, 0, 0, 1], &opts).unwrap();
        assert!((r.mean_med_err_deg - 25.0).abs() < 1e-9);
        assert_eq!(r.category("bike").unwrap().count, 1);
    }

    #[test]
    fn csv_layout_and_json_roundtrip() {
        let opts = MetricOptions {
            names: [(0, "boat".to_string()), (3, "sofa".to_string())].into(),
            ..Default::default()
        };
        let errs = [5f64, 35.0, 12.0].map(f64::to_radians);
        let r = metrics_from_errors(&errs, &[0, 0, 3], &opts).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "boat,sofa,mean");
        assert_eq!(csv.lines().nth(1).unwrap(), "5.00,12.00,8.50");
        assert_eq!(csv.lines().nth(2).unwrap(), "0.5000,1.0000,0.7500");
        let back = MetricReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let parsed = MetricReport::from_csv(&csv).unwrap();
        assert_eq!(parsed.mean_med_err_deg, 8.5);
    }

    #[test]
    fn trial_summary() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
    }
}
