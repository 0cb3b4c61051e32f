//! Property suite behind the `selftest` command. Each check is a named
//! property with a probe count, its worst observed error and a tolerance.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use bindelta::binning::{assign_hard, delta_target, kmeans_fit, Composition};
use bindelta::eval::{compute_metrics, MetricReport};
use bindelta::models::{compose, Architecture, ModelVariant, PoseModel, PoseSample, VariantKind};
use bindelta::net::{grad_check, Mlp};
use bindelta::so3::{
    exp_map, geodesic_distance, hat, log_map, sample_uniform_rotation, AxisAngle, RotationMatrix,
    Vec3,
};

use crate::RunError;

/// Logarithm used by the so3 checks; swapped out for fault injection.
pub type LogFn = fn(&RotationMatrix) -> AxisAngle;

/// The MedErr/Acc rows of the M_G+ line of the published result tables.
pub const PUBLISHED_TABLE_FIXTURE: &str = include_str!("../fixtures/published_table_mg_plus.csv");

pub const ROUNDTRIP_TOL: f64 = 1e-9;
pub const TRACE_FORMULA_TOL: f64 = 1e-7;
pub const INVARIANCE_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const COMPOSITION_TOL: f64 = 1e-9;
/// Finite-difference step of the gradient checks.
pub const GRADIENT_STEP: f64 = 5e-4;
/// Probe points whose hidden pre-activations or geodesic angles come closer
/// than this to a kink are skipped.
pub const KINK_MARGIN: f64 = 1e-2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Flips the axis returned by the θ ≈ π branch of the logarithm.
    LogNearPi,
}

impl FromStr for Fault {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "none" => Ok(Fault::None),
            "log-near-pi" => Ok(Fault::LogNearPi),
            _ => Err(RunError::Usage(format!("unknown fault '{s}' (try log-near-pi)"))),
        }
    }
}

fn corrupted_log(r: &RotationMatrix) -> AxisAngle {
    let y = log_map(r);
    if y.angle() > PI - 1e-4 {
        AxisAngle(-y.0)
    } else {
        y
    }
}

impl Fault {
    pub fn log_fn(self) -> LogFn {
        match self {
            Fault::None => log_map,
            Fault::LogNearPi => corrupted_log,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub probes: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub note: Option<String>,
}

impl CheckResult {
    fn new(name: impl Into<String>, probes: usize, worst: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            probes,
            worst,
            tolerance,
            note: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.probes > 0 && self.worst <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} probes={} worst={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.probes,
            self.worst,
            self.tolerance
        )?;
        if let Some(n) = &self.note {
            write!(f, " ({n})")?;
        }
        Ok(())
    }
}

fn inf_norm(v: &Vec3) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Uniform in the ball of radius `r_max`.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, r_max: f64) -> AxisAngle {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            let r = r_max * rng.random::<f64>().cbrt();
            return AxisAngle(v * (r / n));
        }
    }
}

fn haar_pair(rng: &mut ChaCha8Rng) -> (RotationMatrix, RotationMatrix) {
    (sample_uniform_rotation(rng), sample_uniform_rotation(rng))
}

/// `log(exp(y)) = y` for `‖y‖ ≤ π − 1e−3`.
pub fn check_exp_log_roundtrip(log: LogFn, n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let y = sample_in_ball(&mut rng, PI - 1e-3);
        let back = log(&exp_map(&y).expect("finite"));
        worst = worst.max(inf_norm(&(back.0 - y.0)));
    }
    CheckResult::new("so3.exp_log_roundtrip", n, worst, ROUNDTRIP_TOL)
}

/// `exp(log(R)) = R` (Frobenius) for angles in `[π − 1e−3, π]`, where the
/// logarithm switches to its antipodal branch.
pub fn check_log_near_pi(log: LogFn, n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let gap = if i == 0 { 0.0 } else { 10f64.powf(-rng.random_range(3.0..9.0)) };
        let axis = sample_in_ball(&mut rng, 1.0).0.normalize();
        let r = exp_map(&AxisAngle(axis * (PI - gap))).expect("finite");
        let back = exp_map(&log(&r)).expect("finite");
        worst = worst.max((back.matrix() - r.matrix()).norm());
    }
    CheckResult::new("so3.log_exp_roundtrip_near_pi", n, worst, ROUNDTRIP_TOL)
}

/// `|d(R1, R2) − ‖log(R1ᵀR2)‖_F / √2|` over Haar pairs.
pub fn check_trace_formula(log: LogFn, n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (a, b) = haar_pair(&mut rng);
        let via_log = hat(&log(&a.transpose().compose(&b)).0).norm() / 2f64.sqrt();
        worst = worst.max((geodesic_distance(&a, &b) - via_log).abs());
    }
    CheckResult::new("so3.trace_formula", n, worst, TRACE_FORMULA_TOL)
}

/// Left and right multiplication by a common rotation preserve distance.
pub fn check_bi_invariance(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (a, b) = haar_pair(&mut rng);
        let q = sample_uniform_rotation(&mut rng);
        let d = geodesic_distance(&a, &b);
        let left = geodesic_distance(&q.compose(&a), &q.compose(&b));
        let right = geodesic_distance(&a.compose(&q), &b.compose(&q));
        worst = worst.max((left - d).abs()).max((right - d).abs());
    }
    CheckResult::new("so3.bi_invariance", n, worst, INVARIANCE_TOL)
}

/// Worst `d(a, c) − d(a, b) − d(b, c)`, clamped below at 0.
pub fn check_triangle_inequality(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (a, b) = haar_pair(&mut rng);
        let c = sample_uniform_rotation(&mut rng);
        let excess = geodesic_distance(&a, &c) - geodesic_distance(&a, &b) - geodesic_distance(&b, &c);
        worst = worst.max(excess);
    }
    CheckResult::new("so3.triangle_inequality", n, worst, INVARIANCE_TOL)
}

/// `compose(z_l*, delta_target(y*, l*))` recovers `y*` on Haar poses.
pub fn check_composition(mode: Composition, n: usize, seed: u64) -> Result<CheckResult, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<AxisAngle> = (0..n)
        .map(|_| log_map(&sample_uniform_rotation(&mut rng)))
        .collect();
    let dict = kmeans_fit(&poses, 16, seed)?;
    let mut worst: f64 = 0.0;
    for y in &poses {
        let l = assign_hard(y, &dict);
        let delta = delta_target(y, &dict, l, mode)?;
        worst = worst.max(inf_norm(&(compose(dict.key_pose(l), &delta, mode).0 - y.0)));
    }
    Ok(CheckResult::new(
        format!("models.composition_roundtrip.{mode}"),
        n,
        worst,
        COMPOSITION_TOL,
    ))
}

fn min_hidden_margin(net: &Mlp, x: &[f64]) -> f64 {
    let layers = net.layers();
    let mut a = nalgebra::DVector::from_column_slice(x);
    let mut margin = f64::INFINITY;
    for layer in &layers[..layers.len() - 1] {
        let z = &layer.weights * &a + &layer.bias;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        a = z.map(|v| v.max(0.0));
    }
    margin
}

/// Smallest distance of any geodesic term's angle to 0 or π.
fn geodesic_margin(model: &PoseModel, sample: &PoseSample) -> Result<f64, RunError> {
    let v = &model.variant;
    let angle_gap = |pred: &AxisAngle| {
        let t = bindelta::eval::angle_error(pred, &sample.pose);
        t.min(PI - t)
    };
    let head = |h: usize| -> Result<AxisAngle, RunError> {
        let o = model.heads[h].predict(&sample.features)?;
        Ok(AxisAngle::new(o[0], o[1], o[2]))
    };
    let Some(dict) = &model.dictionary else {
        return match v.kind {
            VariantKind::RegressionGeodesic => Ok(angle_gap(&head(0)?)),
            _ => Ok(f64::INFINITY),
        };
    };
    let bins: Vec<usize> = match v.kind.family() {
        Some(bindelta::models::Family::Geodesic) => {
            vec![sample.targets.as_ref().map(|t| t.label).unwrap_or(0)]
        }
        Some(bindelta::models::Family::Probabilistic) => (0..v.k).collect(),
        _ => return Ok(f64::INFINITY),
    };
    let mut margin = f64::INFINITY;
    for k in bins {
        let delta = head(if v.kind.per_bin() { k } else { 0 })?;
        margin = margin.min(angle_gap(&compose(dict.key_pose(k), &delta, v.composition)));
    }
    Ok(margin)
}

/// Full-model gradient check of one variant: `points` random parameter
/// vectors and samples, every coordinate probed by central differences.
pub fn check_variant_gradients(kind: VariantKind, points: usize, seed: u64) -> Result<CheckResult, RunError> {
    const K: usize = 4;
    const DIM: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = ModelVariant::new(kind).with_k(K);
    let arch = Architecture {
        hidden: vec![6, 5],
        per_bin_hidden: vec![5],
    };
    let dict = if kind.has_bins() {
        let poses: Vec<AxisAngle> = (0..200)
            .map(|_| log_map(&sample_uniform_rotation(&mut rng)))
            .collect();
        Some(kmeans_fit(&poses, K, seed)?)
    } else {
        None
    };
    let gamma = dict.as_ref().map_or(1.0, |d| d.default_gamma());

    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut accepted = 0;
    let mut skipped = 0;
    let mut worst_pair = (0.0, 0.0);
    while accepted < points {
        if skipped > 50 * points {
            return Err(RunError::Usage(format!("{kind}: no non-degenerate probe points found")));
        }
        let mut model = PoseModel::init(variant, dict.clone(), gamma, DIM, &arch, &mut rng)?;
        let mut flat = model.to_flat();
        for p in flat.iter_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        model.set_flat(&flat)?;
        let features: Vec<f64> = (0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        let pose = log_map(&sample_uniform_rotation(&mut rng));
        let sample = model.prepare(features, pose, 0)?;

        let relu_margin = model
            .bin
            .iter()
            .chain(&model.heads)
            .map(|n| min_hidden_margin(n, &sample.features))
            .fold(f64::INFINITY, f64::min);
        if relu_margin < KINK_MARGIN || geodesic_margin(&model, &sample)? < KINK_MARGIN {
            skipped += 1;
            continue;
        }

        let mut grads = model.zero_grads();
        model.accumulate(&sample, &variant, &mut grads)?;
        let analytic = grads.to_flat();
        let mut probe = model.clone();
        let report = grad_check(
            &flat,
            &analytic,
            |x| {
                probe.set_flat(x).expect("same length");
                probe.loss(&sample, &variant).expect("valid sample")
            },
            usize::MAX,
            GRADIENT_STEP,
            rng.random(),
        );
        if report.max_rel_error > worst {
            worst = report.max_rel_error;
            worst_pair = (report.analytic, report.numeric);
        }
        probes += report.probes;
        accepted += 1;
    }
    let mut r = CheckResult::new(format!("models.gradients.{kind}"), probes, worst, GRADIENT_TOL);
    r.note = Some(format!(
        "{accepted} points, {skipped} skipped near kinks; worst analytic {:.6e} vs numeric {:.6e}",
        worst_pair.0, worst_pair.1
    ));
    Ok(r)
}

/// Errors of 10°, 20° and 40° about z: MedErr 20°, Acc 2/3.
pub fn check_metric_fixture() -> Result<CheckResult, RunError> {
    let about_z = |deg: f64| AxisAngle::new(0.0, 0.0, deg.to_radians());
    let preds = [about_z(10.0), about_z(20.0), about_z(40.0)];
    let gts = [AxisAngle::IDENTITY; 3];
    let r = compute_metrics(&preds, &gts, &[0, 0, 0])?;
    let err = (r.mean_med_err_deg - 20.0)
        .abs()
        .max((r.mean_acc - 2.0 / 3.0).abs());
    Ok(CheckResult::new("eval.metric_fixture", 3, err, 1e-9))
}

/// The stored published table parses to mean MedErr 10.10 and mean Acc 0.8588.
pub fn check_published_table_fixture() -> Result<CheckResult, RunError> {
    let r = MetricReport::from_csv(PUBLISHED_TABLE_FIXTURE)?;
    let exact = r.mean_med_err_deg == 10.10 && r.mean_acc == 0.8588 && r.categories.len() == 12;
    Ok(CheckResult::new(
        "eval.published_table_fixture",
        r.categories.len(),
        if exact { 0.0 } else { 1.0 },
        0.0,
    ))
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

/// Sample counts of the suite.
#[derive(Clone, Copy, Debug)]
pub struct SuiteSize {
    pub so3_samples: usize,
    pub near_pi_samples: usize,
    pub composition_samples: usize,
    pub gradient_points: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        SuiteSize {
            so3_samples: 10_000,
            near_pi_samples: 1_000,
            composition_samples: 10_000,
            gradient_points: 100,
        }
    }
}

pub fn run_suite(fault: Fault, size: SuiteSize, seed: u64) -> Result<SuiteReport, RunError> {
    let log = fault.log_fn();
    let n = size.so3_samples;
    let mut checks = vec![
        check_exp_log_roundtrip(log, n, seed),
        check_log_near_pi(log, size.near_pi_samples, seed + 1),
        check_trace_formula(log, n, seed + 2),
        check_bi_invariance(n, seed + 3),
        check_triangle_inequality(n, seed + 4),
    ];
    for mode in [Composition::Additive, Composition::Riemannian] {
        checks.push(check_composition(mode, size.composition_samples, seed + 5)?);
    }
    for (i, kind) in VariantKind::ALL.into_iter().enumerate() {
        checks.push(check_variant_gradients(kind, size.gradient_points, seed + 10 + i as u64)?);
    }
    checks.push(check_metric_fixture()?);
    checks.push(check_published_table_fixture()?);
    Ok(SuiteReport { checks })
}
