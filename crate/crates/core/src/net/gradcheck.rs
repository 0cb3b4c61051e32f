use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Denominator floor for the relative error, so coordinates with near-zero
/// gradient are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// The numeric derivative Richardson-extrapolates central differences at
/// `step` and `step / 2`, so its truncation error is O(step⁴) and a larger
/// step (less round-off) can be used. Probes `probes` distinct random
/// coordinates (all of them if there are fewer). Relative error is
/// `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    probes: usize,
    step: f64,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> = if probes >= params.len() {
        (0..params.len()).collect()
    } else {
        let mut c = sample(&mut rng, params.len(), probes).into_vec();
        c.sort_unstable();
        c
    };

    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        probes: coords.len(),
    };
    for &i in &coords {
        let orig = x[i];
        let mut central = |h: f64| {
            x[i] = orig + h;
            let up = loss(&x);
            x[i] = orig - h;
            let down = loss(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        };
        let (coarse, fine) = (central(step), central(0.5 * step));
        let numeric = (4.0 * fine - coarse) / 3.0;
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
