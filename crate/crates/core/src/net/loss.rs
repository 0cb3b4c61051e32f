use crate::error::{invalid, Result};

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Cross-entropy `−log softmax(logits)[label]` and its gradient
/// `softmax(logits) − onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let loss = -log_softmax(logits)[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `KL(p* ‖ softmax(logits))` with `0 · ln 0 = 0`; gradient `softmax − p*`.
pub fn kl_divergence(p_star: &[f64], logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p_star.len() != logits.len() {
        return Err(invalid(format!(
            "target distribution has {} entries, logits {}",
            p_star.len(),
            logits.len()
        )));
    }
    let log_q = log_softmax(logits);
    let loss = p_star
        .iter()
        .zip(&log_q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lq)| p * (p.ln() - lq))
        .sum();
    let grad = log_q
        .iter()
        .zip(p_star)
        .map(|(lq, p)| lq.exp() - p)
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn uniform_logits_give_log_k() {
        for k in [2usize, 5, 16] {
            let (loss, _) = softmax_cross_entropy(&vec![0.7; k], k - 1).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn large_margin_gives_near_zero_loss() {
        let mut logits = vec![0.0; 10];
        logits[3] = 30.0;
        let (loss, _) = softmax_cross_entropy(&logits, 3).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let logits: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let label = rng.random_range(0..7);
            let (_, g) = softmax_cross_entropy(&logits, label).unwrap();
            let fd = central_diff(|l| softmax_cross_entropy(l, label).unwrap().0, &logits, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn softmax_is_normalized_and_shift_invariant() {
        let logits = [1.0, -2.0, 0.5, 700.0, 699.0];
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|l| l - 1234.5).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_is_zero_at_the_target() {
        let logits = [0.2, -1.0, 2.0];
        let (loss, grad) = kl_divergence(&softmax(&logits), &logits).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn kl_with_one_hot_is_cross_entropy() {
        let logits = [0.2, -1.0, 2.0, 0.0];
        let (kl, gk) = kl_divergence(&[0.0, 1.0, 0.0, 0.0], &logits).unwrap();
        let (ce, gc) = softmax_cross_entropy(&logits, 1).unwrap();
        assert!((kl - ce).abs() < 1e-15);
        for (a, b) in gk.iter().zip(&gc) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|r| r / total).collect();
            // direct: Σ p (ln p − ln q), q = exp(l) / Σ exp(l)
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let direct: f64 = p
                .iter()
                .zip(&logits)
                .map(|(pk, lk)| pk * (pk.ln() - (lk.exp() / z).ln()))
                .sum();
            let (loss, g) = kl_divergence(&p, &logits).unwrap();
            assert!((loss - direct).abs() < 1e-10);
            let fd = central_diff(|l| kl_divergence(&p, l).unwrap().0, &logits, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
