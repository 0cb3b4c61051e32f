use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrads};
use crate::error::{invalid, Error, Result};

/// Adam hyperparameters with a per-epoch exponential learning-rate decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Multiplier applied to the learning rate once per epoch.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Base rate 1e-4, reduced by a factor of 0.1 every epoch.
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch as i32)
    }
}

/// First and second moments for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(tensor_sizes: &[usize], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_mlp(net: &Mlp, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = net.tensors().map(<[f64]>::len).collect();
        Self::new(&sizes, config)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every tensor. `names` labels tensors in error messages.
    ///
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: &[&[f64]],
        epoch: usize,
        names: impl Fn(usize) -> String,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(invalid(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        for (i, (g, m)) in grads.iter().zip(&self.m).enumerate() {
            if g.len() != m.len() {
                return Err(invalid(format!("gradient shape mismatch for {}", names(i))));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { tensor: names(i) });
            }
        }

        self.step += 1;
        let c = self.config;
        let lr = c.lr_at(epoch);
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let mut count = 0;
        for (i, p) in params.into_iter().enumerate() {
            let (g, m, v) = (grads[i], &mut self.m[i], &mut self.v[i]);
            if p.len() != g.len() {
                return Err(invalid(format!("parameter shape mismatch for {}", names(i))));
            }
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            count += 1;
        }
        if count != grads.len() {
            return Err(invalid("fewer parameter tensors than gradients"));
        }
        Ok(())
    }
}

fn tensor_name(i: usize) -> String {
    let kind = if i.is_multiple_of(2) { "weights" } else { "bias" };
    format!("layer {} {kind}", i / 2)
}

/// Adam update of an MLP in place.
pub fn adam_step(
    params: &mut Mlp,
    grads: &MlpGrads,
    state: &mut AdamState,
    epoch: usize,
) -> Result<()> {
    let g: Vec<&[f64]> = grads.tensors().collect();
    state.step(params.tensors_mut(), &g, epoch, tensor_name)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut MlpGrads], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(lr: f64) -> AdamState {
        AdamState::new(
            &[1],
            AdamConfig {
                lr,
                decay: 1.0,
                ..AdamConfig::default()
            },
        )
    }

    fn step_scalar(state: &mut AdamState, x: &mut f64, g: f64) {
        let mut p = [*x];
        state
            .step([&mut p[..]], &[&[g][..]], 0, |_| "x".into())
            .unwrap();
        *x = p[0];
    }

    #[test]
    fn reference_schedule_defaults() {
        let c = AdamConfig::default();
        assert_eq!(c.lr, 1e-4);
        assert!((c.lr_at(2) - 1e-6).abs() < 1e-20);
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut net = Mlp::zeros(&[3, 2]).unwrap();
        net.layers_mut()[0].weights[(0, 1)] = 0.5;
        let before = net.clone();
        let mut state = AdamState::for_mlp(&net, AdamConfig::default());
        let zeros = net.zeros_like();
        adam_step(&mut net, &zeros, &mut state, 0).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        for g in [1e-3, 0.5, 200.0, -7.0] {
            let mut state = scalar_state(0.01);
            let mut x = 0.0;
            step_scalar(&mut state, &mut x, g);
            assert!((x + 0.01 * g.signum()).abs() < 1e-7, "g = {g}, x = {x}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut state = scalar_state(1e-2);
        let mut x = 1.0;
        for _ in 0..500 {
            let g = x;
            step_scalar(&mut state, &mut x, g);
        }
        assert!(x.abs() < 1e-2, "x = {x}");
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut net = Mlp::zeros(&[2, 3, 1]).unwrap();
        let mut grads = net.zeros_like();
        grads.layers_mut()[1].bias[0] = f64::NAN;
        let mut state = AdamState::for_mlp(&net, AdamConfig::default());
        match adam_step(&mut net, &grads, &mut state, 0) {
            Err(Error::NonFiniteGradient { tensor }) => assert_eq!(tensor, "layer 1 bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn clipping_bounds_the_joint_norm() {
        let mut a = Mlp::zeros(&[1, 1]).unwrap();
        let mut b = Mlp::zeros(&[1, 1]).unwrap();
        a.layers_mut()[0].weights[(0, 0)] = 30.0;
        b.layers_mut()[0].bias[0] = 40.0;
        let norm = clip_global_norm(&mut [&mut a, &mut b], 10.0);
        assert!((norm - 50.0).abs() < 1e-12);
        assert!(((a.norm_squared() + b.norm_squared()).sqrt() - 10.0).abs() < 1e-12);
    }
}
