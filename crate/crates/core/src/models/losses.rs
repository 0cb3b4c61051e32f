//! Per-sample objectives and their gradients with respect to the network
//! outputs (bin logits and delta/regression vectors).

use std::f64::consts::PI;

use crate::binning::{argmax, Composition, PoseDictionary, SoftAssignment};
use crate::error::{invalid, Result};
use crate::net::{kl_divergence, softmax, softmax_cross_entropy};
use crate::so3::{self, AxisAngle, RotationMatrix, Vec3};

use super::variant::{BinSelection, Family, ModelVariant, VariantKind};

/// Relative angles this close to 0 or π have no usable geodesic gradient.
pub const DEGENERATE_EPS: f64 = 1e-9;

/// Combines a key pose and a delta into a pose on the principal ball.
pub fn compose(z: &AxisAngle, delta: &AxisAngle, mode: Composition) -> AxisAngle {
    match mode {
        Composition::Additive => so3::canonicalize(&AxisAngle(z.0 + delta.0)),
        Composition::Riemannian => AxisAngle(so3::log_raw(
            &(so3::rodrigues(&z.0) * so3::rodrigues(&delta.0)),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressionMetric {
    Euclidean,
    Geodesic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseLoss {
    pub loss: f64,
    pub grad: Vec3,
    /// Set when the relative rotation sits at angle 0 or π; `grad` is zero.
    pub degenerate: bool,
}

/// `‖log(targetᵀ · base · exp(v))‖` and its gradient in `v`.
///
/// With `φ = log(targetᵀ base exp(v))` the gradient is `J_r(v)ᵀ φ / ‖φ‖`,
/// because `φ` is a fixed point of the inverse right Jacobian at `φ`.
fn geodesic_through_exp(target: &RotationMatrix, base: Option<&so3::Mat3>, v: &Vec3) -> PoseLoss {
    let ev = so3::rodrigues(v);
    let rel = match base {
        Some(b) => target.matrix().transpose() * b * ev,
        None => target.matrix().transpose() * ev,
    };
    let phi = so3::log_raw(&rel);
    let theta = phi.norm();
    if !(DEGENERATE_EPS..=PI - DEGENERATE_EPS).contains(&theta) {
        return PoseLoss {
            loss: theta,
            grad: Vec3::zeros(),
            degenerate: true,
        };
    }
    let jr = so3::exp_jacobian(&AxisAngle(*v));
    PoseLoss {
        loss: theta,
        grad: jr.transpose() * (phi / theta),
        degenerate: false,
    }
}

/// Regression loss between a predicted and a ground-truth pose.
pub fn loss_regression(y_pred: &AxisAngle, y_star: &AxisAngle, metric: RegressionMetric) -> PoseLoss {
    match metric {
        RegressionMetric::Euclidean => {
            let d = y_pred.0 - y_star.0;
            PoseLoss {
                loss: d.norm_squared(),
                grad: d * 2.0,
                degenerate: false,
            }
        }
        RegressionMetric::Geodesic => {
            let target = RotationMatrix::from_raw(so3::rodrigues(&y_star.0));
            geodesic_through_exp(&target, None, &y_pred.0)
        }
    }
}

/// Geodesic loss of `compose(z, δ)` against `target`, differentiated in `δ`.
pub fn geodesic_composed(
    target: &RotationMatrix,
    z: &AxisAngle,
    delta: &Vec3,
    mode: Composition,
) -> PoseLoss {
    match mode {
        Composition::Additive => geodesic_through_exp(target, None, &(z.0 + delta)),
        Composition::Riemannian => {
            let base = so3::rodrigues(&z.0);
            geodesic_through_exp(target, Some(&base), delta)
        }
    }
}

pub fn loss_classification(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    softmax_cross_entropy(logits, label)
}

/// A training sample with everything derived from the dictionary cached.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub features: Vec<f64>,
    pub pose: AxisAngle,
    pub rotation: RotationMatrix,
    pub category: u32,
    pub targets: Option<BinTargets>,
}

/// Dictionary-dependent targets of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BinTargets {
    pub label: usize,
    /// `y* − z_{l*}`
    pub delta_additive: AxisAngle,
    /// `log(exp(z_{l*})ᵀ exp(y*))`
    pub delta_tangent: AxisAngle,
    pub soft: SoftAssignment,
}

impl PoseSample {
    pub fn new(features: Vec<f64>, pose: AxisAngle, category: u32) -> Result<Self> {
        Ok(PoseSample {
            rotation: so3::exp_map(&pose)?,
            features,
            pose,
            category,
            targets: None,
        })
    }

    /// Fills the label, both delta targets and the soft label.
    pub fn with_targets(mut self, dict: &PoseDictionary, gamma: f64) -> Result<Self> {
        let label = crate::binning::assign_hard(&self.pose, dict);
        self.targets = Some(BinTargets {
            label,
            delta_additive: crate::binning::delta_target(
                &self.pose,
                dict,
                label,
                Composition::Additive,
            )?,
            delta_tangent: crate::binning::delta_target(
                &self.pose,
                dict,
                label,
                Composition::Riemannian,
            )?,
            soft: crate::binning::assign_soft(&self.pose, dict, gamma)?,
        });
        Ok(self)
    }

    fn targets(&self) -> Result<&BinTargets> {
        self.targets
            .as_ref()
            .ok_or_else(|| invalid("sample has no cached bin targets"))
    }
}

/// Raw network outputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    /// Bin logits; empty for the regression baselines.
    pub logits: Vec<f64>,
    /// Delta (or regression) vectors by head index; heads that were not
    /// evaluated are `None`.
    pub heads: Vec<Option<Vec3>>,
}

impl Outputs {
    /// Delta used for bin `k`: the shared head, or head `k`.
    pub fn delta_for_bin(&self, k: usize) -> Result<Vec3> {
        let idx = if self.heads.len() == 1 { 0 } else { k };
        self.heads
            .get(idx)
            .copied()
            .flatten()
            .ok_or_else(|| invalid(format!("delta head {idx} was not evaluated")))
    }
}

/// Loss value with gradients for the outputs that influenced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    /// Gradient with respect to the logits (empty if there are none).
    pub logits: Vec<f64>,
    /// `(head index, gradient)` pairs.
    pub heads: Vec<(usize, Vec3)>,
    /// Number of geodesic terms that hit a degenerate point.
    pub degenerate: usize,
}

impl LossGrads {
    fn add_head(&mut self, head: usize, g: Vec3) {
        if let Some(slot) = self.heads.iter_mut().find(|(h, _)| *h == head) {
            slot.1 += g;
        } else {
            self.heads.push((head, g));
        }
    }
}

fn head_index(variant: &ModelVariant, bin: usize) -> usize {
    if variant.kind.per_bin() {
        bin
    } else {
        0
    }
}

/// Bin whose delta is penalized during training.
pub fn training_bin(variant: &ModelVariant, sample: &PoseSample, logits: &[f64]) -> Result<usize> {
    Ok(match variant.bin_selection {
        BinSelection::TeacherForced => sample.targets()?.label,
        BinSelection::Predicted => argmax(logits),
    })
}

/// Heads that must be evaluated to compute the loss of `sample`.
pub fn required_heads(variant: &ModelVariant, sample: &PoseSample, logits: &[f64]) -> Result<Vec<usize>> {
    Ok(match variant.kind {
        VariantKind::Classification => Vec::new(),
        VariantKind::BinDelta { family: Family::Probabilistic, per_bin: true } => {
            (0..variant.k).collect()
        }
        VariantKind::BinDelta { per_bin: true, .. } => vec![training_bin(variant, sample, logits)?],
        _ => vec![0],
    })
}

fn squared_delta_loss(
    sample: &PoseSample,
    out: &Outputs,
    variant: &ModelVariant,
    target: &AxisAngle,
) -> Result<LossGrads> {
    let t = sample.targets()?;
    let (ce, g_logits) = loss_classification(&out.logits, t.label)?;
    let bin = training_bin(variant, sample, &out.logits)?;
    let delta = out.delta_for_bin(bin)?;
    let diff = delta - target.0;
    let mut lg = LossGrads {
        loss: ce + variant.alpha * diff.norm_squared(),
        logits: g_logits,
        heads: Vec::new(),
        degenerate: 0,
    };
    lg.add_head(head_index(variant, bin), diff * (2.0 * variant.alpha));
    Ok(lg)
}

/// Cross-entropy plus `α ‖δ* − δ‖²` (δ* in the variant's composition mode).
pub fn loss_simple_bd(sample: &PoseSample, out: &Outputs, variant: &ModelVariant) -> Result<LossGrads> {
    let t = sample.targets()?;
    let target = match variant.composition {
        Composition::Additive => t.delta_additive,
        Composition::Riemannian => t.delta_tangent,
    };
    squared_delta_loss(sample, out, variant, &target)
}

/// Cross-entropy plus `α ‖log(exp(z_l)ᵀ R*) − δ‖²`.
pub fn loss_riemannian_bd(sample: &PoseSample, out: &Outputs, variant: &ModelVariant) -> Result<LossGrads> {
    let t = sample.targets()?;
    squared_delta_loss(sample, out, variant, &t.delta_tangent)
}

/// Cross-entropy plus `α · geodesic(R*, compose(z_l, δ))`. Key poses are
/// constants and the bin index is discrete, so the pose term only reaches
/// the delta head.
pub fn loss_geodesic_bd(
    sample: &PoseSample,
    out: &Outputs,
    variant: &ModelVariant,
    dict: &PoseDictionary,
) -> Result<LossGrads> {
    let t = sample.targets()?;
    let (ce, g_logits) = loss_classification(&out.logits, t.label)?;
    let bin = training_bin(variant, sample, &out.logits)?;
    let delta = out.delta_for_bin(bin)?;
    let pose = geodesic_composed(&sample.rotation, dict.key_pose(bin), &delta, variant.composition);
    let mut lg = LossGrads {
        loss: ce + variant.alpha * pose.loss,
        logits: g_logits,
        heads: Vec::new(),
        degenerate: pose.degenerate as usize,
    };
    lg.add_head(head_index(variant, bin), pose.grad * variant.alpha);
    Ok(lg)
}

/// `KL(p* ‖ p) + α Σ_k p_k · geodesic(R*, compose(z_k, δ_k))` with
/// `p = softmax(logits)`.
pub fn loss_probabilistic_bd(
    sample: &PoseSample,
    out: &Outputs,
    variant: &ModelVariant,
    dict: &PoseDictionary,
) -> Result<LossGrads> {
    let t = sample.targets()?;
    let (kl, mut g_logits) = kl_divergence(&t.soft.p, &out.logits)?;
    let p = softmax(&out.logits);
    let mut lg = LossGrads {
        loss: kl,
        logits: Vec::new(),
        heads: Vec::new(),
        degenerate: 0,
    };
    let mut pose_losses = Vec::with_capacity(p.len());
    for (k, &pk) in p.iter().enumerate() {
        let delta = out.delta_for_bin(k)?;
        let pl = geodesic_composed(&sample.rotation, dict.key_pose(k), &delta, variant.composition);
        lg.degenerate += pl.degenerate as usize;
        lg.add_head(head_index(variant, k), pl.grad * (variant.alpha * pk));
        pose_losses.push(pl.loss);
    }
    let expected: f64 = p.iter().zip(&pose_losses).map(|(a, b)| a * b).sum();
    lg.loss += variant.alpha * expected;
    // ∂/∂logit_j Σ_k p_k L_k = p_j (L_j − Σ_k p_k L_k)
    for (j, g) in g_logits.iter_mut().enumerate() {
        *g += variant.alpha * p[j] * (pose_losses[j] - expected);
    }
    lg.logits = g_logits;
    Ok(lg)
}

/// Dispatches to the objective of `variant` (baselines included).
pub fn variant_loss(
    sample: &PoseSample,
    out: &Outputs,
    variant: &ModelVariant,
    dict: Option<&PoseDictionary>,
) -> Result<LossGrads> {
    let need_dict = || dict.ok_or_else(|| invalid("variant needs a pose dictionary"));
    match variant.kind {
        VariantKind::RegressionEuclidean | VariantKind::RegressionGeodesic => {
            let metric = if variant.kind == VariantKind::RegressionEuclidean {
                RegressionMetric::Euclidean
            } else {
                RegressionMetric::Geodesic
            };
            let y = out.delta_for_bin(0)?;
            let pl = loss_regression(&AxisAngle(y), &sample.pose, metric);
            Ok(LossGrads {
                loss: pl.loss,
                logits: Vec::new(),
                heads: vec![(0, pl.grad)],
                degenerate: pl.degenerate as usize,
            })
        }
        VariantKind::Classification => {
            let (loss, g) = loss_classification(&out.logits, sample.targets()?.label)?;
            Ok(LossGrads {
                loss,
                logits: g,
                heads: Vec::new(),
                degenerate: 0,
            })
        }
        VariantKind::BinDelta { family, .. } => match family {
            Family::Simple => loss_simple_bd(sample, out, variant),
            Family::Riemannian => loss_riemannian_bd(sample, out, variant),
            Family::Geodesic => loss_geodesic_bd(sample, out, variant, need_dict()?),
            Family::Probabilistic => loss_probabilistic_bd(sample, out, variant, need_dict()?),
        },
    }
}
