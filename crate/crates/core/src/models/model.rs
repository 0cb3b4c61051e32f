use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{argmax, PoseDictionary};
use crate::error::{invalid, Result};
use crate::net::{GradTape, Mlp, MlpGrads};
use crate::so3::{self, AxisAngle, Vec3};

use super::losses::{compose, required_heads, variant_loss, LossGrads, Outputs, PoseSample};
use super::variant::{ModelVariant, VariantKind};

/// Hidden-layer widths of the pose networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Bin network, shared delta network and regression baselines.
    pub hidden: Vec<usize>,
    /// Each delta network of the per-bin variants.
    pub per_bin_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: vec![64, 32],
            per_bin_hidden: vec![32],
        }
    }
}

impl Architecture {
    /// Layer widths used with 2048-dimensional backbone features.
    pub fn backbone_scale() -> Self {
        Architecture {
            hidden: vec![1000, 500],
            per_bin_hidden: vec![100],
        }
    }
}

/// A bin network and/or delta (or regression) heads plus the dictionary
/// they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseModel {
    pub variant: ModelVariant,
    pub dictionary: Option<PoseDictionary>,
    pub gamma: f64,
    pub bin: Option<Mlp>,
    pub heads: Vec<Mlp>,
}

/// Gradients for every network of a [`PoseModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub bin: Option<MlpGrads>,
    pub heads: Vec<MlpGrads>,
}

impl ModelGrads {
    pub fn fill_zero(&mut self) {
        if let Some(b) = &mut self.bin {
            b.fill_zero();
        }
        self.heads.iter_mut().for_each(Mlp::fill_zero);
    }

    pub fn scale(&mut self, s: f64) {
        if let Some(b) = &mut self.bin {
            b.scale(s);
        }
        self.heads.iter_mut().for_each(|h| h.scale(s));
    }

    pub fn nets_mut(&mut self) -> Vec<&mut MlpGrads> {
        self.bin.iter_mut().chain(self.heads.iter_mut()).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.bin
            .iter()
            .chain(&self.heads)
            .flat_map(Mlp::to_flat)
            .collect()
    }
}

/// Loss of one sample plus bookkeeping from the forward pass.
#[derive(Clone, Debug)]
pub struct SampleEval {
    pub loss: f64,
    pub degenerate: usize,
}

/// Forward tapes of the delta heads that were evaluated, by head index.
type HeadTapes = Vec<(usize, GradTape)>;

impl PoseModel {
    /// Fresh He-uniform networks for `variant`. Bin variants need a
    /// dictionary with `variant.k` key poses.
    pub fn init<R: Rng + ?Sized>(
        variant: ModelVariant,
        dictionary: Option<PoseDictionary>,
        gamma: f64,
        feature_dim: usize,
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        variant.validate()?;
        let bin = if variant.kind.has_bins() {
            let dict = dictionary
                .as_ref()
                .ok_or_else(|| invalid(format!("{} needs a pose dictionary", variant.kind)))?;
            if dict.k() != variant.k {
                return Err(invalid(format!(
                    "dictionary has {} key poses but the variant expects K = {}",
                    dict.k(),
                    variant.k
                )));
            }
            Some(Mlp::he_uniform(&layer_sizes(feature_dim, &arch.hidden, variant.k), rng)?)
        } else {
            None
        };
        let head_hidden = if variant.kind.per_bin() {
            &arch.per_bin_hidden
        } else {
            &arch.hidden
        };
        let heads = (0..variant.num_heads())
            .map(|_| Mlp::he_uniform(&layer_sizes(feature_dim, head_hidden, 3), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoseModel {
            variant,
            dictionary,
            gamma,
            bin,
            heads,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.bin
            .as_ref()
            .or(self.heads.first())
            .map(Mlp::input_dim)
            .unwrap_or(0)
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            bin: self.bin.as_ref().map(Mlp::zeros_like),
            heads: self.heads.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.bin
            .iter()
            .chain(&self.heads)
            .map(Mlp::num_params)
            .sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.bin
            .iter()
            .chain(&self.heads)
            .flat_map(Mlp::to_flat)
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(invalid("flat parameter vector has the wrong length"));
        }
        let mut offset = 0;
        for net in self.bin.iter_mut().chain(self.heads.iter_mut()) {
            let n = net.num_params();
            net.set_flat(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    /// Prepares a sample's cached targets against this model's dictionary.
    pub fn prepare(&self, features: Vec<f64>, pose: AxisAngle, category: u32) -> Result<PoseSample> {
        let s = PoseSample::new(features, pose, category)?;
        match &self.dictionary {
            Some(d) if self.variant.kind.has_bins() => s.with_targets(d, self.gamma),
            _ => Ok(s),
        }
    }

    /// Loss of `sample` under `variant` (normally `self.variant`), with
    /// gradients accumulated into `grads`.
    pub fn accumulate(
        &self,
        sample: &PoseSample,
        variant: &ModelVariant,
        grads: &mut ModelGrads,
    ) -> Result<SampleEval> {
        let (out, bin_tape, head_tapes) = self.forward_for_loss(sample, variant)?;
        let lg = variant_loss(sample, &out, variant, self.dictionary.as_ref())?;
        self.backward(lg, bin_tape, head_tapes, grads)
    }

    /// Loss only (used by finite-difference checks).
    pub fn loss(&self, sample: &PoseSample, variant: &ModelVariant) -> Result<f64> {
        let (out, _, _) = self.forward_for_loss(sample, variant)?;
        Ok(variant_loss(sample, &out, variant, self.dictionary.as_ref())?.loss)
    }

    fn forward_for_loss(
        &self,
        sample: &PoseSample,
        variant: &ModelVariant,
    ) -> Result<(Outputs, Option<GradTape>, HeadTapes)> {
        let (logits, bin_tape) = match &self.bin {
            Some(bin) => {
                let (o, t) = bin.forward(&sample.features)?;
                (o.as_slice().to_vec(), Some(t))
            }
            None => (Vec::new(), None),
        };
        let mut heads = vec![None; self.heads.len()];
        let mut tapes = Vec::new();
        for h in required_heads(variant, sample, &logits)? {
            let net = self
                .heads
                .get(h)
                .ok_or_else(|| invalid(format!("model has no delta head {h}")))?;
            let (o, t) = net.forward(&sample.features)?;
            heads[h] = Some(Vec3::new(o[0], o[1], o[2]));
            tapes.push((h, t));
        }
        Ok((Outputs { logits, heads }, bin_tape, tapes))
    }

    fn backward(
        &self,
        lg: LossGrads,
        bin_tape: Option<GradTape>,
        head_tapes: Vec<(usize, GradTape)>,
        grads: &mut ModelGrads,
    ) -> Result<SampleEval> {
        if let (Some(bin), Some(tape), Some(acc)) = (&self.bin, bin_tape, grads.bin.as_mut()) {
            if !lg.logits.is_empty() {
                bin.backward_into(tape, &lg.logits, acc)?;
            }
        }
        for (h, tape) in head_tapes {
            if let Some((_, g)) = lg.heads.iter().find(|(i, _)| *i == h) {
                self.heads[h].backward_into(tape, g.as_slice(), &mut grads.heads[h])?;
            }
        }
        Ok(SampleEval {
            loss: lg.loss,
            degenerate: lg.degenerate,
        })
    }

    /// Bin logits, if the variant has a bin network.
    pub fn logits(&self, features: &[f64]) -> Result<Option<Vec<f64>>> {
        self.bin
            .as_ref()
            .map(|b| b.predict(features).map(|o| o.as_slice().to_vec()))
            .transpose()
    }

    /// Final pose estimate. Bins are chosen by argmax (lowest index on ties).
    pub fn predict_pose(&self, features: &[f64]) -> Result<AxisAngle> {
        let head_out = |h: usize| -> Result<AxisAngle> {
            let o = self.heads[h].predict(features)?;
            Ok(AxisAngle::new(o[0], o[1], o[2]))
        };
        match self.variant.kind {
            VariantKind::RegressionEuclidean | VariantKind::RegressionGeodesic => {
                Ok(so3::canonicalize(&head_out(0)?))
            }
            VariantKind::Classification => {
                let l = argmax(&self.logits(features)?.unwrap_or_default());
                Ok(*self.dict()?.key_pose(l))
            }
            VariantKind::BinDelta { per_bin, .. } => {
                let l = argmax(&self.logits(features)?.unwrap_or_default());
                let delta = head_out(if per_bin { l } else { 0 })?;
                Ok(compose(self.dict()?.key_pose(l), &delta, self.variant.composition))
            }
        }
    }

    fn dict(&self) -> Result<&PoseDictionary> {
        self.dictionary
            .as_ref()
            .ok_or_else(|| invalid("model has no pose dictionary"))
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(input);
    s.extend_from_slice(hidden);
    s.push(output);
    s
}
