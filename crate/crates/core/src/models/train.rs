use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::kmeans_fit;
use crate::data::Dataset;
use crate::error::{invalid, Error};
use crate::eval::{compute_metrics_with, MetricOptions, MetricReport};
use crate::net::{clip_global_norm, AdamConfig, AdamState};

use super::losses::PoseSample;
use super::model::{Architecture, ModelGrads, PoseModel};
use super::variant::ModelVariant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Soft-label sharpness; `None` uses the dictionary's default.
    pub gamma: Option<f64>,
    /// Global gradient-norm clip; `None` uses the variant default.
    pub clip: Option<f64>,
    /// Run the first epoch of the geodesic families on the simple objective.
    pub warm_start: bool,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-3,
                decay: 0.95,
                ..AdamConfig::default()
            },
            seed: 0,
            gamma: None,
            clip: None,
            warm_start: true,
            arch: Architecture::default(),
        }
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Variant whose objective was optimized in this epoch.
    pub objective: String,
    pub lr: f64,
    pub train_loss: f64,
    pub val_med_err_deg: f64,
    pub val_acc: f64,
    /// Geodesic terms with zero gradient (exact hit or antipode).
    pub degenerate: usize,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,objective,lr,train_loss,val_med_err_deg,val_acc,degenerate\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{:e},{},{},{},{}\n",
            r.epoch, r.objective, r.lr, r.train_loss, r.val_med_err_deg, r.val_acc, r.degenerate
        ));
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PoseModel,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters at the end of the last completed epoch.
        last_good: Box<PoseModel>,
        history: Vec<EpochRecord>,
    },
}

/// Prepares `ds` for `model` (labels, delta targets, soft labels).
pub fn prepare_dataset(model: &PoseModel, ds: &Dataset) -> Result<Vec<PoseSample>, Error> {
    ds.samples
        .iter()
        .map(|s| model.prepare(s.features.clone(), s.pose, s.category))
        .collect()
}

/// Metrics of `model` on `ds`.
pub fn evaluate(model: &PoseModel, ds: &Dataset, opts: &MetricOptions) -> Result<MetricReport, Error> {
    let preds = ds
        .samples
        .iter()
        .map(|s| model.predict_pose(&s.features))
        .collect::<Result<Vec<_>, _>>()?;
    let gts = ds.poses();
    let cats: Vec<u32> = ds.samples.iter().map(|s| s.category).collect();
    compute_metrics_with(&preds, &gts, &cats, opts)
}

/// Fits the dictionary on `train_set` (bin variants) and initializes the
/// networks, exactly as [`train`] does before its first epoch.
pub fn initialize(
    variant: &ModelVariant,
    train_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<PoseModel, Error> {
    let feature_dim = train_set
        .feature_dim()
        .ok_or_else(|| invalid("training set is empty"))?;
    let dictionary = if variant.kind.has_bins() {
        Some(kmeans_fit(&train_set.poses(), variant.k, cfg.seed)?)
    } else {
        None
    };
    let gamma = match (cfg.gamma, &dictionary) {
        (Some(g), _) => g,
        (None, Some(d)) => d.default_gamma(),
        (None, None) => 1.0,
    };
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x1217));
    PoseModel::init(*variant, dictionary, gamma, feature_dim, &cfg.arch, &mut rng)
}

/// Minibatch Adam training with per-epoch validation.
pub fn train(
    variant: &ModelVariant,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be at least 1").into());
    }
    let mut model = initialize(variant, train_set, cfg)?;
    let samples = prepare_dataset(&model, train_set)?;
    let opts = MetricOptions::default();

    let mut optimizers: Vec<AdamState> = model
        .bin
        .iter()
        .chain(&model.heads)
        .map(|n| AdamState::for_mlp(n, cfg.adam))
        .collect();
    let clip = cfg.clip.or(variant.default_clip());
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5u64 << 32));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_good = model.clone();

    for epoch in 0..cfg.epochs {
        let objective = match variant.warm_start_kind() {
            Some(kind) if epoch == 0 && cfg.warm_start => ModelVariant { kind, ..*variant },
            _ => *variant,
        };
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        let mut degenerate = 0;

        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let ev = model.accumulate(&samples[i], &objective, &mut grads)?;
                total_loss += ev.loss;
                degenerate += ev.degenerate;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = clip {
                clip_global_norm(&mut grads.nets_mut(), max);
            }
            if let Err(e) = apply_step(&mut model, &grads, &mut optimizers, epoch) {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: e.to_string(),
                    last_good: Box::new(last_good),
                    history,
                });
            }
        }

        let train_loss = total_loss / samples.len().max(1) as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                reason: "non-finite training loss".into(),
                last_good: Box::new(last_good),
                history,
            });
        }
        let (val_med, val_acc) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate(&model, val_set, &opts)?;
            (r.mean_med_err_deg, r.mean_acc)
        };
        history.push(EpochRecord {
            epoch,
            objective: objective.kind.tag().to_string(),
            lr: cfg.adam.lr_at(epoch),
            train_loss,
            val_med_err_deg: val_med,
            val_acc,
            degenerate,
        });
        last_good = model.clone();
    }
    Ok(TrainOutcome { model, history })
}

fn apply_step(
    model: &mut PoseModel,
    grads: &ModelGrads,
    optimizers: &mut [AdamState],
    epoch: usize,
) -> Result<(), Error> {
    let nets = model.bin.iter_mut().chain(model.heads.iter_mut());
    let gs = grads.bin.iter().chain(&grads.heads);
    for (idx, ((net, g), opt)) in nets.zip(gs).zip(optimizers.iter_mut()).enumerate() {
        crate::net::adam_step(net, g, opt, epoch).map_err(|e| match e {
            Error::NonFiniteGradient { tensor } => Error::NonFiniteGradient {
                tensor: format!("{} {tensor}", network_name(idx, model_has_bin(grads))),
            },
            other => other,
        })?;
    }
    Ok(())
}

fn model_has_bin(grads: &ModelGrads) -> bool {
    grads.bin.is_some()
}

fn network_name(idx: usize, has_bin: bool) -> String {
    match (has_bin, idx) {
        (true, 0) => "bin network".into(),
        (true, i) => format!("delta network {}", i - 1),
        (false, i) => format!("pose network {i}"),
    }
}
