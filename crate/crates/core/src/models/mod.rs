//! Baselines and bin-and-delta models: objectives, prediction and training.

mod bundle;
mod losses;
mod model;
mod train;
mod variant;

pub use bundle::{load_bundle, save_bundle, BundleManifest};
pub use losses::{
    compose, geodesic_composed, loss_classification, loss_geodesic_bd, loss_probabilistic_bd,
    loss_regression, loss_riemannian_bd, loss_simple_bd, required_heads, training_bin,
    variant_loss, BinTargets, LossGrads, Outputs, PoseLoss, PoseSample, RegressionMetric,
    DEGENERATE_EPS,
};
pub use model::{Architecture, ModelGrads, PoseModel, SampleEval};
pub use train::{
    evaluate, history_to_csv, initialize, prepare_dataset, train, EpochRecord, TrainConfig,
    TrainError, TrainOutcome,
};
pub use variant::{BinSelection, Family, ModelVariant, VariantKind};
