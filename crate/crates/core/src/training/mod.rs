//! Models, data and the training loop.

pub mod dataset;
pub mod metrics;
pub mod mnist;
pub mod model;
pub mod optimizer;
pub mod train;

pub use dataset::{
    format_input, make_dataset, make_dataset_with, Dataset, DatasetKind, ShapeParams,
};
pub use metrics::{accuracy, fidelity_error, gradient_direction_error, perturb_phases};
pub use mnist::{load_mnist64, mnist64_preprocess};
pub use model::{ForwardTrace, Head, HeadOutput, Nonlinearity, PnnModel};
pub use optimizer::{adam_step, AdamConfig, AdamState};
pub use train::{
    device_accuracy, evaluate_model, train, Evaluation, IterationLog, TrainConfig, TrainData,
    TrainLog,
};
