//! Supervised training: data, augmentation, loss and optimisation.

pub mod adam;
pub mod augment;
pub mod loss;
pub mod sample;
pub mod synth;
pub mod trainer;

pub use adam::{adam_step, collect_grads, AdamState, ParamGrads};
pub use augment::{augment, augment_photometric, augment_temporal_flip, augment_vertical_flip, AugmentConfig, Photometric};
pub use loss::{masked_l2_sum, multiscale_loss, weight_norm, GtPyramid, LevelPredictions, LossTerms, LossWeights};
pub use sample::{GroundTruth, Sample};
pub use synth::{gen_synthetic_scene, gen_synthetic_scene_with, LayerSpec, Scene, SceneConfig};
pub use trainer::{train, train_step, StepLog, TrainConfig};
