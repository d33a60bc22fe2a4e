//! End-to-end assembly: synthetic data, model, training, evaluation and
//! ablation sweeps.

pub mod ablation;
pub mod config;
pub mod model;
pub mod scene;
pub mod train;

pub use ablation::{ablation_run, format_table, parse_variants, AblationRow, Variant};
pub use config::{BackboneConfig, Config, DataConfig, Decoder, ModelConfig, TrainConfig};
pub use model::{argmax_labels, backbone_forward, ForwardOutput, Heads, LayerFeatures, Model};
pub use scene::{generate_scene, SceneSpec, SyntheticScene, Visibility};
pub use train::{
    evaluate, learning_rate, semantic_loss, train_and_evaluate, train_stage, Dataset, EpochLog,
    RunResult, Sgd, Split,
};
