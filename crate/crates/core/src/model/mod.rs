//! Mixer aggregation, set abstraction levels and the hierarchical classifier.

mod check;
mod config;
mod network;
mod plan;

pub use check::gradcheck_model;
pub use config::{
    canonical_config, canonical_variant, desk_config, desk_variant, Aggregator, AggregatorKind, HeadConfig,
    MixerParams, ModelConfig, SaLayerConfig,
};
pub use network::{BatchLoss, mixer_aggregate, pool_aggregate, ForwardCtx, ForwardOutput, Model, PoolKind, SetMixer};
pub use plan::{plan_cloud, plan_with_frozen, CloudPlan, LevelPlan};
