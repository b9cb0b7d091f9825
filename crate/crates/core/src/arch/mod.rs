//! Network definition: configuration, topology, shape planning, the forward
//! pass and ablation variants.

mod config;
mod features;
mod forward;
mod model;
mod plan;
mod topology;
mod variants;

pub use config::{ArchConfig, ConnectionMode};
pub use features::{dump_features, normalize_minmax, FeatureMaps};
pub use forward::{
    encoder_forward, forward, head_forward, input_pyramid, mcu_forward, nested_decoder_forward, predict,
    ForwardPass,
};
pub use model::{Model, UnitParams};
pub use plan::{conv_params, shape_plan, PlanRow, PlanRowKind, ShapePlan};
pub use topology::{Activation, Operand, Topology, UnitId, UnitSpec};
pub use variants::{apply_variant, Variant};
