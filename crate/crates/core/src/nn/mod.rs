//! A small training stack in which fully-connected and convolutional
//! products may be replaced by sampled approximations, with per-layer
//! multiply-accumulate accounting.

pub mod activations;
mod adam;
mod gradcheck;
pub mod layers;
mod ledger;
mod network;
pub mod presets;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{finite_difference_check, GradCheck};
pub use layers::{
    backward_conv, backward_conv_with, backward_fc, backward_fc_with, conv_forward_macs, fc_forward_macs, forward_conv,
    forward_fc, layer_plan, meprop_backward_fc, meprop_backward_fc_with, LayerGrads,
};
pub use ledger::{compute_reduction, ComputeLedger, MacPair, Pass};
pub use network::{
    infer_shapes, projected_ledger, BackwardSampling, LayerSpec, Network, ParamGrads, Params, Plans, Shape, StepResult,
};
pub use train::{evaluate, train, Budget, CurvePoint, TrainConfig, TrainData, TrainOutcome};
