//! Ray generation, positional encoding, radiance-field queries, stratified
//! sampling and volume rendering of color and disparity.

mod camera;
mod encode;
mod field;
mod render;

pub use camera::{identity_rotation, look_at_rotation, CameraModel, Ray};
pub use encode::{encode_batch, encoded_dim, positional_encode};
pub use field::{FieldEval, FieldNodes, RadianceField};
pub use render::{
    deltas_from_depths, recon_loss, recon_loss_tape, render_disparity, render_disparity_tape,
    stratified_sample, volume_render_color, volume_render_color_tape, volume_weights,
    RaySampleBatch, RowDotOp, VolumeWeightsOp, WeightedColorSumOp, DISPARITY_EPS,
};
