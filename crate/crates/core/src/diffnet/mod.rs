//! Minimal reverse-mode gradient engine over a fixed operator set, the 3D
//! U-Net displacement generator, and the Adam optimizer.
//!
//! This is not a general autodiff system: the operator set is exactly
//! {conv3d, leaky_relu, upsample, concat, pack, warp, losses}, and the U-Net
//! backward pass is written out by hand against a recorded forward trace.
//! Every operator's backward is covered by the finite-difference suite in
//! [`crate::gradcheck`].

mod adam;
mod checkpoint;
mod ops;
mod tensor;
mod unet;

pub use adam::{adam_step, adam_step_unet, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use ops::{
    concat_channels, leaky_relu, leaky_relu_backward, pack_input, split_channels, upsample2x,
    upsample2x_backward, Conv3d, PackMode,
};
pub use tensor::Tensor4;
pub use unet::{unet_backward, unet_forward, unet_infer, UNetConfig, UNetParams, UNetTrace};
