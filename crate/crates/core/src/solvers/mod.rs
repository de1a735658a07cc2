//! Registration procedures: direct displacement-field optimization, U-Net
//! training and inference, the rigid 2D/3D baseline, and the 2D-DF baseline.
//!
//! Every iterative solver follows the best-iterate contract: the returned
//! solution is the lowest-loss iterate seen, so the reported final loss is
//! never above the initial one. All randomness (initialization, shuffling,
//! restarts) flows from one explicit 64-bit seed.

mod direct;
mod report;
mod rigid;
mod train;
mod twodim;

pub use direct::{register_direct, DirectOpts};
pub use report::{LossRow, SolveReport};
pub use rigid::{apply_rigid, register_rigid, rigid_induced_field, RigidOpts, RigidParams};
pub use train::{infer_unet, train_loop, train_unet, TrainOpts, TrainSample};
pub use twodim::{
    apply_2ddf_to_volume, load_field2d, register_2d, save_field2d, warp_image2d, Dvf2D, TwoDOpts,
};
