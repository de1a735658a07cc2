//! 2D/3D deformable image registration on volumetric CT data.
//!
//! The toolkit reconstructs a deformed 3D volume from a source volume and
//! single-viewpoint 2D projections (DRRs). It contains:
//!
//! - [`volgrid`]: volume / label / image containers with bit-exact file I/O,
//! - [`phantom`]: an analytic abdominal phantom breathing through a 10-phase
//!   cycle with exactly known displacement fields,
//! - [`projector`]: a parallel-beam DRR renderer with an exact adjoint,
//! - [`warpfield`]: displacement fields and the differentiable trilinear warp,
//! - [`losses`]: the MSE / smoothness / DVF loss suite with analytic gradients,
//! - [`diffnet`]: a minimal reverse-mode engine over a fixed operator set, the
//!   3D U-Net displacement generator, and Adam,
//! - [`solvers`]: direct DVF optimization, U-Net training/inference, and the
//!   rigid and 2D-DF baselines,
//! - [`metrics`]: MAE / DSC evaluation and report formatting,
//! - [`gradcheck`]: the central finite-difference suite covering every
//!   differentiable operation.
//!
//! Core numerics are generic over the scalar type ([`Scalar`]): f32 is the
//! production precision, f64 backs the gradient checks.

pub mod diffnet;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod phantom;
pub mod projector;
pub mod solvers;
pub mod volgrid;
pub mod warpfield;

mod scalar;

pub use error::{Error, Result};
pub use scalar::{from_f64, to_f64, Scalar};

/// Production-precision volume.
pub type VolumeF32 = volgrid::VolumeGrid<f32>;
/// Double-precision volume, used by the gradient checks.
pub type VolumeF64 = volgrid::VolumeGrid<f64>;
/// Production-precision displacement field.
pub type FieldF32 = warpfield::DisplacementField<f32>;
/// Double-precision displacement field.
pub type FieldF64 = warpfield::DisplacementField<f64>;
/// Production-precision 2D image.
pub type ImageF32 = volgrid::Image2D<f32>;
/// Double-precision 2D image.
pub type ImageF64 = volgrid::Image2D<f64>;
