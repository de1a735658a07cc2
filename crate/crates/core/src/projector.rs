//! Front-view DRR rendering by parallel-beam line integration along the
//! anteroposterior (y) axis, with the exact adjoint.
//!
//! The attenuation model is water-normalized, `mu(h) = max(0, 1 + h/1000)`:
//! air integrates to zero, water to one. Rays are averaged (not summed) so
//! the image scale does not depend on the volume depth, and images are
//! min-max normalized to [0, 1] with the normalization constants recorded in
//! the returned geometry. The adjoint differentiates the fixed map defined
//! by those recorded constants, with the clamp subgradient of `mu` taken as
//! zero at and below -1000 HU.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};
use crate::volgrid::{Dims3, Image2D, VolumeGrid};

/// An unnormalized projection plane: rows along z, columns along x.
///
/// Unlike [`Image2D`] the values are unbounded; this carries raw ray means
/// and gradient planes inside the optimization loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub h: usize,
    pub w: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> Projection<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            values: vec![T::zero(); h * w],
        }
    }

    #[inline(always)]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.w + col]
    }
}

/// Rendering geometry: output dims tied to the volume, plus the min/max
/// recorded at render time so the normalization is reproducible.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionGeometry<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub raw_min: T,
    pub raw_max: T,
}

impl<T: Scalar> ProjectionGeometry<T> {
    fn check_dims(&self, dims: Dims3) -> Result<()> {
        if dims.nx != self.nx || dims.ny != self.ny || dims.nz != self.nz {
            return Err(Error::DimsMismatch(format!(
                "geometry {}x{}x{} vs volume {dims}",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }

    /// 1 / (max - min), or 0 for the constant-image guard.
    fn scale(&self) -> T {
        if self.raw_max > self.raw_min {
            T::one() / (self.raw_max - self.raw_min)
        } else {
            T::zero()
        }
    }
}

/// Water-normalized attenuation `max(0, 1 + h/1000)`.
#[inline]
pub fn attenuation<T: Scalar>(hu: T) -> T {
    (T::one() + hu / from_f64::<T>(1000.0)).max(T::zero())
}

/// Subgradient of [`attenuation`]: 1/1000 above -1000 HU, 0 at and below.
#[inline]
pub fn attenuation_deriv<T: Scalar>(hu: T) -> T {
    if hu > from_f64::<T>(-1000.0) {
        T::one() / from_f64::<T>(1000.0)
    } else {
        T::zero()
    }
}

/// Raw projection: `raw(x, z) = mean_y mu(v(x, y, z))`, summed in ascending
/// y order.
pub fn render_raw<T: Scalar>(v: &VolumeGrid<T>) -> Projection<T> {
    let d = v.dims();
    let inv_ny = T::one() / from_f64::<T>(d.ny as f64);
    let mut values = vec![T::zero(); d.nx * d.nz];
    values
        .par_chunks_mut(d.nx)
        .enumerate()
        .for_each(|(z, row)| {
            for x in 0..d.nx {
                let mut acc = T::zero();
                for y in 0..d.ny {
                    acc = acc + attenuation(v.get(x, y, z));
                }
                row[x] = acc * inv_ny;
            }
        });
    Projection {
        h: d.nz,
        w: d.nx,
        values,
    }
}

/// The pre-attenuation linear projector `P(v)(x, z) = mean_y v(x, y, z)`,
/// exposed for the adjoint identity test.
pub fn project_linear<T: Scalar>(v: &VolumeGrid<T>) -> Projection<T> {
    let d = v.dims();
    let inv_ny = T::one() / from_f64::<T>(d.ny as f64);
    let mut values = vec![T::zero(); d.nx * d.nz];
    for z in 0..d.nz {
        for x in 0..d.nx {
            let mut acc = T::zero();
            for y in 0..d.ny {
                acc = acc + v.get(x, y, z);
            }
            values[z * d.nx + x] = acc * inv_ny;
        }
    }
    Projection {
        h: d.nz,
        w: d.nx,
        values,
    }
}

/// Exact adjoint of [`project_linear`]: spreads each pixel back along its ray
/// with weight 1/ny.
pub fn project_linear_adjoint<T: Scalar>(
    img: &Projection<T>,
    dims: Dims3,
    spacing: [f32; 3],
) -> Result<VolumeGrid<T>> {
    if img.w != dims.nx || img.h != dims.nz {
        return Err(Error::DimsMismatch(format!(
            "projection {}x{} vs volume {dims}",
            img.w, img.h
        )));
    }
    let inv_ny = T::one() / from_f64::<T>(dims.ny as f64);
    VolumeGrid::from_fn(dims, spacing, |x, _y, z| img.get(z, x) * inv_ny)
}

/// Render a normalized front-view DRR, recording the normalization range.
pub fn render_drr<T: Scalar>(v: &VolumeGrid<T>) -> (Image2D<T>, ProjectionGeometry<T>) {
    let d = v.dims();
    let raw = render_raw(v);
    let mut lo = raw.values[0];
    let mut hi = raw.values[0];
    for &x in &raw.values {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    let geom = ProjectionGeometry {
        nx: d.nx,
        ny: d.ny,
        nz: d.nz,
        raw_min: lo,
        raw_max: hi,
    };
    let scale = geom.scale();
    let values: Vec<T> = raw.values.iter().map(|&x| (x - lo) * scale).collect();
    let img = Image2D::new(d.nz, d.nx, values).expect("normalized DRR is in [0, 1]");
    (img, geom)
}

/// Render through a previously recorded geometry, keeping its normalization
/// constants fixed. Values may leave [0, 1]; optimization loops rely on this
/// to keep the projection-domain objective well defined across iterates.
pub fn render_with_geometry<T: Scalar>(
    v: &VolumeGrid<T>,
    geom: &ProjectionGeometry<T>,
) -> Result<Projection<T>> {
    geom.check_dims(v.dims())?;
    let mut raw = render_raw(v);
    let scale = geom.scale();
    for x in raw.values.iter_mut() {
        *x = (*x - geom.raw_min) * scale;
    }
    Ok(raw)
}

/// Adjoint of the rendering chain at the recorded normalization: pixel
/// gradients flow back through the fixed scale, the ray mean, and the
/// attenuation subgradient at the voxel's value.
pub fn render_drr_adjoint<T: Scalar>(
    grad_image: &Projection<T>,
    geom: &ProjectionGeometry<T>,
    v: &VolumeGrid<T>,
) -> Result<VolumeGrid<T>> {
    geom.check_dims(v.dims())?;
    if grad_image.w != geom.nx || grad_image.h != geom.nz {
        return Err(Error::DimsMismatch(format!(
            "gradient image {}x{} vs geometry {}x{}",
            grad_image.w, grad_image.h, geom.nx, geom.nz
        )));
    }
    let d = v.dims();
    let factor = geom.scale() / from_f64::<T>(d.ny as f64);
    VolumeGrid::from_fn(d, v.spacing(), |x, y, z| {
        grad_image.get(z, x) * factor * attenuation_deriv(v.get(x, y, z))
    })
}
