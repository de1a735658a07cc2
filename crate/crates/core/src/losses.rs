//! Similarity and regularization losses with analytic gradients.
//!
//! Three terms: voxelwise MSE between the deformed and ground-truth volumes,
//! a first-order smoothness penalty on the displacement field, and an
//! optional supervised field term. The total is
//! `L_MSE + lambda * L_smooth + gamma * L_DVF`.
//!
//! The smoothness term is implemented as a mean over valid forward
//! differences rather than a bare sum, so the conventional lambda = 0.05
//! keeps its scale across grid sizes.

use crate::error::{Error, Result};
use crate::numeric::det_sum;
use crate::scalar::{from_f64, Scalar};
use crate::volgrid::VolumeGrid;
use crate::warpfield::DisplacementField;

/// Weights of the total loss: `lambda_smooth` on the field-gradient penalty,
/// `gamma_dvf` on the supervised field term (0 disables supervision).
#[derive(Clone, Copy, Debug)]
pub struct LossWeights<T> {
    pub lambda_smooth: T,
    pub gamma_dvf: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(lambda_smooth: T, gamma_dvf: T) -> Result<Self> {
        if lambda_smooth < T::zero() || gamma_dvf < T::zero() {
            return Err(Error::Validation("loss weights must be >= 0".to_string()));
        }
        Ok(Self {
            lambda_smooth,
            gamma_dvf,
        })
    }

    /// lambda = 0.05, gamma = 0.
    pub fn unsupervised() -> Self {
        Self {
            lambda_smooth: from_f64(0.05),
            gamma_dvf: T::zero(),
        }
    }

    /// lambda = 0.05, gamma = 1.
    pub fn supervised() -> Self {
        Self {
            lambda_smooth: from_f64(0.05),
            gamma_dvf: T::one(),
        }
    }
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self::unsupervised()
    }
}

/// Mean squared voxel error; gradient is with respect to `v_def`.
pub fn mse_loss<T: Scalar>(
    v_gt: &VolumeGrid<T>,
    v_def: &VolumeGrid<T>,
) -> Result<(T, VolumeGrid<T>)> {
    v_gt.same_dims(v_def)?;
    let n = v_gt.dims().count();
    let inv_n = T::one() / from_f64::<T>(n as f64);
    let terms: Vec<T> = v_gt
        .values()
        .iter()
        .zip(v_def.values())
        .map(|(&g, &d)| (g - d) * (g - d))
        .collect();
    let value = det_sum(&terms) * inv_n;
    let two = from_f64::<T>(2.0);
    let grad: Vec<T> = v_gt
        .values()
        .iter()
        .zip(v_def.values())
        .map(|(&g, &d)| two * inv_n * (d - g))
        .collect();
    Ok((value, VolumeGrid::new(v_gt.dims(), v_gt.spacing(), grad)?))
}

fn smooth_diff_count(u: &DisplacementField<impl Scalar>) -> usize {
    let d = u.dims();
    3 * ((d.nx - 1) * d.ny * d.nz + d.nx * (d.ny - 1) * d.nz + d.nx * d.ny * (d.nz - 1))
}

/// First-order smoothness: mean of squared forward differences over all
/// components and directions; differences that would leave the grid are
/// omitted from the mean.
pub fn smooth_loss<T: Scalar>(u: &DisplacementField<T>) -> (T, DisplacementField<T>) {
    let dims = u.dims();
    let n = dims.count();
    let total = smooth_diff_count(u);
    let inv_m = T::one() / from_f64::<T>(total as f64);
    let strides = [1usize, dims.nx, dims.nx * dims.ny];

    // Value: per-z-slab partial sums in a fixed order, then one pairwise sum.
    let mut slab_sums: Vec<T> = Vec::with_capacity(dims.nz * 3);
    for c in 0..3 {
        let comp = u.component(c);
        for z in 0..dims.nz {
            let mut acc = T::zero();
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let i = dims.idx(x, y, z);
                    if x + 1 < dims.nx {
                        let d = comp[i + strides[0]] - comp[i];
                        acc = acc + d * d;
                    }
                    if y + 1 < dims.ny {
                        let d = comp[i + strides[1]] - comp[i];
                        acc = acc + d * d;
                    }
                    if z + 1 < dims.nz {
                        let d = comp[i + strides[2]] - comp[i];
                        acc = acc + d * d;
                    }
                }
            }
            slab_sums.push(acc);
        }
    }
    let value = det_sum(&slab_sums) * inv_m;

    // Gradient in gather form: each voxel sees its backward and forward
    // differences along every axis.
    let two = from_f64::<T>(2.0);
    let mut grad = vec![T::zero(); 3 * n];
    for c in 0..3 {
        let comp = u.component(c);
        let gcomp = &mut grad[c * n..(c + 1) * n];
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let i = dims.idx(x, y, z);
                    let mut g = T::zero();
                    let pos = [x, y, z];
                    let ext = [dims.nx, dims.ny, dims.nz];
                    for a in 0..3 {
                        if pos[a] > 0 {
                            g = g + (comp[i] - comp[i - strides[a]]);
                        }
                        if pos[a] + 1 < ext[a] {
                            g = g - (comp[i + strides[a]] - comp[i]);
                        }
                    }
                    gcomp[i] = two * inv_m * g;
                }
            }
        }
    }
    (
        value,
        DisplacementField::new(dims, grad).expect("finite smooth gradient"),
    )
}

/// Supervised field loss: mean squared vector difference per voxel; gradient
/// is with respect to `u_pre`.
pub fn dvf_loss<T: Scalar>(
    u_gt: &DisplacementField<T>,
    u_pre: &DisplacementField<T>,
) -> Result<(T, DisplacementField<T>)> {
    u_gt.same_dims(u_pre.dims())?;
    let n = u_gt.dims().count();
    let inv_n = T::one() / from_f64::<T>(n as f64);
    let terms: Vec<T> = u_gt
        .values()
        .iter()
        .zip(u_pre.values())
        .map(|(&g, &p)| (g - p) * (g - p))
        .collect();
    let value = det_sum(&terms) * inv_n;
    let two = from_f64::<T>(2.0);
    let grad: Vec<T> = u_gt
        .values()
        .iter()
        .zip(u_pre.values())
        .map(|(&g, &p)| two * inv_n * (p - g))
        .collect();
    Ok((value, DisplacementField::new(u_gt.dims(), grad)?))
}

/// Value and gradients of the weighted total loss.
pub struct TotalLoss<T> {
    pub total: T,
    pub mse: T,
    pub smooth: T,
    pub dvf: T,
    /// Gradient with respect to the deformed volume (the MSE part).
    pub grad_v_def: VolumeGrid<T>,
    /// Gradient with respect to the predicted field (smooth + DVF parts;
    /// the warp chain contributes separately through `grad_v_def`).
    pub grad_u: DisplacementField<T>,
}

/// `L_MSE + lambda * L_smooth + gamma * L_DVF`. `u_gt` is required exactly
/// when `gamma_dvf > 0`.
pub fn total_loss<T: Scalar>(
    v_gt: &VolumeGrid<T>,
    v_def: &VolumeGrid<T>,
    u_gt: Option<&DisplacementField<T>>,
    u_pre: &DisplacementField<T>,
    w: &LossWeights<T>,
) -> Result<TotalLoss<T>> {
    let (mse, grad_v_def) = mse_loss(v_gt, v_def)?;
    let (smooth, smooth_grad) = smooth_loss(u_pre);

    let mut grad_u = smooth_grad;
    for g in grad_u.values_mut() {
        *g = *g * w.lambda_smooth;
    }

    let mut dvf = T::zero();
    if w.gamma_dvf > T::zero() {
        let gt = u_gt.ok_or_else(|| {
            Error::Validation("gamma_dvf > 0 requires a ground-truth field".to_string())
        })?;
        let (value, dvf_grad) = dvf_loss(gt, u_pre)?;
        dvf = value;
        for (g, dg) in grad_u.values_mut().iter_mut().zip(dvf_grad.values()) {
            *g = *g + w.gamma_dvf * *dg;
        }
    } else if let Some(gt) = u_gt {
        // Reported for the loss history even when it does not contribute.
        dvf = dvf_loss(gt, u_pre)?.0;
    }

    Ok(TotalLoss {
        total: mse + w.lambda_smooth * smooth + w.gamma_dvf * dvf,
        mse,
        smooth,
        dvf,
        grad_v_def,
        grad_u,
    })
}
