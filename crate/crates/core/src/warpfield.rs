//! Displacement fields and the differentiable spatial transformer.
//!
//! A field stores one 3-vector per voxel in voxel units; the transform is
//! pull-back, `out(p) = v(p + u(p))`, sampled with clamp-to-edge trilinear
//! interpolation over the eight surrounding voxels. The backward pass is the
//! analytic derivative of the interpolation weights, with two documented
//! subgradient conventions: integer coordinates use the lower cell, and the
//! positional derivative is zero wherever the sample coordinate was clamped.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{from_f64, to_f64, Scalar};
use crate::volgrid::{self, Dims3, LabelVolume, VolumeGrid};

/// Per-voxel displacement vectors, component-planar: all ux, then uy, then uz,
/// each plane x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T> {
    dims: Dims3,
    values: Vec<T>,
}

impl<T: Scalar> DisplacementField<T> {
    pub fn new(dims: Dims3, values: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if values.len() != 3 * dims.count() {
            return Err(Error::SizeMismatch {
                expected: 3 * dims.count(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Dims3) -> Self {
        Self {
            dims,
            values: vec![T::zero(); 3 * dims.count()],
        }
    }

    pub fn constant(dims: Dims3, u: [T; 3]) -> Self {
        let n = dims.count();
        let mut values = Vec::with_capacity(3 * n);
        for c in u {
            values.extend(std::iter::repeat(c).take(n));
        }
        Self { dims, values }
    }

    pub fn from_fn(dims: Dims3, f: impl Fn(usize, usize, usize) -> [T; 3] + Sync) -> Self {
        let n = dims.count();
        let mut values = vec![T::zero(); 3 * n];
        let (ux, rest) = values.split_at_mut(n);
        let (uy, uz) = rest.split_at_mut(n);
        let slab = dims.nx * dims.ny;
        ux.par_chunks_mut(slab)
            .zip(uy.par_chunks_mut(slab))
            .zip(uz.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(z, ((cx, cy), cz))| {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let u = f(x, y, z);
                        let i = y * dims.nx + x;
                        cx[i] = u[0];
                        cy[i] = u[1];
                        cz[i] = u[2];
                    }
                }
            });
        Self { dims, values }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn component(&self, c: usize) -> &[T] {
        let n = self.dims.count();
        &self.values[c * n..(c + 1) * n]
    }

    #[inline(always)]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [T; 3] {
        let n = self.dims.count();
        let i = self.dims.idx(x, y, z);
        [self.values[i], self.values[n + i], self.values[2 * n + i]]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, u: [T; 3]) {
        let n = self.dims.count();
        let i = self.dims.idx(x, y, z);
        self.values[i] = u[0];
        self.values[n + i] = u[1];
        self.values[2 * n + i] = u[2];
    }

    pub fn cast<U: Scalar>(&self) -> DisplacementField<U> {
        DisplacementField {
            dims: self.dims,
            values: self.values.iter().map(|&v| from_f64(to_f64(v))).collect(),
        }
    }

    /// Mean Euclidean vector magnitude over all voxels.
    pub fn mean_norm(&self) -> f64 {
        let n = self.dims.count();
        let mut acc = 0.0f64;
        for i in 0..n {
            let (a, b, c) = (
                to_f64(self.values[i]),
                to_f64(self.values[n + i]),
                to_f64(self.values[2 * n + i]),
            );
            acc += (a * a + b * b + c * c).sqrt();
        }
        acc / n as f64
    }

    /// Mean endpoint error against another field.
    pub fn mean_endpoint_error(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(format!(
                "{} vs {}",
                self.dims, other.dims
            )));
        }
        let n = self.dims.count();
        let mut acc = 0.0f64;
        for i in 0..n {
            let dx = to_f64(self.values[i]) - to_f64(other.values[i]);
            let dy = to_f64(self.values[n + i]) - to_f64(other.values[n + i]);
            let dz = to_f64(self.values[2 * n + i]) - to_f64(other.values[2 * n + i]);
            acc += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        Ok(acc / n as f64)
    }

    pub fn same_dims(&self, dims: Dims3) -> Result<()> {
        if self.dims != dims {
            return Err(Error::DimsMismatch(format!("{} vs {}", self.dims, dims)));
        }
        Ok(())
    }
}

/// One axis of the interpolation cell at a (possibly clamped) coordinate.
#[derive(Clone, Copy)]
struct Axis<T> {
    i0: usize,
    i1: usize,
    frac: T,
    /// The raw coordinate fell outside [0, n-1]; positional derivative is 0.
    clamped: bool,
}

#[inline]
fn axis_at<T: Scalar>(c: T, n: usize) -> Axis<T> {
    let max = from_f64::<T>((n - 1) as f64);
    let clamped = c < T::zero() || c > max;
    let (i0, i1, frac) = volgrid::clamp_axis(c, n);
    Axis {
        i0,
        i1,
        frac,
        clamped,
    }
}

/// Pull-back warp: `out(p) = v(p + u(p))` with clamp-to-edge trilinear
/// sampling. A zero field reproduces the input bitwise.
pub fn warp_volume<T: Scalar>(
    v: &VolumeGrid<T>,
    u: &DisplacementField<T>,
) -> Result<VolumeGrid<T>> {
    u.same_dims(v.dims())?;
    let dims = v.dims();
    let n = dims.count();
    let src = v.values();
    let (ux, uy, uz) = (u.component(0), u.component(1), u.component(2));
    let slab = dims.nx * dims.ny;
    let mut out = vec![T::zero(); n];
    out.par_chunks_mut(slab).enumerate().for_each(|(z, chunk)| {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = (z * dims.ny + y) * dims.nx + x;
                let px = from_f64::<T>(x as f64) + ux[i];
                let py = from_f64::<T>(y as f64) + uy[i];
                let pz = from_f64::<T>(z as f64) + uz[i];
                chunk[y * dims.nx + x] = volgrid::sample_clamped(src, dims, px, py, pz);
            }
        }
    });
    VolumeGrid::new(dims, v.spacing(), out)
}

/// Backward pass of [`warp_volume`].
///
/// Returns (grad wrt source volume, grad wrt field). `grad_v` scatters each
/// output gradient into the eight sampled corners; the scatter runs serially
/// in voxel order so the result never depends on the worker count.
pub fn warp_volume_backward<T: Scalar>(
    v: &VolumeGrid<T>,
    u: &DisplacementField<T>,
    grad_out: &VolumeGrid<T>,
) -> Result<(VolumeGrid<T>, DisplacementField<T>)> {
    u.same_dims(v.dims())?;
    v.same_dims(grad_out)?;
    let dims = v.dims();
    let n = dims.count();
    let src = v.values();
    let go = grad_out.values();
    let (ux, uy, uz) = (u.component(0), u.component(1), u.component(2));

    let mut grad_v = vec![T::zero(); n];
    let mut grad_u = vec![T::zero(); 3 * n];
    let one = T::one();

    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.idx(x, y, z);
                let g = go[i];
                let ax = axis_at(from_f64::<T>(x as f64) + ux[i], dims.nx);
                let ay = axis_at(from_f64::<T>(y as f64) + uy[i], dims.ny);
                let az = axis_at(from_f64::<T>(z as f64) + uz[i], dims.nz);
                let (fx, fy, fz) = (ax.frac, ay.frac, az.frac);
                let (gx, gy, gz) = (one - fx, one - fy, one - fz);

                let corners = [
                    (ax.i0, ay.i0, az.i0, gx * gy * gz),
                    (ax.i1, ay.i0, az.i0, fx * gy * gz),
                    (ax.i0, ay.i1, az.i0, gx * fy * gz),
                    (ax.i1, ay.i1, az.i0, fx * fy * gz),
                    (ax.i0, ay.i0, az.i1, gx * gy * fz),
                    (ax.i1, ay.i0, az.i1, fx * gy * fz),
                    (ax.i0, ay.i1, az.i1, gx * fy * fz),
                    (ax.i1, ay.i1, az.i1, fx * fy * fz),
                ];
                for (cx, cy, cz, w) in corners {
                    grad_v[dims.idx(cx, cy, cz)] = grad_v[dims.idx(cx, cy, cz)] + g * w;
                }

                // Positional derivatives: lower-cell slope per axis, zero on
                // clamped axes.
                let at = |x: usize, y: usize, z: usize| src[dims.idx(x, y, z)];
                if !ax.clamped {
                    let d = (at(ax.i1, ay.i0, az.i0) - at(ax.i0, ay.i0, az.i0)) * gy * gz
                        + (at(ax.i1, ay.i1, az.i0) - at(ax.i0, ay.i1, az.i0)) * fy * gz
                        + (at(ax.i1, ay.i0, az.i1) - at(ax.i0, ay.i0, az.i1)) * gy * fz
                        + (at(ax.i1, ay.i1, az.i1) - at(ax.i0, ay.i1, az.i1)) * fy * fz;
                    grad_u[i] = g * d;
                }
                if !ay.clamped {
                    let d = (at(ax.i0, ay.i1, az.i0) - at(ax.i0, ay.i0, az.i0)) * gx * gz
                        + (at(ax.i1, ay.i1, az.i0) - at(ax.i1, ay.i0, az.i0)) * fx * gz
                        + (at(ax.i0, ay.i1, az.i1) - at(ax.i0, ay.i0, az.i1)) * gx * fz
                        + (at(ax.i1, ay.i1, az.i1) - at(ax.i1, ay.i0, az.i1)) * fx * fz;
                    grad_u[n + i] = g * d;
                }
                if !az.clamped {
                    let d = (at(ax.i0, ay.i0, az.i1) - at(ax.i0, ay.i0, az.i0)) * gx * gy
                        + (at(ax.i1, ay.i0, az.i1) - at(ax.i1, ay.i0, az.i0)) * fx * gy
                        + (at(ax.i0, ay.i1, az.i1) - at(ax.i0, ay.i1, az.i0)) * gx * fy
                        + (at(ax.i1, ay.i1, az.i1) - at(ax.i1, ay.i1, az.i0)) * fx * fy;
                    grad_u[2 * n + i] = g * d;
                }
            }
        }
    }

    Ok((
        VolumeGrid::new(dims, v.spacing(), grad_v)?,
        DisplacementField::new(dims, grad_u)?,
    ))
}

/// Nearest-neighbor label warp: `out(p) = l(round(p + u(p)))`, coordinates
/// clamped, halves rounding up (+0.5 moves to the next voxel).
pub fn warp_labels<T: Scalar>(l: &LabelVolume, u: &DisplacementField<T>) -> Result<LabelVolume> {
    u.same_dims(l.dims())?;
    let dims = l.dims();
    let (ux, uy, uz) = (u.component(0), u.component(1), u.component(2));
    let round_clamped = |c: f64, n: usize| -> usize {
        let r = (c + 0.5).floor();
        if r < 0.0 {
            0
        } else if r > (n - 1) as f64 {
            n - 1
        } else {
            r as usize
        }
    };
    LabelVolume::from_fn(dims, |x, y, z| {
        let i = dims.idx(x, y, z);
        let qx = round_clamped(x as f64 + to_f64(ux[i]), dims.nx);
        let qy = round_clamped(y as f64 + to_f64(uy[i]), dims.ny);
        let qz = round_clamped(z as f64 + to_f64(uz[i]), dims.nz);
        l.get(qx, qy, qz)
    })
}

/// Save a field as one header plus three payloads (`<stem>x.raw`,
/// `<stem>y.raw`, `<stem>z.raw`). With the conventional `..._u.mhd` header
/// name this produces `..._ux.raw` / `..._uy.raw` / `..._uz.raw`.
pub fn save_field(u: &DisplacementField<f32>, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".to_string());
    let names: Vec<String> = ["x", "y", "z"]
        .iter()
        .map(|a| format!("{stem}{a}.raw"))
        .collect();
    let d = u.dims();
    volgrid::write_header(
        path,
        &volgrid::RawHeader {
            ndims: 3,
            dim_size: vec![d.nx, d.ny, d.nz],
            spacing: vec![1.0, 1.0, 1.0],
            element_type: volgrid::ELEMENT_FLOAT.to_string(),
            data_files: names.clone(),
        },
    )?;
    for (c, name) in names.iter().enumerate() {
        volgrid::write_payload_f32(&volgrid::payload_path(path, name), u.component(c))?;
    }
    Ok(())
}

pub fn load_field(path: &Path) -> Result<DisplacementField<f32>> {
    let h = volgrid::read_header(path)?;
    if h.ndims != 3 || h.element_type != volgrid::ELEMENT_FLOAT || h.data_files.len() != 3 {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: "expected a 3D MET_FLOAT header with three payloads".to_string(),
        });
    }
    let dims = Dims3::new(h.dim_size[0], h.dim_size[1], h.dim_size[2]);
    dims.validate()?;
    let mut values = Vec::with_capacity(3 * dims.count());
    for name in &h.data_files {
        values.extend(volgrid::read_payload_f32(
            &volgrid::payload_path(path, name),
            dims.count(),
        )?);
    }
    DisplacementField::new(dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume<T: Scalar>(dims: Dims3, rng: &mut ChaCha8Rng) -> VolumeGrid<T> {
        let values = (0..dims.count())
            .map(|_| from_f64::<T>(rng.random_range(-1.0..1.0)))
            .collect();
        VolumeGrid::new(dims, [1.0; 3], values).unwrap()
    }

    fn random_field<T: Scalar>(dims: Dims3, amp: f64, rng: &mut ChaCha8Rng) -> DisplacementField<T> {
        let values = (0..3 * dims.count())
            .map(|_| from_f64::<T>(rng.random_range(-amp..amp)))
            .collect();
        DisplacementField::new(dims, values).unwrap()
    }

    #[test]
    fn zero_field_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_volume::<f32>(Dims3::new(5, 4, 3), &mut rng);
        let out = warp_volume(&v, &DisplacementField::zeros(v.dims())).unwrap();
        for (a, b) in v.values().iter().zip(out.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unit_x_shift_matches_index_shift() {
        let d = Dims3::new(4, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_volume::<f32>(d, &mut rng);
        let u = DisplacementField::constant(d, [1.0, 0.0, 0.0]);
        let out = warp_volume(&v, &u).unwrap();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let expect = v.get((x + 1).min(d.nx - 1), y, z);
                    assert_eq!(out.get(x, y, z), expect, "at {x},{y},{z}");
                }
            }
        }
    }

    #[test]
    fn half_shift_on_ramp_is_exact() {
        let d = Dims3::new(6, 3, 3);
        let v = VolumeGrid::from_fn(d, [1.0; 3], |x, _, _| x as f32).unwrap();
        let u = DisplacementField::constant(d, [0.5, 0.0, 0.0]);
        let out = warp_volume(&v, &u).unwrap();
        for x in 0..d.nx {
            let expect = (x as f32 + 0.5).min(5.0);
            assert!((out.get(x, 1, 1) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn warp_is_exact_on_affine_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = Dims3::new(
                rng.random_range(3..7),
                rng.random_range(3..7),
                rng.random_range(3..7),
            );
            let (a, b, c, k) = (
                rng.random_range(-2.0f64..2.0),
                rng.random_range(-2.0f64..2.0),
                rng.random_range(-2.0f64..2.0),
                rng.random_range(-2.0f64..2.0),
            );
            let v = VolumeGrid::from_fn(d, [1.0; 3], |x, y, z| {
                (k + a * x as f64 + b * y as f64 + c * z as f64) as f32
            })
            .unwrap();
            // In-bounds displacements only: affine exactness needs no clamping.
            let u = DisplacementField::from_fn(d, |x, y, z| {
                let lim = |pos: usize, n: usize| {
                    let lo = -(pos as f64);
                    let hi = (n - 1 - pos) as f64;
                    rng_in(lo, hi, (x * 31 + y * 7 + z) as u64)
                };
                [
                    lim(x, d.nx) as f32,
                    lim(y, d.ny) as f32,
                    lim(z, d.nz) as f32,
                ]
            });
            let out = warp_volume(&v, &u).unwrap();
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        let uu = u.get(x, y, z);
                        let expect = k
                            + a * (x as f64 + uu[0] as f64)
                            + b * (y as f64 + uu[1] as f64)
                            + c * (z as f64 + uu[2] as f64);
                        let got = out.get(x, y, z) as f64;
                        let denom = expect.abs().max(1.0);
                        assert!(
                            ((got - expect) / denom).abs() < 1e-5,
                            "affine mismatch {got} vs {expect}"
                        );
                    }
                }
            }
        }
    }

    // Deterministic pseudo-random in [lo, hi] for the affine test closure.
    fn rng_in(lo: f64, hi: f64, salt: u64) -> f64 {
        let h = salt.wrapping_mul(0x9E3779B97F4A7C15) >> 11;
        lo + (hi - lo) * (h as f64 / (1u64 << 53) as f64)
    }

    #[test]
    fn trilinear_weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..8);
            let c = rng.random_range(0.0..(n - 1) as f64);
            let ax = axis_at::<f64>(c, n);
            let sum = (1.0 - ax.frac) + ax.frac;
            assert!((sum - 1.0).abs() < 1e-6);
        }
        // Full 8-corner weights on random fractional coordinates.
        for _ in 0..100 {
            let (fx, fy, fz) = (
                rng.random_range(0.0f64..1.0),
                rng.random_range(0.0f64..1.0),
                rng.random_range(0.0f64..1.0),
            );
            let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
            let total = gx * gy * gz
                + fx * gy * gz
                + gx * fy * gz
                + fx * fy * gz
                + gx * gy * fz
                + fx * gy * fz
                + gx * fy * fz
                + fx * fy * fz;
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn warp_output_bounded_by_input_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = Dims3::new(
                rng.random_range(3..6),
                rng.random_range(3..6),
                rng.random_range(3..6),
            );
            let v = random_volume::<f32>(d, &mut rng);
            let u = random_field::<f32>(d, 2.5, &mut rng);
            let out = warp_volume(&v, &u).unwrap();
            let (lo, hi) = v.min_max();
            for &o in out.values() {
                assert!(o >= lo - 1e-6 && o <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = Dims3::cube(4);
        let v = random_volume::<f64>(d, &mut rng);
        let u = random_field::<f64>(d, 1.0, &mut rng);
        let zeros = VolumeGrid::constant(d, [1.0; 3], 0.0f64).unwrap();
        let (gv, gu) = warp_volume_backward(&v, &u, &zeros).unwrap();
        assert!(gv.values().iter().all(|&x| x == 0.0));
        assert!(gu.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // J = sum_p grad_out(p) * warp(v, u)(p); dJ/du and dJ/dv vs central FD.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..100 {
            let d = Dims3::cube(4);
            let v = random_volume::<f64>(d, &mut rng);
            // Non-integer displacements keep FD away from the lower-cell kink.
            let u = DisplacementField::<f64>::from_fn(d, |x, y, z| {
                let s = (x + 5 * y + 17 * z) as f64;
                [
                    0.3 + 0.25 * (s * 0.7).sin(),
                    -0.4 + 0.3 * (s * 1.3).cos(),
                    0.2 + 0.2 * (s * 0.9).sin(),
                ]
            });
            let go = random_volume::<f64>(d, &mut rng);
            let (gv, gu) = warp_volume_backward(&v, &u, &go).unwrap();
            let objective = |v: &VolumeGrid<f64>, u: &DisplacementField<f64>| -> f64 {
                let w = warp_volume(v, u).unwrap();
                w.values()
                    .iter()
                    .zip(go.values())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let h = 1e-6;
            for _ in 0..3 {
                // grad_u check
                let c = rng.random_range(0..3 * d.count());
                let mut up = u.clone();
                up.values_mut()[c] += h;
                let mut um = u.clone();
                um.values_mut()[c] -= h;
                let fd = (objective(&v, &up) - objective(&v, &um)) / (2.0 * h);
                let an = gu.values()[c];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < 1e-4,
                    "grad_u mismatch: fd={fd}, analytic={an}"
                );
                // grad_v check
                let cv = rng.random_range(0..d.count());
                let mut vp = v.clone();
                vp.values_mut()[cv] += h;
                let mut vm = v.clone();
                vm.values_mut()[cv] -= h;
                let fd = (objective(&vp, &u) - objective(&vm, &u)) / (2.0 * h);
                let an = gv.values()[cv];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < 1e-4,
                    "grad_v mismatch: fd={fd}, analytic={an}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 100);
    }

    #[test]
    fn grad_v_conserves_mass_without_clamping() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = Dims3::cube(5);
        let v = random_volume::<f64>(d, &mut rng);
        // Small interior-only displacements: no clamping anywhere.
        let u = DisplacementField::<f64>::from_fn(d, |x, y, z| {
            let interior =
                x > 0 && x < d.nx - 1 && y > 0 && y < d.ny - 1 && z > 0 && z < d.nz - 1;
            if interior {
                [0.3, -0.25, 0.15]
            } else {
                [0.0, 0.0, 0.0]
            }
        });
        let go = random_volume::<f64>(d, &mut rng);
        let (gv, _) = warp_volume_backward(&v, &u, &go).unwrap();
        let sum_gv: f64 = gv.values().iter().sum();
        let sum_go: f64 = go.values().iter().sum();
        assert!(
            (sum_gv - sum_go).abs() < 1e-9,
            "partition of unity broken: {sum_gv} vs {sum_go}"
        );
    }

    #[test]
    fn label_warp_identity_and_shift() {
        let d = Dims3::new(4, 3, 3);
        let l = LabelVolume::from_fn(d, |x, _, _| if x < 2 { 1 } else { 2 }).unwrap();
        let same = warp_labels(&l, &DisplacementField::<f32>::zeros(d)).unwrap();
        assert_eq!(l, same);

        let shifted = warp_labels(&l, &DisplacementField::constant(d, [1.0f32, 0.0, 0.0])).unwrap();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    assert_eq!(shifted.get(x, y, z), l.get((x + 1).min(d.nx - 1), y, z));
                }
            }
        }
    }

    #[test]
    fn label_warp_rounds_half_up() {
        let d = Dims3::new(4, 1, 1);
        let l = LabelVolume::new(d, vec![0, 1, 2, 0]).unwrap();
        let out = warp_labels(&l, &DisplacementField::constant(d, [0.5f32, 0.0, 0.0])).unwrap();
        // round(x + 0.5) = x + 1 under round-half-up.
        assert_eq!(out.labels(), &[1, 2, 0, 0]);
    }

    #[test]
    fn field_io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_t50_u.mhd");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_field::<f32>(Dims3::new(3, 4, 5), 2.0, &mut rng);
        save_field(&u, &path).unwrap();
        assert!(dir.path().join("frame_t50_ux.raw").exists());
        assert!(dir.path().join("frame_t50_uy.raw").exists());
        assert!(dir.path().join("frame_t50_uz.raw").exists());
        let back = load_field(&path).unwrap();
        assert_eq!(u, back);
    }
}
