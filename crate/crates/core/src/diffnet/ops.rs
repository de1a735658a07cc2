//! The fixed operator set: 3x3x3 convolution (stride 1 or 2, zero padding),
//! LeakyReLU, nearest-neighbor 2x upsampling, channel concatenation, and the
//! 2-channel input packing. Each op carries its analytic backward.

use rand::Rng;
use rayon::prelude::*;

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};
use crate::volgrid::{normalize_hu, Dims3, Image2D, VolumeGrid};

/// A 3x3x3 convolution layer (cross-correlation, zero padding 1).
///
/// Weight layout: `[c_out][c_in][kz][ky][kx]`, bias one value per output
/// channel. Stride 2 halves each spatial dim and requires even input dims.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv3d<T> {
    pub fn zeros(c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            c_in,
            c_out,
            stride,
            weight: vec![T::zero(); c_out * c_in * 27],
            bias: vec![T::zero(); c_out],
        }
    }

    /// He-style uniform init, limit sqrt(6 / fan_in); biases zero.
    pub fn init_he(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (c_in * 27) as f64).sqrt();
        let weight = (0..c_out * c_in * 27)
            .map(|_| from_f64(rng.random_range(-limit..limit)))
            .collect();
        Self {
            c_in,
            c_out,
            stride,
            weight,
            bias: vec![T::zero(); c_out],
        }
    }

    #[inline(always)]
    fn widx(&self, co: usize, ci: usize, kz: usize, ky: usize, kx: usize) -> usize {
        ((co * self.c_in + ci) * 3 + kz) * 9 + ky * 3 + kx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn out_dims(&self, dims: Dims3) -> Result<Dims3> {
        if self.stride == 1 {
            return Ok(dims);
        }
        if dims.nx % 2 != 0 || dims.ny % 2 != 0 || dims.nz % 2 != 0 {
            return Err(Error::InvalidDims(format!(
                "stride-2 conv needs even dims, got {dims}"
            )));
        }
        Ok(Dims3::new(dims.nx / 2, dims.ny / 2, dims.nz / 2))
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.channels() != self.c_in {
            return Err(Error::DimsMismatch(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                x.channels()
            )));
        }
        let din = x.dims();
        let dout = self.out_dims(din)?;
        let nvox = dout.count();
        let s = self.stride;
        let mut out = vec![T::zero(); self.c_out * nvox];
        out.par_chunks_mut(nvox).enumerate().for_each(|(co, chunk)| {
            for oz in 0..dout.nz {
                for oy in 0..dout.ny {
                    for ox in 0..dout.nx {
                        let mut acc = self.bias[co];
                        for ci in 0..self.c_in {
                            let plane = x.channel(ci);
                            for kz in 0..3usize {
                                let iz = (oz * s + kz) as isize - 1;
                                if iz < 0 || iz >= din.nz as isize {
                                    continue;
                                }
                                for ky in 0..3usize {
                                    let iy = (oy * s + ky) as isize - 1;
                                    if iy < 0 || iy >= din.ny as isize {
                                        continue;
                                    }
                                    let row =
                                        (iz as usize * din.ny + iy as usize) * din.nx;
                                    for kx in 0..3usize {
                                        let ix = (ox * s + kx) as isize - 1;
                                        if ix < 0 || ix >= din.nx as isize {
                                            continue;
                                        }
                                        acc = acc
                                            + self.weight[self.widx(co, ci, kz, ky, kx)]
                                                * plane[row + ix as usize];
                                    }
                                }
                            }
                        }
                        chunk[dout.idx(ox, oy, oz)] = acc;
                    }
                }
            }
        });
        Tensor4::new(self.c_out, dout, out)
    }

    /// Gradients with respect to input, weights and bias.
    ///
    /// The input gradient is computed in gather form (each input voxel sums
    /// the output gradients that consumed it), so the whole backward pass is
    /// deterministic under any parallel split.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Conv3d<T>)> {
        let din = x.dims();
        let dout = self.out_dims(din)?;
        if grad_out.channels() != self.c_out || grad_out.dims() != dout {
            return Err(Error::DimsMismatch(format!(
                "grad_out {}ch {} vs expected {}ch {dout}",
                grad_out.channels(),
                grad_out.dims(),
                self.c_out
            )));
        }
        let s = self.stride;
        let nin = din.count();

        let mut grads = Conv3d::zeros(self.c_in, self.c_out, s);
        // Bias and weight gradients, parallel over output channels.
        let wslab = self.c_in * 27;
        grads
            .weight
            .par_chunks_mut(wslab)
            .zip(grads.bias.par_iter_mut())
            .enumerate()
            .for_each(|(co, (wchunk, bias))| {
                let gplane = grad_out.channel(co);
                let mut bacc = T::zero();
                for oz in 0..dout.nz {
                    for oy in 0..dout.ny {
                        for ox in 0..dout.nx {
                            let g = gplane[dout.idx(ox, oy, oz)];
                            bacc = bacc + g;
                            for ci in 0..self.c_in {
                                let plane = x.channel(ci);
                                for kz in 0..3usize {
                                    let iz = (oz * s + kz) as isize - 1;
                                    if iz < 0 || iz >= din.nz as isize {
                                        continue;
                                    }
                                    for ky in 0..3usize {
                                        let iy = (oy * s + ky) as isize - 1;
                                        if iy < 0 || iy >= din.ny as isize {
                                            continue;
                                        }
                                        let row = (iz as usize * din.ny + iy as usize)
                                            * din.nx;
                                        for kx in 0..3usize {
                                            let ix = (ox * s + kx) as isize - 1;
                                            if ix < 0 || ix >= din.nx as isize {
                                                continue;
                                            }
                                            let wi = (ci * 3 + kz) * 9 + ky * 3 + kx;
                                            wchunk[wi] = wchunk[wi]
                                                + g * plane[row + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                *bias = bacc;
            });

        // Input gradient (gather form).
        let mut grad_x = vec![T::zero(); self.c_in * nin];
        grad_x
            .par_chunks_mut(nin)
            .enumerate()
            .for_each(|(ci, chunk)| {
                for iz in 0..din.nz {
                    for iy in 0..din.ny {
                        for ix in 0..din.nx {
                            let mut acc = T::zero();
                            for kz in 0..3usize {
                                let oz_num = iz as isize - (kz as isize - 1);
                                if oz_num < 0 || oz_num % s as isize != 0 {
                                    continue;
                                }
                                let oz = (oz_num / s as isize) as usize;
                                if oz >= dout.nz {
                                    continue;
                                }
                                for ky in 0..3usize {
                                    let oy_num = iy as isize - (ky as isize - 1);
                                    if oy_num < 0 || oy_num % s as isize != 0 {
                                        continue;
                                    }
                                    let oy = (oy_num / s as isize) as usize;
                                    if oy >= dout.ny {
                                        continue;
                                    }
                                    for kx in 0..3usize {
                                        let ox_num = ix as isize - (kx as isize - 1);
                                        if ox_num < 0 || ox_num % s as isize != 0 {
                                            continue;
                                        }
                                        let ox = (ox_num / s as isize) as usize;
                                        if ox >= dout.nx {
                                            continue;
                                        }
                                        for co in 0..self.c_out {
                                            acc = acc
                                                + self.weight
                                                    [self.widx(co, ci, kz, ky, kx)]
                                                    * grad_out.get(co, ox, oy, oz);
                                        }
                                    }
                                }
                            }
                            chunk[din.idx(ix, iy, iz)] = acc;
                        }
                    }
                }
            });

        Ok((Tensor4::new(self.c_in, din, grad_x)?, grads))
    }
}

/// `f(v) = v` for `v > 0`, else `slope * v`.
pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    let values = x
        .values()
        .iter()
        .map(|&v| if v > T::zero() { v } else { slope * v })
        .collect();
    Tensor4::new(x.channels(), x.dims(), values).expect("same shape")
}

/// Backward of [`leaky_relu`]; the subgradient at exactly zero is `slope`.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>, slope: T) -> Tensor4<T> {
    debug_assert_eq!(x.dims(), grad_out.dims());
    let values = x
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
        .collect();
    Tensor4::new(x.channels(), x.dims(), values).expect("same shape")
}

/// Nearest-neighbor x2 upsampling in each spatial dim.
pub fn upsample2x<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let din = x.dims();
    let dout = Dims3::new(din.nx * 2, din.ny * 2, din.nz * 2);
    let mut out = Tensor4::zeros(x.channels(), dout);
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..dout.nz {
            for y in 0..dout.ny {
                for xx in 0..dout.nx {
                    dst[dout.idx(xx, y, z)] = src[din.idx(xx / 2, y / 2, z / 2)];
                }
            }
        }
    }
    out
}

/// Backward of [`upsample2x`]: each parent accumulates its 8 children.
pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let dout = grad_out.dims();
    if dout.nx % 2 != 0 || dout.ny % 2 != 0 || dout.nz % 2 != 0 {
        return Err(Error::InvalidDims(format!(
            "upsample gradient needs even dims, got {dout}"
        )));
    }
    let din = Dims3::new(dout.nx / 2, dout.ny / 2, dout.nz / 2);
    let mut out = Tensor4::zeros(grad_out.channels(), din);
    for c in 0..grad_out.channels() {
        let src = grad_out.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..dout.nz {
            for y in 0..dout.ny {
                for xx in 0..dout.nx {
                    let di = din.idx(xx / 2, y / 2, z / 2);
                    dst[di] = dst[di] + src[dout.idx(xx, y, z)];
                }
            }
        }
    }
    Ok(out)
}

/// Stack the channels of `a` then `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch(format!(
            "concat {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    let mut values = Vec::with_capacity(a.values().len() + b.values().len());
    values.extend_from_slice(a.values());
    values.extend_from_slice(b.values());
    Tensor4::new(a.channels() + b.channels(), a.dims(), values)
}

/// Backward of [`concat_channels`]: split the gradient at channel `c_a`.
pub fn split_channels<T: Scalar>(g: &Tensor4<T>, c_a: usize) -> (Tensor4<T>, Tensor4<T>) {
    let n = g.dims().count();
    let (a, b) = g.values().split_at(c_a * n);
    (
        Tensor4::new(c_a, g.dims(), a.to_vec()).expect("front split"),
        Tensor4::new(g.channels() - c_a, g.dims(), b.to_vec()).expect("back split"),
    )
}

/// Where the two DRRs land inside channel 1 of the packed input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PackMode {
    /// Source DRR on the y = 0 plane, target DRR on y = ny-1 (the extreme
    /// coronal planes along the projection axis).
    #[default]
    ExtremePlanes,
    /// Source DRR replicated over the anterior half, target over the
    /// posterior half.
    FilledHalves,
}

impl std::str::FromStr for PackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extreme-planes" => Ok(PackMode::ExtremePlanes),
            "filled-halves" => Ok(PackMode::FilledHalves),
            other => Err(Error::Validation(format!("unknown pack mode {other:?}"))),
        }
    }
}

/// Pack the network input: channel 0 is the intensity-normalized source
/// volume, channel 1 starts all zero and receives the two DRRs.
pub fn pack_input<T: Scalar>(
    v_s: &VolumeGrid<T>,
    i_s: &Image2D<T>,
    i_t: &Image2D<T>,
    mode: PackMode,
) -> Result<Tensor4<T>> {
    let d = v_s.dims();
    for (name, img) in [("source", i_s), ("target", i_t)] {
        if img.w() != d.nx || img.h() != d.nz {
            return Err(Error::DimsMismatch(format!(
                "{name} DRR {}x{} vs volume {d}",
                img.w(),
                img.h()
            )));
        }
    }
    let n = d.count();
    let mut values = Vec::with_capacity(2 * n);
    values.extend_from_slice(normalize_hu(v_s).values());
    values.extend(std::iter::repeat(T::zero()).take(n));
    let mut t = Tensor4::new(2, d, values)?;
    match mode {
        PackMode::ExtremePlanes => {
            for z in 0..d.nz {
                for x in 0..d.nx {
                    t.set(1, x, 0, z, i_s.get(z, x));
                    t.set(1, x, d.ny - 1, z, i_t.get(z, x));
                }
            }
        }
        PackMode::FilledHalves => {
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        let img = if y < d.ny / 2 { i_s } else { i_t };
                        t.set(1, x, y, z, img.get(z, x));
                    }
                }
            }
        }
    }
    Ok(t)
}
