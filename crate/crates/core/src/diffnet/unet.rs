//! The 3D U-Net displacement generator.
//!
//! Encoder: one stride-2 conv + LeakyReLU per level. Decoder: per level a
//! stride-1 conv + LeakyReLU, a nearest-neighbor upsample, and a skip
//! concatenation with the matching encoder feature map (the full-resolution
//! stage concatenates the network input). A refinement conv and a final
//! linear 3-channel conv produce the displacement field at input resolution.
//! The final conv is zero-initialized so an untrained network is exactly the
//! identity transform.
//!
//! The decoder uses stride-1 convolutions: stride-2 decoding could not
//! restore the input resolution that the upsampling layers are there to
//! recover.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    concat_channels, leaky_relu, leaky_relu_backward, split_channels, upsample2x,
    upsample2x_backward, Conv3d,
};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};
use crate::volgrid::Dims3;
use crate::warpfield::DisplacementField;

/// Architecture of the generator. Decoder widths mirror the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub levels: usize,
    pub enc_widths: Vec<usize>,
    pub leaky_slope: f64,
    pub in_channels: usize,
}

impl UNetConfig {
    /// Desk-scale default: 3 levels, widths [16, 32, 32].
    pub fn desk_default() -> Self {
        Self {
            levels: 3,
            enc_widths: vec![16, 32, 32],
            leaky_slope: 0.2,
            in_channels: 2,
        }
    }

    pub fn with_widths(widths: Vec<usize>) -> Self {
        Self {
            levels: widths.len(),
            enc_widths: widths,
            leaky_slope: 0.2,
            in_channels: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.enc_widths.len() != self.levels {
            return Err(Error::Validation(format!(
                "need one encoder width per level; got {} for {} levels",
                self.enc_widths.len(),
                self.levels
            )));
        }
        if self.enc_widths.iter().any(|&w| w == 0) || self.in_channels == 0 {
            return Err(Error::Validation("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Input dims must be divisible by 2^levels.
    pub fn validate_dims(&self, dims: Dims3) -> Result<()> {
        let div = 1usize << self.levels;
        if dims.nx % div != 0 || dims.ny % div != 0 || dims.nz % div != 0 {
            return Err(Error::InvalidDims(format!(
                "{dims} not divisible by 2^{}",
                self.levels
            )));
        }
        Ok(())
    }

    fn dec_widths(&self) -> Vec<usize> {
        self.enc_widths.iter().rev().copied().collect()
    }
}

/// All parameters of the generator. Also serves as the container for
/// parameter gradients (same shapes, same declaration order).
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams<T> {
    pub config: UNetConfig,
    pub enc: Vec<Conv3d<T>>,
    pub dec: Vec<Conv3d<T>>,
    pub refine: Conv3d<T>,
    pub flow: Conv3d<T>,
}

impl<T: Scalar> UNetParams<T> {
    /// Seeded He-uniform init; the flow conv starts at zero so the initial
    /// displacement field is identically zero.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Vec::with_capacity(config.levels);
        let mut c_prev = config.in_channels;
        for &w in &config.enc_widths {
            enc.push(Conv3d::init_he(c_prev, w, 2, &mut rng));
            c_prev = w;
        }
        let dec_w = config.dec_widths();
        let mut dec = Vec::with_capacity(config.levels);
        let mut c_in = *config.enc_widths.last().unwrap();
        for (i, &w) in dec_w.iter().enumerate() {
            dec.push(Conv3d::init_he(c_in, w, 1, &mut rng));
            // After upsampling, concat with the next skip (encoder feature
            // or, at full resolution, the input).
            let skip_c = if i + 1 < config.levels {
                config.enc_widths[config.levels - 2 - i]
            } else {
                config.in_channels
            };
            c_in = w + skip_c;
        }
        let refine = Conv3d::init_he(c_in, config.enc_widths[0], 1, &mut rng);
        let flow = Conv3d::zeros(config.enc_widths[0], 3, 1);
        Ok(Self {
            config,
            enc,
            dec,
            refine,
            flow,
        })
    }

    /// Same shapes, all values zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |c: &Conv3d<T>| Conv3d::zeros(c.c_in, c.c_out, c.stride);
        Self {
            config: self.config.clone(),
            enc: self.enc.iter().map(z).collect(),
            dec: self.dec.iter().map(z).collect(),
            refine: z(&self.refine),
            flow: z(&self.flow),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|c| c.param_count()).sum()
    }

    fn layers(&self) -> Vec<&Conv3d<T>> {
        let mut v: Vec<&Conv3d<T>> = self.enc.iter().collect();
        v.extend(self.dec.iter());
        v.push(&self.refine);
        v.push(&self.flow);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Conv3d<T>> {
        let mut v: Vec<&mut Conv3d<T>> = self.enc.iter_mut().collect();
        v.extend(self.dec.iter_mut());
        v.push(&mut self.refine);
        v.push(&mut self.flow);
        v
    }

    /// Flatten all parameters in declaration order (weights then bias per
    /// layer; encoder, decoder, refine, flow).
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for c in self.layers() {
            out.extend_from_slice(&c.weight);
            out.extend_from_slice(&c.bias);
        }
        out
    }

    /// Overwrite from a flat slice in declaration order.
    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::SizeMismatch {
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut off = 0;
        for c in self.layers_mut() {
            let wn = c.weight.len();
            c.weight.copy_from_slice(&flat[off..off + wn]);
            off += wn;
            let bn = c.bias.len();
            c.bias.copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        Ok(())
    }

    /// In-place `self += scale * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        let others = other.layers();
        for (mine, theirs) in self.layers_mut().into_iter().zip(others) {
            for (a, b) in mine.weight.iter_mut().zip(&theirs.weight) {
                *a = *a + scale * *b;
            }
            for (a, b) in mine.bias.iter_mut().zip(&theirs.bias) {
                *a = *a + scale * *b;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for c in self.layers_mut() {
            for w in c.weight.iter_mut() {
                *w = *w * s;
            }
            for b in c.bias.iter_mut() {
                *b = *b * s;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        let conv = |c: &Conv3d<T>| Conv3d::<U> {
            c_in: c.c_in,
            c_out: c.c_out,
            stride: c.stride,
            weight: c
                .weight
                .iter()
                .map(|&v| from_f64(crate::scalar::to_f64(v)))
                .collect(),
            bias: c
                .bias
                .iter()
                .map(|&v| from_f64(crate::scalar::to_f64(v)))
                .collect(),
        };
        UNetParams {
            config: self.config.clone(),
            enc: self.enc.iter().map(conv).collect(),
            dec: self.dec.iter().map(conv).collect(),
            refine: conv(&self.refine),
            flow: conv(&self.flow),
        }
    }
}

/// Intermediate tensors recorded by the forward pass, consumed by backward.
pub struct UNetTrace<T> {
    input: Tensor4<T>,
    enc_pre: Vec<Tensor4<T>>,
    enc_act: Vec<Tensor4<T>>,
    dec_in: Vec<Tensor4<T>>,
    dec_pre: Vec<Tensor4<T>>,
    refine_in: Tensor4<T>,
    refine_pre: Tensor4<T>,
    refine_act: Tensor4<T>,
}

/// Run the generator; returns the displacement field (voxel units, input
/// resolution) and the trace needed for the backward pass.
pub fn unet_forward<T: Scalar>(
    params: &UNetParams<T>,
    input: &Tensor4<T>,
) -> Result<(DisplacementField<T>, UNetTrace<T>)> {
    let cfg = &params.config;
    cfg.validate()?;
    cfg.validate_dims(input.dims())?;
    if input.channels() != cfg.in_channels {
        return Err(Error::DimsMismatch(format!(
            "input has {} channels, config expects {}",
            input.channels(),
            cfg.in_channels
        )));
    }
    let slope = from_f64::<T>(cfg.leaky_slope);

    let mut enc_pre = Vec::with_capacity(cfg.levels);
    let mut enc_act = Vec::with_capacity(cfg.levels);
    let mut cur = input.clone();
    for conv in &params.enc {
        let pre = conv.forward(&cur)?;
        let act = leaky_relu(&pre, slope);
        enc_pre.push(pre);
        enc_act.push(act.clone());
        cur = act;
    }

    let mut dec_in = Vec::with_capacity(cfg.levels);
    let mut dec_pre = Vec::with_capacity(cfg.levels);
    for (i, conv) in params.dec.iter().enumerate() {
        dec_in.push(cur.clone());
        let pre = conv.forward(&cur)?;
        let act = leaky_relu(&pre, slope);
        dec_pre.push(pre);
        let up = upsample2x(&act);
        let skip = if i + 1 < cfg.levels {
            &enc_act[cfg.levels - 2 - i]
        } else {
            input
        };
        cur = concat_channels(&up, skip)?;
    }

    let refine_in = cur;
    let refine_pre = params.refine.forward(&refine_in)?;
    let refine_act = leaky_relu(&refine_pre, slope);
    let flow_out = params.flow.forward(&refine_act)?;

    // A 3-channel tensor and a displacement field share the same layout.
    let u = DisplacementField::new(flow_out.dims(), flow_out.into_values())?;
    Ok((
        u,
        UNetTrace {
            input: input.clone(),
            enc_pre,
            enc_act,
            dec_in,
            dec_pre,
            refine_in,
            refine_pre,
            refine_act,
        },
    ))
}

/// Forward pass without keeping the trace.
pub fn unet_infer<T: Scalar>(
    params: &UNetParams<T>,
    input: &Tensor4<T>,
) -> Result<DisplacementField<T>> {
    unet_forward(params, input).map(|(u, _)| u)
}

/// Backward pass: gradient of a scalar objective with respect to every
/// parameter, given its gradient with respect to the output field.
pub fn unet_backward<T: Scalar>(
    params: &UNetParams<T>,
    trace: &UNetTrace<T>,
    grad_u: &DisplacementField<T>,
) -> Result<UNetParams<T>> {
    let cfg = &params.config;
    let slope = from_f64::<T>(cfg.leaky_slope);
    let mut grads = params.zeros_like();

    let g_flow_out = Tensor4::new(3, grad_u.dims(), grad_u.values().to_vec())?;
    let (g_refine_act, flow_g) = params.flow.backward(&trace.refine_act, &g_flow_out)?;
    grads.flow = flow_g;

    let g_refine_pre = leaky_relu_backward(&trace.refine_pre, &g_refine_act, slope);
    let (mut g_cat, refine_g) = params.refine.backward(&trace.refine_in, &g_refine_pre)?;
    grads.refine = refine_g;

    // Decoder stages in reverse; skip gradients accumulate onto the encoder
    // activations they came from.
    let mut enc_act_grad: Vec<Option<Tensor4<T>>> = vec![None; cfg.levels];
    let mut g_dec_input = None;
    for i in (0..cfg.levels).rev() {
        let dec_c = params.dec[i].c_out;
        let (g_up, g_skip) = split_channels(&g_cat, dec_c);
        if i + 1 < cfg.levels {
            enc_act_grad[cfg.levels - 2 - i] = Some(g_skip);
        } // full-resolution skip is the input; its gradient is not needed
        let g_act = upsample2x_backward(&g_up)?;
        let g_pre = leaky_relu_backward(&trace.dec_pre[i], &g_act, slope);
        let (g_in, dec_g) = params.dec[i].backward(&trace.dec_in[i], &g_pre)?;
        grads.dec[i] = dec_g;
        if i == 0 {
            g_dec_input = Some(g_in);
        } else {
            g_cat = g_in;
        }
    }

    // dec_in[0] is the deepest encoder activation.
    let bottom = cfg.levels - 1;
    enc_act_grad[bottom] = Some(match (enc_act_grad[bottom].take(), g_dec_input) {
        (Some(mut a), Some(b)) => {
            for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                *x = *x + *y;
            }
            a
        }
        (None, Some(b)) => b,
        _ => unreachable!("decoder always feeds the bottleneck gradient"),
    });

    for l in (0..cfg.levels).rev() {
        let g_act = enc_act_grad[l].take().expect("every level receives gradient");
        let g_pre = leaky_relu_backward(&trace.enc_pre[l], &g_act, slope);
        let enc_input = if l == 0 {
            &trace.input
        } else {
            &trace.enc_act[l - 1]
        };
        let (g_prev, enc_g) = params.enc[l].backward(enc_input, &g_pre)?;
        grads.enc[l] = enc_g;
        if l > 0 {
            match enc_act_grad[l - 1].as_mut() {
                Some(existing) => {
                    for (x, y) in existing.values_mut().iter_mut().zip(g_prev.values()) {
                        *x = *x + *y;
                    }
                }
                None => enc_act_grad[l - 1] = Some(g_prev),
            }
        }
    }

    Ok(grads)
}
