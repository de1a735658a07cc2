//! Mini-batch training of the U-Net displacement generator, and inference.
//!
//! One training step: pack the 2-channel input, run the generator, warp the
//! normalized source volume by the predicted field, evaluate the total loss,
//! and push the gradient back through warp and network. Batch gradients are
//! accumulated sequentially and averaged, parameters move under one shared
//! Adam state, and the per-epoch shuffle RNG is derived from (seed, epoch),
//! so a run is bitwise reproducible and resumable from a checkpoint.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{
    adam_step_unet, pack_input, save_checkpoint, unet_backward, unet_forward, unet_infer,
    AdamHyper, AdamState, CheckpointMeta, PackMode, Tensor4, UNetConfig, UNetParams,
};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossWeights};
use crate::scalar::{to_f64, Scalar};
use crate::solvers::report::{LossRow, SolveReport};
use crate::volgrid::{normalize_hu, Image2D, VolumeGrid};
use crate::warpfield::{warp_volume, warp_volume_backward, DisplacementField};

/// One training pair: source volume and DRRs, ground-truth target volume,
/// optional ground-truth field for supervised runs.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub v_s: VolumeGrid<f32>,
    pub i_s: Image2D<f32>,
    pub i_t: Image2D<f32>,
    pub v_gt: VolumeGrid<f32>,
    pub u_gt: Option<DisplacementField<f32>>,
}

#[derive(Clone, Debug)]
pub struct TrainOpts {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub pack_mode: PackMode,
    /// Write `ckpt_epoch{N}.bin` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOpts {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 4,
            lr: 1e-4,
            seed: 0,
            pack_mode: PackMode::ExtremePlanes,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

struct Prepared {
    input: Tensor4<f32>,
    v_s_n: VolumeGrid<f32>,
    v_gt_n: VolumeGrid<f32>,
    u_gt: Option<DisplacementField<f32>>,
}

fn prepare(dataset: &[TrainSample], mode: PackMode) -> Result<Vec<Prepared>> {
    dataset
        .iter()
        .map(|s| {
            Ok(Prepared {
                input: pack_input(&s.v_s, &s.i_s, &s.i_t, mode)?,
                v_s_n: normalize_hu(&s.v_s),
                v_gt_n: normalize_hu(&s.v_gt),
                u_gt: s.u_gt.clone(),
            })
        })
        .collect()
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Forward + backward for one sample; accumulates parameter gradients and
/// returns (total, mse, smooth, dvf).
fn sample_pass(
    params: &UNetParams<f32>,
    sample: &Prepared,
    weights: &LossWeights<f32>,
    grads: &mut UNetParams<f32>,
) -> Result<(f64, f64, f64, f64)> {
    let (u, trace) = unet_forward(params, &sample.input)?;
    let v_def_n = warp_volume(&sample.v_s_n, &u)?;
    let tl = total_loss(&sample.v_gt_n, &v_def_n, sample.u_gt.as_ref(), &u, weights)?;
    let (_, mut grad_u) = warp_volume_backward(&sample.v_s_n, &u, &tl.grad_v_def)?;
    for (g, extra) in grad_u.values_mut().iter_mut().zip(tl.grad_u.values()) {
        *g += *extra;
    }
    let g = unet_backward(params, &trace, &grad_u)?;
    grads.add_scaled(&g, 1.0);
    Ok((
        to_f64(tl.total),
        to_f64(tl.mse),
        to_f64(tl.smooth),
        to_f64(tl.dvf),
    ))
}

/// The resumable inner loop: runs epochs `[start_epoch, end_epoch)`, pushing
/// one history row per optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    dataset: &[TrainSample],
    params: &mut UNetParams<f32>,
    adam: &mut AdamState<f32>,
    start_epoch: u64,
    end_epoch: u64,
    global_step: &mut u64,
    weights: &LossWeights<f32>,
    opts: &TrainOpts,
    report: &mut SolveReport,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty training dataset".to_string()));
    }
    let dims = dataset[0].v_s.dims();
    for s in dataset {
        if s.v_s.dims() != dims || s.v_gt.dims() != dims {
            return Err(Error::DimsMismatch(
                "all training instances must share dims".to_string(),
            ));
        }
        if weights.gamma_dvf > 0.0 && s.u_gt.is_none() {
            return Err(Error::Validation(
                "gamma_dvf > 0 requires ground-truth fields in every sample".to_string(),
            ));
        }
    }
    params.config.validate_dims(dims)?;
    let prepared = prepare(dataset, opts.pack_mode)?;
    let hyper = AdamHyper::with_lr(opts.lr);
    let batch = opts.batch.max(1);

    for epoch in start_epoch..end_epoch {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut epoch_rng(opts.seed, epoch));
        for chunk in order.chunks(batch) {
            let mut grads = params.zeros_like();
            let mut sums = (0.0, 0.0, 0.0, 0.0);
            for &idx in chunk {
                let (t, m, s, d) = sample_pass(params, &prepared[idx], weights, &mut grads)?;
                sums.0 += t;
                sums.1 += m;
                sums.2 += s;
                sums.3 += d;
            }
            let inv = 1.0 / chunk.len() as f32;
            grads.scale(inv);
            adam_step_unet(params, &grads, adam, &hyper)?;
            let n = chunk.len() as f64;
            report.push(LossRow {
                step: *global_step,
                total: sums.0 / n,
                mse: sums.1 / n,
                smooth: sums.2 / n,
                dvf: sums.3 / n,
            });
            *global_step += 1;
        }
        if opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every as u64 == 0 {
            if let Some(dir) = &opts.out_dir {
                let meta = CheckpointMeta {
                    seed: opts.seed,
                    step: *global_step,
                    epoch: epoch + 1,
                    lr: opts.lr,
                };
                save_checkpoint(
                    &dir.join(format!("ckpt_epoch{}.bin", epoch + 1)),
                    params,
                    Some(adam),
                    &meta,
                )?;
            }
        }
    }
    Ok(())
}

/// Train from a fresh seeded initialization.
pub fn train_unet(
    dataset: &[TrainSample],
    config: &UNetConfig,
    weights: &LossWeights<f32>,
    opts: &TrainOpts,
) -> Result<(UNetParams<f32>, AdamState<f32>, SolveReport)> {
    let start = Instant::now();
    let mut params = UNetParams::<f32>::init(config.clone(), opts.seed)?;
    let mut adam = AdamState::new(params.param_count());
    let mut report = SolveReport::new(
        opts.seed,
        format!(
            "train_unet epochs={} batch={} lr={} levels={} widths={:?}",
            opts.epochs, opts.batch, opts.lr, config.levels, config.enc_widths
        ),
    );
    let mut step = 0u64;
    train_loop(
        dataset,
        &mut params,
        &mut adam,
        0,
        opts.epochs as u64,
        &mut step,
        weights,
        opts,
        &mut report,
    )?;
    report
        .final_metrics
        .push(("steps".to_string(), step as f64));
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, adam, report))
}

/// Single forward pass plus warp; no parameter mutation. Returns the
/// predicted field and the deformed volume in the source's intensity units.
pub fn infer_unet<T: Scalar>(
    params: &UNetParams<T>,
    v_s: &VolumeGrid<T>,
    i_s: &Image2D<T>,
    i_t: &Image2D<T>,
    mode: PackMode,
) -> Result<(DisplacementField<T>, VolumeGrid<T>)> {
    let input = pack_input(v_s, i_s, i_t, mode)?;
    let u = unet_infer(params, &input)?;
    let v_def = warp_volume(v_s, &u)?;
    Ok((u, v_def))
}
