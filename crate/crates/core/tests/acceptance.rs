//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them all).
//!
//! Criteria 4, 5, 8 and 9 share one benchmark task: the n = 32 phantom,
//! registering phase 0 to phase 50 (end-inhalation to end-exhalation, the
//! largest displacement in the cycle). The fixture runs every solver once.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use deformreg::diffnet::{save_checkpoint, CheckpointMeta, PackMode, UNetConfig};
use deformreg::gradcheck;
use deformreg::losses::{mse_loss, LossWeights};
use deformreg::metrics::{dsc, mae};
use deformreg::phantom::{
    build_reference, generate_4dct, PhantomFrame, PhantomSpec, RespiratoryModel,
};
use deformreg::projector::render_drr;
use deformreg::solvers::{
    apply_2ddf_to_volume, apply_rigid, infer_unet, register_2d, register_direct, register_rigid,
    rigid_induced_field, train_unet, DirectOpts, RigidOpts, RigidParams, SolveReport, TrainOpts,
    TrainSample, TwoDOpts,
};
use deformreg::volgrid::{Dims3, LabelVolume, VolumeGrid, LABEL_LIVER, LABEL_STOMACH};
use deformreg::warpfield::{warp_labels, warp_volume, DisplacementField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCH_N: usize = 32;
const BENCH_SEED: u64 = 42;

struct SolveOutcome {
    mae_hu: f64,
    dsc_liver: f64,
    dsc_stomach: f64,
    report: SolveReport,
    u: Option<DisplacementField<f32>>,
    elapsed: Duration,
}

struct Bench {
    frames: Vec<PhantomFrame>,
    initial_mae: f64,
    initial_dsc_liver: f64,
    initial_dsc_stomach: f64,
    mean_u_gt_norm: f64,
    direct: SolveOutcome,
    supervised: SolveOutcome,
    rigid: SolveOutcome,
    rigid_params: RigidParams,
    twodf: SolveOutcome,
}

fn eval_against_gt(
    frames: &[PhantomFrame],
    v_def: &VolumeGrid<f32>,
    labels_def: &LabelVolume,
) -> (f64, f64, f64) {
    let gt = &frames[5];
    (
        mae(&gt.volume, v_def).unwrap() as f64,
        dsc(&gt.labels, labels_def, LABEL_LIVER).unwrap(),
        dsc(&gt.labels, labels_def, LABEL_STOMACH).unwrap(),
    )
}

fn bench() -> &'static Bench {
    static BENCH: OnceLock<Bench> = OnceLock::new();
    BENCH.get_or_init(|| {
        let spec = PhantomSpec::default_for_size(BENCH_N);
        let model = RespiratoryModel::default_for(&spec);
        let frames = generate_4dct(&spec, &model).unwrap();
        let v_s = frames[0].volume.clone();
        let labels_s = frames[0].labels.clone();
        let v_gt = frames[5].volume.clone();
        let u_gt = frames[5].u_gt.clone();
        let (i_s, _) = render_drr(&v_s);
        let (i_t, _) = render_drr(&v_gt);

        let initial_mae = mae(&v_gt, &v_s).unwrap() as f64;
        let initial_dsc_liver = dsc(&frames[5].labels, &labels_s, LABEL_LIVER).unwrap();
        let initial_dsc_stomach = dsc(&frames[5].labels, &labels_s, LABEL_STOMACH).unwrap();
        let mean_u_gt_norm = u_gt.mean_norm();

        // Volume-supervised direct optimization (criterion 4).
        let t0 = Instant::now();
        let (u, v_def, report) = register_direct(
            &v_s,
            &i_s,
            &i_t,
            Some(&v_gt),
            None,
            &LossWeights::unsupervised(),
            &DirectOpts {
                steps: 300,
                lr: 0.1,
                seed: BENCH_SEED,
            },
        )
        .unwrap();
        let labels_def = warp_labels(&labels_s, &u).unwrap();
        let (m, dl, ds) = eval_against_gt(&frames, &v_def, &labels_def);
        let direct = SolveOutcome {
            mae_hu: m,
            dsc_liver: dl,
            dsc_stomach: ds,
            report,
            u: Some(u),
            elapsed: t0.elapsed(),
        };

        // Field-supervised run (criterion 5).
        let t0 = Instant::now();
        let (u, v_def, report) = register_direct(
            &v_s,
            &i_s,
            &i_t,
            Some(&v_gt),
            Some(&u_gt),
            &LossWeights::supervised(),
            &DirectOpts {
                steps: 300,
                lr: 0.1,
                seed: BENCH_SEED + 1,
            },
        )
        .unwrap();
        let labels_def = warp_labels(&labels_s, &u).unwrap();
        let (m, dl, ds) = eval_against_gt(&frames, &v_def, &labels_def);
        let supervised = SolveOutcome {
            mae_hu: m,
            dsc_liver: dl,
            dsc_stomach: ds,
            report,
            u: Some(u),
            elapsed: t0.elapsed(),
        };

        // Rigid baseline on the same deformable task (criterion 8).
        let t0 = Instant::now();
        let (theta, v_def, report) = register_rigid(
            &v_s,
            &i_t,
            &RigidOpts {
                seed: BENCH_SEED,
                ..RigidOpts::default()
            },
        )
        .unwrap();
        // Labels follow the same rigid map via its induced displacement.
        let rigid_labels =
            warp_labels(&labels_s, &rigid_induced_field::<f32>(v_s.dims(), &theta)).unwrap();
        let (m, dl, ds) = eval_against_gt(&frames, &v_def, &rigid_labels);
        let rigid = SolveOutcome {
            mae_hu: m,
            dsc_liver: dl,
            dsc_stomach: ds,
            report,
            u: None,
            elapsed: t0.elapsed(),
        };

        // 2D-DF baseline (criterion 9).
        let t0 = Instant::now();
        let (u2d, report) = register_2d(
            &i_s,
            &i_t,
            &LossWeights::unsupervised(),
            &TwoDOpts {
                steps: 300,
                lr: 0.1,
                seed: BENCH_SEED,
            },
        )
        .unwrap();
        let v_def = apply_2ddf_to_volume(&v_s, &u2d).unwrap();
        // The in-plane field moves labels too: lift it to a 3D field with
        // zero dorsoventral component.
        let dims = v_s.dims();
        let u3d = DisplacementField::from_fn(dims, |x, _y, z| {
            let (dc, dr) = u2d.get(z, x);
            [dc, 0.0, dr]
        });
        let labels_def = warp_labels(&labels_s, &u3d).unwrap();
        let (m, dl, ds) = eval_against_gt(&frames, &v_def, &labels_def);
        let twodf = SolveOutcome {
            mae_hu: m,
            dsc_liver: dl,
            dsc_stomach: ds,
            report,
            u: None,
            elapsed: t0.elapsed(),
        };

        Bench {
            frames,
            initial_mae,
            initial_dsc_liver,
            initial_dsc_stomach,
            mean_u_gt_norm,
            direct,
            supervised,
            rigid,
            rigid_params: theta,
            twodf,
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness.
// ---------------------------------------------------------------------------
#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let (reports, ok) = gradcheck::run_full(BENCH_SEED);
    let elapsed = start.elapsed();
    for r in &reports {
        assert!(r.passed(), "{}", r.line());
        assert!(r.instances >= 20 || r.name.starts_with("projector_adjoint"));
    }
    assert!(ok);
    assert!(
        elapsed < Duration::from_secs(120),
        "gradcheck took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE C1 gradient-correctness: PASS ({} checks, {:.1}s)",
        reports.len(),
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: warp identities.
// ---------------------------------------------------------------------------
#[test]
fn c02_warp_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Zero field is a bitwise identity.
    for _ in 0..20 {
        let d = Dims3::new(
            rng.random_range(2..8),
            rng.random_range(2..8),
            rng.random_range(2..8),
        );
        let values = (0..d.count())
            .map(|_| rng.random_range(-1000.0f32..1000.0))
            .collect();
        let v = VolumeGrid::new(d, [1.0; 3], values).unwrap();
        let w = warp_volume(&v, &DisplacementField::zeros(d)).unwrap();
        for (a, b) in v.values().iter().zip(w.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // Integer shifts match the index-shift oracle (clamped at the far edge).
    let d = Dims3::cube(6);
    let values = (0..d.count())
        .map(|_| rng.random_range(-1000.0f32..1000.0))
        .collect();
    let v = VolumeGrid::new(d, [1.0; 3], values).unwrap();
    for shift in [[1i64, 0, 0], [0, 2, 0], [0, 0, 1], [1, 1, 1], [-1, 0, 2]] {
        let u = DisplacementField::constant(
            d,
            [shift[0] as f32, shift[1] as f32, shift[2] as f32],
        );
        let w = warp_volume(&v, &u).unwrap();
        let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let expect = v.get(
                        clamp(x as i64 + shift[0], d.nx),
                        clamp(y as i64 + shift[1], d.ny),
                        clamp(z as i64 + shift[2], d.nz),
                    );
                    assert_eq!(w.get(x, y, z), expect);
                }
            }
        }
    }

    // Affine volumes are reproduced exactly (1e-5) for in-bounds sampling.
    let mut worst_affine = 0.0f64;
    for _ in 0..20 {
        let d = Dims3::cube(rng.random_range(4..7));
        let (a, b, c, k) = (
            rng.random_range(-3.0f64..3.0),
            rng.random_range(-3.0f64..3.0),
            rng.random_range(-3.0f64..3.0),
            rng.random_range(-3.0f64..3.0),
        );
        let v = VolumeGrid::from_fn(d, [1.0; 3], |x, y, z| {
            (k + a * x as f64 + b * y as f64 + c * z as f64) as f32
        })
        .unwrap();
        let mut targets = vec![[0.0f32; 3]; d.count()];
        for t in targets.iter_mut() {
            *t = [
                rng.random_range(0.0..(d.nx - 1) as f32),
                rng.random_range(0.0..(d.ny - 1) as f32),
                rng.random_range(0.0..(d.nz - 1) as f32),
            ];
        }
        let u = DisplacementField::from_fn(d, |x, y, z| {
            let t = targets[d.idx(x, y, z)];
            [t[0] - x as f32, t[1] - y as f32, t[2] - z as f32]
        });
        let w = warp_volume(&v, &u).unwrap();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let t = targets[d.idx(x, y, z)];
                    let expect = k + a * t[0] as f64 + b * t[1] as f64 + c * t[2] as f64;
                    let got = w.get(x, y, z) as f64;
                    let rel = (got - expect).abs() / expect.abs().max(1.0);
                    worst_affine = worst_affine.max(rel);
                }
            }
        }
    }
    assert!(worst_affine < 1e-5, "affine exactness broke: {worst_affine}");

    // Trilinear weights partition unity to 1e-6.
    let mut worst_pu = 0.0f64;
    for _ in 0..1000 {
        let (fx, fy, fz) = (
            rng.random_range(0.0f64..1.0),
            rng.random_range(0.0f64..1.0),
            rng.random_range(0.0f64..1.0),
        );
        let mut total = 0.0;
        for cx in 0..2 {
            for cy in 0..2 {
                for cz in 0..2 {
                    let w = |f: f64, c: usize| if c == 0 { 1.0 - f } else { f };
                    total += w(fx, cx) * w(fy, cy) * w(fz, cz);
                }
            }
        }
        worst_pu = worst_pu.max((total - 1.0).abs());
    }
    assert!(worst_pu < 1e-6);
    println!(
        "ACCEPTANCE C2 warp-identities: PASS (affine err {worst_affine:.2e}, partition {worst_pu:.2e})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: phantom self-consistency.
// ---------------------------------------------------------------------------
#[test]
fn c03_phantom_self_consistency() {
    let b = bench();
    assert_eq!(b.frames.len(), 10);
    for f in &b.frames {
        let rewarped = warp_volume(&b.frames[0].volume, &f.u_gt).unwrap();
        for (x, y) in rewarped.values().iter().zip(f.volume.values()) {
            assert_eq!(x.to_bits(), y.to_bits(), "phase {}", f.t);
        }
        let relabeled = warp_labels(&b.frames[0].labels, &f.u_gt).unwrap();
        for organ in [LABEL_LIVER, LABEL_STOMACH] {
            assert_eq!(dsc(&relabeled, &f.labels, organ).unwrap(), 1.0);
        }
        let (loss, _) = mse_loss(&f.volume, &rewarped).unwrap();
        assert_eq!(loss, 0.0);
    }
    for (a, z) in [(1usize, 9usize), (2, 8), (3, 7), (4, 6)] {
        for (x, y) in b.frames[a]
            .volume
            .values()
            .iter()
            .zip(b.frames[z].volume.values())
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(b.frames[a].labels, b.frames[z].labels);
    }
    println!("ACCEPTANCE C3 phantom-self-consistency: PASS (10 phases, 4 mirror pairs)");
}

// ---------------------------------------------------------------------------
// Criterion 4: direct-DVF registration halves the MAE and improves DSC.
// ---------------------------------------------------------------------------
#[test]
fn c04_direct_registration() {
    let b = bench();
    let d = &b.direct;
    assert!(
        d.mae_hu <= 0.5 * b.initial_mae,
        "MAE {:.2} not under half of initial {:.2}",
        d.mae_hu,
        b.initial_mae
    );
    assert!(
        d.dsc_liver > b.initial_dsc_liver,
        "liver DSC {} vs initial {}",
        d.dsc_liver,
        b.initial_dsc_liver
    );
    assert!(
        d.dsc_stomach > b.initial_dsc_stomach,
        "stomach DSC {} vs initial {}",
        d.dsc_stomach,
        b.initial_dsc_stomach
    );
    assert!(d.report.best_total() <= d.report.initial_total());
    let initial_mse = d.report.history.first().unwrap().mse;
    let best_mse = d
        .report
        .history
        .iter()
        .map(|r| r.mse)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best_mse < 0.5 * initial_mse,
        "L_MSE {best_mse:.3e} not under half of initial {initial_mse:.3e}"
    );
    assert!(
        d.elapsed < Duration::from_secs(300),
        "took {:?}",
        d.elapsed
    );
    println!(
        "ACCEPTANCE C4 direct-dvf-registration: PASS (MAE {:.1} -> {:.1} HU, liver DSC {:.3} -> {:.3}, stomach {:.3} -> {:.3}, {:.1}s)",
        b.initial_mae,
        d.mae_hu,
        b.initial_dsc_liver,
        d.dsc_liver,
        b.initial_dsc_stomach,
        d.dsc_stomach,
        d.elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: supervised field recovery.
// ---------------------------------------------------------------------------
#[test]
fn c05_supervised_field_recovery() {
    let b = bench();
    let u = b.supervised.u.as_ref().unwrap();
    let epe = u.mean_endpoint_error(&b.frames[5].u_gt).unwrap();
    assert!(
        epe <= 0.5 * b.mean_u_gt_norm,
        "EPE {:.3} vs half mean |u_gt| {:.3}",
        epe,
        0.5 * b.mean_u_gt_norm
    );
    println!(
        "ACCEPTANCE C5 supervised-field-recovery: PASS (EPE {:.3} vox <= 0.5 x {:.3} vox)",
        epe, b.mean_u_gt_norm
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: U-Net overfit smoke test.
// ---------------------------------------------------------------------------
#[test]
fn c06_unet_overfit() {
    let spec = PhantomSpec::default_for_size(16);
    let model = RespiratoryModel::default_for(&spec);
    let frames = generate_4dct(&spec, &model).unwrap();
    let (i_s, _) = render_drr(&frames[0].volume);
    let (i_t, _) = render_drr(&frames[5].volume);
    let sample = TrainSample {
        v_s: frames[0].volume.clone(),
        i_s,
        i_t,
        v_gt: frames[5].volume.clone(),
        u_gt: Some(frames[5].u_gt.clone()),
    };
    let config = UNetConfig::with_widths(vec![8, 16, 16]);
    let weights = LossWeights::supervised();
    // Batch 1: one optimizer step per epoch, 500 epochs = 500 steps, lr 1e-4.
    let opts = TrainOpts {
        epochs: 500,
        batch: 1,
        lr: 1e-4,
        seed: BENCH_SEED,
        ..TrainOpts::default()
    };
    let start = Instant::now();
    let (params_a, adam_a, report) =
        train_unet(std::slice::from_ref(&sample), &config, &weights, &opts).unwrap();
    let elapsed = start.elapsed();
    let initial_mse = report.history.first().unwrap().mse;
    let best_mse = report
        .history
        .iter()
        .map(|r| r.mse)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best_mse <= 0.1 * initial_mse,
        "L_MSE {best_mse:.3e} not within 10% of initial {initial_mse:.3e} after 500 steps"
    );

    // Same seed, same data: bitwise-identical checkpoints.
    let (params_b, adam_b, _) =
        train_unet(std::slice::from_ref(&sample), &config, &weights, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        seed: BENCH_SEED,
        step: 500,
        epoch: 500,
        lr: 1e-4,
    };
    let pa = dir.path().join("a.bin");
    let pb = dir.path().join("b.bin");
    save_checkpoint(&pa, &params_a, Some(&adam_a), &meta).unwrap();
    save_checkpoint(&pb, &params_b, Some(&adam_b), &meta).unwrap();
    let bytes_a = std::fs::read(&pa).unwrap();
    let bytes_b = std::fs::read(&pb).unwrap();
    assert_eq!(bytes_a, bytes_b, "same-seed checkpoints differ");

    println!(
        "ACCEPTANCE C6 unet-overfit: PASS (L_MSE {initial_mse:.2e} -> {best_mse:.2e} in 500 steps, identical checkpoints, {:.0}s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: U-Net generalization across randomized phantoms.
// ---------------------------------------------------------------------------
#[test]
fn c07_unet_generalization() {
    let start = Instant::now();
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SEED);
    let mut make_pair = |seed_jitter: f64| -> (TrainSample, LabelVolume, LabelVolume) {
        let spec = PhantomSpec::default_for_size(n);
        let mut model = RespiratoryModel::default_for(&spec);
        model.a_si = (0.8 + seed_jitter * 1.0) * (n - 1) as f64 / 15.0;
        model.a_ap = (0.2 + seed_jitter * 0.4) * (n - 1) as f64 / 15.0;
        let frames = generate_4dct(&spec, &model).unwrap();
        let (i_s, _) = render_drr(&frames[0].volume);
        let (i_t, _) = render_drr(&frames[5].volume);
        (
            TrainSample {
                v_s: frames[0].volume.clone(),
                i_s,
                i_t,
                v_gt: frames[5].volume.clone(),
                u_gt: Some(frames[5].u_gt.clone()),
            },
            frames[0].labels.clone(),
            frames[5].labels.clone(),
        )
    };
    let mut train_set = Vec::new();
    for _ in 0..20 {
        let j = rng.random_range(0.0..1.0);
        train_set.push(make_pair(j).0);
    }
    let mut held_out = Vec::new();
    for _ in 0..4 {
        let j = rng.random_range(0.0..1.0);
        held_out.push(make_pair(j));
    }

    let config = UNetConfig::with_widths(vec![8, 16]);
    let weights = LossWeights::supervised();
    let opts = TrainOpts {
        epochs: 80,
        batch: 4,
        lr: 1e-3,
        seed: BENCH_SEED,
        ..TrainOpts::default()
    };
    let (params, _, report) = train_unet(&train_set, &config, &weights, &opts).unwrap();
    assert!(report.best_total() < report.initial_total());
    // Epoch-mean progress: epoch 20 must beat epoch 1 (5 steps per epoch at
    // 20 samples / batch 4).
    let epoch_mean = |e: usize| {
        report.history[e * 5..(e + 1) * 5]
            .iter()
            .map(|r| r.total)
            .sum::<f64>()
            / 5.0
    };
    assert!(
        epoch_mean(19) < epoch_mean(0),
        "epoch means did not improve: {} -> {}",
        epoch_mean(0),
        epoch_mean(19)
    );

    let (mut mae_init, mut mae_reg) = (0.0, 0.0);
    let (mut dsc_init_l, mut dsc_reg_l) = (0.0, 0.0);
    let (mut dsc_init_s, mut dsc_reg_s) = (0.0, 0.0);
    for (sample, labels_s, labels_gt) in &held_out {
        let (u, v_def) = infer_unet(
            &params,
            &sample.v_s,
            &sample.i_s,
            &sample.i_t,
            PackMode::ExtremePlanes,
        )
        .unwrap();
        let labels_def = warp_labels(labels_s, &u).unwrap();
        mae_init += mae(&sample.v_gt, &sample.v_s).unwrap() as f64;
        mae_reg += mae(&sample.v_gt, &v_def).unwrap() as f64;
        dsc_init_l += dsc(labels_gt, labels_s, LABEL_LIVER).unwrap();
        dsc_reg_l += dsc(labels_gt, &labels_def, LABEL_LIVER).unwrap();
        dsc_init_s += dsc(labels_gt, labels_s, LABEL_STOMACH).unwrap();
        dsc_reg_s += dsc(labels_gt, &labels_def, LABEL_STOMACH).unwrap();
    }
    let k = held_out.len() as f64;
    let elapsed = start.elapsed();
    assert!(
        mae_reg / k < mae_init / k,
        "held-out MAE {:.2} did not improve on {:.2}",
        mae_reg / k,
        mae_init / k
    );
    assert!(
        dsc_reg_l / k > dsc_init_l / k,
        "held-out liver DSC {:.3} vs initial {:.3}",
        dsc_reg_l / k,
        dsc_init_l / k
    );
    assert!(
        dsc_reg_s / k > dsc_init_s / k,
        "held-out stomach DSC {:.3} vs initial {:.3}",
        dsc_reg_s / k,
        dsc_init_s / k
    );
    assert!(elapsed < Duration::from_secs(3600), "took {elapsed:?}");
    println!(
        "ACCEPTANCE C7 unet-generalization: PASS (held-out MAE {:.1} -> {:.1} HU, liver DSC {:.3} -> {:.3}, stomach {:.3} -> {:.3}, {:.0}s)",
        mae_init / k,
        mae_reg / k,
        dsc_init_l / k,
        dsc_reg_l / k,
        dsc_init_s / k,
        dsc_reg_s / k,
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: rigid baseline recovery and ordering.
// ---------------------------------------------------------------------------
#[test]
fn c08_rigid_baseline() {
    // Recovery of a synthetic in-plane perturbation.
    let (reference, _) = build_reference(&PhantomSpec::default_for_size(BENCH_N)).unwrap();
    let true_theta = RigidParams {
        translation: [3.0, 0.0, 0.0],
        rotation_deg: [0.0, 5.0, 0.0],
    };
    let moved = apply_rigid(&reference, &true_theta);
    let (i_t, _) = render_drr(&moved);
    let (theta, _, _) = register_rigid(
        &reference,
        &i_t,
        &RigidOpts {
            seed: BENCH_SEED,
            ..RigidOpts::default()
        },
    )
    .unwrap();
    assert!(
        (theta.translation[0] - 3.0).abs() <= 1.0,
        "tx {} vs 3",
        theta.translation[0]
    );
    assert!(
        theta.translation[2].abs() <= 1.0,
        "tz {} vs 0",
        theta.translation[2]
    );
    assert!(
        (theta.rotation_deg[1] - 5.0).abs() <= 1.0,
        "ry {} vs 5",
        theta.rotation_deg[1]
    );

    // Ordering on the deformable task: rigid is worse than both deformable
    // solvers.
    let b = bench();
    assert!(
        b.rigid.mae_hu > b.direct.mae_hu,
        "rigid MAE {:.1} vs direct {:.1}",
        b.rigid.mae_hu,
        b.direct.mae_hu
    );
    assert!(
        b.rigid.mae_hu > b.twodf.mae_hu,
        "rigid MAE {:.1} vs 2D-DF {:.1}",
        b.rigid.mae_hu,
        b.twodf.mae_hu
    );
    println!(
        "ACCEPTANCE C8 rigid-baseline: PASS (recovered tx {:.2} ry {:.2}; MAE rigid {:.1} > direct {:.1}, > 2D-DF {:.1}; solved {:?})",
        theta.translation[0],
        theta.rotation_deg[1],
        b.rigid.mae_hu,
        b.direct.mae_hu,
        b.twodf.mae_hu,
        b.rigid_params
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: 2D-DF baseline ordering.
// ---------------------------------------------------------------------------
#[test]
fn c09_twodf_baseline() {
    let b = bench();
    let t = &b.twodf;
    assert!(
        t.report.best_total() < t.report.initial_total(),
        "DRR MSE did not improve: {} -> {}",
        t.report.initial_total(),
        t.report.best_total()
    );
    // The phantom breathes with a nonzero anteroposterior component that an
    // in-plane field cannot represent, so the 3D solver's MAE improvement
    // must be at least as large.
    let improvement_2d = b.initial_mae - t.mae_hu;
    let improvement_3d = b.initial_mae - b.direct.mae_hu;
    assert!(
        improvement_2d <= improvement_3d,
        "2D-DF improvement {improvement_2d:.1} exceeds 3D improvement {improvement_3d:.1}"
    );
    println!(
        "ACCEPTANCE C9 twodf-baseline: PASS (DRR MSE {:.2e} -> {:.2e}; MAE improvement 2D {:.1} <= 3D {:.1})",
        t.report.initial_total(),
        t.report.best_total(),
        improvement_2d,
        improvement_3d
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: metrics oracles.
// ---------------------------------------------------------------------------
#[test]
fn c10_metrics_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = Dims3::cube(4);
    for _ in 0..25 {
        let mk_vol = |rng: &mut ChaCha8Rng| {
            let values = (0..d.count())
                .map(|_| rng.random_range(-1000.0f32..1000.0))
                .collect();
            VolumeGrid::new(d, [1.0; 3], values).unwrap()
        };
        let a = mk_vol(&mut rng);
        let b = mk_vol(&mut rng);
        let got = mae(&a, &b).unwrap() as f64;
        let mut expect = 0.0f64;
        for (x, y) in a.values().iter().zip(b.values()) {
            expect += (x - y).abs() as f64;
        }
        expect /= d.count() as f64;
        assert!((got - expect).abs() / expect.max(1e-12) < 1e-6);

        let mk_lab = |rng: &mut ChaCha8Rng| {
            LabelVolume::new(
                d,
                (0..d.count()).map(|_| rng.random_range(0..3u8)).collect(),
            )
            .unwrap()
        };
        let la = mk_lab(&mut rng);
        let lb = mk_lab(&mut rng);
        for organ in [LABEL_LIVER, LABEL_STOMACH] {
            let got = dsc(&la, &lb, organ).unwrap();
            let na = la.labels().iter().filter(|&&l| l == organ).count();
            let nb = lb.labels().iter().filter(|&&l| l == organ).count();
            let inter = la
                .labels()
                .iter()
                .zip(lb.labels())
                .filter(|(&x, &y)| x == organ && y == organ)
                .count();
            let expect = if na + nb == 0 {
                1.0
            } else {
                2.0 * inter as f64 / (na + nb) as f64
            };
            assert!((got - expect).abs() < 1e-6);
        }
    }

    // Half-overlap is exactly one half.
    let d = Dims3::new(4, 4, 8);
    let a = LabelVolume::from_fn(d, |_, _, z| if z < 4 { LABEL_LIVER } else { 0 }).unwrap();
    let b =
        LabelVolume::from_fn(d, |_, _, z| if (2..6).contains(&z) { LABEL_LIVER } else { 0 })
            .unwrap();
    assert_eq!(dsc(&a, &b, LABEL_LIVER).unwrap(), 0.5);
    println!("ACCEPTANCE C10 metrics-oracles: PASS (25 random instances + half-overlap)");
}

// ---------------------------------------------------------------------------
// Criterion 11: determinism across worker counts.
// ---------------------------------------------------------------------------
#[test]
fn c11_determinism_across_threads() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let spec = PhantomSpec::default_for_size(16);
            let model = RespiratoryModel::default_for(&spec);
            let frames = generate_4dct(&spec, &model).unwrap();
            let (i_s, _) = render_drr(&frames[0].volume);
            let (i_t, _) = render_drr(&frames[5].volume);
            let (u, v_def, report) = register_direct(
                &frames[0].volume,
                &i_s,
                &i_t,
                Some(&frames[5].volume),
                None,
                &LossWeights::unsupervised(),
                &DirectOpts {
                    steps: 40,
                    lr: 0.1,
                    seed: BENCH_SEED,
                },
            )
            .unwrap();
            let mut blob: Vec<u8> = Vec::new();
            for f in &frames {
                for v in f.volume.values() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
            for v in u.values().iter().chain(v_def.values()) {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            blob.extend_from_slice(report.csv().as_bytes());
            blob
        })
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four, "outputs differ across thread counts");
    println!(
        "ACCEPTANCE C11 determinism: PASS ({} bytes identical across 1 and 4 threads)",
        one.len()
    );
}
