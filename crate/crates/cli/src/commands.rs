//! Subcommand implementations.

use std::path::{Path, PathBuf};

use deformreg::diffnet::{
    load_checkpoint, save_checkpoint, CheckpointMeta, PackMode, UNetConfig,
};
use deformreg::losses::LossWeights;
use deformreg::metrics::{evaluate_case, CaseEval, EvalReport};
use deformreg::phantom::{generate_4dct, PhantomSpec, RespiratoryModel};
use deformreg::projector::render_drr;
use deformreg::solvers::{
    apply_2ddf_to_volume, infer_unet, register_2d, register_direct, register_rigid,
    rigid_induced_field, save_field2d, train_loop, DirectOpts, RigidOpts, SolveReport, TrainOpts,
    TrainSample, TwoDOpts,
};
use deformreg::volgrid::{
    extract_slice, load_labels, load_volume, save_image, save_labels, save_volume, write_pgm,
    SliceAxis, VolumeGrid,
};
use deformreg::warpfield::{load_field, save_field, warp_labels, DisplacementField};
use deformreg::{solvers, Error};

use crate::config::{ensure_out_dir, ConfigEcho, FileConfig};
use crate::manifest::write_manifest;
use crate::{CmdError, CmdResult, CommonOpts};

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

fn frame_stem(t: u32) -> String {
    format!("frame_t{t}")
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

pub fn phantom(
    common: CommonOpts,
    size: Option<usize>,
    a_si: Option<f64>,
    a_ap: Option<f64>,
    train_levels: Option<usize>,
) -> CmdResult {
    let file = FileConfig::load(common.config.as_deref())?;
    let size = file.resolve(size, "size", 64)?;
    let seed = file.resolve(common.seed, "seed", 42u64)?;
    let spec = PhantomSpec::default_for_size(size);
    let mut model = RespiratoryModel::default_for(&spec);
    model.a_si = file.resolve(a_si, "a_si", model.a_si)?;
    model.a_ap = file.resolve(a_ap, "a_ap", model.a_ap)?;
    let train_levels = file.resolve(train_levels, "train_levels", 0usize)?;

    if train_levels > 0 && size % (1 << train_levels) != 0 {
        return Err(CmdError::Core(Error::Validation(format!(
            "grid size {size} is not divisible by 2^{train_levels}; unusable for training"
        ))));
    }

    ensure_out_dir(&common.out)?;
    let mut echo = ConfigEcho::new("phantom");
    echo.set("size", size)
        .set("seed", seed)
        .set("a_si", model.a_si)
        .set("a_ap", model.a_ap)
        .set("train_levels", train_levels);
    echo.write(&common.out)?;

    // The analytic phantom is deterministic; the seed is recorded for
    // provenance and reserved for randomized-amplitude sweeps.
    let frames = generate_4dct(&spec, &model).map_err(CmdError::Core)?;
    for f in &frames {
        let stem = frame_stem(f.t);
        save_volume(&f.volume, &common.out.join(format!("{stem}.mhd")))?;
        save_labels(
            &f.labels,
            f.volume.spacing(),
            &common.out.join(format!("{stem}_labels.mhd")),
        )?;
        save_field(&f.u_gt, &common.out.join(format!("{stem}_u.mhd")))?;
    }
    write_manifest(&common.out)?;
    println!("phantom: wrote {} frames to {}", frames.len(), common.out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// drr
// ---------------------------------------------------------------------------

pub fn drr(common: CommonOpts, volume: PathBuf) -> CmdResult {
    let file = FileConfig::load(common.config.as_deref())?;
    let seed = file.resolve(common.seed, "seed", 42u64)?;
    ensure_out_dir(&common.out)?;
    let mut echo = ConfigEcho::new("drr");
    echo.set("volume", volume.display()).set("seed", seed);
    echo.write(&common.out)?;

    let v = load_volume(&volume)?;
    let (img, _) = render_drr(&v);
    let stem = volume
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    write_pgm(&img, &common.out.join(format!("{stem}_drr.pgm")))?;
    save_image(&img, &common.out.join(format!("{stem}_drr.mhd")))?;
    write_manifest(&common.out)?;
    println!("drr: wrote {stem}_drr.pgm and {stem}_drr.mhd");
    Ok(0)
}

// ---------------------------------------------------------------------------
// register
// ---------------------------------------------------------------------------

pub struct RegisterArgs {
    pub common: CommonOpts,
    pub mode: String,
    pub source: PathBuf,
    pub source_labels: Option<PathBuf>,
    pub target_drr: Option<PathBuf>,
    pub target_volume: Option<PathBuf>,
    pub target_field: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pack_mode: Option<String>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub restarts: Option<usize>,
}

fn resolve_pack_mode(
    flag: Option<String>,
    file: &FileConfig,
) -> Result<PackMode, CmdError> {
    let raw = file.resolve(flag, "pack_mode", "extreme-planes".to_string())?;
    raw.parse::<PackMode>()
        .map_err(|_| usage(format!("unknown pack mode {raw:?}")))
}

fn pack_mode_name(mode: PackMode) -> &'static str {
    match mode {
        PackMode::ExtremePlanes => "extreme-planes",
        PackMode::FilledHalves => "filled-halves",
    }
}

fn export_mid_slices(v: &VolumeGrid<f32>, out: &Path, stem: &str) -> Result<(), CmdError> {
    let d = v.dims();
    for (axis, name, index) in [
        (SliceAxis::Axial, "axial", d.nz / 2),
        (SliceAxis::Coronal, "coronal", d.ny / 2),
        (SliceAxis::Sagittal, "sagittal", d.nx / 2),
    ] {
        let img = extract_slice(v, axis, index)?;
        write_pgm(&img, &out.join(format!("{stem}_{name}.pgm")))?;
    }
    Ok(())
}

fn write_solver_outputs(
    out: &Path,
    v_def: &VolumeGrid<f32>,
    u: Option<&DisplacementField<f32>>,
    report: &SolveReport,
) -> Result<(), CmdError> {
    save_volume(v_def, &out.join("vdef.mhd"))?;
    if let Some(u) = u {
        save_field(u, &out.join("u.mhd"))?;
    }
    report.write_csv(&out.join("report.csv"))?;
    report.write_summary(&out.join("summary.txt"))?;
    export_mid_slices(v_def, out, "vdef")?;
    Ok(())
}

pub fn register(args: RegisterArgs) -> CmdResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = file.resolve(args.common.seed, "seed", 42u64)?;
    let lambda = file.resolve(args.lambda, "lambda", 0.05f64)?;
    let gamma = file.resolve(args.gamma, "gamma", 0.0f64)?;
    let steps = file.resolve(args.steps, "steps", 300usize)?;
    let lr = file.resolve(args.lr, "lr", 0.1f64)?;
    let restarts = file.resolve(args.restarts, "restarts", 3usize)?;
    let pack_mode = resolve_pack_mode(args.pack_mode.clone(), &file)?;
    let mode = args.mode.as_str();
    if !matches!(mode, "direct" | "unet" | "rigid" | "2ddf") {
        return Err(usage(format!(
            "unknown register mode {mode:?}; expected direct | unet | rigid | 2ddf"
        )));
    }

    ensure_out_dir(&args.common.out)?;
    let out = &args.common.out;
    let mut echo = ConfigEcho::new("register");
    echo.set("mode", mode)
        .set("source", args.source.display())
        .set("seed", seed)
        .set("lambda", lambda)
        .set("gamma", gamma)
        .set("steps", steps)
        .set("lr", lr)
        .set("restarts", restarts)
        .set("pack_mode", pack_mode_name(pack_mode));
    if let Some(p) = &args.source_labels {
        echo.set("source_labels", p.display());
    }
    if let Some(p) = &args.target_drr {
        echo.set("target_drr", p.display());
    }
    if let Some(p) = &args.target_volume {
        echo.set("target_volume", p.display());
    }
    if let Some(p) = &args.target_field {
        echo.set("target_field", p.display());
    }
    if let Some(p) = &args.checkpoint {
        echo.set("checkpoint", p.display());
    }
    echo.write(out)?;

    let v_s = load_volume(&args.source)?;
    let source_labels = args
        .source_labels
        .as_ref()
        .map(|p| load_labels(p))
        .transpose()?;
    let write_labels_def = |u: &DisplacementField<f32>| -> Result<(), CmdError> {
        if let Some(labels) = &source_labels {
            let warped = warp_labels(labels, u)?;
            save_labels(&warped, v_s.spacing(), &out.join("labels_def.mhd"))?;
        }
        Ok(())
    };
    let (i_s, _) = render_drr(&v_s);
    let load_target_drr = |required_for: &str| -> Result<_, CmdError> {
        let path = args
            .target_drr
            .as_ref()
            .ok_or_else(|| usage(format!("mode {required_for} requires --target-drr")))?;
        let img = deformreg::volgrid::load_image(path)?;
        Ok(img)
    };

    let weights =
        LossWeights::new(lambda as f32, gamma as f32).map_err(CmdError::Core)?;

    match mode {
        "direct" => {
            let v_gt = args
                .target_volume
                .as_ref()
                .map(|p| load_volume(p))
                .transpose()?;
            let u_gt = args
                .target_field
                .as_ref()
                .map(|p| load_field(p))
                .transpose()?;
            if gamma > 0.0 && u_gt.is_none() {
                return Err(usage("--gamma > 0 requires --target-field"));
            }
            let i_t = match (&v_gt, &args.target_drr) {
                (_, Some(_)) => load_target_drr("direct")?,
                (Some(gt), None) => render_drr(gt).0,
                (None, None) => {
                    return Err(usage(
                        "direct mode needs --target-volume (supervised) or --target-drr (projection-only)",
                    ))
                }
            };
            let opts = DirectOpts { steps, lr, seed };
            let (u, v_def, report) =
                register_direct(&v_s, &i_s, &i_t, v_gt.as_ref(), u_gt.as_ref(), &weights, &opts)?;
            write_labels_def(&u)?;
            write_solver_outputs(out, &v_def, Some(&u), &report)?;
        }
        "unet" => {
            let ck = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| usage("unet mode requires --checkpoint"))?;
            let (params, _, _) = load_checkpoint(ck)?;
            let i_t = load_target_drr("unet")?;
            let (u, v_def) = infer_unet(&params, &v_s, &i_s, &i_t, pack_mode)?;
            let report = SolveReport::new(seed, format!("register unet ckpt={}", ck.display()));
            write_labels_def(&u)?;
            write_solver_outputs(out, &v_def, Some(&u), &report)?;
        }
        "rigid" => {
            let i_t = load_target_drr("rigid")?;
            let opts = RigidOpts {
                restarts,
                seed,
                ..RigidOpts::default()
            };
            let (theta, v_def, report) = register_rigid(&v_s, &i_t, &opts)?;
            let text = format!(
                "tx = {}\nty = {}\ntz = {}\nrx_deg = {}\nry_deg = {}\nrz_deg = {}\n",
                theta.translation[0],
                theta.translation[1],
                theta.translation[2],
                theta.rotation_deg[0],
                theta.rotation_deg[1],
                theta.rotation_deg[2],
            );
            std::fs::write(out.join("rigid_params.txt"), text)
                .map_err(|e| CmdError::Core(Error::io(out.join("rigid_params.txt"), e)))?;
            write_labels_def(&rigid_induced_field::<f32>(v_s.dims(), &theta))?;
            write_solver_outputs(out, &v_def, None, &report)?;
        }
        "2ddf" => {
            let i_t = load_target_drr("2ddf")?;
            let opts = TwoDOpts { steps, lr, seed };
            let (u2d, report) = register_2d(&i_s, &i_t, &weights, &opts)?;
            let v_def = apply_2ddf_to_volume(&v_s, &u2d)?;
            save_field2d(&u2d, &out.join("u2d.mhd"))?;
            // The in-plane field lifts to a 3D field with zero dorsoventral
            // component; labels follow it nearest-neighbor.
            let lifted = DisplacementField::from_fn(v_s.dims(), |x, _y, z| {
                let (dc, dr) = u2d.get(z, x);
                [dc, 0.0, dr]
            });
            write_labels_def(&lifted)?;
            write_solver_outputs(out, &v_def, None, &report)?;
        }
        _ => unreachable!(),
    }
    write_manifest(out)?;
    println!("register: mode {mode} done, outputs in {}", out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub common: CommonOpts,
    pub data: String,
    pub phases: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub levels: Option<usize>,
    pub widths: Option<String>,
    pub checkpoint_every: Option<usize>,
    pub pack_mode: Option<String>,
    pub resume: Option<PathBuf>,
}

fn parse_usize_list(raw: &str, what: &str) -> Result<Vec<usize>, CmdError> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

fn load_dataset(
    dirs: &[&str],
    phases: &[usize],
    with_fields: bool,
) -> Result<Vec<TrainSample>, CmdError> {
    let mut samples = Vec::new();
    for dir in dirs {
        let dir = Path::new(dir.trim());
        let v_s = load_volume(&dir.join("frame_t0.mhd"))?;
        let (i_s, _) = render_drr(&v_s);
        for &t in phases {
            let stem = frame_stem(t as u32);
            let v_gt = load_volume(&dir.join(format!("{stem}.mhd")))?;
            let (i_t, _) = render_drr(&v_gt);
            let u_gt = if with_fields {
                Some(load_field(&dir.join(format!("{stem}_u.mhd")))?)
            } else {
                None
            };
            samples.push(TrainSample {
                v_s: v_s.clone(),
                i_s: i_s.clone(),
                i_t,
                v_gt,
                u_gt,
            });
        }
    }
    Ok(samples)
}

pub fn train(args: TrainArgs) -> CmdResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = file.resolve(args.common.seed, "seed", 42u64)?;
    let epochs = file.resolve(args.epochs, "epochs", 200usize)?;
    let batch = file.resolve(args.batch, "batch", 4usize)?;
    let lr = file.resolve(args.lr, "lr", 1e-4f64)?;
    let lambda = file.resolve(args.lambda, "lambda", 0.05f64)?;
    let gamma = file.resolve(args.gamma, "gamma", 0.0f64)?;
    let levels = file.resolve(args.levels, "levels", 3usize)?;
    let widths_raw = args
        .widths
        .or(file.get::<String>("widths")?)
        .unwrap_or_else(|| "16,32,32".to_string());
    let widths = parse_usize_list(&widths_raw, "widths")?;
    if widths.len() != levels {
        return Err(usage(format!(
            "--widths has {} entries but --levels is {levels}",
            widths.len()
        )));
    }
    let checkpoint_every = file.resolve(args.checkpoint_every, "checkpoint_every", 0usize)?;
    let pack_mode = resolve_pack_mode(args.pack_mode.clone(), &file)?;
    let phases_raw = args
        .phases
        .or(file.get::<String>("phases")?)
        .unwrap_or_else(|| "10,20,30,40,50,60,70,80,90".to_string());
    let phases = parse_usize_list(&phases_raw, "phases")?;

    ensure_out_dir(&args.common.out)?;
    let out = &args.common.out;
    let mut echo = ConfigEcho::new("train");
    echo.set("data", &args.data)
        .set("phases", &phases_raw)
        .set("epochs", epochs)
        .set("batch", batch)
        .set("lr", lr)
        .set("lambda", lambda)
        .set("gamma", gamma)
        .set("levels", levels)
        .set("widths", &widths_raw)
        .set("seed", seed)
        .set("checkpoint_every", checkpoint_every)
        .set("pack_mode", pack_mode_name(pack_mode));
    if let Some(r) = &args.resume {
        echo.set("resume", r.display());
    }
    echo.write(out)?;

    let dirs: Vec<&str> = args.data.split(',').collect();
    let dataset = load_dataset(&dirs, &phases, gamma > 0.0)?;
    let weights = LossWeights::new(lambda as f32, gamma as f32).map_err(CmdError::Core)?;
    let config = UNetConfig {
        levels,
        enc_widths: widths,
        leaky_slope: 0.2,
        in_channels: 2,
    };
    let opts = TrainOpts {
        epochs,
        batch,
        lr,
        seed,
        pack_mode,
        checkpoint_every,
        out_dir: Some(out.clone()),
    };

    let (params, adam, report, meta) = match &args.resume {
        None => {
            let (p, a, r) = solvers::train_unet(&dataset, &config, &weights, &opts)?;
            let meta = CheckpointMeta {
                seed,
                step: r.history.len() as u64,
                epoch: epochs as u64,
                lr,
            };
            (p, a, r, meta)
        }
        Some(ck_path) => {
            let (mut p, adam, meta) = load_checkpoint(ck_path)?;
            let mut adam = adam.ok_or_else(|| {
                usage("checkpoint has no optimizer state; cannot resume training")
            })?;
            if p.config != config {
                return Err(usage(
                    "checkpoint architecture differs from the requested --levels/--widths",
                ));
            }
            let mut report = SolveReport::new(seed, "train (resumed)".to_string());
            let mut step = meta.step;
            p.config.validate().map_err(CmdError::Core)?;
            train_loop(
                &dataset,
                &mut p,
                &mut adam,
                meta.epoch,
                epochs as u64,
                &mut step,
                &weights,
                &opts,
                &mut report,
            )?;
            let meta = CheckpointMeta {
                seed: meta.seed,
                step,
                epoch: epochs as u64,
                lr,
            };
            (p, adam, report, meta)
        }
    };

    save_checkpoint(&out.join("ckpt_final.bin"), &params, Some(&adam), &meta)?;
    report.write_csv(&out.join("loss.csv"))?;
    report.write_summary(&out.join("summary.txt"))?;
    write_manifest(out)?;
    println!(
        "train: {} samples, {} steps, final checkpoint {}",
        dataset.len(),
        report.history.len(),
        out.join("ckpt_final.bin").display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn parse_case_list(raw: &str) -> Result<Vec<(PathBuf, PathBuf)>, CmdError> {
    raw.split(',')
        .map(|case| {
            case.trim()
                .split_once(':')
                .map(|(v, l)| (PathBuf::from(v), PathBuf::from(l)))
                .ok_or_else(|| usage(format!("case spec {case:?} is not vol.mhd:labels.mhd")))
        })
        .collect()
}

pub fn evaluate(
    common: CommonOpts,
    gt: String,
    methods: Vec<String>,
    masked: bool,
) -> CmdResult {
    if methods.is_empty() {
        return Err(usage("evaluate needs at least one --method name=vol:labels"));
    }
    ensure_out_dir(&common.out)?;
    let mut echo = ConfigEcho::new("evaluate");
    echo.set("gt", &gt).set("masked", masked);
    let parsed: Vec<(&str, Vec<(PathBuf, PathBuf)>)> = methods
        .iter()
        .map(|spec| {
            let (name, cases_raw) = spec.split_once('=').ok_or_else(|| {
                usage(format!("method spec {spec:?} is not name=vol:labels[,...]"))
            })?;
            echo.set(&format!("method_{name}"), cases_raw);
            Ok((name, parse_case_list(cases_raw)?))
        })
        .collect::<Result<_, CmdError>>()?;
    echo.write(&common.out)?;

    let gt_cases = parse_case_list(&gt)?;
    let gt_data: Vec<_> = gt_cases
        .iter()
        .map(|(v, l)| -> Result<_, CmdError> { Ok((load_volume(v)?, load_labels(l)?)) })
        .collect::<Result<_, _>>()?;

    let mut report = EvalReport::default();
    for (name, cases) in parsed {
        if cases.len() != gt_data.len() {
            return Err(usage(format!(
                "method {name} has {} cases but --gt has {}",
                cases.len(),
                gt_data.len()
            )));
        }
        let mut evals: Vec<CaseEval> = Vec::new();
        for ((v_path, l_path), (gt_v, gt_l)) in cases.iter().zip(&gt_data) {
            let v = load_volume(v_path)?;
            let l = load_labels(l_path)?;
            evals.push(evaluate_case(gt_v, gt_l, &v, &l, masked)?);
        }
        report.push(name.to_string(), evals);
    }
    let table = report.format_table();
    std::fs::write(common.out.join("table.txt"), &table)
        .map_err(|e| CmdError::Core(Error::io(common.out.join("table.txt"), e)))?;
    std::fs::write(common.out.join("eval.csv"), report.format_csv())
        .map_err(|e| CmdError::Core(Error::io(common.out.join("eval.csv"), e)))?;
    write_manifest(&common.out)?;
    print!("{table}");
    Ok(0)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

pub fn gradcheck(seed: Option<u64>, out: Option<PathBuf>) -> CmdResult {
    let seed = seed.unwrap_or(42);
    let (reports, ok) = deformreg::gradcheck::run_full(seed);
    let mut text = String::new();
    for r in &reports {
        let line = r.line();
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    if let Some(dir) = out {
        ensure_out_dir(&dir)?;
        std::fs::write(dir.join("gradcheck.txt"), text)
            .map_err(|e| CmdError::Core(Error::io(dir.join("gradcheck.txt"), e)))?;
    }
    if ok {
        println!("gradcheck: all checks passed");
        Ok(0)
    } else {
        eprintln!("gradcheck: tolerance violation");
        Ok(3)
    }
}
