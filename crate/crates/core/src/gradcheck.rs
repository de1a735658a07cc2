//! Central finite-difference verification of every differentiable operation:
//! warp (both gradients), the projector adjoint chain, conv3d (input,
//! weights, bias), LeakyReLU, upsampling, all losses, and the end-to-end
//! U-Net objective.
//!
//! Each check runs on randomized small instances and probes the coordinates
//! with the largest analytic gradient (uninformative near-zero coordinates
//! would only measure finite-difference noise). Tolerances come from the
//! scalar type: 1e-4 in 64-bit mode, 1e-3 in 32-bit mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{
    concat_channels, leaky_relu, leaky_relu_backward, pack_input, split_channels, upsample2x,
    upsample2x_backward, Conv3d, PackMode, Tensor4, UNetConfig, UNetParams,
};
use crate::diffnet::{unet_backward, unet_forward};
use crate::losses::{dvf_loss, mse_loss, smooth_loss, total_loss, LossWeights};
use crate::projector::{
    project_linear, project_linear_adjoint, render_drr, render_drr_adjoint, render_with_geometry,
    Projection,
};
use crate::scalar::{from_f64, to_f64, Scalar};
use crate::volgrid::{normalize_hu, Dims3, VolumeGrid};
use crate::warpfield::{warp_volume, warp_volume_backward, DisplacementField};

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tol
    }

    pub fn line(&self) -> String {
        format!(
            "{:<28} instances={:<3} coords={:<4} max_rel_err={:.3e} tol={:.0e}  {}",
            self.name,
            self.instances,
            self.coords_checked,
            self.max_rel_err,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn precision_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 8 {
        "f64"
    } else {
        "f32"
    }
}

/// Probe the largest-gradient coordinates of an objective with central
/// differences; returns (max relative error, coords actually probed).
/// `floor` is the typical magnitude of the perturbed quantity (1 for unit
/// scale data, 1000 for HU volumes), so the step never collapses on values
/// that happen to sit near zero.
fn probe<T: Scalar>(
    mut objective: impl FnMut(&[T]) -> T,
    x0: &[T],
    analytic: &[T],
    coords: usize,
    h_base: f64,
    floor: f64,
) -> (f64, usize) {
    let mut order: Vec<usize> = (0..x0.len()).collect();
    order.sort_by(|&a, &b| to_f64(analytic[b]).abs().total_cmp(&to_f64(analytic[a]).abs()));
    let mut max_err = 0.0f64;
    let mut checked = 0;
    for &i in order.iter().take(coords) {
        let an = to_f64(analytic[i]);
        if an.abs() < 1e-12 {
            continue;
        }
        let h = h_base * to_f64(x0[i]).abs().max(floor);
        let mut xp = x0.to_vec();
        xp[i] = xp[i] + from_f64(h);
        let mut xm = x0.to_vec();
        xm[i] = xm[i] - from_f64(h);
        // Use the actually-representable step, not the nominal one.
        let span = to_f64(xp[i]) - to_f64(xm[i]);
        let fd = (to_f64(objective(&xp)) - to_f64(objective(&xm))) / span;
        let err = (fd - an).abs() / fd.abs().max(an.abs());
        max_err = max_err.max(err);
        checked += 1;
    }
    (max_err, checked)
}

fn rand_volume<T: Scalar>(
    dims: Dims3,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> VolumeGrid<T> {
    let values = (0..dims.count())
        .map(|_| from_f64(rng.random_range(lo..hi)))
        .collect();
    VolumeGrid::new(dims, [1.0; 3], values).unwrap()
}

fn rand_tensor<T: Scalar>(c: usize, dims: Dims3, rng: &mut ChaCha8Rng) -> Tensor4<T> {
    let values = (0..c * dims.count())
        .map(|_| from_f64(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor4::new(c, dims, values).unwrap()
}

/// Interior, non-integer displacement field: every sample coordinate lands
/// strictly inside the grid with fractional part in [0.15, 0.85], keeping
/// finite differences away from both the clamp boundary and the lower-cell
/// kink at integer coordinates.
fn safe_field<T: Scalar>(dims: Dims3, rng: &mut ChaCha8Rng) -> DisplacementField<T> {
    let n = dims.count();
    let ext = [dims.nx, dims.ny, dims.nz];
    let mut values = vec![T::zero(); 3 * n];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = (z * dims.ny + y) * dims.nx + x;
                let p = [x as f64, y as f64, z as f64];
                for a in 0..3 {
                    let cell = rng.random_range(0..ext[a] - 1) as f64;
                    let frac = rng.random_range(0.15..0.85);
                    values[a * n + i] = from_f64(cell + frac - p[a]);
                }
            }
        }
    }
    DisplacementField::new(dims, values).unwrap()
}

fn check_warp<T: Scalar>(seed: u64, instances: usize) -> (CheckReport, CheckReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gu = (0.0f64, 0usize);
    let mut gv = (0.0f64, 0usize);
    for _ in 0..instances {
        let n = rng.random_range(4..7);
        let dims = Dims3::cube(n);
        let v = rand_volume::<T>(dims, -1.0, 1.0, &mut rng);
        let u = safe_field::<T>(dims, &mut rng);
        let go = rand_volume::<T>(dims, -1.0, 1.0, &mut rng);
        let (grad_v, grad_u) = warp_volume_backward(&v, &u, &go).unwrap();

        let dims_copy = dims;
        let obj_u = |xs: &[T]| {
            let field = DisplacementField::new(dims_copy, xs.to_vec()).unwrap();
            let w = warp_volume(&v, &field).unwrap();
            crate::numeric::det_sum(
                &w.values()
                    .iter()
                    .zip(go.values())
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            )
        };
        let (e, c) = probe(obj_u, u.values(), grad_u.values(), 3, T::FD_STEP, 1.0);
        gu = (gu.0.max(e), gu.1 + c);

        let spacing = v.spacing();
        let obj_v = |xs: &[T]| {
            let vol = VolumeGrid::new(dims_copy, spacing, xs.to_vec()).unwrap();
            let w = warp_volume(&vol, &u).unwrap();
            crate::numeric::det_sum(
                &w.values()
                    .iter()
                    .zip(go.values())
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            )
        };
        let (e, c) = probe(obj_v, v.values(), grad_v.values(), 3, T::FD_STEP, 1.0);
        gv = (gv.0.max(e), gv.1 + c);
    }
    let p = precision_name::<T>();
    (
        CheckReport {
            name: format!("warp_grad_u[{p}]"),
            instances,
            coords_checked: gu.1,
            max_rel_err: gu.0,
            tol: T::GRAD_TOL,
        },
        CheckReport {
            name: format!("warp_grad_v[{p}]"),
            instances,
            coords_checked: gv.1,
            max_rel_err: gv.0,
            tol: T::GRAD_TOL,
        },
    )
}

fn check_projector_adjoint<T: Scalar>(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in [4usize, 8, 16] {
        for _ in 0..17 {
            let dims = Dims3::cube(n);
            let x = rand_volume::<T>(dims, -1.0, 1.0, &mut rng);
            let y = Projection::<T> {
                h: dims.nz,
                w: dims.nx,
                values: (0..dims.nx * dims.nz)
                    .map(|_| from_f64(rng.random_range(-1.0..1.0)))
                    .collect(),
            };
            let px = project_linear(&x);
            let pty = project_linear_adjoint(&y, dims, [1.0; 3]).unwrap();
            let lhs: f64 = px
                .values
                .iter()
                .zip(&y.values)
                .map(|(&a, &b)| to_f64(a) * to_f64(b))
                .sum();
            let rhs: f64 = x
                .values()
                .iter()
                .zip(pty.values())
                .map(|(&a, &b)| to_f64(a) * to_f64(b))
                .sum();
            // Normalize by the Cauchy-Schwarz scale: the raw inner products
            // can cancel to near zero, which would measure cancellation
            // instead of the operators.
            let norm = |v: &[T]| v.iter().map(|&a| to_f64(a) * to_f64(a)).sum::<f64>().sqrt();
            let denom = (norm(&px.values) * norm(&y.values)).max(1e-12);
            worst = worst.max(((lhs - rhs) / denom).abs());
            count += 1;
        }
    }
    CheckReport {
        name: format!("projector_adjoint[{}]", precision_name::<T>()),
        instances: count,
        coords_checked: count,
        max_rel_err: worst,
        tol: 1e-5,
    }
}

fn check_projector_chain<T: Scalar>(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let n = rng.random_range(4..7);
        let dims = Dims3::cube(n);
        // Stay 150 HU above the attenuation clamp so finite differences
        // never straddle the kink.
        let v = rand_volume::<T>(dims, -850.0, 600.0, &mut rng);
        let (_, geom) = render_drr(&v);
        let grad_img = Projection::<T> {
            h: dims.nz,
            w: dims.nx,
            values: (0..dims.nx * dims.nz)
                .map(|_| from_f64(rng.random_range(-1.0..1.0)))
                .collect(),
        };
        let adj = render_drr_adjoint(&grad_img, &geom, &v).unwrap();
        let spacing = v.spacing();
        let obj = |xs: &[T]| {
            let vol = VolumeGrid::new(dims, spacing, xs.to_vec()).unwrap();
            let p = render_with_geometry(&vol, &geom).unwrap();
            crate::numeric::det_sum(
                &p.values
                    .iter()
                    .zip(&grad_img.values)
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            )
        };
        // The frozen-normalization chain is linear above the attenuation
        // clamp, so a generous step costs no truncation error and keeps the
        // difference well clear of f32 rounding noise. The 150 HU margin to
        // the clamp still dwarfs the step.
        let (e, c) = probe(obj, v.values(), adj.values(), 3, T::FD_STEP * 20.0, 1000.0);
        worst = worst.max(e);
        count += c;
    }
    CheckReport {
        name: format!("projector_chain[{}]", precision_name::<T>()),
        instances,
        coords_checked: count,
        max_rel_err: worst,
        tol: T::GRAD_TOL,
    }
}

fn check_conv<T: Scalar>(seed: u64, instances: usize) -> [CheckReport; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = [(0.0f64, 0usize), (0.0, 0), (0.0, 0)];
    for k in 0..instances {
        let stride = if k % 2 == 0 { 1 } else { 2 };
        let n = if stride == 2 { 4 } else { rng.random_range(4..6) };
        let dims = Dims3::cube(n);
        let c_in = rng.random_range(1..3);
        let c_out = rng.random_range(1..3);
        let x = rand_tensor::<T>(c_in, dims, &mut rng);
        let conv = Conv3d::<T>::init_he(c_in, c_out, stride, &mut rng);
        let out = conv.forward(&x).unwrap();
        // Positive-mean probe image: a zero-mean one can cancel the bias
        // gradient (a per-channel sum) down to the f32 noise floor, where a
        // finite difference measures rounding instead of the derivative.
        let go = {
            let values = (0..out.channels() * out.dims().count())
                .map(|_| from_f64(rng.random_range(0.25..1.25)))
                .collect();
            Tensor4::<T>::new(out.channels(), out.dims(), values).unwrap()
        };
        let (gx, gp) = conv.backward(&x, &go).unwrap();
        let dot = |t: &Tensor4<T>| {
            crate::numeric::det_sum(
                &t.values()
                    .iter()
                    .zip(go.values())
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            )
        };

        let obj_x = |xs: &[T]| {
            let t = Tensor4::new(c_in, dims, xs.to_vec()).unwrap();
            dot(&conv.forward(&t).unwrap())
        };
        let (e, c) = probe(obj_x, x.values(), gx.values(), 3, T::FD_STEP, 1.0);
        res[0] = (res[0].0.max(e), res[0].1 + c);

        let obj_w = |ws: &[T]| {
            let mut cc = conv.clone();
            cc.weight.copy_from_slice(ws);
            dot(&cc.forward(&x).unwrap())
        };
        let (e, c) = probe(obj_w, &conv.weight, &gp.weight, 3, T::FD_STEP, 1.0);
        res[1] = (res[1].0.max(e), res[1].1 + c);

        let obj_b = |bs: &[T]| {
            let mut cc = conv.clone();
            cc.bias.copy_from_slice(bs);
            dot(&cc.forward(&x).unwrap())
        };
        let (e, c) = probe(obj_b, &conv.bias, &gp.bias, 2, T::FD_STEP, 1.0);
        res[2] = (res[2].0.max(e), res[2].1 + c);
    }
    let p = precision_name::<T>();
    let mk = |name: &str, r: (f64, usize)| CheckReport {
        name: format!("{name}[{p}]"),
        instances,
        coords_checked: r.1,
        max_rel_err: r.0,
        tol: T::GRAD_TOL,
    };
    [
        mk("conv3d_input", res[0]),
        mk("conv3d_weight", res[1]),
        mk("conv3d_bias", res[2]),
    ]
}

fn check_leaky<T: Scalar>(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slope = from_f64::<T>(0.2);
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let dims = Dims3::cube(rng.random_range(2..5));
        let c = rng.random_range(1..4);
        // Keep values away from the kink at zero.
        let values: Vec<T> = (0..c * dims.count())
            .map(|_| {
                let mag = rng.random_range(0.1..1.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                from_f64(mag * sign)
            })
            .collect();
        let x = Tensor4::new(c, dims, values).unwrap();
        let go = rand_tensor::<T>(c, dims, &mut rng);
        let g = leaky_relu_backward(&x, &go, slope);
        let obj = |xs: &[T]| {
            let t = Tensor4::new(c, dims, xs.to_vec()).unwrap();
            crate::numeric::det_sum(
                &leaky_relu(&t, slope)
                    .values()
                    .iter()
                    .zip(go.values())
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            )
        };
        let (e, cc) = probe(obj, x.values(), g.values(), 3, T::FD_STEP * 0.5, 1.0);
        worst = worst.max(e);
        count += cc;
    }
    CheckReport {
        name: format!("leaky_relu[{}]", precision_name::<T>()),
        instances,
        coords_checked: count,
        max_rel_err: worst,
        tol: T::GRAD_TOL,
    }
}

fn check_upsample<T: Scalar>(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let dims = Dims3::cube(rng.random_range(1..4));
        let c = rng.random_range(1..3);
        let x = rand_tensor::<T>(c, dims, &mut rng);
        let up = upsample2x(&x);
        let go = rand_tensor::<T>(c, up.dims(), &mut rng);
        let g = upsample2x_backward(&go).unwrap();
        let obj = |xs: &[T]| {
            let t = Tensor4::new(c, dims, xs.to_vec()).unwrap();
            crate::numeric::det_sum(
                &upsample2x(&t)
                    .values()
                    .iter()
                    .zip(go.values())
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            )
        };
        let (e, cc) = probe(obj, x.values(), g.values(), 3, T::FD_STEP, 1.0);
        worst = worst.max(e);
        count += cc;
    }
    CheckReport {
        name: format!("upsample[{}]", precision_name::<T>()),
        instances,
        coords_checked: count,
        max_rel_err: worst,
        tol: T::GRAD_TOL,
    }
}

fn check_losses<T: Scalar>(seed: u64, instances: usize) -> [CheckReport; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = [(0.0f64, 0usize); 4];
    let h = T::FD_STEP.max(1e-5) * 2.0;
    for _ in 0..instances {
        let dims = Dims3::cube(4);
        let v_gt = rand_volume::<T>(dims, 0.0, 1.0, &mut rng);
        let v_def = rand_volume::<T>(dims, 0.0, 1.0, &mut rng);
        let spacing = v_gt.spacing();
        let mk_field = |rng: &mut ChaCha8Rng| {
            DisplacementField::new(
                dims,
                (0..3 * dims.count())
                    .map(|_| from_f64(rng.random_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap()
        };
        let u_gt = mk_field(&mut rng);
        let u = mk_field(&mut rng);

        let (_, g) = mse_loss(&v_gt, &v_def).unwrap();
        let obj = |xs: &[T]| {
            mse_loss(&v_gt, &VolumeGrid::new(dims, spacing, xs.to_vec()).unwrap())
                .unwrap()
                .0
        };
        let (e, c) = probe(obj, v_def.values(), g.values(), 3, h, 1.0);
        res[0] = (res[0].0.max(e), res[0].1 + c);

        let (_, g) = smooth_loss(&u);
        let obj = |xs: &[T]| smooth_loss(&DisplacementField::new(dims, xs.to_vec()).unwrap()).0;
        let (e, c) = probe(obj, u.values(), g.values(), 3, h, 1.0);
        res[1] = (res[1].0.max(e), res[1].1 + c);

        let (_, g) = dvf_loss(&u_gt, &u).unwrap();
        let obj = |xs: &[T]| {
            dvf_loss(&u_gt, &DisplacementField::new(dims, xs.to_vec()).unwrap())
                .unwrap()
                .0
        };
        let (e, c) = probe(obj, u.values(), g.values(), 3, h, 1.0);
        res[2] = (res[2].0.max(e), res[2].1 + c);

        let w = LossWeights::<T>::new(from_f64(0.05), T::one()).unwrap();
        let tl = total_loss(&v_gt, &v_def, Some(&u_gt), &u, &w).unwrap();
        let obj_u = |xs: &[T]| {
            let uu = DisplacementField::new(dims, xs.to_vec()).unwrap();
            total_loss(&v_gt, &v_def, Some(&u_gt), &uu, &w).unwrap().total
        };
        let (e, c) = probe(obj_u, u.values(), tl.grad_u.values(), 2, h, 1.0);
        res[3] = (res[3].0.max(e), res[3].1 + c);
        let obj_v = |xs: &[T]| {
            let vd = VolumeGrid::new(dims, spacing, xs.to_vec()).unwrap();
            total_loss(&v_gt, &vd, Some(&u_gt), &u, &w).unwrap().total
        };
        let (e, c) = probe(obj_v, v_def.values(), tl.grad_v_def.values(), 2, h, 1.0);
        res[3] = (res[3].0.max(e), res[3].1 + c);
    }
    let p = precision_name::<T>();
    let mk = |name: &str, r: (f64, usize)| CheckReport {
        name: format!("{name}[{p}]"),
        instances,
        coords_checked: r.1,
        max_rel_err: r.0,
        tol: T::GRAD_TOL,
    };
    [
        mk("mse_loss", res[0]),
        mk("smooth_loss", res[1]),
        mk("dvf_loss", res[2]),
        mk("total_loss", res[3]),
    ]
}

fn check_concat_split<T: Scalar>(seed: u64, instances: usize) -> CheckReport {
    // concat/split are index moves; verify they are exact inverses and
    // positionally faithful rather than finite-differencing a linear map.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dims = Dims3::cube(rng.random_range(2..5));
        let a = rand_tensor::<T>(rng.random_range(1..3), dims, &mut rng);
        let b = rand_tensor::<T>(rng.random_range(1..3), dims, &mut rng);
        let cat = concat_channels(&a, &b).unwrap();
        let (ra, rb) = split_channels(&cat, a.channels());
        for (x, y) in ra.values().iter().zip(a.values()) {
            worst = worst.max((to_f64(*x) - to_f64(*y)).abs());
        }
        for (x, y) in rb.values().iter().zip(b.values()) {
            worst = worst.max((to_f64(*x) - to_f64(*y)).abs());
        }
    }
    CheckReport {
        name: format!("concat_split[{}]", precision_name::<T>()),
        instances,
        coords_checked: instances,
        max_rel_err: worst,
        tol: 1e-12,
    }
}

/// Flat index range of each conv layer (weights + bias) in flatten order.
fn layer_ranges<T: Scalar>(params: &UNetParams<T>) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut off = 0;
    let sizes: Vec<usize> = params
        .enc
        .iter()
        .chain(params.dec.iter())
        .chain([&params.refine, &params.flow])
        .map(|c| c.param_count())
        .collect();
    for s in sizes {
        ranges.push(off..off + s);
        off += s;
    }
    ranges
}

fn check_unet_e2e<T: Scalar>(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims3::cube(16);
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..instances {
        let widths = if k % 2 == 0 { vec![3] } else { vec![3, 4] };
        let cfg = UNetConfig::with_widths(widths);
        let mut params = UNetParams::<T>::init(cfg, rng.random()).unwrap();
        // A zero flow layer would make every parameter gradient zero; small
        // weights plus a mid-cell bias keep the predicted displacements away
        // from the warp's lower-cell subgradient kinks at integer
        // coordinates, where central differences would measure the kink
        // instead of the gradient.
        for w in params.flow.weight.iter_mut() {
            *w = from_f64(rng.random_range(-0.01..0.01));
        }
        for (i, b) in params.flow.bias.iter_mut().enumerate() {
            *b = from_f64(0.45 + 0.05 * i as f64);
        }
        let v_s = rand_volume::<T>(dims, -400.0, 400.0, &mut rng);
        let v_gt = rand_volume::<T>(dims, -400.0, 400.0, &mut rng);
        let (i_s, _) = render_drr(&v_s);
        let (i_t, _) = render_drr(&v_gt);
        let supervised = k % 3 == 0;
        let u_gt = supervised.then(|| {
            DisplacementField::new(
                dims,
                (0..3 * dims.count())
                    .map(|_| from_f64(rng.random_range(-1.0..1.0)))
                    .collect::<Vec<T>>(),
            )
            .unwrap()
        });
        let weights = LossWeights::<T>::new(
            from_f64(0.05),
            if supervised { T::one() } else { T::zero() },
        )
        .unwrap();
        let v_s_n = normalize_hu(&v_s);
        let v_gt_n = normalize_hu(&v_gt);
        let input = pack_input(&v_s, &i_s, &i_t, PackMode::ExtremePlanes).unwrap();

        let (u, trace) = unet_forward(&params, &input).unwrap();
        let v_def_n = warp_volume(&v_s_n, &u).unwrap();
        let tl = total_loss(&v_gt_n, &v_def_n, u_gt.as_ref(), &u, &weights).unwrap();
        let (_, mut grad_u) = warp_volume_backward(&v_s_n, &u, &tl.grad_v_def).unwrap();
        for (g, extra) in grad_u.values_mut().iter_mut().zip(tl.grad_u.values()) {
            *g = *g + *extra;
        }
        let grads = unet_backward(&params, &trace, &grad_u).unwrap();

        let flat = params.flatten();
        let gflat = grads.flatten();
        let template = params.clone();
        let mut obj = |xs: &[T]| {
            let mut p = template.clone();
            p.unflatten(xs).unwrap();
            let (u, _) = unet_forward(&p, &input).unwrap();
            let v_def_n = warp_volume(&v_s_n, &u).unwrap();
            total_loss(&v_gt_n, &v_def_n, u_gt.as_ref(), &u, &weights)
                .unwrap()
                .total
        };

        // 64-bit probes cover every layer group; f32 rounding cannot resolve
        // the objective differences of the tiny deep-layer gradients, so the
        // 32-bit run probes the largest coordinates overall (flow/refine),
        // which its arithmetic can certify.
        let f64_mode = std::mem::size_of::<T>() == 8;
        let h = if f64_mode { 1e-6 } else { 1e-2 };
        let candidates: Vec<usize> = if f64_mode {
            layer_ranges(&params)
                .into_iter()
                .filter_map(|range| {
                    (range.clone())
                        .max_by(|&a, &b| {
                            to_f64(gflat[a]).abs().total_cmp(&to_f64(gflat[b]).abs())
                        })
                        .filter(|&i| to_f64(gflat[i]).abs() > 1e-12)
                })
                .collect()
        } else {
            let mut order: Vec<usize> = (0..gflat.len()).collect();
            order.sort_by(|&a, &b| {
                to_f64(gflat[b]).abs().total_cmp(&to_f64(gflat[a]).abs())
            });
            order.truncate(5);
            order
        };
        for i in candidates {
            let an = to_f64(gflat[i]);
            let step = h * to_f64(flat[i]).abs().max(1.0);
            let fd_at = |s: f64, obj: &mut dyn FnMut(&[T]) -> T| {
                let mut xp = flat.clone();
                xp[i] = xp[i] + from_f64(s);
                let mut xm = flat.clone();
                xm[i] = xm[i] - from_f64(s);
                let span = to_f64(xp[i]) - to_f64(xm[i]);
                (to_f64(obj(&xp)) - to_f64(obj(&xm))) / span
            };
            let fd = fd_at(step, &mut obj);
            let fd_half = fd_at(step / 2.0, &mut obj);
            // The model is only piecewise smooth (LeakyReLU and trilinear
            // kinks); when the two step sizes disagree the span straddles a
            // kink and the probe measures the kink, not the gradient.
            let consistency = (fd - fd_half).abs() / fd.abs().max(fd_half.abs()).max(1e-300);
            if consistency > T::GRAD_TOL * 0.3 {
                continue;
            }
            let err = (fd - an).abs() / fd.abs().max(an.abs());
            worst = worst.max(err);
            count += 1;
        }
    }
    CheckReport {
        name: format!("unet_end_to_end[{}]", precision_name::<T>()),
        instances,
        coords_checked: count,
        max_rel_err: worst,
        tol: T::GRAD_TOL,
    }
}

/// The full suite at one precision.
pub fn run_suite<T: Scalar>(seed: u64) -> Vec<CheckReport> {
    let instances = 20;
    let mut out = Vec::new();
    let (wu, wv) = check_warp::<T>(seed ^ 0x11, instances);
    out.push(wu);
    out.push(wv);
    out.push(check_projector_adjoint::<T>(seed ^ 0x22));
    out.push(check_projector_chain::<T>(seed ^ 0x33, instances));
    out.extend(check_conv::<T>(seed ^ 0x44, instances));
    out.push(check_leaky::<T>(seed ^ 0x55, instances));
    out.push(check_upsample::<T>(seed ^ 0x66, instances));
    out.extend(check_losses::<T>(seed ^ 0x77, instances));
    out.push(check_concat_split::<T>(seed ^ 0x88, instances));
    out.push(check_unet_e2e::<T>(seed ^ 0x99, instances));
    out
}

/// Both precisions; `true` when every check passed.
pub fn run_full(seed: u64) -> (Vec<CheckReport>, bool) {
    let mut reports = run_suite::<f64>(seed);
    reports.extend(run_suite::<f32>(seed.wrapping_add(1)));
    let ok = reports.iter().all(CheckReport::passed);
    (reports, ok)
}
